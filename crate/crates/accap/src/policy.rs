//! Policy network: a feature-conditioned LSTM that scores next-word actions.
//!
//! The image feature enters once, as the projected input of the very first
//! recurrent step; every later step consumes the embedding of the previously
//! committed word and emits a softmax distribution over the vocabulary.

use rand::Rng;

use crate::data::{ImageFeature, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{
    ce_softmax_dlogits, cross_entropy, linear_apply, lstm_backward, lstm_step_cached, softmax,
    GradStore, LstmCellParams, LstmNames, LstmStepCache, ParamStore,
};
use crate::tensor::Tensor;

pub const PARAM_INIT_RANGE: f64 = 0.08;

const P_WX: &str = "w_x";
const P_EMBED: &str = "embed";
const P_WO: &str = "w_o";
const P_BO: &str = "b_o";
const P_LSTM: LstmNames = LstmNames {
    w_x: "lstm.w_x",
    w_h: "lstm.w_h",
    b: "lstm.b",
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyDims {
    pub vocab: usize,
    pub d_h: usize,
    pub d_e: usize,
    pub feat_dim: usize,
}

pub struct PolicyNet {
    dims: PolicyDims,
    store: ParamStore,
}

impl PolicyNet {
    /// Fresh network with uniform(-0.08, 0.08) initialization.
    pub fn new<R: Rng>(dims: PolicyDims, rng: &mut R) -> Self {
        let mut net = Self::zeroed(dims);
        for name in [P_WX, P_EMBED, P_LSTM.w_x, P_LSTM.w_h, P_LSTM.b, P_WO, P_BO] {
            for v in net.store.param_mut(name).data_mut() {
                *v = rng.gen_range(-PARAM_INIT_RANGE..PARAM_INIT_RANGE);
            }
        }
        net
    }

    /// All-zero network; useful as the analytically known uniform model.
    pub fn zeroed(dims: PolicyDims) -> Self {
        let mut store = ParamStore::new();
        // The feature projection feeds the LSTM input, so it is D_e wide.
        store.insert(P_WX, Tensor::zeros(&[dims.d_e, dims.feat_dim]));
        store.insert(P_EMBED, Tensor::zeros(&[dims.vocab, dims.d_e]));
        store.insert(P_LSTM.w_x, Tensor::zeros(&[4 * dims.d_h, dims.d_e]));
        store.insert(P_LSTM.w_h, Tensor::zeros(&[4 * dims.d_h, dims.d_h]));
        store.insert(P_LSTM.b, Tensor::zeros(&[4 * dims.d_h]));
        store.insert(P_WO, Tensor::zeros(&[dims.vocab, dims.d_h]));
        store.insert(P_BO, Tensor::zeros(&[dims.vocab]));
        PolicyNet { dims, store }
    }

    /// Rebuilds a network around an existing store, validating shapes.
    pub fn from_store(dims: PolicyDims, store: ParamStore) -> Result<Self> {
        let reference = Self::zeroed(dims);
        for (name, t) in reference.store.iter() {
            if !store.contains(name) {
                return Err(Error::Consistency(format!(
                    "policy store missing parameter {name:?}"
                )));
            }
            if store.get(name).shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "policy parameter {name:?} has shape {:?}, expected {:?}",
                    store.get(name).shape(),
                    t.shape()
                )));
            }
        }
        if store.len() != reference.store.len() {
            return Err(Error::Consistency(
                "policy store has extra parameters".into(),
            ));
        }
        Ok(PolicyNet { dims, store })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn lstm(&self) -> LstmCellParams<'_> {
        LstmCellParams {
            w_x: self.store.get(P_LSTM.w_x),
            w_h: self.store.get(P_LSTM.w_h),
            b: self.store.get(P_LSTM.b),
        }
    }

    fn check_token(&self, id: TokenId) -> Result<()> {
        if id >= self.dims.vocab {
            return Err(Error::Arg(format!(
                "token id {id} out of range for vocab of {}",
                self.dims.vocab
            )));
        }
        Ok(())
    }

    /// Input token for the first prediction step: BOS, clamped into the vocab
    /// so degenerate single-token vocabularies still decode.
    pub fn start_word(&self) -> TokenId {
        Vocab::BOS.min(self.dims.vocab - 1)
    }

    /// Runs the image step: one LSTM update on `W_x·feature` from zero state.
    pub fn init_state(&self, feature: &ImageFeature) -> Result<DecodeState> {
        let cache = self.image_step(feature)?;
        Ok(DecodeState {
            feature: feature.clone(),
            prefix: Vec::new(),
            h: cache.h,
            c: cache.c,
        })
    }

    fn image_step(&self, feature: &ImageFeature) -> Result<LstmStepCache> {
        let x0 = self.store.get(P_WX).matvec(&feature.values)?;
        let zero = vec![0.0; self.dims.d_h];
        lstm_step_cached(&self.lstm(), &zero, &zero, &x0)
    }

    /// Feeds `prev_word`, advances the recurrent state and returns the
    /// distribution over the next word. The successor `DecodeState` is formed
    /// by [`DecodeState::commit`] once the caller chooses an action.
    pub fn policy_step(&self, state: &DecodeState, prev_word: TokenId) -> Result<PolicyStep> {
        self.check_token(prev_word)?;
        let x = self.store.get(P_EMBED).row(prev_word);
        let cache = lstm_step_cached(&self.lstm(), &state.h, &state.c, x)?;
        let logits = linear_apply(self.store.get(P_WO), self.store.get(P_BO), &cache.h)?;
        let dist = softmax(&logits)?;
        Ok(PolicyStep {
            dist,
            h: cache.h,
            c: cache.c,
        })
    }

    /// Teacher-forced sequence loss: sum of per-step cross-entropies against
    /// the reference, with gold tokens fed back. Returns the loss and full
    /// BPTT gradients (descent direction).
    pub fn teacher_forced_loss(
        &self,
        feature: &ImageFeature,
        reference: &[TokenId],
    ) -> Result<(f64, GradStore)> {
        let weights = vec![1.0; reference.len()];
        let fwd = self.sequence_forward(feature, reference)?;
        let loss = fwd.weighted_ce(&weights);
        let grads = self.sequence_backward(feature, &fwd, &weights, 0.0);
        Ok((loss, grads))
    }

    /// Forward-only variant for finite-difference checking.
    pub fn teacher_forced_loss_value(
        &self,
        feature: &ImageFeature,
        reference: &[TokenId],
    ) -> Result<f64> {
        let fwd = self.sequence_forward(feature, reference)?;
        Ok(fwd.weighted_ce(&vec![1.0; reference.len()]))
    }

    /// Runs the whole sequence with the tokens of `targets` both as targets
    /// and (shifted, after BOS) as inputs, caching all activations.
    pub(crate) fn sequence_forward(
        &self,
        feature: &ImageFeature,
        targets: &[TokenId],
    ) -> Result<SequenceForward> {
        if targets.is_empty() {
            return Err(Error::Arg("empty reference sequence".into()));
        }
        for &t in targets {
            self.check_token(t)?;
        }
        let image = self.image_step(feature)?;
        let mut steps = Vec::with_capacity(targets.len());
        let mut dists = Vec::with_capacity(targets.len());
        let mut h = image.h.clone();
        let mut c = image.c.clone();
        for t in 0..targets.len() {
            let input = if t == 0 { self.start_word() } else { targets[t - 1] };
            self.check_token(input)?;
            let x = self.store.get(P_EMBED).row(input);
            let cache = lstm_step_cached(&self.lstm(), &h, &c, x)?;
            h = cache.h.clone();
            c = cache.c.clone();
            let logits = linear_apply(self.store.get(P_WO), self.store.get(P_BO), &cache.h)?;
            dists.push(softmax(&logits)?);
            steps.push(cache);
        }
        Ok(SequenceForward {
            image,
            steps,
            dists,
            targets: targets.to_vec(),
        })
    }

    /// BPTT over a cached forward pass. `step_weights[t]` scales step `t`'s
    /// cross-entropy term; `entropy_weight` adds `-λ·H(dist_t)` per step (the
    /// descent form of an entropy bonus).
    pub(crate) fn sequence_backward(
        &self,
        feature: &ImageFeature,
        fwd: &SequenceForward,
        step_weights: &[f64],
        entropy_weight: f64,
    ) -> GradStore {
        let mut grads = GradStore::zeros_like(&self.store);
        let d_h = self.dims.d_h;
        let mut dh_next = vec![0.0; d_h];
        let mut dc_next = vec![0.0; d_h];
        let w_o = self.store.get(P_WO);

        for t in (0..fwd.steps.len()).rev() {
            let dist = &fwd.dists[t];
            let mut dlogits = ce_softmax_dlogits(dist, fwd.targets[t]);
            for v in &mut dlogits {
                *v *= step_weights[t];
            }
            if entropy_weight != 0.0 {
                // d(-λH)/dz_j = λ·q_j·(ln q_j + H)
                let entropy: f64 = -dist.iter().map(|q| q * q.ln()).sum::<f64>();
                for (dl, q) in dlogits.iter_mut().zip(dist) {
                    *dl += entropy_weight * q * (q.ln() + entropy);
                }
            }

            grads.accum_outer(P_WO, &dlogits, &fwd.steps[t].h);
            grads.accum_slice(P_BO, &dlogits);
            let mut dh = w_o.matvec_t(&dlogits).expect("policy backward dh");
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }

            let (dx, dh_prev, dc_prev) = lstm_backward(
                &self.lstm(),
                &fwd.steps[t],
                &dh,
                &dc_next,
                &P_LSTM,
                &mut grads,
            );
            let input = if t == 0 {
                self.start_word()
            } else {
                fwd.targets[t - 1]
            };
            grads.accum_row(P_EMBED, input, &dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        // Image step: x0 = W_x · feature.
        let (dx0, _, _) = lstm_backward(
            &self.lstm(),
            &fwd.image,
            &dh_next,
            &dc_next,
            &P_LSTM,
            &mut grads,
        );
        grads.accum_outer(P_WX, &dx0, &feature.values);
        grads
    }
}

/// One decoding state: the image feature, the committed caption prefix and
/// the recurrent state that has consumed the image, BOS and every prefix word
/// except the last (which is consumed by the next [`PolicyNet::policy_step`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    pub feature: ImageFeature,
    pub prefix: Vec<TokenId>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl DecodeState {
    /// Step index; always equals the prefix length.
    pub fn t(&self) -> usize {
        self.prefix.len()
    }

    /// The word the next policy step should consume: the last committed word,
    /// or the start word (BOS) for an empty prefix.
    pub fn next_input(&self, policy: &PolicyNet) -> TokenId {
        self.prefix.last().copied().unwrap_or_else(|| policy.start_word())
    }

    /// Commits `action` against an advanced step, producing the successor state.
    pub fn commit(&self, step: &PolicyStep, action: TokenId) -> DecodeState {
        let mut prefix = self.prefix.clone();
        prefix.push(action);
        DecodeState {
            feature: self.feature.clone(),
            prefix,
            h: step.h.clone(),
            c: step.c.clone(),
        }
    }
}

/// Output of one policy step: the next-word distribution plus the advanced
/// recurrent state awaiting an action commit.
pub struct PolicyStep {
    pub dist: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Cached activations of a full teacher-forced pass.
pub(crate) struct SequenceForward {
    image: LstmStepCache,
    steps: Vec<LstmStepCache>,
    pub(crate) dists: Vec<Vec<f64>>,
    targets: Vec<TokenId>,
}

impl SequenceForward {
    pub(crate) fn weighted_ce(&self, weights: &[f64]) -> f64 {
        self.dists
            .iter()
            .zip(&self.targets)
            .zip(weights)
            .map(|((dist, &tgt), w)| w * cross_entropy(dist, tgt).expect("target in range"))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check_conditioned;
    use crate::numerics::sigmoid;

    fn feature(values: Vec<f64>) -> ImageFeature {
        ImageFeature { values }
    }

    fn tiny_dims() -> PolicyDims {
        PolicyDims {
            vocab: 6,
            d_h: 4,
            d_e: 3,
            feat_dim: 5,
        }
    }

    fn rand_feature(rng: &mut impl Rng, dim: usize) -> ImageFeature {
        feature((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_net_init_state_is_zero() {
        let net = PolicyNet::zeroed(tiny_dims());
        let st = net.init_state(&feature(vec![0.3; 5])).unwrap();
        assert_eq!(st.h, vec![0.0; 4]);
        assert_eq!(st.c, vec![0.0; 4]);
        assert_eq!(st.t(), 0);
    }

    #[test]
    fn differing_features_give_differing_states() {
        for seed in 0..10 {
            let mut rng = crate::rng::seeded(seed);
            let net = PolicyNet::new(tiny_dims(), &mut rng);
            let a = net.init_state(&rand_feature(&mut rng, 5)).unwrap();
            let b = net.init_state(&rand_feature(&mut rng, 5)).unwrap();
            assert_ne!(a.h, b.h, "seed {seed}");
        }
    }

    #[test]
    fn init_state_is_deterministic() {
        let mut rng = crate::rng::seeded(3);
        let net = PolicyNet::new(tiny_dims(), &mut rng);
        let f = rand_feature(&mut rng, 5);
        let a = net.init_state(&f).unwrap();
        let b = net.init_state(&f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_net_distribution_is_uniform() {
        let net = PolicyNet::zeroed(tiny_dims());
        let st = net.init_state(&feature(vec![0.0; 5])).unwrap();
        let step = net.policy_step(&st, Vocab::BOS).unwrap();
        for p in &step.dist {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distributions_sum_to_one_across_random_nets() {
        for seed in 0..100 {
            let mut rng = crate::rng::seeded(seed);
            let net = PolicyNet::new(tiny_dims(), &mut rng);
            let st = net.init_state(&rand_feature(&mut rng, 5)).unwrap();
            let step = net.policy_step(&st, rng.gen_range(0..6)).unwrap();
            let sum: f64 = step.dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(step.dist.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn invalid_token_is_an_argument_error() {
        let net = PolicyNet::zeroed(tiny_dims());
        let st = net.init_state(&feature(vec![0.0; 5])).unwrap();
        assert!(net.policy_step(&st, 6).is_err());
    }

    // Step-by-step scalar recomputation of one policy step, fully independent
    // of the Tensor/lstm code paths.
    #[test]
    fn policy_step_matches_scalar_oracle() {
        let dims = tiny_dims();
        let mut rng = crate::rng::seeded(17);
        let net = PolicyNet::new(dims, &mut rng);
        let f = rand_feature(&mut rng, dims.feat_dim);
        let st = net.init_state(&f).unwrap();
        let prev: TokenId = 4;
        let step = net.policy_step(&st, prev).unwrap();

        let at = |name: &str, r: usize, c: usize, cols: usize| net.store().get(name).data()[r * cols + c];
        let d_h = dims.d_h;
        let d_e = dims.d_e;

        // x = embedding row of prev
        let x: Vec<f64> = (0..d_e).map(|j| at("embed", prev, j, d_e)).collect();
        // gates
        let mut h = vec![0.0; d_h];
        let mut cc = vec![0.0; d_h];
        for k in 0..d_h {
            let pre = |row: usize| {
                let mut acc = net.store().get("lstm.b").data()[row];
                for j in 0..d_e {
                    acc += at("lstm.w_x", row, j, d_e) * x[j];
                }
                for j in 0..d_h {
                    acc += at("lstm.w_h", row, j, d_h) * st.h[j];
                }
                acc
            };
            let i = sigmoid(pre(k));
            let fgate = sigmoid(pre(d_h + k));
            let g = pre(2 * d_h + k).tanh();
            let o = sigmoid(pre(3 * d_h + k));
            cc[k] = fgate * st.c[k] + i * g;
            h[k] = o * cc[k].tanh();
        }
        // logits and softmax
        let mut logits = vec![0.0; dims.vocab];
        for (v, l) in logits.iter_mut().enumerate() {
            let mut acc = net.store().get("b_o").data()[v];
            for j in 0..d_h {
                acc += at("w_o", v, j, d_h) * h[j];
            }
            *l = acc;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (got, e) in step.dist.iter().zip(&exps) {
            assert!((got - e / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_net_loss_is_t_ln_v() {
        let dims = tiny_dims();
        let net = PolicyNet::zeroed(dims);
        let reference = vec![3, 4, 5, Vocab::EOS];
        let (loss, _) = net
            .teacher_forced_loss(&feature(vec![0.1; 5]), &reference)
            .unwrap();
        let expect = reference.len() as f64 * (dims.vocab as f64).ln();
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
    }

    #[test]
    fn empty_reference_is_an_error() {
        let net = PolicyNet::zeroed(tiny_dims());
        assert!(net.teacher_forced_loss(&feature(vec![0.0; 5]), &[]).is_err());
    }

    #[test]
    fn loss_decreases_under_adam_on_one_example() {
        let mut rng = crate::rng::seeded(21);
        let mut net = PolicyNet::new(tiny_dims(), &mut rng);
        let f = rand_feature(&mut rng, 5);
        let reference = vec![4, 3, 5, Vocab::EOS];
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let (loss, grads) = net.teacher_forced_loss(&f, &reference).unwrap();
            assert!(loss < prev, "loss must strictly decrease: {loss} vs {prev}");
            prev = loss;
            net.store_mut().adam_update(&grads, 1e-3).unwrap();
        }
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        let dims = tiny_dims();
        let mut rng = crate::rng::seeded(9);
        let net = PolicyNet::new(dims, &mut rng);
        let f = rand_feature(&mut rng, dims.feat_dim);
        let reference = vec![5, 0, 3, 4, Vocab::EOS];
        let (_, grads) = net.teacher_forced_loss(&f, &reference).unwrap();

        let fc = f.clone();
        let rc = reference.clone();
        let report = finite_diff_check_conditioned(net.store(), &grads, 1e-5, move |s| {
            let n = PolicyNet::from_store(dims, s.clone())?;
            n.teacher_forced_loss_value(&fc, &rc)
        })
        .unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel err {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }

    #[test]
    fn loss_and_gradients_are_bit_deterministic() {
        let dims = tiny_dims();
        let mut rng = crate::rng::seeded(2);
        let net = PolicyNet::new(dims, &mut rng);
        let f = rand_feature(&mut rng, dims.feat_dim);
        let reference = vec![4, 5, Vocab::EOS];
        let (l1, g1) = net.teacher_forced_loss(&f, &reference).unwrap();
        let (l2, g2) = net.teacher_forced_loss(&f, &reference).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (name, t) in g1.iter() {
            let o = g2.get(name);
            for (a, b) in t.data().iter().zip(o.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
