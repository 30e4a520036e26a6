//! Value network: scores a state (image feature plus partial caption) with a
//! tanh-bounded scalar, so estimates live in the same (-1, 1) range as the
//! cosine reward. A linear image encoder and an LSTM caption encoder feed a
//! small tanh perceptron head.

use rand::Rng;

use crate::data::{ImageFeature, TokenId};
use crate::error::{Error, Result};
use crate::numerics::{
    linear_apply, lstm_backward, lstm_step_cached, GradStore, LstmCellParams, LstmNames,
    LstmStepCache, ParamStore,
};
use crate::policy::PARAM_INIT_RANGE;
use crate::tensor::Tensor;

const V_IMG: &str = "img_enc";
const V_EMBED: &str = "cap_embed";
const V_LSTM: LstmNames = LstmNames {
    w_x: "cap_lstm.w_x",
    w_h: "cap_lstm.w_h",
    b: "cap_lstm.b",
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueDims {
    pub vocab: usize,
    pub d_h: usize,
    pub d_e: usize,
    pub feat_dim: usize,
    /// Hidden tanh layers in the head (2 or 3); the scalar output layer is
    /// tanh as well and not counted here.
    pub hidden_layers: usize,
}

pub struct ValueNet {
    dims: ValueDims,
    store: ParamStore,
}

fn head_w(i: usize) -> String {
    format!("head.w{i}")
}

fn head_b(i: usize) -> String {
    format!("head.b{i}")
}

const HEAD_W_OUT: &str = "head.w_out";
const HEAD_B_OUT: &str = "head.b_out";

impl ValueNet {
    pub fn new<R: Rng>(dims: ValueDims, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(dims)?;
        let names: Vec<String> = net.store.names().map(str::to_string).collect();
        // Initialization order is the sorted name order, fixed by the store.
        for name in names {
            for v in net.store.param_mut(&name).data_mut() {
                *v = rng.gen_range(-PARAM_INIT_RANGE..PARAM_INIT_RANGE);
            }
        }
        Ok(net)
    }

    pub fn zeroed(dims: ValueDims) -> Result<Self> {
        if !(2..=3).contains(&dims.hidden_layers) {
            return Err(Error::Arg(format!(
                "value head supports 2 or 3 hidden layers, got {}",
                dims.hidden_layers
            )));
        }
        let mut store = ParamStore::new();
        store.insert(V_IMG, Tensor::zeros(&[dims.d_h, dims.feat_dim]));
        store.insert(V_EMBED, Tensor::zeros(&[dims.vocab, dims.d_e]));
        store.insert(V_LSTM.w_x, Tensor::zeros(&[4 * dims.d_h, dims.d_e]));
        store.insert(V_LSTM.w_h, Tensor::zeros(&[4 * dims.d_h, dims.d_h]));
        store.insert(V_LSTM.b, Tensor::zeros(&[4 * dims.d_h]));
        for i in 0..dims.hidden_layers {
            let in_dim = if i == 0 { 2 * dims.d_h } else { dims.d_h };
            store.insert(&head_w(i), Tensor::zeros(&[dims.d_h, in_dim]));
            store.insert(&head_b(i), Tensor::zeros(&[dims.d_h]));
        }
        store.insert(HEAD_W_OUT, Tensor::zeros(&[1, dims.d_h]));
        store.insert(HEAD_B_OUT, Tensor::zeros(&[1]));
        Ok(ValueNet { dims, store })
    }

    pub fn from_store(dims: ValueDims, store: ParamStore) -> Result<Self> {
        let reference = Self::zeroed(dims)?;
        for (name, t) in reference.store.iter() {
            if !store.contains(name) {
                return Err(Error::Consistency(format!(
                    "value store missing parameter {name:?}"
                )));
            }
            if store.get(name).shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "value parameter {name:?} has shape {:?}, expected {:?}",
                    store.get(name).shape(),
                    t.shape()
                )));
            }
        }
        if store.len() != reference.store.len() {
            return Err(Error::Consistency("value store has extra parameters".into()));
        }
        Ok(ValueNet { dims, store })
    }

    pub fn dims(&self) -> ValueDims {
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
            w_x: self.store.get(V_LSTM.w_x),
            w_h: self.store.get(V_LSTM.w_h),
            b: self.store.get(V_LSTM.b),
        }
    }

    /// Scalar value of a state; always in (-1, 1).
    pub fn value_estimate(&self, feature: &ImageFeature, prefix: &[TokenId]) -> Result<f64> {
        Ok(self.forward(feature, prefix)?.v)
    }

    /// `(value_estimate - observed_reward)^2` with full gradients.
    pub fn value_loss(
        &self,
        feature: &ImageFeature,
        prefix: &[TokenId],
        observed_reward: f64,
    ) -> Result<(f64, GradStore)> {
        check_reward_range(observed_reward)?;
        let fwd = self.forward(feature, prefix)?;
        let err = fwd.v - observed_reward;
        let loss = err * err;
        let mut grads = GradStore::zeros_like(&self.store);
        self.backward(&fwd, 2.0 * err, &mut grads);
        Ok((loss, grads))
    }

    pub fn value_loss_value(
        &self,
        feature: &ImageFeature,
        prefix: &[TokenId],
        observed_reward: f64,
    ) -> Result<f64> {
        check_reward_range(observed_reward)?;
        let err = self.value_estimate(feature, prefix)? - observed_reward;
        Ok(err * err)
    }

    pub(crate) fn forward(&self, feature: &ImageFeature, prefix: &[TokenId]) -> Result<ValueForward> {
        for &t in prefix {
            if t >= self.dims.vocab {
                return Err(Error::Arg(format!(
                    "token id {t} out of range for vocab of {}",
                    self.dims.vocab
                )));
            }
        }
        let img_code = self.store.get(V_IMG).matvec(&feature.values)?;

        // Caption summary: final encoder state, zero for an empty prefix.
        let mut cap_steps = Vec::with_capacity(prefix.len());
        let mut h = vec![0.0; self.dims.d_h];
        let mut c = vec![0.0; self.dims.d_h];
        for &tok in prefix {
            let x = self.store.get(V_EMBED).row(tok);
            let cache = lstm_step_cached(&self.lstm(), &h, &c, x)?;
            h = cache.h.clone();
            c = cache.c.clone();
            cap_steps.push(cache);
        }

        let mut concat = Vec::with_capacity(2 * self.dims.d_h);
        concat.extend_from_slice(&img_code);
        concat.extend_from_slice(&h);

        let mut layer_out = Vec::with_capacity(self.dims.hidden_layers);
        let mut cur = concat.clone();
        for i in 0..self.dims.hidden_layers {
            let pre = linear_apply(
                self.store.get(&head_w(i)),
                self.store.get(&head_b(i)),
                &cur,
            )?;
            cur = pre.iter().map(|z| z.tanh()).collect();
            layer_out.push(cur.clone());
        }
        let out_pre = linear_apply(
            self.store.get(HEAD_W_OUT),
            self.store.get(HEAD_B_OUT),
            &cur,
        )?[0];
        let v = out_pre.tanh();

        Ok(ValueForward {
            prefix: prefix.to_vec(),
            feature: feature.values.clone(),
            concat,
            cap_steps,
            layer_out,
            v,
        })
    }

    /// Backpropagates `dv` (gradient w.r.t. the scalar output) into `grads`.
    pub(crate) fn backward(&self, fwd: &ValueForward, dv: f64, grads: &mut GradStore) {
        let d_h = self.dims.d_h;
        let dpre_out = dv * (1.0 - fwd.v * fwd.v);
        let last = fwd.layer_out.last().expect("head has hidden layers");
        grads.accum_outer(HEAD_W_OUT, &[dpre_out], last);
        grads.accum_slice(HEAD_B_OUT, &[dpre_out]);
        let mut dcur = self
            .store
            .get(HEAD_W_OUT)
            .matvec_t(&[dpre_out])
            .expect("value backward head");

        for i in (0..self.dims.hidden_layers).rev() {
            let out = &fwd.layer_out[i];
            let dpre: Vec<f64> = dcur
                .iter()
                .zip(out)
                .map(|(d, y)| d * (1.0 - y * y))
                .collect();
            let input = if i == 0 {
                &fwd.concat
            } else {
                &fwd.layer_out[i - 1]
            };
            grads.accum_outer(&head_w(i), &dpre, input);
            grads.accum_slice(&head_b(i), &dpre);
            dcur = self
                .store
                .get(&head_w(i))
                .matvec_t(&dpre)
                .expect("value backward layer");
        }

        let (dimg, dcap) = dcur.split_at(d_h);
        grads.accum_outer(V_IMG, dimg, &fwd.feature);

        if !fwd.cap_steps.is_empty() {
            let mut dh = dcap.to_vec();
            let mut dc = vec![0.0; d_h];
            for (idx, cache) in fwd.cap_steps.iter().enumerate().rev() {
                let (dx, dh_prev, dc_prev) =
                    lstm_backward(&self.lstm(), cache, &dh, &dc, &V_LSTM, grads);
                grads.accum_row(V_EMBED, fwd.prefix[idx], &dx);
                dh = dh_prev;
                dc = dc_prev;
            }
        }
    }
}

fn check_reward_range(r: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::Arg(format!("reward {r} outside [-1, 1]")));
    }
    Ok(())
}

pub(crate) struct ValueForward {
    prefix: Vec<TokenId>,
    concat: Vec<f64>,
    cap_steps: Vec<LstmStepCache>,
    layer_out: Vec<Vec<f64>>,
    pub(crate) v: f64,
    feature: Vec<f64>,
}
