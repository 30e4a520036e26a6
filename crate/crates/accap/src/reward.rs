//! Embedding-space reward: a linear map takes image features into a shared
//! space, an LSTM encoder summarizes captions there, and the terminal reward
//! is the cosine similarity of the two unit vectors. The embedding trains
//! with a bidirectional margin ranking hinge over matched/mismatched pairs.

use rand::Rng;

use crate::data::{ImageFeature, TokenId};
use crate::error::{Error, Result};
use crate::numerics::{
    lstm_backward, lstm_step_cached, GradStore, LstmCellParams, LstmNames, LstmStepCache,
    ParamStore,
};
use crate::policy::PARAM_INIT_RANGE;
use crate::tensor::Tensor;

const R_MAP: &str = "l_m";
const R_EMBED: &str = "cap_embed";
const R_LSTM: LstmNames = LstmNames {
    w_x: "cap_lstm.w_x",
    w_h: "cap_lstm.w_h",
    b: "cap_lstm.b",
};

/// Norms below this are treated as degenerate zero embeddings.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardDims {
    pub vocab: usize,
    pub d_emb: usize,
    pub d_e: usize,
    pub feat_dim: usize,
}

pub struct RewardModel {
    dims: RewardDims,
    store: ParamStore,
    gamma: f64,
    alpha: f64,
}

/// L2-normalized embedding; `degenerate` marks a (near-)zero raw vector that
/// was left as the zero vector instead of being normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbedding {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Terminal reward: cosine similarity in [-1, 1], or 0 with the flag set when
/// either embedding is degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScore {
    pub value: f64,
    pub degenerate: bool,
}

impl RewardModel {
    pub fn new<R: Rng>(dims: RewardDims, gamma: f64, alpha: f64, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeroed(dims, gamma, alpha)?;
        let names: Vec<String> = model.store.names().map(str::to_string).collect();
        for name in names {
            for v in model.store.param_mut(&name).data_mut() {
                *v = rng.gen_range(-PARAM_INIT_RANGE..PARAM_INIT_RANGE);
            }
        }
        Ok(model)
    }

    pub fn zeroed(dims: RewardDims, gamma: f64, alpha: f64) -> Result<Self> {
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::Arg(format!("margin gamma must lie in (0,1), got {gamma}")));
        }
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Arg(format!("mix weight alpha must lie in (0,1), got {alpha}")));
        }
        let mut store = ParamStore::new();
        store.insert(R_MAP, Tensor::zeros(&[dims.d_emb, dims.feat_dim]));
        store.insert(R_EMBED, Tensor::zeros(&[dims.vocab, dims.d_e]));
        store.insert(R_LSTM.w_x, Tensor::zeros(&[4 * dims.d_emb, dims.d_e]));
        store.insert(R_LSTM.w_h, Tensor::zeros(&[4 * dims.d_emb, dims.d_emb]));
        store.insert(R_LSTM.b, Tensor::zeros(&[4 * dims.d_emb]));
        Ok(RewardModel {
            dims,
            store,
            gamma,
            alpha,
        })
    }

    pub fn from_store(dims: RewardDims, gamma: f64, alpha: f64, store: ParamStore) -> Result<Self> {
        let reference = Self::zeroed(dims, gamma, alpha)?;
        for (name, t) in reference.store.iter() {
            if !store.contains(name) {
                return Err(Error::Consistency(format!(
                    "reward store missing parameter {name:?}"
                )));
            }
            if store.get(name).shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "reward parameter {name:?} has shape {:?}, expected {:?}",
                    store.get(name).shape(),
                    t.shape()
                )));
            }
        }
        if store.len() != reference.store.len() {
            return Err(Error::Consistency("reward store has extra parameters".into()));
        }
        Ok(RewardModel {
            dims,
            store,
            gamma,
            alpha,
        })
    }

    pub fn dims(&self) -> RewardDims {
        self.dims
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn lstm(&self) -> LstmCellParams<'_> {
        LstmCellParams {
            w_x: self.store.get(R_LSTM.w_x),
            w_h: self.store.get(R_LSTM.w_h),
            b: self.store.get(R_LSTM.b),
        }
    }

    /// `l_m · feature`, L2-normalized.
    pub fn embed_image(&self, feature: &ImageFeature) -> Result<UnitEmbedding> {
        let raw = self.store.get(R_MAP).matvec(&feature.values)?;
        Ok(normalize(raw))
    }

    /// Final encoder state over the caption tokens, L2-normalized.
    pub fn embed_caption(&self, caption: &[TokenId]) -> Result<UnitEmbedding> {
        let (h, _) = self.encode_caption(caption)?;
        Ok(normalize(h))
    }

    /// Cosine similarity of the caption and image embeddings.
    pub fn reward(&self, feature: &ImageFeature, caption: &[TokenId]) -> Result<RewardScore> {
        let img = self.embed_image(feature)?;
        let cap = self.embed_caption(caption)?;
        if img.degenerate || cap.degenerate {
            return Ok(RewardScore {
                value: 0.0,
                degenerate: true,
            });
        }
        let value = dot(&img.values, &cap.values).clamp(-1.0, 1.0);
        Ok(RewardScore {
            value,
            degenerate: false,
        })
    }

    fn encode_caption(&self, caption: &[TokenId]) -> Result<(Vec<f64>, Vec<LstmStepCache>)> {
        if caption.is_empty() {
            return Err(Error::Arg("embed_caption: empty caption".into()));
        }
        for &t in caption {
            if t >= self.dims.vocab {
                return Err(Error::Arg(format!(
                    "token id {t} out of range for vocab of {}",
                    self.dims.vocab
                )));
            }
        }
        let mut steps = Vec::with_capacity(caption.len());
        let mut h = vec![0.0; self.dims.d_emb];
        let mut c = vec![0.0; self.dims.d_emb];
        for &tok in caption {
            let x = self.store.get(R_EMBED).row(tok);
            let cache = lstm_step_cached(&self.lstm(), &h, &c, x)?;
            h = cache.h.clone();
            c = cache.c.clone();
            steps.push(cache);
        }
        Ok((h, steps))
    }

    /// Bidirectional margin ranking loss over a batch of matched pairs,
    /// averaged over the batch, with full gradients.
    pub fn margin_loss(
        &self,
        batch: &[(&ImageFeature, &[TokenId])],
    ) -> Result<(f64, GradStore)> {
        let (loss, sims, images, captions) = self.margin_forward(batch)?;
        let n = batch.len();
        let inv_n = 1.0 / n as f64;

        // dL/ds(i,j): coefficient per similarity entry from every active hinge.
        let mut coeff = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // Mismatched caption j against image i.
                if self.gamma - sims[i][i] + sims[i][j] > 0.0 {
                    coeff[i][j] += inv_n;
                    coeff[i][i] -= inv_n;
                }
                // Mismatched image j against caption i.
                if self.gamma - sims[i][i] + sims[j][i] > 0.0 {
                    coeff[j][i] += inv_n;
                    coeff[i][i] -= inv_n;
                }
            }
        }

        let mut grads = GradStore::zeros_like(&self.store);
        // Image side: d/d(raw image i) through normalization.
        for (i, img) in images.iter().enumerate() {
            if img.unit.degenerate {
                continue;
            }
            let mut dunit = vec![0.0; self.dims.d_emb];
            for (j, cap) in captions.iter().enumerate() {
                let cij = coeff[i][j];
                if cij != 0.0 && !cap.unit.degenerate {
                    for (d, w) in dunit.iter_mut().zip(&cap.unit.values) {
                        *d += cij * w;
                    }
                }
            }
            let draw = normalize_backward(&img.unit.values, img.norm, &dunit);
            grads.accum_outer(R_MAP, &draw, &batch[i].0.values);
        }
        // Caption side: BPTT through each encoder run.
        for (j, cap) in captions.iter().enumerate() {
            if cap.unit.degenerate {
                continue;
            }
            let mut dunit = vec![0.0; self.dims.d_emb];
            for (i, img) in images.iter().enumerate() {
                let cij = coeff[i][j];
                if cij != 0.0 && !img.unit.degenerate {
                    for (d, u) in dunit.iter_mut().zip(&img.unit.values) {
                        *d += cij * u;
                    }
                }
            }
            let mut dh = normalize_backward(&cap.unit.values, cap.norm, &dunit);
            let mut dc = vec![0.0; self.dims.d_emb];
            for (idx, cache) in cap.steps.iter().enumerate().rev() {
                let (dx, dh_prev, dc_prev) =
                    lstm_backward(&self.lstm(), cache, &dh, &dc, &R_LSTM, &mut grads);
                grads.accum_row(R_EMBED, batch[j].1[idx], &dx);
                dh = dh_prev;
                dc = dc_prev;
            }
        }

        Ok((loss, grads))
    }

    pub fn margin_loss_value(&self, batch: &[(&ImageFeature, &[TokenId])]) -> Result<f64> {
        Ok(self.margin_forward(batch)?.0)
    }

    /// Logged-only diagnostic: `alpha * (margin loss + mean matched reward)`.
    pub fn diagnostic_lr(&self, batch: &[(&ImageFeature, &[TokenId])]) -> Result<f64> {
        let (loss, sims, ..) = self.margin_forward(batch)?;
        let mean_matched =
            (0..batch.len()).map(|i| sims[i][i]).sum::<f64>() / batch.len() as f64;
        Ok(self.alpha * (loss + mean_matched))
    }

    #[allow(clippy::type_complexity)]
    fn margin_forward(
        &self,
        batch: &[(&ImageFeature, &[TokenId])],
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<ImageSide>, Vec<CaptionSide>)> {
        if batch.len() < 2 {
            return Err(Error::Arg(format!(
                "margin_loss: batch of {} — mismatched pairs need at least 2 examples",
                batch.len()
            )));
        }
        let mut images = Vec::with_capacity(batch.len());
        let mut captions = Vec::with_capacity(batch.len());
        for (feature, caption) in batch {
            let raw = self.store.get(R_MAP).matvec(&feature.values)?;
            let norm = l2(&raw);
            images.push(ImageSide {
                unit: normalize(raw),
                norm,
            });
            let (h, steps) = self.encode_caption(caption)?;
            let norm = l2(&h);
            captions.push(CaptionSide {
                unit: normalize(h),
                norm,
                steps,
            });
        }
        let n = batch.len();
        let mut sims = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                sims[i][j] = if images[i].unit.degenerate || captions[j].unit.degenerate {
                    0.0
                } else {
                    dot(&images[i].unit.values, &captions[j].unit.values)
                };
            }
        }
        let loss = margin_hinge_total(&sims, self.gamma) / n as f64;
        Ok((loss, sims, images, captions))
    }
}

struct ImageSide {
    unit: UnitEmbedding,
    norm: f64,
}

struct CaptionSide {
    unit: UnitEmbedding,
    norm: f64,
    steps: Vec<LstmStepCache>,
}

/// Sum of both hinge directions over every mismatched (i, j) pair of a
/// similarity matrix: `max(0, γ - s_ii + s_ij) + max(0, γ - s_ii + s_ji)`.
pub fn margin_hinge_total(sims: &[Vec<f64>], gamma: f64) -> f64 {
    let n = sims.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            total += (gamma - sims[i][i] + sims[i][j]).max(0.0);
            total += (gamma - sims[i][i] + sims[j][i]).max(0.0);
        }
    }
    total
}

fn l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(raw: Vec<f64>) -> UnitEmbedding {
    let norm = l2(&raw);
    if norm < DEGENERATE_NORM {
        return UnitEmbedding {
            values: vec![0.0; raw.len()],
            degenerate: true,
        };
    }
    UnitEmbedding {
        values: raw.iter().map(|v| v / norm).collect(),
        degenerate: false,
    }
}

/// Gradient of unit = raw/|raw| : d(raw) = (d(unit) - (unit·d(unit))·unit)/|raw|.
fn normalize_backward(unit: &[f64], norm: f64, dunit: &[f64]) -> Vec<f64> {
    let proj = dot(unit, dunit);
    unit.iter()
        .zip(dunit)
        .map(|(u, d)| (d - proj * u) / norm)
        .collect()
}
