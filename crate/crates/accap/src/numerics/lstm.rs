//! Single LSTM cell with hand-derived forward and backward passes.
//!
//! Gate order inside the stacked `4·D_h` pre-activation is fixed:
//! input, forget, cell-candidate, output.

use crate::error::{Error, Result};
use crate::numerics::adam::GradStore;
use crate::numerics::ops::sigmoid;
use crate::tensor::Tensor;

/// Borrowed view of one cell's parameters inside a parameter store.
#[derive(Clone, Copy)]
pub struct LstmCellParams<'a> {
    /// Input-to-gates matrix, `4·D_h × D_in`.
    pub w_x: &'a Tensor,
    /// Hidden-to-gates matrix, `4·D_h × D_h`.
    pub w_h: &'a Tensor,
    /// Gate biases, `4·D_h`.
    pub b: &'a Tensor,
}

/// Store keys a cell's gradients accumulate into.
#[derive(Clone, Copy)]
pub struct LstmNames {
    pub w_x: &'static str,
    pub w_h: &'static str,
    pub b: &'static str,
}

impl<'a> LstmCellParams<'a> {
    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    fn validate(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<()> {
        let dh = self.hidden_dim();
        let din = self.input_dim();
        if self.w_x.rows() != 4 * dh || self.w_h.rows() != 4 * dh || self.b.len() != 4 * dh {
            return Err(Error::Shape(format!(
                "lstm: inconsistent parameter shapes w_x {:?}, w_h {:?}, b {:?}",
                self.w_x.shape(),
                self.w_h.shape(),
                self.b.shape()
            )));
        }
        if h_prev.len() != dh || c_prev.len() != dh || x.len() != din {
            return Err(Error::Shape(format!(
                "lstm: state/input lengths (h={}, c={}, x={}) do not match cell dims (D_h={dh}, D_in={din})",
                h_prev.len(),
                c_prev.len(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Activations recorded by [`lstm_step_cached`]; everything the backward pass
/// needs to avoid recomputation.
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gate_i: Vec<f64>,
    pub gate_f: Vec<f64>,
    pub gate_g: Vec<f64>,
    pub gate_o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

/// One cell update: `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_step(
    params: &LstmCellParams,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = lstm_step_cached(params, h_prev, c_prev, x)?;
    Ok((cache.h, cache.c))
}

pub fn lstm_step_cached(
    params: &LstmCellParams,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
) -> Result<LstmStepCache> {
    params.validate(h_prev, c_prev, x)?;
    let dh = params.hidden_dim();

    let mut pre = params.w_x.matvec(x)?;
    let hp = params.w_h.matvec(h_prev)?;
    for ((p, hv), bv) in pre.iter_mut().zip(&hp).zip(params.b.data()) {
        *p += hv + bv;
    }

    let mut gate_i = vec![0.0; dh];
    let mut gate_f = vec![0.0; dh];
    let mut gate_g = vec![0.0; dh];
    let mut gate_o = vec![0.0; dh];
    for k in 0..dh {
        gate_i[k] = sigmoid(pre[k]);
        gate_f[k] = sigmoid(pre[dh + k]);
        gate_g[k] = pre[2 * dh + k].tanh();
        gate_o[k] = sigmoid(pre[3 * dh + k]);
    }

    let mut c = vec![0.0; dh];
    let mut h = vec![0.0; dh];
    for k in 0..dh {
        c[k] = gate_f[k] * c_prev[k] + gate_i[k] * gate_g[k];
        h[k] = gate_o[k] * c[k].tanh();
    }

    Ok(LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gate_i,
        gate_f,
        gate_g,
        gate_o,
        c,
        h,
    })
}

/// Backward pass for one cached step. `dh` and `dc_in` are the gradients
/// flowing into this step's `h` and `c`; parameter gradients accumulate into
/// `grads` under `names`. Returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_backward(
    params: &LstmCellParams,
    cache: &LstmStepCache,
    dh: &[f64],
    dc_in: &[f64],
    names: &LstmNames,
    grads: &mut GradStore,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = params.hidden_dim();
    let mut dpre = vec![0.0; 4 * d];
    let mut dc_prev = vec![0.0; d];

    for k in 0..d {
        let tc = cache.c[k].tanh();
        let do_ = dh[k] * tc;
        let dc = dc_in[k] + dh[k] * cache.gate_o[k] * (1.0 - tc * tc);
        let di = dc * cache.gate_g[k];
        let df = dc * cache.c_prev[k];
        let dg = dc * cache.gate_i[k];
        dc_prev[k] = dc * cache.gate_f[k];

        let (i, f, g, o) = (
            cache.gate_i[k],
            cache.gate_f[k],
            cache.gate_g[k],
            cache.gate_o[k],
        );
        dpre[k] = di * i * (1.0 - i);
        dpre[d + k] = df * f * (1.0 - f);
        dpre[2 * d + k] = dg * (1.0 - g * g);
        dpre[3 * d + k] = do_ * o * (1.0 - o);
    }

    grads.accum_outer(names.w_x, &dpre, &cache.x);
    grads.accum_outer(names.w_h, &dpre, &cache.h_prev);
    grads.accum_slice(names.b, &dpre);

    // Unwraps are safe: shapes were validated on the forward pass.
    let dx = params.w_x.matvec_t(&dpre).expect("lstm backward dx");
    let dh_prev = params.w_h.matvec_t(&dpre).expect("lstm backward dh_prev");
    (dx, dh_prev, dc_prev)
}
