//! Elementary differentiable operations: affine maps, softmax, cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor added inside the log of [`cross_entropy`] so sampled actions with
/// numerically zero probability cannot produce -inf.
pub const PROB_FLOOR: f64 = 1e-12;

/// Post-normalization floor on softmax outputs; keeps every probability
/// strictly positive even when the exponent underflows.
const SOFTMAX_MIN: f64 = 1e-300;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W·x + b`.
pub fn linear_apply(w: &Tensor, b: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(Error::Shape(format!(
            "linear_apply: bias length {} does not match matrix {:?}",
            b.len(),
            w.shape()
        )));
    }
    let mut y = w.matvec(x)?;
    for (yi, bi) in y.iter_mut().zip(b.data()) {
        *yi += bi;
    }
    Ok(y)
}

/// Numerically stabilized softmax: subtracts the max before exponentiation.
/// Outputs are strictly positive and sum to 1 within 1e-12.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Arg("softmax: empty input".into()));
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numeric("softmax: non-finite input".into()));
    }
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p = (*p / sum).max(SOFTMAX_MIN);
    }
    Ok(out)
}

/// `-ln(probs[target] + PROB_FLOOR)`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::Arg(format!(
            "cross_entropy: target index {} out of range for {} classes",
            target,
            probs.len()
        )));
    }
    Ok(-(probs[target] + PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(z), target)` with respect to the logits
/// `z`, given the already-computed distribution. Exact for the floored log.
pub fn ce_softmax_dlogits(dist: &[f64], target: usize) -> Vec<f64> {
    let p = dist[target];
    let scale = p / (p + PROB_FLOOR);
    dist.iter()
        .enumerate()
        .map(|(j, &q)| scale * (q - if j == target { 1.0 } else { 0.0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ident2() -> Tensor {
        Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn linear_identity() {
        let y = linear_apply(&ident2(), &Tensor::zeros(&[2]), &[3.0, -1.0]).unwrap();
        assert_eq!(y, vec![3.0, -1.0]);
    }

    #[test]
    fn linear_zero_map_returns_bias() {
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::vector(vec![5.0, 5.0]);
        let y = linear_apply(&w, &b, &[9.0, -2.0, 0.3]).unwrap();
        assert_eq!(y, vec![5.0, 5.0]);
    }

    #[test]
    fn linear_random_matches_scalar_oracle() {
        // Independent oracle: explicit triple loop over a fixed 4x3 case.
        let w_data = vec![
            0.7, -0.2, 1.3, //
            0.1, 0.0, -0.5, //
            2.0, 0.25, 0.75, //
            -1.1, 0.6, 0.9,
        ];
        let b_data = vec![0.5, -0.25, 0.0, 1.0];
        let x = [1.5, -2.0, 0.5];
        let mut expect = vec![0.0; 4];
        for i in 0..4 {
            let mut acc = b_data[i];
            for j in 0..3 {
                acc += w_data[i * 3 + j] * x[j];
            }
            expect[i] = acc;
        }
        let w = Tensor::from_vec(&[4, 3], w_data).unwrap();
        let b = Tensor::vector(b_data);
        let y = linear_apply(&w, &b, &x).unwrap();
        for (a, e) in y.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
    }

    #[test]
    fn linear_dimension_error_names_shapes() {
        let w = Tensor::zeros(&[4, 3]);
        let b = Tensor::zeros(&[2]);
        let err = linear_apply(&w, &b, &[0.0; 3]).unwrap_err().to_string();
        assert!(err.contains("[4, 3]"), "{err}");
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0; 4]).unwrap();
        for v in &p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_analytic_case() {
        let p = softmax(&[2.0f64.ln(), 0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-14);
        assert!((p[1] - 0.25).abs() < 1e-14);
        assert!((p[2] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn softmax_large_logit_no_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 1.0 - 1e-12);
        assert!(p[1] > 0.0 && p[1] < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cross_entropy_certain_and_uniform() {
        let ce = cross_entropy(&[1.0, 0.0], 0).unwrap();
        assert!(ce.abs() < 1e-9);
        let uniform = vec![0.1; 10];
        let ce = cross_entropy(&uniform, 3).unwrap();
        assert!((ce - 10.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_direct_recompute() {
        let probs = softmax(&[0.3, -1.2, 0.9, 0.05]).unwrap();
        for t in 0..4 {
            let expect = -(probs[t] + PROB_FLOOR).ln();
            assert!((cross_entropy(&probs, t).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_index_out_of_range() {
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_positive(z in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let p = softmax(&z).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v > 0.0 && *v <= 1.0));
        }
    }
}
