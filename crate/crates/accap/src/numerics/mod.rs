//! Minimal differentiable-operation kit: forward + analytic backward passes,
//! the Adam optimizer, and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod ops;

pub use adam::{GradStore, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{
    finite_diff_check, finite_diff_check_conditioned, GradCheckReport, CONDITIONING_SCALE,
};
pub use lstm::{lstm_backward, lstm_step, lstm_step_cached, LstmCellParams, LstmNames, LstmStepCache};
pub use ops::{ce_softmax_dlogits, cross_entropy, linear_apply, sigmoid, softmax, PROB_FLOOR};
