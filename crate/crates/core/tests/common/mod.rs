//! Shared test utilities: central finite differences against analytic
//! gradients. The oracle only re-evaluates the loss at perturbed
//! parameters, so it is independent of every backward pass it checks.
#![allow(dead_code)] // each test binary uses a subset

use stabr_core::params::ParamBlocks;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error with a floor that ignores sub-noise magnitudes.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Max relative error between `analytic` and central finite differences
/// of `loss` over every element of every parameter block.
pub fn max_param_rel_error<P, F>(params: &P, analytic: &P, loss: F, step: f64) -> f64
where
    P: ParamBlocks + Clone,
    F: Fn(&P) -> f64,
{
    let mut worst: f64 = 0.0;
    let n_blocks = params.blocks().len();
    for b in 0..n_blocks {
        let len = params.blocks()[b].len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.blocks_mut()[b].data_mut()[i] += step;
            let mut minus = params.clone();
            minus.blocks_mut()[b].data_mut()[i] -= step;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let a = analytic.blocks()[b].data()[i];
            worst = worst.max(rel_error(a, numeric));
        }
    }
    worst
}

/// Same check for a gradient with respect to a plain input vector.
pub fn max_vec_rel_error<F>(x: &[f64], analytic: &[f64], loss: F, step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += step;
        let mut minus = x.to_vec();
        minus[i] -= step;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    worst
}
