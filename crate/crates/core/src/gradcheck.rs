//! Central finite-difference gradient verification.
//!
//! Used by the test and acceptance suites to check every analytic gradient
//! against an independent numerical estimate. Kept in the library so
//! integration tests across crates share one implementation.

use crate::tensor::Tensor;

/// Default step for central differences in 64-bit checks.
pub const FD_STEP: f64 = 1e-5;

/// Numerical gradient of `f` w.r.t. every entry of every parameter tensor,
/// via central differences with step `h`.
pub fn finite_diff_grads<F>(params: &[Tensor<f64>], mut f: F, h: f64) -> Vec<Tensor<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape().to_vec());
        for ei in 0..params[pi].numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[ei] += h;
            let fp = f(&plus);
            let mut minus = params.to_vec();
            minus[pi].data_mut()[ei] -= h;
            let fm = f(&minus);
            grad.data_mut()[ei] = (fp - fm) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Maximum relative error between analytic and numerical gradients.
/// The denominator is floored to avoid blowing up near-zero entries.
pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
