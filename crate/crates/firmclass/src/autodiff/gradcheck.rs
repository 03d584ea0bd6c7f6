//! Central finite-difference gradient oracle. Uses only forward evaluations,
//! so it stays independent of the tape's backward pass.

use super::tensor::Tensor;

/// Central differences of a scalar function with respect to each parameter
/// tensor: (f(p + h) - f(p - h)) / 2h elementwise.
pub fn central_diff(
    params: &[Tensor],
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    step: f64,
) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape().to_vec());
        for i in 0..params[pi].numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[i] += step;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[i] -= step;
            grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// Max over elements of |a - b| / max(1, |a|, |b|).
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_err shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}
