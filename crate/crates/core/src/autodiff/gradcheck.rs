//! Finite-difference gradient checking.
//!
//! These helpers only evaluate the function forward, so they serve as an
//! oracle that is independent of the backward pass.

use crate::error::Result;
use crate::params::ParameterSet;

/// Central differences `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every scalar of
/// every entry in `params`.
pub fn central_difference(
    params: &ParameterSet,
    h: f64,
    mut f: impl FnMut(&ParameterSet) -> Result<f64>,
) -> Result<ParameterSet> {
    let mut out = params.zeros_like();
    let mut probe = params.clone();
    for (k, p) in params.iter().enumerate() {
        for i in 0..p.tensor.len() {
            let base = p.tensor.data()[i];
            probe.tensor_at_mut(k).data_mut()[i] = base + h;
            let up = f(&probe)?;
            probe.tensor_at_mut(k).data_mut()[i] = base - h;
            let down = f(&probe)?;
            probe.tensor_at_mut(k).data_mut()[i] = base;
            out.tensor_at_mut(k).data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)` over all entries; 0 when both vanish.
pub fn max_relative_error(a: &ParameterSet, b: &ParameterSet) -> f64 {
    let (fa, fb) = (a.flatten(), b.flatten());
    assert_eq!(fa.len(), fb.len(), "gradient layouts differ");
    relative_error(&fa, &fb)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
