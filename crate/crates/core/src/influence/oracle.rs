//! Closed-form consequences of the linearised validation loss.

use ndarray::Array2;

/// Predicted change of the summed validation loss under perturbation `δᵢ`:
/// `φᵢ·δᵢ`.
pub fn predict_loss_change(phi: &[f64], delta: &[f64]) -> f64 {
    assert_eq!(phi.len(), delta.len(), "influence and perturbation lengths differ");
    crate::linalg::dot(phi, delta)
}

/// The loss-minimising removal pattern: keep (`δ = 0`) where `φ < 0`,
/// remove (`δ = −x`) where `φ ≥ 0`.
pub fn optimal_perturbation(phi: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(phi.len(), x.len(), "influence and feature lengths differ");
    phi.iter()
        .zip(x)
        .map(|(&p, &v)| if p < 0.0 { 0.0 } else { -v })
        .collect()
}

/// `S*ₖ = 1(φₖ·xₖ < 0)`.
pub fn oracle_mask(phi: &[f64], x: &[f64]) -> Vec<u8> {
    assert_eq!(phi.len(), x.len(), "influence and feature lengths differ");
    phi.iter()
        .zip(x)
        .map(|(&p, &v)| u8::from(p * v < 0.0))
        .collect()
}

/// Row-wise [`oracle_mask`] over a whole matrix.
pub fn oracle_masks(phi: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    assert_eq!(phi.dim(), x.dim());
    let mut out = Array2::zeros(x.dim());
    ndarray::Zip::from(&mut out)
        .and(phi)
        .and(x)
        .for_each(|s, &p, &v| *s = if p * v < 0.0 { 1.0 } else { 0.0 });
    out
}
