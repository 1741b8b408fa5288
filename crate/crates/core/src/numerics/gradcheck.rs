use crate::error::{Result, SlmError};

/// Compares `analytic_grad` against central differences of `f` at `x`.
///
/// Returns the largest per-coordinate relative error, where the denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], analytic_grad: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(SlmError::Input(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    if x.len() != analytic_grad.len() {
        return Err(SlmError::Shape {
            op: "finite_diff_check",
            left: (x.len(), 1),
            right: (analytic_grad.len(), 1),
        });
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(SlmError::Evaluation(format!(
                "non-finite function value at coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = analytic_grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}
