//! Central-difference verification of backward-pass gradients.

use super::mlp::{GradVector, MlpNet};
use crate::Result;

/// Compare a loss closure's analytic gradient against central differences
/// over every parameter of `net`. Returns the worst relative error.
///
/// The closure evaluates the loss for an arbitrary parameter vector and
/// returns both the value and the gradient the implementation claims; only
/// the value is used at perturbed points. The probe step for parameter `p`
/// is `epsilon * (1 + |p|)`, so the check stays scale-aware.
///
/// Relative error uses the larger magnitude as denominator and falls back to
/// absolute error when both gradients are below 1e-8.
pub fn finite_diff_check<F>(net: &MlpNet, loss: F, epsilon: f64) -> Result<f64>
where
    F: Fn(&MlpNet) -> Result<(f64, GradVector)>,
{
    let (_, grad) = loss(net)?;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..net.params.len() {
        let h = epsilon * (1.0 + net.params[i].abs());
        probe.params[i] = net.params[i] + h;
        let (fp, _) = loss(&probe)?;
        probe.params[i] = net.params[i] - h;
        let (fm, _) = loss(&probe)?;
        probe.params[i] = net.params[i];
        let fd = (fp - fm) / (2.0 * h);
        let ad = grad.0[i];
        let denom = ad.abs().max(fd.abs());
        let err = if denom > 1e-8 {
            (ad - fd).abs() / denom
        } else {
            (ad - fd).abs()
        };
        worst = worst.max(err);
    }
    Ok(worst)
}
