use super::sigma::SigmaField;
use crate::error::{Error, Result};

fn check_aligned(a: &SigmaField, b: &SigmaField) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "sigma fields of {} and {} points",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `KL(a‖b)` between the isotropic Gaussian noise fields, summed over points
/// and their three coordinates. Round-off below zero is clipped.
pub fn gaussian_kl(a: &SigmaField, b: &SigmaField) -> Result<f64> {
    check_aligned(a, b)?;
    Ok(a.sigma()
        .iter()
        .zip(b.sigma())
        .map(|(&sa, &sb)| 3.0 * ((sb / sa).ln() + sa * sa / (2.0 * sb * sb) - 0.5))
        .sum::<f64>()
        .max(0.0))
}

/// Variational Jensen–Shannon divergence of two single Gaussians:
/// `−½·ln(½(1 + e^{−KL₁₂})) − ½·ln(½(1 + e^{−KL₂₁}))`, within `[0, ln 2]`.
pub fn jsd_variational(a: &SigmaField, b: &SigmaField) -> Result<f64> {
    let k12 = gaussian_kl(a, b)?;
    let k21 = gaussian_kl(b, a)?;
    let half = |k: f64| -0.5 * (0.5 * (1.0 + (-k).exp())).ln();
    Ok(half(k12) + half(k21))
}
