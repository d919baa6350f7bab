use super::PwlsProblem;
use crate::error::{Error, Result};
use crate::image::{ImageVolume, HU_PER_MU};

/// Penalty-gradient magnitude (HU domain) below which a pixel is ignored.
pub const EPS_PENALTY_GRADIENT_HU: f64 = 1e-6;

/// KKT estimate of the tuning parameter an image is optimal for.
///
/// At a solution, `G_j + β ∇_j h = 0` on every positive pixel, so the median of
/// `-G_j / ∇_j h` over positive pixels with a non-negligible penalty gradient
/// recovers β.
pub fn estimate_beta(problem: &PwlsProblem, image: &ImageVolume) -> Result<f64> {
    let mu = image.to_mu();
    if mu.grid != problem.grid {
        return Err(Error::Dimension("image grid does not match problem".into()));
    }
    let g = problem.full_gradient(&mu.data);
    estimate_beta_slice(problem, &mu.data, &g)
}

/// As [`estimate_beta`] with a precomputed data gradient `G`.
pub fn estimate_beta_slice(problem: &PwlsProblem, mu: &[f64], data_grad: &[f64]) -> Result<f64> {
    let gh = problem.penalty_gradient(mu);
    let eps = EPS_PENALTY_GRADIENT_HU * HU_PER_MU;
    let mut ratios: Vec<f64> = mu
        .iter()
        .zip(data_grad)
        .zip(&gh)
        .filter(|((&m, _), &h)| m > 0.0 && h.abs() > eps)
        .map(|((_, &g), &h)| -g / h)
        .collect();
    if ratios.is_empty() {
        return Err(Error::PenaltyGradientVanishes);
    }
    Ok(median(&mut ratios))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}
