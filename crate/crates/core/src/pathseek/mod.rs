//! Regularization path seeking.
//!
//! Two engines produce a sequence of images approximating the PWLS solutions
//! `μ(β)` for β sweeping an interval:
//!
//! - [`ps_rog`] / [`ps_rog_reverse`]: fixed-size updates of the pixels with the
//!   largest penalty-to-data gradient ratio, interleaved with SQS steps at the
//!   KKT-estimated β.
//! - [`ps_dog`]: ADMM iterations whose image update may only move each pixel
//!   along the penalty descent direction of the previous iterate, with β raised
//!   geometrically once the path settles.
//!
//! Distances along the path are Euclidean norms over all pixels, in HU.

mod dog;
mod rog;

pub use dog::ps_dog;
pub use rog::{ps_rog, ps_rog_reverse};

use crate::error::{Error, Result};
use crate::image::{distance_hu, ImageVolume, Unit, HU_PER_MU};
use crate::solvers::PwlsProblem;

/// Guard on the denominator of the gradient ratio.
pub const EPS_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub n_frames: usize,
    pub direction: Direction,
    /// Fraction of pixels moved per ratio-of-gradients step.
    pub p: f64,
    /// Fixed step, HU.
    pub delta_v: f64,
    /// Optimization iterations per frame (the N of PS-ROG-N / PS-DOG-N).
    pub n_opt: usize,
    /// Per-advance β multiplier (direction-of-gradient engine).
    pub beta_ratio: f64,
    /// Subsets for path-seeking gradients.
    pub n_subsets_ps: usize,
    /// Subsets for the intermediate optimization steps.
    pub n_subsets_opt: usize,
    pub rho: f64,
    pub n_inner: usize,
}

impl PathConfig {
    /// Ratio-of-gradients defaults: 40 frames, p = 20 %, Δv = 1 HU, two SQS
    /// iterations per frame, 5 / 20 subsets.
    pub fn rog(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            n_frames: 40,
            direction: Direction::Increasing,
            p: 0.2,
            delta_v: 1.0,
            n_opt: 2,
            beta_ratio: 1.45,
            n_subsets_ps: 5,
            n_subsets_opt: 20,
            rho: 0.1,
            n_inner: 2,
        }
    }

    /// Direction-of-gradient defaults: 40 frames, β ratio 1.45, two ADMM
    /// iterations per frame, 10 subsets for both step types.
    pub fn dog(beta1: f64, beta2: f64) -> Self {
        Self {
            n_subsets_ps: 10,
            n_subsets_opt: 10,
            ..Self::rog(beta1, beta2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.beta1 >= 0.0 && self.beta1.is_finite() && self.beta2.is_finite()) {
            return bad(format!("invalid beta range [{}, {}]", self.beta1, self.beta2));
        }
        if self.beta2 < self.beta1 {
            return bad(format!("beta1 {} exceeds beta2 {}", self.beta1, self.beta2));
        }
        if self.n_frames == 0 {
            return bad("n_frames must be >= 1".into());
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("update fraction p must be in (0, 1], got {}", self.p));
        }
        if !(self.delta_v > 0.0 && self.delta_v.is_finite()) {
            return bad(format!("delta_v must be > 0, got {}", self.delta_v));
        }
        if !(self.beta_ratio > 1.0 && self.beta_ratio.is_finite()) {
            return bad(format!("beta_ratio must be > 1, got {}", self.beta_ratio));
        }
        if self.n_subsets_ps == 0 || self.n_subsets_opt == 0 {
            return bad("subset counts must be >= 1".into());
        }
        if !(self.rho > 0.0) || self.n_inner == 0 {
            return bad("rho must be > 0 and n_inner >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFrame {
    pub index: usize,
    pub image: ImageVolume,
    /// Schedule β (direction of gradient) or KKT estimate (ratio of gradients).
    pub beta_assigned: f64,
    /// Distance (HU, L2) to the target endpoint for ROG, to the start for DOG.
    pub distance: f64,
    pub pixels_updated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconPath {
    pub frames: Vec<PathFrame>,
    pub config: PathConfig,
    pub engine: String,
    /// Why the engine stopped.
    pub termination: String,
}

impl ReconPath {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// `d_j = sign(end_j - start_j)` with exact ties mapping to 0.
pub fn target_direction(start: &ImageVolume, end: &ImageVolume) -> Result<ImageVolume> {
    start.check_same_grid(end)?;
    let a = start.to_mu();
    let b = end.to_mu();
    Ok(ImageVolume {
        grid: start.grid,
        unit: Unit::Hu,
        data: target_direction_slice(&a.data, &b.data),
    })
}

pub(crate) fn target_direction_slice(start: &[f64], end: &[f64]) -> Vec<f64> {
    start.iter().zip(end).map(|(s, e)| sign0(e - s)).collect()
}

#[inline]
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-pixel gradient ratio from ascent gradients `G` (data) and `∇h`.
///
/// The sign of λ is the descent direction of the term being strengthened:
/// increasing β gives `λ = -∇h / |G|`, decreasing β gives `λ = -G / |∇h|`.
pub fn ratio_slice(data_grad: &[f64], penalty_grad: &[f64], direction: Direction) -> Vec<f64> {
    data_grad
        .iter()
        .zip(penalty_grad)
        .map(|(&g, &h)| match direction {
            Direction::Increasing => -h / g.abs().max(EPS_RATIO),
            Direction::Decreasing => -g / h.abs().max(EPS_RATIO),
        })
        .collect()
}

/// Ratio of gradients at `image` using the full data gradient.
pub fn ratio_of_gradients(
    problem: &PwlsProblem,
    image: &ImageVolume,
    direction: Direction,
) -> Result<ImageVolume> {
    let mu = image.to_mu();
    if mu.grid != problem.grid {
        return Err(Error::Dimension("image grid does not match problem".into()));
    }
    let g = problem.full_gradient(&mu.data);
    let h = problem.penalty_gradient(&mu.data);
    Ok(ImageVolume {
        grid: mu.grid,
        unit: Unit::PerMm,
        data: ratio_slice(&g, &h, direction),
    })
}

/// Enforce `μ ≥ 0` and the half-spaces `(μ_j - anchor_j) ∇_j h(anchor) ≤ 0`.
pub fn pocs_project(image: &ImageVolume, anchor: &ImageVolume, anchor_grad_h: &ImageVolume) -> Result<ImageVolume> {
    image.check_same_grid(anchor)?;
    image.check_same_grid(anchor_grad_h)?;
    let mut mu = image.to_mu();
    let anchor = anchor.to_mu();
    pocs_project_slice(&mut mu.data, &anchor.data, &anchor_grad_h.data);
    Ok(mu)
}

pub(crate) fn pocs_project_slice(mu: &mut [f64], anchor: &[f64], anchor_grad_h: &[f64]) {
    for ((m, &a), &g) in mu.iter_mut().zip(anchor).zip(anchor_grad_h) {
        if *m <= 0.0 {
            *m = 0.0;
        }
        if (*m - a) * g >= 0.0 {
            *m = a;
        }
    }
}

/// Direction-of-gradient constrained μ-subproblem of the ADMM iteration:
/// minimise `β h(μ) + ½ Σ weight_j (μ_j - μ^k_j + s_j / weight_j)²` subject to
/// `μ ≥ 0` and `(μ_j - μ^k_j) ∇_j h(μ^k) ≤ 0`, by `n_inner` surrogate descent
/// steps each followed by [`pocs_project`].
pub fn dog_subproblem(
    problem: &PwlsProblem,
    mu_k: &ImageVolume,
    s: &[f64],
    weight: &[f64],
    n_inner: usize,
) -> Result<ImageVolume> {
    let mu = mu_k.to_mu();
    if mu.grid != problem.grid || s.len() != mu.data.len() || weight.len() != mu.data.len() {
        return Err(Error::Dimension("subproblem inputs do not match the grid".into()));
    }
    if n_inner == 0 {
        return Err(Error::InvalidArgument("n_inner must be >= 1".into()));
    }
    let data = dog_subproblem_slice(problem, &mu.data, s, weight, n_inner);
    ImageVolume::from_vec(mu.grid, Unit::PerMm, data)
}

pub(crate) fn dog_subproblem_slice(
    problem: &PwlsProblem,
    mu_k: &[f64],
    s: &[f64],
    weight: &[f64],
    n_inner: usize,
) -> Vec<f64> {
    let anchor_grad = problem.penalty_gradient(mu_k);
    crate::solvers::prox_descent(problem, mu_k, s, weight, n_inner, |x| {
        pocs_project_slice(x, mu_k, &anchor_grad)
    })
}

/// Frame with the smallest RMSD (HU) to `reference`; ties go to the lower index.
pub fn closest_frame(path: &ReconPath, reference: &ImageVolume) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let r = reference.to_mu();
    for frame in &path.frames {
        frame.image.check_same_grid(reference)?;
        let rmsd = distance_hu(&frame.image.to_mu().data, &r.data) / (r.data.len() as f64).sqrt();
        if best.is_none_or(|(_, b)| rmsd < b) {
            best = Some((frame.index, rmsd));
        }
    }
    best.ok_or(Error::EmptyPath)
}

pub(crate) fn delta_mu(delta_v_hu: f64) -> f64 {
    delta_v_hu / HU_PER_MU
}

pub(crate) fn frame(index: usize, grid: crate::image::ImageGrid, mu: &[f64], beta: f64, distance: f64, updated: usize) -> PathFrame {
    PathFrame {
        index,
        image: ImageVolume {
            grid,
            unit: Unit::PerMm,
            data: mu.to_vec(),
        },
        beta_assigned: beta,
        distance,
        pixels_updated: updated,
    }
}
