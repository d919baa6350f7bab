use super::{delta_mu, frame, ratio_slice, sign0, target_direction_slice, Direction, PathConfig, ReconPath};
use crate::error::{Error, Result};
use crate::geometry::SubsetScheme;
use crate::image::{distance_hu, ImageVolume};
use crate::solvers::{estimate_beta_slice, sqs_sweeps, PwlsProblem};

/// Ratio-of-gradients path from `mu_beta1` towards `mu_beta2` (increasing β).
pub fn ps_rog(
    problem: &PwlsProblem,
    mu_beta1: &ImageVolume,
    mu_beta2: &ImageVolume,
    config: &PathConfig,
) -> Result<ReconPath> {
    let config = PathConfig {
        direction: Direction::Increasing,
        ..config.clone()
    };
    rog_engine(problem, mu_beta1, mu_beta2, config)
}

/// Ratio-of-gradients path from `mu_beta2` back towards `mu_beta1`
/// (decreasing β). Less stable than the increasing direction when `μ(β₂)` is
/// very smooth, since `∇h` is then close to zero.
pub fn ps_rog_reverse(
    problem: &PwlsProblem,
    mu_beta2: &ImageVolume,
    mu_beta1: &ImageVolume,
    config: &PathConfig,
) -> Result<ReconPath> {
    let config = PathConfig {
        direction: Direction::Decreasing,
        ..config.clone()
    };
    rog_engine(problem, mu_beta2, mu_beta1, config)
}

fn rog_engine(
    problem: &PwlsProblem,
    start: &ImageVolume,
    target: &ImageVolume,
    config: PathConfig,
) -> Result<ReconPath> {
    config.validate()?;
    start.check_same_grid(target)?;
    if start.grid != problem.grid {
        return Err(Error::Dimension("path endpoints do not match the problem grid".into()));
    }
    let grid = problem.grid;
    let start = start.to_mu();
    let target = target.to_mu().data;
    let engine = match config.direction {
        Direction::Increasing => "ps-rog",
        Direction::Decreasing => "ps-rog-reverse",
    };
    let mut beta_hat = match config.direction {
        Direction::Increasing => config.beta1,
        Direction::Decreasing => config.beta2,
    };
    let mut mu = start.data.clone();
    let mut dist_prev = distance_hu(&mu, &target);
    let mut frames = vec![frame(0, grid, &mu, beta_hat, dist_prev, 0)];
    let finish = |frames, termination: &str| ReconPath {
        frames,
        config: config.clone(),
        engine: engine.into(),
        termination: termination.into(),
    };
    if dist_prev == 0.0 {
        return Ok(finish(frames, "endpoints coincide"));
    }

    let n_views = problem.op.n_views();
    let ps = SubsetScheme::new(n_views, config.n_subsets_ps)?;
    let opt = SubsetScheme::new(n_views, config.n_subsets_opt)?;
    let curvature = if config.n_opt > 0 {
        problem.data_curvature()
    } else {
        Vec::new()
    };
    let (mut ps_cursor, mut opt_cursor) = (0, 0);
    let step = delta_mu(config.delta_v);
    let n = mu.len();
    let quota = ((config.p * n as f64).ceil() as usize).clamp(1, n);
    let mut stalls = 0;
    let mut termination = "frame budget reached";

    while frames.len() < config.n_frames {
        // KKT estimate of the β the current image solves for
        let full = problem.full_gradient(&mu);
        if let Ok(b) = estimate_beta_slice(problem, &mu, &full) {
            beta_hat = b;
        }
        // a few SQS iterations at that β
        if config.n_opt > 0 {
            let p = problem.with_beta(beta_hat);
            sqs_sweeps(&p, &mut mu, &curvature, &opt, &mut opt_cursor, config.n_opt);
        }
        // fixed-step updates, one per path-seeking subset
        let mut updated = 0;
        for _ in 0..ps.n_subsets {
            let data_grad = if ps.n_subsets == 1 {
                problem.full_gradient(&mu)
            } else {
                let g = problem.subset_gradient(&mu, &ps, ps.subset_at(ps_cursor));
                ps_cursor += 1;
                g
            };
            updated += rog_substep(&mut mu, &target, &data_grad, problem, config.direction, step, quota);
        }
        if updated == 0 {
            termination = "empty update set";
            break;
        }
        let dist = distance_hu(&mu, &target);
        frames.push(frame(frames.len(), grid, &mu, beta_hat, dist, updated));
        if dist >= dist_prev {
            stalls += 1;
        } else {
            stalls = 0;
        }
        dist_prev = dist;
        if stalls >= 2 {
            termination = "distance to target stopped decreasing";
            break;
        }
    }
    Ok(finish(frames, termination))
}

/// One fixed-step update; returns the number of pixels moved.
fn rog_substep(
    mu: &mut [f64],
    target: &[f64],
    data_grad: &[f64],
    problem: &PwlsProblem,
    direction: Direction,
    step: f64,
    quota: usize,
) -> usize {
    let penalty_grad = problem.penalty_gradient(mu);
    let d = target_direction_slice(mu, target);
    let mut lambda = ratio_slice(data_grad, &penalty_grad, direction);
    // pixels where both descent directions agree
    let agree: Vec<usize> = (0..mu.len())
        .filter(|&j| penalty_grad[j] * data_grad[j] > 0.0)
        .collect();
    let updated = if !agree.is_empty() {
        for &j in &agree {
            mu[j] += step * sign0(lambda[j]);
        }
        agree.len()
    } else {
        // drop pixels whose ratio points away from the target
        for (l, dj) in lambda.iter_mut().zip(&d) {
            if *l * dj < 0.0 {
                *l = 0.0;
            }
        }
        let threshold = top_k_threshold(&lambda, quota);
        let mut count = 0;
        for j in 0..mu.len() {
            if lambda[j] != 0.0 && d[j] != 0.0 && lambda[j].abs() >= threshold {
                mu[j] += step * d[j];
                count += 1;
            }
        }
        count
    };
    mu.iter_mut().for_each(|v| *v = v.max(0.0));
    updated
}

/// Smallest `t` with at most `k` entries `|λ| > t`, i.e. the k-th largest
/// magnitude (exact selection).
fn top_k_threshold(lambda: &[f64], k: usize) -> f64 {
    let mut mags: Vec<f64> = lambda.iter().map(|v| v.abs()).collect();
    let idx = mags.len() - k;
    let (_, t, _) = mags.select_nth_unstable_by(idx, f64::total_cmp);
    *t
}
