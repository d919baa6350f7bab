use super::{nonnegative_init, PwlsProblem, SolveOutput, Tracker};
use crate::error::Result;
use crate::geometry::SubsetScheme;
use crate::image::{ImageVolume, Unit};

/// One separable-quadratic-surrogate update given a data gradient:
/// `μ ← max(0, μ - (G + β∇h) / (D_g + β D_h))`.
pub fn sqs_step(problem: &PwlsProblem, mu: &mut [f64], data_grad: &[f64], d_g: &[f64]) {
    let grad_h = problem.penalty_gradient(mu);
    let beta = problem.beta;
    let d_h = beta * problem.penalty.curvature_mu();
    for (((m, g), h), d) in mu.iter_mut().zip(data_grad).zip(&grad_h).zip(d_g) {
        let denom = d + d_h;
        if denom > 0.0 {
            *m = (*m - (g + beta * h) / denom).max(0.0);
        }
    }
}

/// Run `n_iters` sweeps over the subsets, advancing `cursor` through the
/// bit-reversed subset order.
pub(crate) fn sqs_sweeps(
    problem: &PwlsProblem,
    mu: &mut [f64],
    d_g: &[f64],
    scheme: &SubsetScheme,
    cursor: &mut usize,
    n_iters: usize,
) {
    for _ in 0..n_iters * scheme.n_subsets {
        let grad = if scheme.n_subsets == 1 {
            problem.full_gradient(mu)
        } else {
            problem.subset_gradient(mu, scheme, scheme.subset_at(*cursor))
        };
        sqs_step(problem, mu, &grad, d_g);
        *cursor += 1;
    }
}

/// Ordered-subsets SQS. With one subset the objective never increases.
pub fn sqs_solve(
    problem: &PwlsProblem,
    init: &ImageVolume,
    n_iters: usize,
    n_subsets: usize,
    reference: Option<&ImageVolume>,
) -> Result<SolveOutput> {
    let mut mu = nonnegative_init(problem, init)?;
    let scheme = SubsetScheme::new(problem.op.n_views(), n_subsets)?;
    let d_g = problem.data_curvature();
    let reference = reference.map(ImageVolume::to_mu);
    let mut tracker = Tracker::new(problem, &mu, reference.as_ref());
    let mut cursor = 0;
    for it in 1..=n_iters {
        sqs_sweeps(problem, &mut mu, &d_g, &scheme, &mut cursor, 1);
        tracker.record(problem, it, &mu)?;
    }
    Ok(SolveOutput {
        image: ImageVolume::from_vec(problem.grid, Unit::PerMm, mu)?,
        log: tracker.log,
    })
}
