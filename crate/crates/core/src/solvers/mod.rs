//! Direct PWLS solvers.
//!
//! Sign convention: every stored gradient is an ascent gradient. In particular
//! [`PwlsProblem::ls_gradient`] returns `G = Pᵀ W (Pμ - l)`; code that needs the
//! data-fidelity descent direction negates it where it is used.

mod admm;
mod beta;
mod fbp;
mod sqs;

pub use admm::{
    admm_solve, admm_solve_continuation, continuation_rho, prox_objective, AdmmSolver, AdmmState, ProxMode,
};
pub(crate) use admm::prox_descent;
pub(crate) use sqs::sqs_sweeps;
pub use beta::{estimate_beta, estimate_beta_slice, EPS_PENALTY_GRADIENT_HU};
pub use fbp::{fbp_reconstruct, ramp_filter_response, Filter};
pub use sqs::{sqs_solve, sqs_step};

use crate::error::{Error, Result};
use crate::geometry::{SubsetScheme, SystemOperator};
use crate::image::{ImageGrid, ImageVolume, Unit};
use crate::penalty::HuberPenalty;
use crate::simulate::WeightedData;

/// `½ Σ w (Pμ - l)² + β h(μ)` over `μ ≥ 0`.
#[derive(Clone, Copy)]
pub struct PwlsProblem<'a> {
    pub op: &'a dyn SystemOperator,
    pub grid: ImageGrid,
    pub data: &'a WeightedData,
    pub penalty: HuberPenalty,
    pub beta: f64,
}

impl std::fmt::Debug for PwlsProblem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PwlsProblem")
            .field("grid", &self.grid)
            .field("n_rays", &self.data.len())
            .field("penalty", &self.penalty)
            .field("beta", &self.beta)
            .finish()
    }
}

impl<'a> PwlsProblem<'a> {
    pub fn new(
        op: &'a dyn SystemOperator,
        grid: ImageGrid,
        data: &'a WeightedData,
        penalty: HuberPenalty,
        beta: f64,
    ) -> Result<Self> {
        if op.n_pixels() != grid.len() {
            return Err(Error::Dimension(format!(
                "operator has {} columns, grid has {} pixels",
                op.n_pixels(),
                grid.len()
            )));
        }
        if op.n_rays() != data.len() {
            return Err(Error::Dimension(format!(
                "operator has {} rows, data has {} rays",
                op.n_rays(),
                data.len()
            )));
        }
        check_beta(beta)?;
        Ok(Self {
            op,
            grid,
            data,
            penalty,
            beta,
        })
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..*self }
    }

    pub fn n_pixels(&self) -> usize {
        self.grid.len()
    }

    pub fn objective(&self, image: &ImageVolume) -> Result<f64> {
        self.check_image(image)?;
        Ok(self.objective_slice(&image.to_mu().data))
    }

    pub fn objective_slice(&self, mu: &[f64]) -> f64 {
        let proj = self.op.forward(mu);
        self.data.data_term(&proj) + self.beta * self.penalty.value_mu(&self.grid, mu)
    }

    /// `g(μ) = ½ Σ w (Pμ - l)²`.
    pub fn data_term(&self, mu: &[f64]) -> f64 {
        self.data.data_term(&self.op.forward(mu))
    }

    /// `G = Pᵀ W (Pμ - l)`, the ascent gradient of the data term.
    ///
    /// With a subset, only that subset's rows are used and the result is scaled
    /// by the number of subsets.
    pub fn ls_gradient(&self, image: &ImageVolume, subset: Option<(&SubsetScheme, usize)>) -> Result<ImageVolume> {
        self.check_image(image)?;
        let mu = image.to_mu();
        let grad = match subset {
            None => self.full_gradient(&mu.data),
            Some((scheme, idx)) => {
                if scheme.assignment.len() != self.op.n_views() || idx >= scheme.n_subsets {
                    return Err(Error::Dimension("subset does not match operator".into()));
                }
                self.subset_gradient(&mu.data, scheme, idx)
            }
        };
        ImageVolume::from_vec(self.grid, Unit::PerMm, grad)
    }

    pub fn full_gradient(&self, mu: &[f64]) -> Vec<f64> {
        let views: Vec<usize> = (0..self.op.n_views()).collect();
        self.views_gradient(mu, &views, 1.0)
    }

    pub fn subset_gradient(&self, mu: &[f64], scheme: &SubsetScheme, idx: usize) -> Vec<f64> {
        self.views_gradient(mu, scheme.views(idx), scheme.n_subsets as f64)
    }

    fn views_gradient(&self, mu: &[f64], views: &[usize], scale: f64) -> Vec<f64> {
        let rpv = self.op.rays_per_view();
        let mut proj = vec![0.0; views.len() * rpv];
        self.op.forward_views(mu, views, &mut proj);
        for (k, &v) in views.iter().enumerate() {
            let base = v * rpv;
            for r in 0..rpv {
                let i = base + r;
                let p = &mut proj[k * rpv + r];
                *p = scale * self.data.w[i] * (*p - self.data.l[i]);
            }
        }
        let mut out = vec![0.0; self.n_pixels()];
        self.op.back_views(&proj, views, &mut out);
        out
    }

    /// Separable curvature of the data term, `Pᵀ W P 1`.
    pub fn data_curvature(&self) -> Vec<f64> {
        let ones = vec![1.0; self.n_pixels()];
        let mut proj = self.op.forward(&ones);
        for (p, w) in proj.iter_mut().zip(&self.data.w) {
            *p *= w;
        }
        self.op.back(&proj)
    }

    pub fn penalty_gradient(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mu.len()];
        self.penalty.gradient_mu(&self.grid, mu, &mut out);
        out
    }

    fn check_image(&self, image: &ImageVolume) -> Result<()> {
        if image.grid != self.grid {
            return Err(Error::Dimension(format!(
                "image grid {}x{} does not match problem grid {}x{}",
                image.grid.nx, image.grid.ny, self.grid.nx, self.grid.ny
            )));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and >= 0, got {beta}"
        )));
    }
    Ok(())
}

/// One row of a solver's iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// RMSD to the reference image in HU, when one was supplied.
    pub rmsd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub image: ImageVolume,
    /// Entry 0 is the initial image; entry `k` follows outer iteration `k`.
    pub log: Vec<IterationRecord>,
}

/// Shared bookkeeping for the objective trace and the divergence guard.
pub(crate) struct Tracker<'r> {
    pub log: Vec<IterationRecord>,
    reference: Option<&'r [f64]>,
    initial: f64,
}

impl<'r> Tracker<'r> {
    pub fn new(problem: &PwlsProblem, mu: &[f64], reference: Option<&'r ImageVolume>) -> Self {
        let reference = reference.map(|r| &r.data[..]);
        let initial = problem.objective_slice(mu);
        let mut t = Self {
            log: Vec::new(),
            reference,
            initial,
        };
        t.push(0, initial, mu);
        t
    }

    fn push(&mut self, iteration: usize, objective: f64, mu: &[f64]) {
        let rmsd = self.reference.map(|r| {
            let sq = crate::image::distance_hu(mu, r);
            sq / (mu.len() as f64).sqrt()
        });
        self.log.push(IterationRecord {
            iteration,
            objective,
            rmsd,
        });
    }

    pub fn record(&mut self, problem: &PwlsProblem, iteration: usize, mu: &[f64]) -> Result<()> {
        let objective = problem.objective_slice(mu);
        self.push(iteration, objective, mu);
        if !objective.is_finite() || (self.initial > 0.0 && objective > 10.0 * self.initial) {
            return Err(Error::Diverged {
                iteration,
                objective,
                initial: self.initial,
            });
        }
        Ok(())
    }
}

pub(crate) fn nonnegative_init(problem: &PwlsProblem, init: &ImageVolume) -> Result<Vec<f64>> {
    problem.check_image(init)?;
    let mu = init.to_mu();
    if mu.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("initial image has non-finite values".into()));
    }
    Ok(mu.data.iter().map(|&v| v.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DenseOperator, ScanGeometry};
    use crate::penalty::Neighborhood;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn huber() -> HuberPenalty {
        HuberPenalty::new(5.0, Neighborhood::Four).unwrap()
    }

    #[test]
    fn objective_zero_at_exact_fit() {
        let grid = ImageGrid::square(12, 2.0).unwrap();
        let geom = ScanGeometry::desk_default(grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..0.03)).collect();
        let l = geom.forward(&mu);
        let data = WeightedData::new(l, vec![3.0; geom.n_rays()]).unwrap();
        let p = PwlsProblem::new(&geom, grid, &data, huber(), 0.0).unwrap();
        let img = ImageVolume::from_vec(grid, Unit::PerMm, mu).unwrap();
        assert!(p.objective(&img).unwrap().abs() < 1e-20);
    }

    #[test]
    fn zero_image_zero_data() {
        let grid = ImageGrid::square(8, 2.0).unwrap();
        let geom = ScanGeometry::desk_default(grid).unwrap();
        let data = WeightedData::new(vec![0.0; geom.n_rays()], vec![1.0; geom.n_rays()]).unwrap();
        let p = PwlsProblem::new(&geom, grid, &data, huber(), 123.0).unwrap();
        let img = ImageVolume::zeros(grid, Unit::PerMm);
        assert_eq!(p.objective(&img).unwrap(), 0.0);
    }

    #[test]
    fn gradient_vanishes_at_normal_equations_solution() {
        // square invertible system: the exact solution solves the normal equations
        let a = DenseOperator::from_rows(&[
            vec![2.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.5, 0.0],
            vec![0.0, 0.0, 3.0, 1.0],
            vec![1.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let grid = ImageGrid::square(2, 1.0).unwrap();
        let mu = vec![0.01, 0.02, 0.015, 0.005];
        let data = WeightedData::new(a.forward(&mu), vec![1.0, 2.0, 0.5, 4.0]).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, huber(), 0.0).unwrap();
        let g = p.full_gradient(&mu);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_weight_rays_contribute_nothing() {
        let a = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let grid = ImageGrid::new(2, 1, 1.0, 1.0).unwrap();
        let full = WeightedData::new(vec![5.0, 7.0], vec![0.0, 2.0]).unwrap();
        let only = WeightedData::new(vec![123.0, 7.0], vec![0.0, 2.0]).unwrap();
        let p1 = PwlsProblem::new(&a, grid, &full, huber(), 0.0).unwrap();
        let p2 = PwlsProblem::new(&a, grid, &only, huber(), 0.0).unwrap();
        let mu = [0.3, 0.1];
        assert_eq!(p1.data_term(&mu), p2.data_term(&mu));
        assert_eq!(p1.full_gradient(&mu), p2.full_gradient(&mu));
    }

    #[test]
    fn unit_weights_are_ordinary_least_squares() {
        let a = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let grid = ImageGrid::new(2, 1, 1.0, 1.0).unwrap();
        let data = WeightedData::new(vec![1.0, 2.0, 3.0], vec![1.0; 3]).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, huber(), 0.0).unwrap();
        let mu = [0.2, 0.7];
        let r: Vec<f64> = a.forward(&mu).iter().zip(&data.l).map(|(x, y)| x - y).collect();
        let ols = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        assert!((p.data_term(&mu) - ols).abs() < 1e-15);
    }

    #[test]
    fn subset_gradients_average_to_full() {
        let grid = ImageGrid::square(16, 2.0).unwrap();
        let geom = ScanGeometry::parallel(grid, 40, 24, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..0.03)).collect();
        let l: Vec<f64> = (0..geom.n_rays()).map(|_| rng.random_range(0.0..1.0)).collect();
        let w: Vec<f64> = (0..geom.n_rays()).map(|_| rng.random_range(1.0..100.0)).collect();
        let data = WeightedData::new(l, w).unwrap();
        let p = PwlsProblem::new(&geom, grid, &data, huber(), 0.0).unwrap();
        let scheme = SubsetScheme::new(40, 8).unwrap();
        let full = p.full_gradient(&mu);
        let mut avg = vec![0.0; full.len()];
        for s in 0..8 {
            for (a, g) in avg.iter_mut().zip(p.subset_gradient(&mu, &scheme, s)) {
                *a += g / 8.0;
            }
        }
        let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in avg.iter().zip(&full) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn rejects_mismatched_shapes_and_negative_beta() {
        let grid = ImageGrid::square(8, 2.0).unwrap();
        let geom = ScanGeometry::desk_default(grid).unwrap();
        let data = WeightedData::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(PwlsProblem::new(&geom, grid, &data, huber(), 1.0).is_err());
        let data = WeightedData::new(vec![0.0; geom.n_rays()], vec![1.0; geom.n_rays()]).unwrap();
        assert!(PwlsProblem::new(&geom, grid, &data, huber(), -1.0).is_err());
        let other = ImageGrid::square(4, 2.0).unwrap();
        assert!(PwlsProblem::new(&geom, other, &data, huber(), 1.0).is_err());
    }
}
