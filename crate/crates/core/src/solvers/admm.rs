//! Linearized augmented-Lagrangian / ADMM iteration with ordered subsets.
//!
//! Per subiteration, with `ζ` the latest (subset-scaled) data gradient and `v`
//! the back-projected split residual:
//!
//! ```text
//! s   = ρ ζ + (1 - ρ) v
//! μ⁺  = argmin_{μ ≥ 0} β h(μ) + ½ ρ ‖μ - μ + (ρ D)⁻¹ s‖²_D
//! ζ   = M ∇g_m(μ⁺)
//! v   = (ρ ζ + v) / (ρ + 1)
//! ```
//!
//! `D = Pᵀ W P 1` is the elementwise data-term majorizer. The μ-subproblem is
//! solved approximately by a few separable-surrogate descent steps.

use super::{check_beta, nonnegative_init, PwlsProblem, SolveOutput, Tracker};
use crate::error::{Error, Result};
use crate::geometry::SubsetScheme;
use crate::image::{ImageVolume, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxMode {
    /// Nonnegativity only.
    Plain,
    /// Nonnegativity plus the direction-of-gradient half-spaces anchored at
    /// the current iterate.
    DirectionOfGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub mu: Vec<f64>,
    /// `Aᵀ(z - y)`, the back-projected split residual.
    pub v: Vec<f64>,
    /// Most recent scaled data gradient, evaluated at `mu`.
    pub zeta: Vec<f64>,
    /// Completed subiterations.
    pub iteration: usize,
    pub cursor: usize,
}

pub struct AdmmSolver<'a> {
    problem: PwlsProblem<'a>,
    scheme: SubsetScheme,
    rho: f64,
    n_inner: usize,
    curvature: Vec<f64>,
    pub state: AdmmState,
}

impl<'a> AdmmSolver<'a> {
    pub fn new(
        problem: PwlsProblem<'a>,
        init: &ImageVolume,
        n_subsets: usize,
        rho: f64,
        n_inner: usize,
    ) -> Result<Self> {
        let mu = nonnegative_init(&problem, init)?;
        Self::from_mu(problem, mu, n_subsets, rho, n_inner, None)
    }

    /// Start from a nonnegative attenuation image. `v` and `ζ` are set to the
    /// full data gradient (split variable `z = Aμ`). A precomputed data
    /// curvature can be passed to skip one projection pair.
    pub fn from_mu(
        problem: PwlsProblem<'a>,
        mu: Vec<f64>,
        n_subsets: usize,
        rho: f64,
        n_inner: usize,
        curvature: Option<Vec<f64>>,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
        }
        if n_inner == 0 {
            return Err(Error::InvalidArgument("n_inner must be >= 1".into()));
        }
        if mu.len() != problem.n_pixels() {
            return Err(Error::Dimension("initial image size".into()));
        }
        let scheme = SubsetScheme::new(problem.op.n_views(), n_subsets)?;
        let curvature = curvature.unwrap_or_else(|| problem.data_curvature());
        let grad = problem.full_gradient(&mu);
        Ok(Self {
            problem,
            scheme,
            rho,
            n_inner,
            curvature,
            state: AdmmState {
                mu,
                v: grad.clone(),
                zeta: grad,
                iteration: 0,
                cursor: 0,
            },
        })
    }

    pub fn problem(&self) -> &PwlsProblem<'a> {
        &self.problem
    }

    pub fn beta(&self) -> f64 {
        self.problem.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        check_beta(beta)?;
        self.problem.beta = beta;
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn set_rho(&mut self, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
        }
        self.rho = rho;
        Ok(())
    }

    pub fn n_subsets(&self) -> usize {
        self.scheme.n_subsets
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn mu(&self) -> &[f64] {
        &self.state.mu
    }

    pub fn image(&self) -> ImageVolume {
        ImageVolume {
            grid: self.problem.grid,
            unit: Unit::PerMm,
            data: self.state.mu.clone(),
        }
    }

    /// `s = ρ ζ + (1 - ρ) v` for the next subiteration.
    pub fn next_s(&self) -> Vec<f64> {
        let rho = self.rho;
        self.state
            .zeta
            .iter()
            .zip(&self.state.v)
            .map(|(z, v)| rho * z + (1.0 - rho) * v)
            .collect()
    }

    /// Elementwise weight `ρ D` of the μ-subproblem's quadratic term.
    pub fn prox_weight(&self) -> Vec<f64> {
        self.curvature.iter().map(|d| self.rho * d).collect()
    }

    pub fn subiteration(&mut self, mode: ProxMode) {
        let s = self.next_s();
        let weight = self.prox_weight();
        let p = &self.problem;
        let mu_next = match mode {
            ProxMode::Plain => prox_descent(p, &self.state.mu, &s, &weight, self.n_inner, |x| {
                x.iter_mut().for_each(|v| *v = v.max(0.0))
            }),
            ProxMode::DirectionOfGradient => crate::pathseek::dog_subproblem_slice(
                p,
                &self.state.mu,
                &s,
                &weight,
                self.n_inner,
            ),
        };
        let zeta = if self.scheme.n_subsets == 1 {
            p.full_gradient(&mu_next)
        } else {
            let m = self.scheme.subset_at(self.state.cursor);
            p.subset_gradient(&mu_next, &self.scheme, m)
        };
        let rho = self.rho;
        for (v, z) in self.state.v.iter_mut().zip(&zeta) {
            *v = (rho * z + *v) / (rho + 1.0);
        }
        self.state.zeta = zeta;
        self.state.mu = mu_next;
        self.state.cursor += 1;
        self.state.iteration += 1;
    }

    /// One outer iteration: a sweep over every subset.
    pub fn sweep(&mut self, mode: ProxMode) {
        for _ in 0..self.scheme.n_subsets {
            self.subiteration(mode);
        }
    }

    /// One ordinary outer iteration.
    pub fn step(&mut self) {
        self.sweep(ProxMode::Plain)
    }

    /// One outer iteration with direction-of-gradient constrained μ-updates.
    pub fn dog_step(&mut self) {
        self.sweep(ProxMode::DirectionOfGradient)
    }
}

/// Approximate minimiser of `β h(x) + ½ Σ_j weight_j (x_j - μ_j + s_j / weight_j)²`
/// by `n_inner` separable-surrogate steps, each followed by `project`.
pub(crate) fn prox_descent<F: Fn(&mut [f64])>(
    problem: &PwlsProblem,
    mu_k: &[f64],
    s: &[f64],
    weight: &[f64],
    n_inner: usize,
    project: F,
) -> Vec<f64> {
    let beta = problem.beta;
    let d_h = beta * problem.penalty.curvature_mu();
    let mut x = mu_k.to_vec();
    for _ in 0..n_inner {
        let gh = problem.penalty_gradient(&x);
        for j in 0..x.len() {
            let denom = weight[j] + d_h;
            if denom > 0.0 {
                let grad = weight[j] * (x[j] - mu_k[j]) + s[j] + beta * gh[j];
                x[j] -= grad / denom;
            }
        }
        project(&mut x);
    }
    x
}

/// Value of the μ-subproblem objective, used to check the inner descent.
pub fn prox_objective(problem: &PwlsProblem, x: &[f64], mu_k: &[f64], s: &[f64], weight: &[f64]) -> f64 {
    let quad: f64 = x
        .iter()
        .zip(mu_k)
        .zip(s)
        .zip(weight)
        .filter(|(_, w)| **w > 0.0)
        .map(|(((x, m), s), w)| {
            let r = x - m + s / w;
            0.5 * w * r * r
        })
        .sum();
    problem.beta * problem.penalty.value_mu(&problem.grid, x) + quad
}

/// Decreasing AL penalty for outer iteration `k` (from 0), floored at
/// `rho_min`: 1 at `k = 0`, then `π/(k+1) · sqrt(1 - (π/(2(k+1)))²)`.
pub fn continuation_rho(k: usize, rho_min: f64) -> f64 {
    let rho = if k == 0 {
        1.0
    } else {
        let a = std::f64::consts::PI / (k as f64 + 1.0);
        a * (1.0 - (a / 2.0).powi(2)).sqrt()
    };
    rho.max(rho_min)
}

/// Like [`admm_solve`] with ρ following [`continuation_rho`] down to `rho_min`.
pub fn admm_solve_continuation(
    problem: &PwlsProblem,
    init: &ImageVolume,
    n_iters: usize,
    n_subsets: usize,
    rho_min: f64,
    n_inner: usize,
    reference: Option<&ImageVolume>,
) -> Result<SolveOutput> {
    let mut solver = AdmmSolver::new(*problem, init, n_subsets, continuation_rho(0, rho_min), n_inner)?;
    let reference = reference.map(ImageVolume::to_mu);
    let mut tracker = Tracker::new(problem, solver.mu(), reference.as_ref());
    for it in 1..=n_iters {
        solver.set_rho(continuation_rho(it - 1, rho_min))?;
        solver.step();
        tracker.record(problem, it, solver.mu())?;
    }
    Ok(SolveOutput {
        image: solver.image(),
        log: tracker.log,
    })
}

/// Run `n_iters` outer ADMM iterations from `init`.
pub fn admm_solve(
    problem: &PwlsProblem,
    init: &ImageVolume,
    n_iters: usize,
    n_subsets: usize,
    rho: f64,
    n_inner: usize,
    reference: Option<&ImageVolume>,
) -> Result<SolveOutput> {
    let mut solver = AdmmSolver::new(*problem, init, n_subsets, rho, n_inner)?;
    let reference = reference.map(ImageVolume::to_mu);
    let mut tracker = Tracker::new(problem, solver.mu(), reference.as_ref());
    for it in 1..=n_iters {
        solver.step();
        tracker.record(problem, it, solver.mu())?;
    }
    Ok(SolveOutput {
        image: solver.image(),
        log: tracker.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DenseOperator, SystemOperator};
    use crate::image::ImageGrid;
    use crate::penalty::{HuberPenalty, Neighborhood};
    use crate::simulate::WeightedData;

    fn toy() -> (DenseOperator, WeightedData, ImageGrid) {
        let a = DenseOperator::from_rows(&[
            vec![1.0, 2.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![2.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0, 3.0],
        ])
        .unwrap();
        let data = WeightedData::new(vec![0.1, 0.05, 0.2, 0.3], vec![4.0, 1.0, 9.0, 2.0]).unwrap();
        (a, data, ImageGrid::square(2, 1.0).unwrap())
    }

    #[test]
    fn first_s_matches_hand_calculation() {
        let (a, data, grid) = toy();
        let pen = HuberPenalty::new(5.0, Neighborhood::Four).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, pen, 0.0).unwrap();
        let mu0 = vec![0.01, 0.02, 0.03, 0.04];
        let solver = AdmmSolver::from_mu(p, mu0.clone(), 1, 0.5, 2, None).unwrap();
        // residual r = W (A μ0 - l), s¹ = Aᵀ r since v⁰ = ζ⁰ = Aᵀ r
        let am = [0.01 + 0.04 + 0.04, 0.02 + 0.03, 0.02 + 0.03 + 0.04, 0.01 + 0.02 + 0.03 + 0.12];
        let r = [
            4.0 * (am[0] - 0.1),
            1.0 * (am[1] - 0.05),
            9.0 * (am[2] - 0.2),
            2.0 * (am[3] - 0.3),
        ];
        let expect = [
            r[0] + 2.0 * r[2] + r[3],
            2.0 * r[0] + r[1] + r[3],
            r[1] + r[2] + r[3],
            r[0] + r[2] + 3.0 * r[3],
        ];
        let s = solver.next_s();
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        // curvature D = Aᵀ W A 1
        let a1 = [4.0, 2.0, 4.0, 6.0];
        let w = [4.0, 1.0, 9.0, 2.0];
        let wa1: Vec<f64> = a1.iter().zip(w).map(|(x, y)| x * y).collect();
        let d = a.back(&wa1);
        assert_eq!(solver.curvature(), &d[..]);
    }

    #[test]
    fn zero_data_zero_init_stays_zero() {
        let (a, _, grid) = toy();
        let data = WeightedData::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        let pen = HuberPenalty::new(5.0, Neighborhood::Four).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, pen, 2.0).unwrap();
        let mut solver = AdmmSolver::from_mu(p, vec![0.0; 4], 2, 0.5, 2, None).unwrap();
        for _ in 0..5 {
            solver.step();
            assert!(solver.mu().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_bad_rho() {
        let (a, data, grid) = toy();
        let pen = HuberPenalty::new(5.0, Neighborhood::Four).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, pen, 0.0).unwrap();
        for rho in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                AdmmSolver::from_mu(p, vec![0.0; 4], 1, rho, 2, None),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn plain_prox_with_zero_beta_is_shifted_clamp() {
        let (a, data, grid) = toy();
        let pen = HuberPenalty::new(5.0, Neighborhood::Four).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, pen, 0.0).unwrap();
        let mu = [0.1, 0.2, 0.3, 0.05];
        let s = [1.0, -2.0, 0.5, 4.0];
        let w = [10.0, 10.0, 2.0, 20.0];
        let x = prox_descent(&p, &mu, &s, &w, 2, |x| x.iter_mut().for_each(|v| *v = v.max(0.0)));
        for j in 0..4 {
            let expect: f64 = (mu[j] - s[j] / w[j]).max(0.0);
            assert!((x[j] - expect).abs() < 1e-15);
        }
    }
}
