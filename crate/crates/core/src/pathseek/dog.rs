use super::{frame, Direction, PathConfig, ReconPath};
use crate::error::{Error, Result};
use crate::image::{distance_hu, ImageVolume};
use crate::solvers::{AdmmSolver, PwlsProblem};

/// Direction-of-gradient path starting from a reconstruction at `beta1`.
///
/// Each loop runs one ADMM iteration with the constrained μ-update, then
/// `n_opt` ordinary ADMM iterations, and stores a frame. β is multiplied by
/// `beta_ratio` whenever the ordinary iterations did not increase the distance
/// to the start image (with `n_opt = 0`: whenever the distance did not increase
/// since the previous frame). The path stops once a frame has been stored at
/// β ≥ `beta2`, or when `n_frames` frames exist.
pub fn ps_dog(problem: &PwlsProblem, mu_beta1: &ImageVolume, config: &PathConfig) -> Result<ReconPath> {
    let config = PathConfig {
        direction: Direction::Increasing,
        ..config.clone()
    };
    config.validate()?;
    if mu_beta1.grid != problem.grid {
        return Err(Error::Dimension("start image does not match the problem grid".into()));
    }
    let grid = problem.grid;
    let start = mu_beta1.to_mu().data;
    if start.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidData("start image must be finite and nonnegative".into()));
    }
    let mut frames = vec![frame(0, grid, &start, config.beta1, 0.0, 0)];
    let finish = |frames, termination: &str| ReconPath {
        frames,
        config: config.clone(),
        engine: "ps-dog".into(),
        termination: termination.into(),
    };
    if config.beta1 >= config.beta2 {
        return Ok(finish(frames, "empty beta range"));
    }

    let mut beta = config.beta1;
    let mut solver = AdmmSolver::from_mu(
        problem.with_beta(beta),
        start.clone(),
        config.n_subsets_ps,
        config.rho,
        config.n_inner,
        None,
    )?;
    let mut opt_solver = if config.n_opt > 0 && config.n_subsets_opt != config.n_subsets_ps {
        Some(AdmmSolver::from_mu(
            problem.with_beta(beta),
            start.clone(),
            config.n_subsets_opt,
            config.rho,
            config.n_inner,
            Some(solver.curvature().to_vec()),
        )?)
    } else {
        None
    };
    let mut dist_prev = 0.0;
    let mut termination = "frame budget reached";

    while frames.len() < config.n_frames {
        solver.dog_step();
        let dist_constrained = distance_hu(solver.mu(), &start);
        match opt_solver.as_mut() {
            Some(s) => {
                s.set_beta(beta)?;
                s.state.mu = solver.mu().to_vec();
                for _ in 0..config.n_opt {
                    s.step();
                }
                solver.state.mu = s.state.mu.clone();
            }
            None => {
                for _ in 0..config.n_opt {
                    solver.step();
                }
            }
        }
        let mu = solver.mu();
        let dist = distance_hu(mu, &start);
        let previous = &frames[frames.len() - 1].image.data;
        let changed = mu.iter().zip(previous).filter(|(a, b)| a != b).count();
        frames.push(frame(frames.len(), grid, mu, beta, dist, changed));
        if beta >= config.beta2 {
            termination = "reached beta2";
            break;
        }
        // settled at this β: the ordinary iterations did not move further from
        // the start than the constrained one left it
        let reference = if config.n_opt > 0 { dist_constrained } else { dist_prev };
        if dist <= reference {
            beta *= config.beta_ratio;
            solver.set_beta(beta)?;
        }
        dist_prev = dist;
    }
    Ok(finish(frames, termination))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DenseOperator;
    use crate::image::{ImageGrid, Unit};
    use crate::penalty::{HuberPenalty, Neighborhood};
    use crate::simulate::WeightedData;

    fn setup() -> (DenseOperator, WeightedData, ImageGrid) {
        let grid = ImageGrid::square(4, 1.0).unwrap();
        // each row sums a pair of pixels
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| {
                let mut r = vec![0.0; 16];
                r[i % 16] = 1.0;
                r[(i * 7 + 3) % 16] += 1.0;
                r
            })
            .collect();
        let a = DenseOperator::from_rows(&rows).unwrap();
        let l: Vec<f64> = (0..24).map(|i| 0.04 + 0.004 * ((i * 5 % 7) as f64 - 3.0)).collect();
        let data = WeightedData::new(l, vec![50.0; 24]).unwrap();
        (a, data, grid)
    }

    #[test]
    fn equal_endpoints_give_single_frame() {
        let (a, data, grid) = setup();
        let pen = HuberPenalty::new(5.0, Neighborhood::Four).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, pen, 1e-4).unwrap();
        let img = ImageVolume::filled(grid, Unit::PerMm, 0.02);
        let path = ps_dog(&p, &img, &PathConfig::dog(1e-4, 1e-4)).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.frames[0].image, img);
    }

    #[test]
    fn schedule_is_geometric_and_bounded() {
        let (a, data, grid) = setup();
        let pen = HuberPenalty::new(5.0, Neighborhood::Four).unwrap();
        let p = PwlsProblem::new(&a, grid, &data, pen, 1e-5).unwrap();
        let img = ImageVolume::filled(grid, Unit::PerMm, 0.02);
        let config = PathConfig {
            n_frames: 60,
            n_subsets_ps: 2,
            n_subsets_opt: 2,
            ..PathConfig::dog(1e-5, 1e-3)
        };
        let path = ps_dog(&p, &img, &config).unwrap();
        assert_eq!(path.frames[0].image, img);
        for w in path.frames.windows(2) {
            let (b0, b1) = (w[0].beta_assigned, w[1].beta_assigned);
            assert!(b1 == b0 || (b1 / b0 - config.beta_ratio).abs() < 1e-12);
        }
        let last = path.frames.last().unwrap().beta_assigned;
        assert!(last <= config.beta2 * config.beta_ratio);
        assert!(path.frames.iter().all(|f| f.image.data.iter().all(|v| *v >= 0.0)));
    }
}
