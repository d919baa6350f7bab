//! Direct solves at log-spaced β and a direction-of-gradient path on a
//! water cylinder, with the closest path frame to every direct solve.
//!
//! `cargo run --release -p pbir-core --example path_study [n] [iterations]`

use pbir_core::metrics::{rmsd, roi_stats, Roi};
use pbir_core::pathseek::{closest_frame, ps_dog, PathConfig};
use pbir_core::simulate::{rasterize, simulate_counts, weighted_data};
use pbir_core::solvers::{admm_solve, estimate_beta, fbp_reconstruct, Filter};
use pbir_core::*;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(128);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(150);
    let (beta1, beta2) = (1e-3, 1e-1);

    let grid = ImageGrid::square(n, 384.0 / n as f64)?;
    let geom = ScanGeometry::desk_default(grid)?;
    let truth = rasterize(&EllipsePhantom::water_cylinder_for_grid(&grid), grid);
    let sino = simulate_counts(&truth, &geom, 2e5, 7, false)?;
    let data = weighted_data(&sino)?;
    let pen = HuberPenalty::new(5.0, Neighborhood::Four)?;
    let p = PwlsProblem::new(&geom, grid, &data, pen, beta1)?;
    let fbp = fbp_reconstruct(&sino, grid, Filter::Hann)?.to_mu();
    let init = ImageVolume::from_vec(grid, Unit::PerMm, fbp.data.iter().map(|v| v.max(0.0)).collect())?;
    let roi = Roi::central_square(&grid, 0.25)?;

    let mut directs: Vec<ImageVolume> = Vec::new();
    for k in 0..5 {
        let beta = beta1 * (beta2 / beta1).powf(k as f64 / 4.0);
        let start = directs.last().unwrap_or(&init);
        let image = admm_solve(&p.with_beta(beta), start, iters, 10, 0.03, 2, None)?.image;
        let (mean, std) = roi_stats(&image, roi)?;
        let est = estimate_beta(&p.with_beta(beta), &image)?;
        println!("beta {beta:.2e}: ROI mean {mean:6.1} HU, std {std:5.2} HU, estimated beta {est:.2e}");
        directs.push(image);
    }

    let config = PathConfig {
        n_frames: 20,
        ..PathConfig::dog(beta1, beta2)
    };
    let path = ps_dog(&p, &directs[0], &config)?;
    println!("{} frames ({})", path.len(), path.termination);
    for (k, d) in directs.iter().enumerate() {
        let (idx, r) = closest_frame(&path, d)?;
        println!("direct solve {k}: closest frame {idx}, RMSD {r:.2} HU");
    }
    let span = rmsd(&path.frames[0].image, &path.frames[path.len() - 1].image, Roi::Full)?;
    println!("first to last frame RMSD {span:.2} HU");
    Ok(())
}
