//! Filtered back-projection for parallel-beam data.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::Beam;
use crate::image::{ImageGrid, ImageVolume, Unit};
use crate::simulate::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    Ramp,
    /// Ramp apodized by a Hann window reaching zero at Nyquist.
    Hann,
}

/// Frequency response `|f|` (optionally Hann-apodized) on an `n_pad`-point DFT
/// grid with sample spacing `spacing`. The DC bin is exactly zero.
pub fn ramp_filter_response(n_pad: usize, spacing: f64, filter: Filter) -> Vec<f64> {
    let nyquist = 0.5 / spacing;
    (0..n_pad)
        .map(|k| {
            let kk = k.min(n_pad - k) as f64;
            let f = kk / (n_pad as f64 * spacing);
            match filter {
                Filter::Ramp => f,
                Filter::Hann => f * 0.5 * (1.0 + (PI * f / nyquist).cos()),
            }
        })
        .collect()
}

pub fn fbp_reconstruct(sino: &Sinogram, grid: ImageGrid, filter: Filter) -> Result<ImageVolume> {
    let geom = &sino.geom;
    if !matches!(geom.beam, Beam::Parallel) {
        return Err(Error::UnsupportedGeometry(
            "filtered back-projection supports parallel-beam data only".into(),
        ));
    }
    let n_dets = geom.n_dets;
    let n_views = geom.n_views();
    if sino.l.len() != n_dets * n_views {
        return Err(Error::Dimension("sinogram size does not match geometry".into()));
    }
    let n_pad = (2 * n_dets).next_power_of_two() * 2;
    let tau = geom.det_spacing;
    let response = ramp_filter_response(n_pad, tau, filter);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_pad);
    let inv = planner.plan_fft_inverse(n_pad);

    let mut filtered = vec![0.0; n_dets * n_views];
    let mut buf = vec![Complex::new(0.0, 0.0); n_pad];
    for v in 0..n_views {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &l) in buf.iter_mut().zip(&sino.l[v * n_dets..][..n_dets]) {
            b.re = l;
        }
        fwd.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&response) {
            *b *= *h;
        }
        inv.process(&mut buf);
        let scale = 1.0 / n_pad as f64;
        for (f, b) in filtered[v * n_dets..][..n_dets].iter_mut().zip(&buf) {
            *f = b.re * scale;
        }
    }

    let mut img = ImageVolume::zeros(grid, Unit::PerMm);
    let weight = PI / n_views as f64;
    let half = (n_dets as f64 - 1.0) / 2.0;
    for v in 0..n_views {
        let (s, c) = geom.angles[v].sin_cos();
        let row = &filtered[v * n_dets..][..n_dets];
        for j in 0..grid.ny {
            let y = grid.y_center(j);
            for i in 0..grid.nx {
                let u = grid.x_center(i) * c + y * s;
                let fu = u / tau + half;
                if fu < 0.0 || fu > (n_dets - 1) as f64 {
                    continue;
                }
                let k = fu.floor() as usize;
                let frac = fu - k as f64;
                let val = if k + 1 < n_dets {
                    (1.0 - frac) * row[k] + frac * row[k + 1]
                } else {
                    row[k]
                };
                img.data[j * grid.nx + i] += weight * val;
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanGeometry;
    use crate::simulate::{rasterize, simulate_counts, sinogram_from_counts, EllipsePhantom};

    #[test]
    fn dc_gain_is_zero() {
        for f in [Filter::Ramp, Filter::Hann] {
            let h = ramp_filter_response(64, 0.5, f);
            assert_eq!(h[0], 0.0);
            assert!(h[1] > 0.0);
        }
        let h = ramp_filter_response(64, 0.5, Filter::Hann);
        assert!(h[32].abs() < 1e-15);
    }

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let grid = ImageGrid::square(16, 2.0).unwrap();
        let geom = ScanGeometry::desk_default(grid).unwrap();
        let sino = sinogram_from_counts(&geom, vec![100.0; geom.n_views() * geom.n_dets], 100.0).unwrap();
        let img = fbp_reconstruct(&sino, grid, Filter::Ramp).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_water_cylinder_is_near_zero_hu() {
        let grid = ImageGrid::square(128, 3.0).unwrap();
        let geom = ScanGeometry::desk_default(grid).unwrap();
        let phantom = EllipsePhantom::water_cylinder_for_grid(&grid);
        let radius = phantom.ellipses[0].semi_axis_a;
        let truth = rasterize(&phantom, grid);
        let sino = simulate_counts(&truth, &geom, 2e5, 0, true).unwrap();
        let img = fbp_reconstruct(&sino, grid, Filter::Ramp).unwrap().to_hu();
        let mut sum = 0.0;
        let mut n = 0.0;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.x_center(i).hypot(grid.y_center(j)) <= 0.5 * radius {
                    sum += img.get(i, j);
                    n += 1.0;
                }
            }
        }
        let mean = sum / n;
        assert!(mean.abs() <= 15.0, "mean {mean} HU");
    }

    #[test]
    fn fan_beam_is_unsupported() {
        let grid = ImageGrid::square(16, 2.0).unwrap();
        let geom = ScanGeometry::fan(grid, 8, 24, 2.0, 100.0, 200.0).unwrap();
        let sino = sinogram_from_counts(&geom, vec![1.0; 8 * 24], 1.0).unwrap();
        assert!(matches!(
            fbp_reconstruct(&sino, grid, Filter::Ramp),
            Err(Error::UnsupportedGeometry(_))
        ));
    }
}
