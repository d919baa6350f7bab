use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Roi;
use crate::error::{Error, Result};
use crate::image::ImageVolume;

/// Noise power spectrum of a set of realizations over a rectangular ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct NpsResult {
    /// Row-major `ny × nx`, DC at `(nx / 2, ny / 2)`; mm²·HU².
    pub spectrum: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    /// Frequency of each column / row, mm⁻¹.
    pub freq_x: Vec<f64>,
    pub freq_y: Vec<f64>,
    /// Centre frequency of each annular bin, mm⁻¹.
    pub radial_freq: Vec<f64>,
    pub radial: Vec<f64>,
    pub peak_frequency: f64,
    pub n_realizations: usize,
}

impl NpsResult {
    fn df(&self) -> f64 {
        (self.freq_x.get(1).map_or(0.0, |f| f - self.freq_x[0]))
            * (self.freq_y.get(1).map_or(0.0, |f| f - self.freq_y[0]))
    }

    /// Integral of the spectrum over frequency (HU²). Equals the mean residual
    /// pixel variance.
    pub fn total_power(&self) -> f64 {
        self.spectrum.iter().sum::<f64>() * self.df()
    }

    /// Radial profile divided by the total power.
    pub fn normalized_profile(&self) -> Vec<f64> {
        let total = self.total_power();
        if total > 0.0 {
            self.radial.iter().map(|v| v / total).collect()
        } else {
            vec![0.0; self.radial.len()]
        }
    }
}

/// Peak frequencies along a path together with the number of increases.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakPath {
    pub peaks: Vec<f64>,
    pub violations: usize,
}

fn roi_rect(roi: Roi, grid: &crate::image::ImageGrid) -> Result<(usize, usize, usize, usize)> {
    match roi {
        Roi::Full => Ok((0, 0, grid.nx, grid.ny)),
        Roi::Rect { x0, y0, width, height } => {
            roi.indices(grid)?;
            Ok((x0, y0, width, height))
        }
        Roi::Disk { .. } => Err(Error::InvalidArgument("NPS requires a rectangular ROI".into())),
    }
}

fn extract(image: &ImageVolume, rect: (usize, usize, usize, usize)) -> Vec<f64> {
    let hu = image.to_hu();
    let (x0, y0, w, h) = rect;
    (y0..y0 + h)
        .flat_map(|iy| (x0..x0 + w).map(move |ix| (ix, iy)))
        .map(|(ix, iy)| hu.data[iy * hu.grid.nx + ix])
        .collect()
}

/// `|DFT|²` of a real `ny × nx` image, row-major, DC at index 0.
fn power_2d(planner: &mut FftPlanner<f64>, data: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(nx);
    for row in buf.chunks_exact_mut(nx) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(ny);
    let mut col = vec![Complex::new(0.0, 0.0); ny];
    for ix in 0..nx {
        for iy in 0..ny {
            col[iy] = buf[iy * nx + ix];
        }
        col_fft.process(&mut col);
        for iy in 0..ny {
            buf[iy * nx + ix] = col[iy];
        }
    }
    buf.iter().map(|c| c.norm_sqr()).collect()
}

fn shifted_freqs(n: usize, spacing: f64) -> Vec<f64> {
    let half = (n / 2) as isize;
    (0..n as isize).map(|k| (k - half) as f64 / (n as f64 * spacing)).collect()
}

fn finish(acc: Vec<f64>, nx: usize, ny: usize, dx: f64, dy: f64, n_realizations: usize) -> NpsResult {
    // fftshift
    let mut spectrum = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let sy = (iy + ny / 2) % ny;
            let sx = (ix + nx / 2) % nx;
            spectrum[sy * nx + sx] = acc[iy * nx + ix];
        }
    }
    let freq_x = shifted_freqs(nx, dx);
    let freq_y = shifted_freqs(ny, dy);
    let nyquist = (0.5 / dx).min(0.5 / dy);
    let n_bins = (nx.min(ny) / 2).max(1);
    let width = nyquist / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (iy, fy) in freq_y.iter().enumerate() {
        for (ix, fx) in freq_x.iter().enumerate() {
            let bin = ((fx * fx + fy * fy).sqrt() / width) as usize;
            if bin < n_bins {
                sums[bin] += spectrum[iy * nx + ix];
                counts[bin] += 1;
            }
        }
    }
    let radial: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let radial_freq: Vec<f64> = (0..n_bins).map(|b| (b as f64 + 0.5) * width).collect();
    let peak = radial
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > radial[best] { i } else { best });
    NpsResult {
        spectrum,
        nx,
        ny,
        freq_x,
        freq_y,
        peak_frequency: radial_freq[peak],
        radial_freq,
        radial,
        n_realizations,
    }
}

/// Ensemble NPS: each realization minus the ensemble mean, transformed over
/// the ROI, `|·|²` averaged with an `N / (N - 1)` correction and scaled by
/// `dx·dy / (Nx·Ny)`.
pub fn nps(realizations: &[ImageVolume], roi: Roi) -> Result<NpsResult> {
    if realizations.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "NPS needs at least 2 realizations, got {}",
            realizations.len()
        )));
    }
    let first = &realizations[0];
    for r in &realizations[1..] {
        first.check_same_grid(r)?;
    }
    let rect = roi_rect(roi, &first.grid)?;
    let (nx, ny) = (rect.2, rect.3);
    let patches: Vec<Vec<f64>> = realizations.iter().map(|r| extract(r, rect)).collect();
    let n = patches.len() as f64;
    let mut mean = vec![0.0; nx * ny];
    for p in &patches {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / n);
    }
    let mut planner = FftPlanner::new();
    let mut acc = vec![0.0; nx * ny];
    for p in &patches {
        let resid: Vec<f64> = p.iter().zip(&mean).map(|(v, m)| v - m).collect();
        let pw = power_2d(&mut planner, &resid, nx, ny);
        acc.iter_mut().zip(pw).for_each(|(a, v)| *a += v);
    }
    let (dx, dy) = (first.grid.dx, first.grid.dy);
    let scale = dx * dy / (nx * ny) as f64 / (n - 1.0);
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(finish(acc, nx, ny, dx, dy, realizations.len()))
}

/// NPS from the difference of two realizations, with ½ scaling.
pub fn nps_difference(a: &ImageVolume, b: &ImageVolume, roi: Roi) -> Result<NpsResult> {
    a.check_same_grid(b)?;
    let rect = roi_rect(roi, &a.grid)?;
    let (nx, ny) = (rect.2, rect.3);
    let diff: Vec<f64> = extract(a, rect).iter().zip(extract(b, rect)).map(|(x, y)| x - y).collect();
    let mut planner = FftPlanner::new();
    let mut acc = power_2d(&mut planner, &diff, nx, ny);
    let scale = 0.5 * a.grid.dx * a.grid.dy / (nx * ny) as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(finish(acc, nx, ny, a.grid.dx, a.grid.dy, 2))
}

/// Peak frequency per frame; a violation is any increase from one frame to
/// the next.
pub fn nps_peak_path(path: &[NpsResult]) -> PeakPath {
    let peaks: Vec<f64> = path.iter().map(|r| r.peak_frequency).collect();
    let violations = peaks.windows(2).filter(|w| w[1] > w[0]).count();
    PeakPath { peaks, violations }
}
