//! Image comparison metrics in HU and noise power spectra.

mod nps;

pub use nps::{nps, nps_difference, nps_peak_path, NpsResult, PeakPath};

use crate::error::{Error, Result};
use crate::image::{ImageGrid, ImageVolume};

/// Pixel subset over which a metric is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Roi {
    Full,
    /// Half-open pixel rectangle `[x0, x0 + width) × [y0, y0 + height)`.
    Rect {
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
    },
    /// Pixels whose centres lie within `radius` mm of `(cx, cy)` mm.
    Disk { cx: f64, cy: f64, radius: f64 },
}

impl Roi {
    /// Centred square with side `fraction` of the smaller grid dimension.
    pub fn central_square(grid: &ImageGrid, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("ROI fraction must be in (0, 1], got {fraction}")));
        }
        let side = ((grid.nx.min(grid.ny) as f64 * fraction).round() as usize).max(1);
        Ok(Roi::Rect {
            x0: (grid.nx - side) / 2,
            y0: (grid.ny - side) / 2,
            width: side,
            height: side,
        })
    }

    /// Row-major pixel indices inside the ROI.
    pub fn indices(&self, grid: &ImageGrid) -> Result<Vec<usize>> {
        match *self {
            Roi::Full => Ok((0..grid.len()).collect()),
            Roi::Rect { x0, y0, width, height } => {
                if width == 0 || height == 0 || x0 + width > grid.nx || y0 + height > grid.ny {
                    return Err(Error::Dimension(format!(
                        "ROI {width}x{height} at ({x0}, {y0}) exceeds {}x{} grid",
                        grid.nx, grid.ny
                    )));
                }
                Ok((y0..y0 + height)
                    .flat_map(|iy| (x0..x0 + width).map(move |ix| iy * grid.nx + ix))
                    .collect())
            }
            Roi::Disk { cx, cy, radius } => {
                let mut out = Vec::new();
                for iy in 0..grid.ny {
                    for ix in 0..grid.nx {
                        let (x, y) = (grid.x_center(ix) - cx, grid.y_center(iy) - cy);
                        if x * x + y * y <= radius * radius {
                            out.push(iy * grid.nx + ix);
                        }
                    }
                }
                if out.is_empty() {
                    return Err(Error::InvalidArgument("disk ROI contains no pixels".into()));
                }
                Ok(out)
            }
        }
    }
}

fn hu_differences(a: &ImageVolume, b: &ImageVolume, roi: Roi) -> Result<Vec<f64>> {
    a.check_same_grid(b)?;
    let (a, b) = (a.to_hu(), b.to_hu());
    Ok(roi.indices(&a.grid)?.into_iter().map(|i| a.data[i] - b.data[i]).collect())
}

/// Root-mean-squared difference in HU over `roi`.
pub fn rmsd(a: &ImageVolume, b: &ImageVolume, roi: Roi) -> Result<f64> {
    let d = hu_differences(a, b, roi)?;
    Ok((d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt())
}

/// Mean absolute difference in HU over `roi`.
pub fn mad(a: &ImageVolume, b: &ImageVolume, roi: Roi) -> Result<f64> {
    let d = hu_differences(a, b, roi)?;
    Ok(d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64)
}

/// Mean and sample standard deviation (HU) inside `roi`.
pub fn roi_stats(image: &ImageVolume, roi: Roi) -> Result<(f64, f64)> {
    let hu = image.to_hu();
    let idx = roi.indices(&hu.grid)?;
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| hu.data[i]).sum::<f64>() / n;
    let var = if idx.len() > 1 {
        idx.iter().map(|&i| (hu.data[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}
