//! Acquisition geometry, the ray-driven projector and ordered subsets.
//!
//! The projector is a Joseph-style line integral: each ray is stepped along its
//! dominant axis, one sample per pixel row (or column), and the two nearest
//! pixels in that row are blended linearly. The back projector replays the
//! same traversal and scatters instead of gathering, so it is the exact
//! transpose of the forward operator.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImageGrid, ImageVolume, Unit};

/// A linear system operator `P` with rows grouped by view.
///
/// Ray `r` of view `v` lives at row `v * rays_per_view() + r`. The subset
/// variants operate on the rows of the listed views only, concatenated in the
/// order given.
pub trait SystemOperator: Sync {
    fn n_pixels(&self) -> usize;
    fn n_views(&self) -> usize;
    fn rays_per_view(&self) -> usize;

    fn n_rays(&self) -> usize {
        self.n_views() * self.rays_per_view()
    }

    /// `out[k * rays_per_view() + r] = [P image]` for ray `r` of `views[k]`.
    fn forward_views(&self, image: &[f64], views: &[usize], out: &mut [f64]);

    /// `out = P_views^T rays`; `out` is overwritten.
    fn back_views(&self, rays: &[f64], views: &[usize], out: &mut [f64]);

    fn forward(&self, image: &[f64]) -> Vec<f64> {
        let views: Vec<usize> = (0..self.n_views()).collect();
        let mut out = vec![0.0; self.n_rays()];
        self.forward_views(image, &views, &mut out);
        out
    }

    fn back(&self, rays: &[f64]) -> Vec<f64> {
        let views: Vec<usize> = (0..self.n_views()).collect();
        let mut out = vec![0.0; self.n_pixels()];
        self.back_views(rays, &views, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beam {
    Parallel,
    /// Flat, equally spaced detector.
    Fan {
        source_to_iso: f64,
        source_to_det: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    pub grid: ImageGrid,
    pub angles: Vec<f64>,
    pub n_dets: usize,
    pub det_spacing: f64,
    pub beam: Beam,
    trig: Vec<(f64, f64)>,
}

impl ScanGeometry {
    pub fn new(
        grid: ImageGrid,
        angles: Vec<f64>,
        n_dets: usize,
        det_spacing: f64,
        beam: Beam,
    ) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidArgument("n_views must be >= 1".into()));
        }
        if n_dets == 0 {
            return Err(Error::InvalidArgument("n_dets must be >= 1".into()));
        }
        if !(det_spacing > 0.0 && det_spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "det_spacing must be positive, got {det_spacing}"
            )));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) || angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument(
                "view angles must be finite and strictly increasing".into(),
            ));
        }
        let full_range = match beam {
            Beam::Parallel => PI,
            Beam::Fan {
                source_to_iso,
                source_to_det,
            } => {
                if !(source_to_iso > 0.0 && source_to_det > source_to_iso) {
                    return Err(Error::InvalidArgument(format!(
                        "fan beam needs 0 < source_to_iso < source_to_det, got {source_to_iso}, {source_to_det}"
                    )));
                }
                let (w, h) = grid.extent();
                if source_to_iso <= 0.5 * (w * w + h * h).sqrt() {
                    return Err(Error::InvalidArgument(
                        "fan-beam source must lie outside the image grid".into(),
                    ));
                }
                2.0 * PI
            }
        };
        let span = angles[angles.len() - 1] - angles[0];
        if span >= full_range {
            return Err(Error::InvalidArgument(format!(
                "angular span {span} covers the full range; a view is duplicated"
            )));
        }
        let trig = angles.iter().map(|a| (a.cos(), a.sin())).collect();
        Ok(Self {
            grid,
            angles,
            n_dets,
            det_spacing,
            beam,
            trig,
        })
    }

    /// Parallel beam with `n_views` uniformly spaced over `[0, π)`.
    pub fn parallel(grid: ImageGrid, n_views: usize, n_dets: usize, det_spacing: f64) -> Result<Self> {
        let angles = uniform_angles(n_views, PI);
        Self::new(grid, angles, n_dets, det_spacing, Beam::Parallel)
    }

    /// Fan beam with `n_views` uniformly spaced over `[0, 2π)`.
    pub fn fan(
        grid: ImageGrid,
        n_views: usize,
        n_dets: usize,
        det_spacing: f64,
        source_to_iso: f64,
        source_to_det: f64,
    ) -> Result<Self> {
        let angles = uniform_angles(n_views, 2.0 * PI);
        Self::new(
            grid,
            angles,
            n_dets,
            det_spacing,
            Beam::Fan {
                source_to_iso,
                source_to_det,
            },
        )
    }

    /// 360 parallel views over 180°, `ceil(1.5 nx)` detectors at pixel pitch.
    pub fn desk_default(grid: ImageGrid) -> Result<Self> {
        let n_dets = (3 * grid.nx).div_ceil(2);
        Self::parallel(grid, 360, n_dets, grid.dx)
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    /// Detector coordinate of element `det` (mm, centred).
    #[inline]
    pub fn det_coord(&self, det: usize) -> f64 {
        (det as f64 - (self.n_dets as f64 - 1.0) / 2.0) * self.det_spacing
    }

    /// A point on the ray and its unit direction.
    #[inline]
    fn ray(&self, view: usize, det: usize) -> ((f64, f64), (f64, f64)) {
        let (c, s) = self.trig[view];
        let u = self.det_coord(det);
        match self.beam {
            Beam::Parallel => ((u * c, u * s), (-s, c)),
            Beam::Fan {
                source_to_iso,
                source_to_det,
            } => {
                let src = (source_to_iso * s, -source_to_iso * c);
                let dxr = -source_to_det * s + u * c;
                let dyr = source_to_det * c + u * s;
                let n = dxr.hypot(dyr);
                (src, (dxr / n, dyr / n))
            }
        }
    }

    /// Visit every `(pixel, weight)` coefficient of row `(view, det)` of `P`.
    #[inline]
    fn trace<F: FnMut(usize, f64)>(&self, view: usize, det: usize, mut visit: F) {
        let g = &self.grid;
        let ((ox, oy), (ux, uy)) = self.ray(view, det);
        if uy.abs() >= ux.abs() {
            let w = g.dy / uy.abs();
            // fi(j) = a + b j
            let b = g.dy * ux / (uy * g.dx);
            let a = (ox + (g.y_center(0) - oy) / uy * ux) / g.dx + (g.nx as f64 - 1.0) / 2.0;
            for j in index_range(a, b, g.ny, g.nx) {
                interp(a + b * j as f64, g.nx, |i, f| visit(j * g.nx + i, w * f));
            }
        } else {
            let w = g.dx / ux.abs();
            let b = g.dx * uy / (ux * g.dy);
            let a = (oy + (g.x_center(0) - ox) / ux * uy) / g.dy + (g.ny as f64 - 1.0) / 2.0;
            for i in index_range(a, b, g.nx, g.ny) {
                interp(a + b * i as f64, g.ny, |j, f| visit(j * g.nx + i, w * f));
            }
        }
    }
}

/// Superset of the steps `k < n_steps` for which `a + b k` lies in `(-1, n)`.
#[inline]
fn index_range(a: f64, b: f64, n_steps: usize, n: usize) -> std::ops::Range<usize> {
    let (lo, hi) = if b == 0.0 {
        if a > -1.0 && a < n as f64 {
            (0, n_steps)
        } else {
            (0, 0)
        }
    } else {
        let k1 = (-1.0 - a) / b;
        let k2 = (n as f64 - a) / b;
        let (kmin, kmax) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
        // widen by one step; interp rejects out-of-range samples exactly
        let lo = (kmin.floor() - 1.0).max(0.0) as usize;
        let hi = ((kmax.ceil() + 2.0).max(0.0) as usize).min(n_steps);
        (lo.min(hi), hi)
    };
    lo..hi
}

/// Linear interpolation weights at fractional index `f` on `0..n`.
#[inline]
fn interp<F: FnMut(usize, f64)>(f: f64, n: usize, mut visit: F) {
    if f <= -1.0 || f >= n as f64 {
        return;
    }
    // f > -1, so truncation of f + 1 is floor up to rounding
    let mut i0 = (f + 1.0) as isize - 1;
    if i0 as f64 > f {
        i0 -= 1;
    }
    let frac = f - i0 as f64;
    if i0 >= 0 {
        visit(i0 as usize, 1.0 - frac);
    }
    if i0 + 1 < n as isize && frac > 0.0 {
        visit((i0 + 1) as usize, frac);
    }
}

fn uniform_angles(n_views: usize, range: f64) -> Vec<f64> {
    (0..n_views)
        .map(|v| v as f64 * range / n_views as f64)
        .collect()
}

/// Views per back-projection work group. Partial images are summed in group
/// order so results do not depend on the thread count.
const BACK_GROUP: usize = 45;

impl SystemOperator for ScanGeometry {
    fn n_pixels(&self) -> usize {
        self.grid.len()
    }

    fn n_views(&self) -> usize {
        self.angles.len()
    }

    fn rays_per_view(&self) -> usize {
        self.n_dets
    }

    fn forward_views(&self, image: &[f64], views: &[usize], out: &mut [f64]) {
        assert_eq!(image.len(), self.grid.len());
        assert_eq!(out.len(), views.len() * self.n_dets);
        out.par_chunks_mut(self.n_dets)
            .zip(views.par_iter())
            .for_each(|(row, &v)| {
                for (det, o) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    self.trace(v, det, |p, w| acc += w * image[p]);
                    *o = acc;
                }
            });
    }

    fn back_views(&self, rays: &[f64], views: &[usize], out: &mut [f64]) {
        assert_eq!(rays.len(), views.len() * self.n_dets);
        assert_eq!(out.len(), self.grid.len());
        let n_dets = self.n_dets;
        let partials: Vec<Vec<f64>> = views
            .par_chunks(BACK_GROUP)
            .enumerate()
            .map(|(g, group)| {
                let mut img = vec![0.0; self.grid.len()];
                for (k, &v) in group.iter().enumerate() {
                    let row = &rays[(g * BACK_GROUP + k) * n_dets..][..n_dets];
                    for (det, &r) in row.iter().enumerate() {
                        if r != 0.0 {
                            self.trace(v, det, |p, w| img[p] += w * r);
                        }
                    }
                }
                img
            })
            .collect();
        out.iter_mut().for_each(|o| *o = 0.0);
        for part in &partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
    }
}

/// An explicit dense matrix; every row is its own view.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

impl SystemOperator for DenseOperator {
    fn n_pixels(&self) -> usize {
        self.cols
    }

    fn n_views(&self) -> usize {
        self.rows
    }

    fn rays_per_view(&self) -> usize {
        1
    }

    fn forward_views(&self, image: &[f64], views: &[usize], out: &mut [f64]) {
        for (o, &r) in out.iter_mut().zip(views) {
            let row = &self.values[r * self.cols..][..self.cols];
            *o = row.iter().zip(image).map(|(a, x)| a * x).sum();
        }
    }

    fn back_views(&self, rays: &[f64], views: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&y, &r) in rays.iter().zip(views) {
            let row = &self.values[r * self.cols..][..self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * y;
            }
        }
    }
}

/// Partition of the views into interleaved ordered subsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetScheme {
    pub n_subsets: usize,
    /// Subset index of each view.
    pub assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl SubsetScheme {
    /// View `v` goes to subset `v mod n_subsets`; subsets are visited in
    /// bit-reversed index order.
    pub fn new(n_views: usize, n_subsets: usize) -> Result<Self> {
        if n_subsets == 0 || n_subsets > n_views {
            return Err(Error::InvalidArgument(format!(
                "n_subsets must be in 1..={n_views}, got {n_subsets}"
            )));
        }
        let assignment: Vec<usize> = (0..n_views).map(|v| v % n_subsets).collect();
        let members = (0..n_subsets)
            .map(|s| (s..n_views).step_by(n_subsets).collect())
            .collect();
        Ok(Self {
            n_subsets,
            assignment,
            members,
            order: bit_reversal_order(n_subsets),
        })
    }

    /// Views of subset `index`, in increasing order.
    pub fn views(&self, index: usize) -> &[usize] {
        &self.members[index]
    }

    /// Subset indices in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Subset visited at position `cursor` of the cyclic visiting order.
    pub fn subset_at(&self, cursor: usize) -> usize {
        self.order[cursor % self.n_subsets]
    }
}

pub fn make_subsets(geom: &ScanGeometry, n_subsets: usize) -> Result<SubsetScheme> {
    SubsetScheme::new(geom.n_views(), n_subsets)
}

fn bit_reversal_order(n: usize) -> Vec<usize> {
    let bits = usize::BITS - (n - 1).leading_zeros();
    if bits == 0 {
        return vec![0];
    }
    (0..1usize << bits)
        .map(|k| k.reverse_bits() >> (usize::BITS - bits))
        .filter(|&r| r < n)
        .collect()
}

fn subset_views<'a>(
    geom: &ScanGeometry,
    subset: Option<(&'a SubsetScheme, usize)>,
    all: &'a mut Vec<usize>,
) -> Result<&'a [usize]> {
    match subset {
        None => {
            *all = (0..geom.n_views()).collect();
            Ok(all)
        }
        Some((scheme, idx)) => {
            if scheme.assignment.len() != geom.n_views() {
                return Err(Error::Dimension(format!(
                    "subset scheme covers {} views, geometry has {}",
                    scheme.assignment.len(),
                    geom.n_views()
                )));
            }
            if idx >= scheme.n_subsets {
                return Err(Error::InvalidArgument(format!(
                    "subset {idx} out of range 0..{}",
                    scheme.n_subsets
                )));
            }
            Ok(scheme.views(idx))
        }
    }
}

/// Line integrals of `image` along every ray (or every ray of one subset).
pub fn forward_project(
    image: &ImageVolume,
    geom: &ScanGeometry,
    subset: Option<(&SubsetScheme, usize)>,
) -> Result<Vec<f64>> {
    if image.grid != geom.grid {
        return Err(Error::Dimension(format!(
            "image grid {}x{} does not match geometry grid {}x{}",
            image.grid.nx, image.grid.ny, geom.grid.nx, geom.grid.ny
        )));
    }
    let mut all = Vec::new();
    let views = subset_views(geom, subset, &mut all)?;
    let mut out = vec![0.0; views.len() * geom.n_dets];
    geom.forward_views(&image.data, views, &mut out);
    Ok(out)
}

/// Exact adjoint of [`forward_project`].
pub fn back_project(
    rays: &[f64],
    geom: &ScanGeometry,
    subset: Option<(&SubsetScheme, usize)>,
) -> Result<ImageVolume> {
    let mut all = Vec::new();
    let views = subset_views(geom, subset, &mut all)?;
    if rays.len() != views.len() * geom.n_dets {
        return Err(Error::Dimension(format!(
            "{} ray values, expected {} views x {} detectors",
            rays.len(),
            views.len(),
            geom.n_dets
        )));
    }
    let mut out = ImageVolume::zeros(geom.grid, Unit::PerMm);
    geom.back_views(rays, views, &mut out.data);
    Ok(out)
}
