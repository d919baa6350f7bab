//! Ellipse phantoms and monochromatic Poisson projection data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geometry::{ScanGeometry, SystemOperator};
use crate::image::{ImageGrid, ImageVolume, Unit};

/// HU of air; background of every rasterized phantom.
pub const AIR_HU: f64 = -1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
    /// Counter-clockwise rotation of the `a` axis, radians.
    pub rotation: f64,
    /// Added to every pixel whose centre lies inside (HU).
    pub value: f64,
}

impl Ellipse {
    pub fn circle(center_x: f64, center_y: f64, radius: f64, value: f64) -> Self {
        Self {
            center_x,
            center_y,
            semi_axis_a: radius,
            semi_axis_b: radius,
            rotation: 0.0,
            value,
        }
    }

    /// Boundary points count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = (dx * c + dy * s) / self.semi_axis_a;
        let v = (-dx * s + dy * c) / self.semi_axis_b;
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EllipsePhantom {
    pub ellipses: Vec<Ellipse>,
}

impl EllipsePhantom {
    pub fn new(ellipses: Vec<Ellipse>) -> Result<Self> {
        for (k, e) in ellipses.iter().enumerate() {
            if !(e.semi_axis_a > 0.0 && e.semi_axis_b > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "ellipse {k}: semi-axes must be positive"
                )));
            }
            if ![e.center_x, e.center_y, e.rotation, e.value]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::InvalidArgument(format!(
                    "ellipse {k}: non-finite parameter"
                )));
            }
        }
        Ok(Self { ellipses })
    }

    /// Uniform water cylinder of the given radius (0 HU on air).
    pub fn water_cylinder(radius: f64) -> Self {
        Self {
            ellipses: vec![Ellipse::circle(0.0, 0.0, radius, -AIR_HU)],
        }
    }

    /// The 160 mm radius water cylinder, shrunk if it would not fit in `grid`.
    pub fn water_cylinder_for_grid(grid: &ImageGrid) -> Self {
        let (w, h) = grid.extent();
        Self::water_cylinder(160.0_f64.min(0.42 * w.min(h)))
    }

    /// Elliptical body with soft-tissue, fat and bone-like inserts,
    /// scaled to the grid's field of view.
    pub fn abdomen_for_grid(grid: &ImageGrid) -> Self {
        let (w, h) = grid.extent();
        let s = 0.5 * w.min(h);
        let e = |cx: f64, cy: f64, a: f64, b: f64, rot: f64, value: f64| Ellipse {
            center_x: cx * s,
            center_y: cy * s,
            semi_axis_a: a * s,
            semi_axis_b: b * s,
            rotation: rot,
            value,
        };
        Self {
            ellipses: vec![
                e(0.0, 0.0, 0.85, 0.62, 0.0, 1040.0),
                e(-0.35, 0.1, 0.28, 0.2, 0.3, 20.0),
                e(0.38, 0.05, 0.12, 0.16, 0.0, -100.0),
                e(0.0, -0.38, 0.1, 0.1, 0.0, 360.0),
                e(0.15, 0.3, 0.08, 0.05, -0.5, 60.0),
                e(-0.1, -0.1, 0.06, 0.06, 0.0, 160.0),
                e(0.5, -0.3, 0.07, 0.04, 0.8, -60.0),
            ],
        }
    }
}

/// Pixel value = sum of the values of every ellipse containing its centre,
/// on an air background.
pub fn rasterize(phantom: &EllipsePhantom, grid: ImageGrid) -> ImageVolume {
    let mut img = ImageVolume::filled(grid, Unit::Hu, AIR_HU);
    for j in 0..grid.ny {
        let y = grid.y_center(j);
        for i in 0..grid.nx {
            let x = grid.x_center(i);
            let v: f64 = phantom
                .ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.value)
                .sum();
            img.data[j * grid.nx + i] += v;
        }
    }
    img
}

pub fn hu_image_to_mu(image: &ImageVolume) -> ImageVolume {
    image.to_mu()
}

pub fn mu_image_to_hu(image: &ImageVolume) -> ImageVolume {
    image.to_hu()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub geom: ScanGeometry,
    /// Log-normalized line integrals `ln(I0 / counts)`.
    pub l: Vec<f64>,
    /// Statistical weights (measured counts).
    pub w: Vec<f64>,
    pub counts: Vec<f64>,
    pub i0: f64,
    pub noiseless: bool,
    /// Number of rays whose zero count was clamped to 1 before the log.
    pub n_clamped: usize,
}

/// Poisson counts for each line integral, one independent stream per ray.
///
/// Ray `k` draws from ChaCha8 seeded with `seed` on stream `k`, so results do
/// not depend on evaluation order.
pub fn poisson_counts(line_integrals: &[f64], i0: f64, seed: u64) -> Vec<f64> {
    line_integrals
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let mean = i0 * (-l).exp();
            if !(mean > 0.0) {
                return 0.0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            Poisson::new(mean).map_or(0.0, |p| p.sample(&mut rng))
        })
        .collect()
}

/// Build the sinogram record from measured counts.
pub fn sinogram_from_counts(geom: &ScanGeometry, counts: Vec<f64>, i0: f64) -> Result<Sinogram> {
    if counts.len() != geom.n_rays() {
        return Err(Error::Dimension(format!(
            "{} counts for {} rays",
            counts.len(),
            geom.n_rays()
        )));
    }
    let mut n_clamped = 0;
    let l = counts
        .iter()
        .map(|&c| {
            if c < 1.0 {
                n_clamped += 1;
            }
            (i0 / c.max(1.0)).ln()
        })
        .collect();
    Ok(Sinogram {
        geom: geom.clone(),
        l,
        w: counts.clone(),
        counts,
        i0,
        noiseless: false,
        n_clamped,
    })
}

/// Simulate transmission data for an attenuation image.
///
/// With `noiseless`, counts are replaced by their means: `l = Pμ` and
/// `w = I0 exp(-Pμ)`.
pub fn simulate_counts(
    image: &ImageVolume,
    geom: &ScanGeometry,
    i0: f64,
    seed: u64,
    noiseless: bool,
) -> Result<Sinogram> {
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::InvalidArgument(format!("I0 must be positive, got {i0}")));
    }
    let mu = image.to_mu();
    let line = crate::geometry::forward_project(&mu, geom, None)?;
    if noiseless {
        let w: Vec<f64> = line.iter().map(|&l| i0 * (-l).exp()).collect();
        return Ok(Sinogram {
            geom: geom.clone(),
            counts: w.clone(),
            w,
            l: line,
            i0,
            noiseless: true,
            n_clamped: 0,
        });
    }
    let counts = poisson_counts(&line, i0, seed);
    sinogram_from_counts(geom, counts, i0)
}

/// Line integrals and weights in the form the solvers consume.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedData {
    pub l: Vec<f64>,
    pub w: Vec<f64>,
}

impl WeightedData {
    pub fn new(l: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if l.len() != w.len() {
            return Err(Error::Dimension(format!(
                "{} line integrals but {} weights",
                l.len(),
                w.len()
            )));
        }
        if let Some(k) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "weight {k} is {} (must be finite and >= 0)",
                w[k]
            )));
        }
        if let Some(k) = l.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("line integral {k} is not finite")));
        }
        Ok(Self { l, w })
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    /// `y = W^{1/2} l`.
    pub fn y(&self) -> Vec<f64> {
        self.l.iter().zip(&self.w).map(|(l, w)| w.sqrt() * l).collect()
    }

    /// `½ Σ w (p - l)²` for projections `p` of the full data set.
    pub fn data_term(&self, proj: &[f64]) -> f64 {
        0.5 * proj
            .iter()
            .zip(&self.l)
            .zip(&self.w)
            .map(|((p, l), w)| w * (p - l) * (p - l))
            .sum::<f64>()
    }
}

pub fn weighted_data(sino: &Sinogram) -> Result<WeightedData> {
    WeightedData::new(sino.l.clone(), sino.w.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_phantom_is_air() {
        let grid = ImageGrid::square(8, 1.0).unwrap();
        let img = rasterize(&EllipsePhantom::default(), grid);
        assert!(img.data.iter().all(|&v| v == -1000.0));
        assert_eq!(img.unit, Unit::Hu);
    }

    #[test]
    fn water_on_air_is_zero_hu() {
        let grid = ImageGrid::square(8, 1.0).unwrap();
        let img = rasterize(&EllipsePhantom::water_cylinder(2.0), grid);
        // pixel (4,4) centre at (0.5, 0.5)
        assert_eq!(img.get(4, 4), 0.0);
        assert_eq!(img.get(0, 0), -1000.0);
    }

    #[test]
    fn boundary_counts_as_inside() {
        // pixel centre (0.5, 0.5) of a 2x2 grid lies exactly on this circle
        let grid = ImageGrid::square(2, 1.0).unwrap();
        let e = Ellipse {
            center_x: 0.5,
            center_y: -1.5,
            semi_axis_a: 2.0,
            semi_axis_b: 1.0,
            rotation: std::f64::consts::FRAC_PI_2,
            value: 1000.0,
        };
        assert!(e.contains(0.5, 0.5));
        let img = rasterize(&EllipsePhantom::new(vec![e]).unwrap(), grid);
        assert_eq!(img.get(1, 1), 0.0);
    }

    #[test]
    fn ellipse_validation() {
        let mut e = Ellipse::circle(0.0, 0.0, 1.0, 1.0);
        e.semi_axis_b = 0.0;
        assert!(EllipsePhantom::new(vec![e]).is_err());
    }

    #[test]
    fn unattenuated_ray_mean_is_i0() {
        let line = vec![0.0; 4000];
        let c = poisson_counts(&line, 2e5, 11);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let sigma_mean = (2e5f64).sqrt() / (c.len() as f64).sqrt();
        assert!((mean - 2e5).abs() < 3.0 * sigma_mean, "{mean}");
    }

    #[test]
    fn poisson_statistics_at_fixed_line_integral() {
        let l = 2.5;
        let line = vec![l; 5000];
        let i0 = 1e4;
        let c = poisson_counts(&line, i0, 5);
        let n = c.len() as f64;
        let expected = i0 * (-l as f64).exp();
        let mean = c.iter().sum::<f64>() / n;
        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - expected).abs() < 3.0 * (expected / n).sqrt());
        assert!((var - mean).abs() < 0.1 * mean);
        // larger line integral, fewer counts
        let lo = poisson_counts(&vec![3.5; 5000], i0, 5);
        assert!(lo.iter().sum::<f64>() < c.iter().sum::<f64>());
    }

    #[test]
    fn same_seed_same_counts() {
        let grid = ImageGrid::square(16, 2.0).unwrap();
        let geom = ScanGeometry::desk_default(grid).unwrap();
        let img = rasterize(&EllipsePhantom::water_cylinder_for_grid(&grid), grid);
        let a = simulate_counts(&img, &geom, 2e5, 42, false).unwrap();
        let b = simulate_counts(&img, &geom, 2e5, 42, false).unwrap();
        assert!(a.l.iter().zip(&b.l).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.counts, b.counts);
        let c = simulate_counts(&img, &geom, 2e5, 43, false).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn noiseless_uses_means() {
        let grid = ImageGrid::square(16, 2.0).unwrap();
        let geom = ScanGeometry::desk_default(grid).unwrap();
        let img = rasterize(&EllipsePhantom::water_cylinder(10.0), grid);
        let s = simulate_counts(&img, &geom, 1e5, 0, true).unwrap();
        let line = crate::geometry::forward_project(&img.to_mu(), &geom, None).unwrap();
        assert_eq!(s.l, line);
        for (w, l) in s.w.iter().zip(&line) {
            assert_eq!(*w, 1e5 * (-l).exp());
        }
        assert!(simulate_counts(&img, &geom, 0.0, 0, false).is_err());
    }

    #[test]
    fn zero_counts_are_clamped() {
        let grid = ImageGrid::square(4, 1.0).unwrap();
        let geom = ScanGeometry::parallel(grid, 1, 3, 1.0).unwrap();
        let s = sinogram_from_counts(&geom, vec![0.0, 1.0, 100.0], 100.0).unwrap();
        assert_eq!(s.n_clamped, 1);
        assert_eq!(s.l[0], 100f64.ln());
        assert_eq!(s.l[2], 0.0);
        assert!(s.l.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn weighted_data_rejects_negative_weights() {
        assert!(matches!(
            WeightedData::new(vec![1.0, 2.0], vec![1.0, -1.0]),
            Err(Error::InvalidData(_))
        ));
        let d = WeightedData::new(vec![1.0, 2.0], vec![4.0, 0.0]).unwrap();
        assert_eq!(d.y(), vec![2.0, 0.0]);
    }
}
