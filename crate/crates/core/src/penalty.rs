//! Huber roughness penalty over pixel neighbourhoods.
//!
//! Differences are always taken in HU so `delta` keeps its meaning regardless
//! of whether the image is stored as attenuation. For an attenuation image the
//! gradient is with respect to μ (the HU gradient times [`HU_PER_MU`]).

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::image::{ImageGrid, ImageVolume, Unit, HU_PER_MU};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighborhood {
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberPenalty {
    /// Quadratic-to-linear transition, HU.
    pub delta: f64,
    pub neighborhood: Neighborhood,
}

impl HuberPenalty {
    pub fn new(delta: f64, neighborhood: Neighborhood) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
        Ok(Self {
            delta,
            neighborhood,
        })
    }

    /// One offset of each ± pair with its weight. The full neighbour set is
    /// these offsets and their negations.
    pub fn half_offsets(&self) -> &'static [(isize, isize, f64)] {
        match self.neighborhood {
            Neighborhood::Four => &[(1, 0, 1.0), (0, 1, 1.0)],
            Neighborhood::Eight => &[
                (1, 0, 1.0),
                (0, 1, 1.0),
                (1, 1, FRAC_1_SQRT_2),
                (1, -1, FRAC_1_SQRT_2),
            ],
        }
    }

    /// Sum of weights over the full neighbour set.
    pub fn weight_sum(&self) -> f64 {
        2.0 * self.half_offsets().iter().map(|o| o.2).sum::<f64>()
    }

    #[inline]
    pub fn potential(&self, t: f64) -> f64 {
        let a = t.abs();
        if a <= self.delta {
            0.5 * t * t
        } else {
            self.delta * a - 0.5 * self.delta * self.delta
        }
    }

    #[inline]
    pub fn influence(&self, t: f64) -> f64 {
        t.clamp(-self.delta, self.delta)
    }

    /// Penalty of raw values multiplied by `scale` to reach HU.
    pub(crate) fn value_scaled(&self, grid: &ImageGrid, x: &[f64], scale: f64) -> f64 {
        let mut total = 0.0;
        self.for_each_pair(grid, |p, q, w| {
            total += w * self.potential(scale * (x[p] - x[q]));
        });
        total
    }

    /// Gradient with respect to raw values that map to HU by `scale`.
    pub(crate) fn gradient_scaled(&self, grid: &ImageGrid, x: &[f64], scale: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each_pair(grid, |p, q, w| {
            let f = w * scale * self.influence(scale * (x[p] - x[q]));
            out[p] += f;
            out[q] -= f;
        });
    }

    /// Attenuation-domain value `h(μ)`.
    pub fn value_mu(&self, grid: &ImageGrid, mu: &[f64]) -> f64 {
        self.value_scaled(grid, mu, HU_PER_MU)
    }

    /// Attenuation-domain gradient `∇h(μ)`.
    pub fn gradient_mu(&self, grid: &ImageGrid, mu: &[f64], out: &mut [f64]) {
        self.gradient_scaled(grid, mu, HU_PER_MU, out)
    }

    /// Separable curvature bound `2 Σ_k w_k` in the attenuation domain.
    pub fn curvature_mu(&self) -> f64 {
        2.0 * self.weight_sum() * HU_PER_MU * HU_PER_MU
    }

    pub fn value(&self, image: &ImageVolume) -> f64 {
        self.value_scaled(&image.grid, &image.data, unit_scale(image.unit))
    }

    /// Gradient with respect to the image's own values.
    pub fn gradient(&self, image: &ImageVolume) -> ImageVolume {
        let mut out = ImageVolume::zeros(image.grid, image.unit);
        self.gradient_scaled(&image.grid, &image.data, unit_scale(image.unit), &mut out.data);
        out
    }

    /// Calls `f(p, q, weight)` once per unordered in-grid neighbour pair.
    #[inline]
    fn for_each_pair<F: FnMut(usize, usize, f64)>(&self, grid: &ImageGrid, mut f: F) {
        let (nx, ny) = (grid.nx as isize, grid.ny as isize);
        for &(di, dj, w) in self.half_offsets() {
            let i_range = 0.max(-di)..nx.min(nx - di);
            for j in 0.max(-dj)..ny.min(ny - dj) {
                for i in i_range.clone() {
                    let p = (j * nx + i) as usize;
                    let q = ((j + dj) * nx + i + di) as usize;
                    f(p, q, w);
                }
            }
        }
    }
}

fn unit_scale(unit: Unit) -> f64 {
    match unit {
        Unit::Hu => 1.0,
        Unit::PerMm => HU_PER_MU,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn four() -> HuberPenalty {
        HuberPenalty::new(5.0, Neighborhood::Four).unwrap()
    }

    #[test]
    fn constant_image_has_zero_penalty() {
        let g = ImageGrid::square(6, 1.0).unwrap();
        let img = ImageVolume::filled(g, Unit::Hu, 37.0);
        assert_eq!(four().value(&img), 0.0);
        assert!(four().gradient(&img).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_and_linear_branches() {
        let g = ImageGrid::new(2, 1, 1.0, 1.0).unwrap();
        let img = ImageVolume::from_vec(g, Unit::Hu, vec![2.0, 0.0]).unwrap();
        assert_eq!(four().value(&img), 2.0);
        let img = ImageVolume::from_vec(g, Unit::Hu, vec![10.0, 0.0]).unwrap();
        assert_eq!(four().value(&img), 37.5);
    }

    #[test]
    fn saturated_spike() {
        let g = ImageGrid::square(5, 1.0).unwrap();
        let mut img = ImageVolume::zeros(g, Unit::Hu);
        img.set(2, 2, 1000.0);
        for (pen, expected) in [
            (four(), 4.0 * 5.0),
            (
                HuberPenalty::new(5.0, Neighborhood::Eight).unwrap(),
                (4.0 + 4.0 * FRAC_1_SQRT_2) * 5.0,
            ),
        ] {
            let grad = pen.gradient(&img);
            assert!((grad.get(2, 2) - expected).abs() < 1e-12);
            assert!((pen.weight_sum() * pen.delta - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn attenuation_domain_matches_hu_domain() {
        let g = ImageGrid::square(7, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hu = ImageVolume::from_vec(
            g,
            Unit::Hu,
            (0..g.len()).map(|_| rng.random_range(-30.0..30.0)).collect(),
        )
        .unwrap();
        let mu = hu.to_mu();
        let p = four();
        assert!((p.value(&hu) - p.value(&mu)).abs() < 1e-8 * p.value(&hu));
        let gh = p.gradient(&hu);
        let gm = p.gradient(&mu);
        for (a, b) in gh.data.iter().zip(&gm.data) {
            assert!((a * HU_PER_MU - b).abs() < 1e-6 * HU_PER_MU);
        }
    }

    #[test]
    fn boundary_pixels_use_in_grid_neighbours() {
        let g = ImageGrid::square(3, 1.0).unwrap();
        let mut img = ImageVolume::zeros(g, Unit::Hu);
        img.set(0, 0, 1.0);
        let grad = four().gradient(&img);
        // corner has two neighbours
        assert_eq!(grad.get(0, 0), 2.0);
        assert_eq!(grad.get(1, 0), -1.0);
        assert_eq!(grad.get(0, 1), -1.0);
    }

    #[test]
    fn rejects_non_positive_delta() {
        assert!(HuberPenalty::new(0.0, Neighborhood::Four).is_err());
    }
}
