use crate::error::{Error, Result};

/// Linear attenuation of water in mm⁻¹.
pub const MU_WATER: f64 = 0.02;

/// HU change per unit change of attenuation (mm).
pub const HU_PER_MU: f64 = 1000.0 / MU_WATER;

/// Regular 2D pixel grid centred on the isocenter.
///
/// Pixel `(i, j)` has its centre at `((i - (nx-1)/2) dx, (j - (ny-1)/2) dy)` and
/// is stored at linear index `j * nx + i` (row-major, y outer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl ImageGrid {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must have at least one pixel, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixel spacing must be positive, got {dx}x{dy}"
            )));
        }
        Ok(Self { nx, ny, dx, dy })
    }

    pub fn square(n: usize, spacing: f64) -> Result<Self> {
        Self::new(n, n, spacing, spacing)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 - (self.nx as f64 - 1.0) / 2.0) * self.dx
    }

    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 - (self.ny as f64 - 1.0) / 2.0) * self.dy
    }

    /// Field of view extent (width, height) in mm.
    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    /// Hounsfield units.
    Hu,
    /// Linear attenuation in mm⁻¹.
    PerMm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    pub grid: ImageGrid,
    pub unit: Unit,
    pub data: Vec<f64>,
}

impl ImageVolume {
    pub fn zeros(grid: ImageGrid, unit: Unit) -> Self {
        Self::filled(grid, unit, 0.0)
    }

    pub fn filled(grid: ImageGrid, unit: Unit, value: f64) -> Self {
        Self {
            grid,
            unit,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_vec(grid: ImageGrid, unit: Unit, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "image has {} values but grid {}x{} needs {}",
                data.len(),
                grid.nx,
                grid.ny,
                grid.len()
            )));
        }
        Ok(Self { grid, unit, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.grid.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.grid.nx + i] = v;
    }

    /// Attenuation values converted to HU (`μ_water (1 + HU/1000)` inverted).
    pub fn to_hu(&self) -> ImageVolume {
        match self.unit {
            Unit::Hu => self.clone(),
            Unit::PerMm => ImageVolume {
                grid: self.grid,
                unit: Unit::Hu,
                data: self.data.iter().map(|&m| mu_to_hu(m)).collect(),
            },
        }
    }

    pub fn to_mu(&self) -> ImageVolume {
        match self.unit {
            Unit::PerMm => self.clone(),
            Unit::Hu => ImageVolume {
                grid: self.grid,
                unit: Unit::PerMm,
                data: self.data.iter().map(|&h| hu_to_mu(h)).collect(),
            },
        }
    }

    pub fn check_same_grid(&self, other: &ImageVolume) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Dimension(format!(
                "grid mismatch: {}x{} vs {}x{}",
                self.grid.nx, self.grid.ny, other.grid.nx, other.grid.ny
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn hu_to_mu(hu: f64) -> f64 {
    MU_WATER * (1.0 + hu / 1000.0)
}

#[inline]
pub fn mu_to_hu(mu: f64) -> f64 {
    (mu / MU_WATER - 1.0) * 1000.0
}

/// Euclidean norm of `a - b` expressed in HU.
pub(crate) fn distance_hu(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y) * HU_PER_MU;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
