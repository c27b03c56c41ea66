//! Grids and real scalar fields on the periodic-channel domain.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("nx must be even and positive, got {0}")]
    OddNx(usize),
    #[error("grid too small: ny = {ny} (need at least {min})")]
    GridTooSmall { ny: usize, min: usize },
    #[error("invalid domain extent: {0}")]
    BadExtent(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("field contains non-finite values")]
    NonFinite,
}

/// Collocation grid: `nx` uniform periodic points in x over `[0, lx)`, and
/// `ny` uniform points in y including both walls.
///
/// Row `j = 0` is the bottom wall (`y_min`), row `ny - 1` the top wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Grid {
    /// Grid on the default `2π × 2` cell, `y ∈ [-1, 1]`.
    pub fn new(nx: usize, ny: usize) -> Result<Self, FieldError> {
        Self::with_extent(nx, ny, 2.0 * PI, -1.0, 1.0)
    }

    pub fn with_extent(
        nx: usize,
        ny: usize,
        lx: f64,
        y_min: f64,
        y_max: f64,
    ) -> Result<Self, FieldError> {
        if nx == 0 || nx % 2 != 0 {
            return Err(FieldError::OddNx(nx));
        }
        if ny < 2 {
            return Err(FieldError::GridTooSmall { ny, min: 2 });
        }
        if !(lx.is_finite() && lx > 0.0) {
            return Err(FieldError::BadExtent(format!("lx = {lx}")));
        }
        if !(y_min.is_finite() && y_max.is_finite() && y_max > y_min) {
            return Err(FieldError::BadExtent(format!(
                "y_min = {y_min}, y_max = {y_max}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            y_min,
            y_max,
        })
    }

    /// Full resolution used for the reference experiments (96 × 64).
    pub fn full() -> Self {
        Self::new(96, 64).expect("static grid")
    }

    /// Desk-scale resolution (48 × 32).
    pub fn desk() -> Self {
        Self::new(48, 32).expect("static grid")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.dy()
    }

    /// Angular wavenumber of FFT bin `m` (standard signed ordering).
    pub fn wavenumber(&self, m: usize) -> f64 {
        let signed = if m <= self.nx / 2 {
            m as f64
        } else {
            m as f64 - self.nx as f64
        };
        2.0 * PI * signed / self.lx
    }
}

/// A real field sampled on a [`Grid`], stored `ny × nx` (y index first).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T: Real> {
    grid: Grid,
    values: Array2<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: Array2::zeros(grid.shape()),
        }
    }

    pub fn constant(grid: Grid, value: T) -> Self {
        Self {
            grid,
            values: Array2::from_elem(grid.shape(), value),
        }
    }

    /// Samples `f(x, y)` at every collocation point.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn(grid.shape(), |(j, i)| T::lit(f(grid.x(i), grid.y(j))));
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Array2<T>) -> Result<Self, FieldError> {
        if values.dim() != grid.shape() {
            return Err(FieldError::ShapeMismatch {
                expected: grid.shape(),
                got: values.dim(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(Self { grid, values })
    }

    /// Builds a field from a flat row-major vector (y outer, x inner).
    pub fn from_flat(grid: Grid, flat: Vec<T>) -> Result<Self, FieldError> {
        let got = flat.len();
        let values = Array2::from_shape_vec(grid.shape(), flat).map_err(|_| {
            FieldError::ShapeMismatch {
                expected: grid.shape(),
                got: (got, 1),
            }
        })?;
        Self::from_values(grid, values)
    }

    /// Wraps values without the finiteness check; used on hot paths whose
    /// callers validate separately.
    pub(crate) fn from_raw(grid: Grid, values: Array2<T>) -> Self {
        debug_assert_eq!(values.dim(), grid.shape());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<T> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn get(&self, j: usize, i: usize) -> T {
        self.values[[j, i]]
    }

    /// Row-major copy of the values.
    pub fn to_flat(&self) -> Vec<T> {
        self.values.iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Spatial mean over all collocation points.
    pub fn mean(&self) -> T {
        self.values.mean().unwrap_or_else(T::zero)
    }

    pub fn norm_sq(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, &v| m.max(num_traits::Float::abs(v)))
    }

    pub fn min_max(&self) -> (T, T) {
        self.values.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    /// Horizontal mean per wall-normal row.
    pub fn row_means(&self) -> Vec<T> {
        self.values
            .mean_axis(Axis(1))
            .map(|a| a.to_vec())
            .unwrap_or_default()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.mapv(f),
        }
    }

    /// Periodic shift by `k` columns: `out[j][(i + k) mod nx] = self[j][i]`.
    pub fn shift_x(&self, k: usize) -> Self {
        let nx = self.grid.nx;
        let values = Array2::from_shape_fn(self.grid.shape(), |(j, i)| {
            self.values[[j, (i + nx - k % nx) % nx]]
        });
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.grid == other.grid
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Real>(&self) -> ScalarField<U> {
        ScalarField {
            grid: self.grid,
            values: self.values.mapv(|v| U::lit(v.to_f64_lossy())),
        }
    }
}
