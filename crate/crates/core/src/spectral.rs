//! Derivative operators: Fourier pseudo-spectral in x, second-order finite
//! differences in y.

use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::field::{FieldError, Grid, ScalarField};
use crate::scalar::Real;

/// Cached FFT plans and wavenumbers for row-wise transforms along x.
///
/// Spectra are normalized so that bin 0 holds the row mean.
pub struct FourierX<T: Real> {
    grid: Grid,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    wavenumbers: Vec<T>,
    cutoff: usize,
}

impl<T: Real> Clone for FourierX<T> {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            forward: Arc::clone(&self.forward),
            inverse: Arc::clone(&self.inverse),
            wavenumbers: self.wavenumbers.clone(),
            cutoff: self.cutoff,
        }
    }
}

impl<T: Real> FourierX<T> {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.nx);
        let inverse = planner.plan_fft_inverse(grid.nx);
        let wavenumbers = (0..grid.nx).map(|m| T::lit(grid.wavenumber(m))).collect();
        Self {
            grid,
            forward,
            inverse,
            wavenumbers,
            cutoff: grid.nx / 3,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn wavenumber(&self, m: usize) -> T {
        self.wavenumbers[m]
    }

    /// Index of the unpaired Nyquist bin.
    pub fn nyquist(&self) -> usize {
        self.grid.nx / 2
    }

    /// Signed integer mode number of FFT bin `m`.
    pub fn mode_number(&self, m: usize) -> usize {
        let nx = self.grid.nx;
        if m <= nx / 2 {
            m
        } else {
            nx - m
        }
    }

    /// Row-wise forward transform of an `ny × nx` array.
    pub fn forward(&self, values: &Array2<T>) -> Array2<Complex<T>> {
        let (ny, nx) = values.dim();
        debug_assert_eq!(nx, self.grid.nx);
        let mut buf: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward.process(&mut buf);
        let scale = T::one() / T::lit(nx as f64);
        for c in buf.iter_mut() {
            *c = *c * scale;
        }
        Array2::from_shape_vec((ny, nx), buf).expect("shape preserved")
    }

    /// Row-wise inverse transform; the imaginary residue is discarded.
    pub fn inverse(&self, spectrum: &Array2<Complex<T>>) -> Array2<T> {
        let (ny, nx) = spectrum.dim();
        let mut buf: Vec<Complex<T>> = spectrum.iter().copied().collect();
        self.inverse.process(&mut buf);
        Array2::from_shape_vec((ny, nx), buf.into_iter().map(|c| c.re).collect())
            .expect("shape preserved")
    }

    /// Multiplies every row spectrum by `i k` (first x-derivative). The
    /// Nyquist bin has no real derivative and is zeroed.
    pub fn differentiate(&self, spectrum: &Array2<Complex<T>>) -> Array2<Complex<T>> {
        let nyq = self.nyquist();
        let mut out = spectrum.clone();
        for mut row in out.rows_mut() {
            for (m, c) in row.iter_mut().enumerate() {
                *c = if m == nyq {
                    Complex::new(T::zero(), T::zero())
                } else {
                    Complex::new(-c.im, c.re) * self.wavenumbers[m]
                };
            }
        }
        out
    }

    /// Zeroes bins with |mode| > nx/3 (two-thirds rule).
    pub fn dealias(&self, spectrum: &mut Array2<Complex<T>>) {
        for mut row in spectrum.rows_mut() {
            for (m, c) in row.iter_mut().enumerate() {
                if self.mode_number(m) > self.cutoff {
                    *c = Complex::new(T::zero(), T::zero());
                }
            }
        }
    }

    pub fn ddx(&self, field: &ScalarField<T>) -> ScalarField<T> {
        let spec = self.forward(field.values());
        ScalarField::from_raw(*field.grid(), self.inverse(&self.differentiate(&spec)))
    }

    /// Second x-derivative, multiplying by `-k²` (Nyquist bin included).
    pub fn d2dx2(&self, field: &ScalarField<T>) -> ScalarField<T> {
        let mut spec = self.forward(field.values());
        for mut row in spec.rows_mut() {
            for (m, c) in row.iter_mut().enumerate() {
                let k = self.wavenumbers[m];
                *c = *c * (-(k * k));
            }
        }
        ScalarField::from_raw(*field.grid(), self.inverse(&spec))
    }
}

/// Spectral x-derivative of a field.
pub fn ddx<T: Real>(field: &ScalarField<T>) -> ScalarField<T> {
    FourierX::new(*field.grid()).ddx(field)
}

/// Second-order finite-difference y-derivative: central in the interior,
/// one-sided three-point at the walls.
pub fn ddy<T: Real>(field: &ScalarField<T>) -> Result<ScalarField<T>, FieldError> {
    let grid = *field.grid();
    if grid.ny < 3 {
        return Err(FieldError::GridTooSmall { ny: grid.ny, min: 3 });
    }
    Ok(ScalarField::from_raw(grid, ddy_values(field.values(), grid.dy())))
}

pub(crate) fn ddy_values<T: Real>(f: &Array2<T>, dy: f64) -> Array2<T> {
    let (ny, nx) = f.dim();
    let inv2h = T::lit(0.5 / dy);
    let (three, four) = (T::lit(3.0), T::lit(4.0));
    let mut out = Array2::zeros((ny, nx));
    for i in 0..nx {
        out[[0, i]] = (-three * f[[0, i]] + four * f[[1, i]] - f[[2, i]]) * inv2h;
        out[[ny - 1, i]] =
            (three * f[[ny - 1, i]] - four * f[[ny - 2, i]] + f[[ny - 3, i]]) * inv2h;
    }
    for j in 1..ny - 1 {
        Zip::from(out.row_mut(j))
            .and(f.row(j + 1))
            .and(f.row(j - 1))
            .for_each(|o, &up, &dn| *o = (up - dn) * inv2h);
    }
    out
}

/// Second-order finite-difference second y-derivative; the walls use the
/// one-sided four-point stencil.
pub fn d2dy2<T: Real>(field: &ScalarField<T>) -> Result<ScalarField<T>, FieldError> {
    let grid = *field.grid();
    if grid.ny < 4 {
        return Err(FieldError::GridTooSmall { ny: grid.ny, min: 4 });
    }
    let f = field.values();
    let (ny, nx) = f.dim();
    let inv = T::lit(1.0 / (grid.dy() * grid.dy()));
    let (two, four, five) = (T::lit(2.0), T::lit(4.0), T::lit(5.0));
    let mut out = Array2::zeros((ny, nx));
    for i in 0..nx {
        out[[0, i]] = (two * f[[0, i]] - five * f[[1, i]] + four * f[[2, i]] - f[[3, i]]) * inv;
        out[[ny - 1, i]] = (two * f[[ny - 1, i]] - five * f[[ny - 2, i]]
            + four * f[[ny - 3, i]]
            - f[[ny - 4, i]])
            * inv;
        for j in 1..ny - 1 {
            out[[j, i]] = (f[[j + 1, i]] - two * f[[j, i]] + f[[j - 1, i]]) * inv;
        }
    }
    Ok(ScalarField::from_raw(grid, out))
}

/// Discrete Laplacian built from the operators above.
pub fn laplacian<T: Real>(
    fourier: &FourierX<T>,
    field: &ScalarField<T>,
) -> Result<ScalarField<T>, FieldError> {
    let xx = fourier.d2dx2(field);
    let yy = d2dy2(field)?;
    Ok(ScalarField::from_raw(*field.grid(), xx.values() + yy.values()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &ScalarField<f64>, b: &ScalarField<f64>) -> f64 {
        (a.values() - b.values()).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn ddx_of_constant_is_zero() {
        let g = Grid::new(16, 5).unwrap();
        let f = ScalarField::<f64>::constant(g, 3.5);
        assert!(ddx(&f).max_abs() < 1e-14);
    }

    #[test]
    fn ddx_of_sin_is_cos() {
        let g = Grid::new(32, 5).unwrap();
        let f = ScalarField::<f64>::from_fn(g, |x, _| x.sin());
        let want = ScalarField::<f64>::from_fn(g, |x, _| x.cos());
        assert!(max_err(&ddx(&f), &want) <= 1e-12);
    }

    #[test]
    fn ddx_of_separable_mode() {
        let g = Grid::desk();
        let f = ScalarField::<f64>::from_fn(g, |x, y| (3.0 * x).sin() * y.cos());
        let want = ScalarField::<f64>::from_fn(g, |x, y| 3.0 * (3.0 * x).cos() * y.cos());
        assert!(max_err(&ddx(&f), &want) <= 1e-10);
    }

    #[test]
    fn ddx_twice_matches_spectral_second_derivative() {
        let g = Grid::desk();
        let fx = FourierX::<f64>::new(g);
        let f = ScalarField::<f64>::from_fn(g, |x, y| (2.0 * x).cos() * y + (5.0 * x).sin());
        assert!(max_err(&fx.ddx(&fx.ddx(&f)), &fx.d2dx2(&f)) <= 1e-10);
    }

    #[test]
    fn ddy_needs_three_rows() {
        let g = Grid::new(4, 2).unwrap();
        assert!(matches!(
            ddy(&ScalarField::<f64>::zeros(g)),
            Err(FieldError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn ddy_is_exact_on_linear_profiles() {
        let g = Grid::new(8, 9).unwrap();
        let c = ScalarField::<f64>::constant(g, -2.0);
        assert!(ddy(&c).unwrap().max_abs() < 1e-12);
        let f = ScalarField::<f64>::from_fn(g, |_, y| y);
        let d = ddy(&f).unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));
    }

    /// Interior error for y³ at two resolutions; second order means the
    /// ratio sits near 4.
    #[test]
    fn ddy_converges_at_second_order() {
        let interior_err = |ny: usize| {
            let g = Grid::new(4, ny).unwrap();
            let f = ScalarField::<f64>::from_fn(g, |_, y| y * y * y);
            let d = ddy(&f).unwrap();
            (1..ny - 1)
                .map(|j| (d.get(j, 0) - 3.0 * g.y(j) * g.y(j)).abs())
                .fold(0.0, f64::max)
        };
        let ratio = interior_err(33) / interior_err(65);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn f32_fields_differentiate_too() {
        let g = Grid::new(16, 4).unwrap();
        let f = ScalarField::<f32>::from_fn(g, |x, _| x.sin());
        let d = ddx(&f);
        for i in 0..16 {
            assert!((d.get(1, i) as f64 - g.x(i).cos()).abs() < 1e-5);
        }
    }
}
