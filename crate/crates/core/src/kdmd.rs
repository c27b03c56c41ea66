//! Kernel dynamic mode decomposition.
//!
//! Given snapshot pairs `(x_i, y_i)` with `y_i` one record step after `x_i`,
//! the Koopman operator is approximated in the span of kernel-induced
//! observables without ever forming them:
//!
//! 1. `G_ij = f(x_i, x_j)`, `A_ij = f(y_i, x_j)`;
//! 2. `G = Q Σ² Qᵀ`, keeping the `r` components with `Σ²_kk > tol · Σ²_max`;
//! 3. `K = (Σ⁺Qᵀ) A (QΣ⁺)`;
//! 4. `K V = V Λ`;
//! 5. eigenfunctions on the data `Φ = QΣV`, and at a new point
//!    `φ(z) = [f(z, x_i)]_i · QΣ⁺V`;
//! 6. Koopman modes `Ξ` minimizing `‖X - ΞΦᵀ‖_F`.
//!
//! Predictions are `Re Σ_k λ_kⁿ ξ_k φ_k(z)`.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex;
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, Grid, ScalarField};
use crate::linalg::{eig_general, eig_symmetric, lstsq, LinalgError};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdmdError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least 2 snapshot pairs, got {0}")]
    TooFewPairs(usize),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("every Gram singular value fell below the truncation tolerance")]
    RankZero,
    #[error("Gram matrix is not positive semi-definite: min eigenvalue {min:e}, max {max:e}")]
    NotPsd { min: f64, max: f64 },
    #[error("non-finite snapshot data")]
    NonFinite,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Polynomial,
}

/// Kernel choice. For the Gaussian kernel `scale` normalizes distances;
/// when unset, [`fit`] resolves it to the median pairwise distance of the
/// training states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default)]
    pub scale: Option<f64>,
}

fn default_sigma() -> f64 {
    2.0
}

fn default_degree() -> u32 {
    1
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kind: KernelKind::Gaussian,
            sigma,
            degree: 1,
            scale: None,
        }
    }

    pub fn polynomial(degree: u32) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            sigma: 1.0,
            degree,
            scale: None,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn validate(&self) -> Result<(), KdmdError> {
        match self.kind {
            KernelKind::Gaussian => {
                if !(self.sigma.is_finite() && self.sigma > 0.0) {
                    return Err(KdmdError::InvalidKernel(format!("sigma = {}", self.sigma)));
                }
                if let Some(s) = self.scale {
                    if !(s.is_finite() && s > 0.0) {
                        return Err(KdmdError::InvalidKernel(format!("scale = {s}")));
                    }
                }
            }
            KernelKind::Polynomial => {
                if self.degree < 1 {
                    return Err(KdmdError::InvalidKernel("degree must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    fn eval_unchecked<T: Real>(&self, a: &[T], b: &[T]) -> T {
        match self.kind {
            KernelKind::Gaussian => {
                let d2: T = a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum();
                let scale = self.scale.unwrap_or(1.0);
                (-d2 / T::lit(self.sigma * self.sigma * scale * scale)).exp()
            }
            KernelKind::Polynomial => {
                let dot: T = a.iter().zip(b).map(|(&p, &q)| p * q).sum();
                (T::one() + dot).powi(self.degree as i32)
            }
        }
    }
}

/// `exp(-‖a-b‖² / (σ² scale²))` or `(1 + aᵀb)^degree`.
pub fn kernel_eval<T: Real>(spec: &KernelSpec, a: &[T], b: &[T]) -> Result<T, KdmdError> {
    if a.len() != b.len() {
        return Err(KdmdError::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(spec.eval_unchecked(a, b))
}

/// Column-paired data matrices: `y_matrix[:, i]` follows `x_matrix[:, i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotPair<T: Real> {
    x_matrix: Array2<T>,
    y_matrix: Array2<T>,
}

impl<T: Real> SnapshotPair<T> {
    pub fn new(x_matrix: Array2<T>, y_matrix: Array2<T>) -> Result<Self, KdmdError> {
        if x_matrix.dim() != y_matrix.dim() {
            return Err(KdmdError::LengthMismatch {
                expected: x_matrix.len(),
                got: y_matrix.len(),
            });
        }
        if x_matrix.iter().chain(y_matrix.iter()).any(|v| !v.is_finite()) {
            return Err(KdmdError::NonFinite);
        }
        Ok(Self { x_matrix, y_matrix })
    }

    /// Consecutive pairs from a trajectory whose columns are states.
    pub fn from_trajectory(states: &Array2<T>) -> Result<Self, KdmdError> {
        let m = states.ncols();
        if m < 2 {
            return Err(KdmdError::TooFewPairs(m.saturating_sub(1)));
        }
        Self::new(
            states.slice(ndarray::s![.., ..m - 1]).to_owned(),
            states.slice(ndarray::s![.., 1..]).to_owned(),
        )
    }

    /// Consecutive pairs from flattened field snapshots.
    pub fn from_fields(fields: &[ScalarField<T>]) -> Result<Self, KdmdError> {
        let n = fields.first().map(|f| f.grid().len()).unwrap_or(0);
        let mut states = Array2::zeros((n, fields.len()));
        for (k, f) in fields.iter().enumerate() {
            if f.grid().len() != n {
                return Err(KdmdError::LengthMismatch {
                    expected: n,
                    got: f.grid().len(),
                });
            }
            for (dst, &v) in states.column_mut(k).iter_mut().zip(f.values().iter()) {
                *dst = v;
            }
        }
        Self::from_trajectory(&states)
    }

    pub fn x_matrix(&self) -> &Array2<T> {
        &self.x_matrix
    }

    pub fn y_matrix(&self) -> &Array2<T> {
        &self.y_matrix
    }

    pub fn state_dim(&self) -> usize {
        self.x_matrix.nrows()
    }

    pub fn pair_count(&self) -> usize {
        self.x_matrix.ncols()
    }
}

/// Truncated kernel-DMD decomposition.
#[derive(Clone, Debug)]
pub struct KdmdModel<T: Real> {
    /// Sorted by descending modulus.
    pub eigenvalues: Vec<Complex<T>>,
    /// `QΣ⁺V`, `(m-1) × r`: maps a kernel row to eigenfunction values.
    pub eigfun_coeffs: Array2<Complex<T>>,
    /// Koopman modes as columns, `N × r`.
    pub modes: Array2<Complex<T>>,
    /// Training states `x_i` as columns.
    pub basis: Array2<T>,
    /// Kernel with the resolved distance scale.
    pub kernel: KernelSpec,
    pub rank: usize,
    /// Eigenfunctions evaluated on the training states, `QΣV`.
    pub training_eigenfunctions: Array2<Complex<T>>,
}

/// Median of the pairwise column distances (1 when all columns coincide).
pub fn median_pairwise_distance<T: Real>(x: &Array2<T>) -> f64 {
    let m = x.ncols();
    let mut d: Vec<f64> = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let s: T = x
                .column(i)
                .iter()
                .zip(x.column(j).iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            d.push(s.to_f64_lossy().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

fn columns<T: Real>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.axis_iter(Axis(1)).map(|c| c.to_vec()).collect()
}

/// Fits a kernel DMD model. Components are kept while
/// `Σ²_kk > trunc_tol · Σ²_max`; `1e-10` is the usual choice.
pub fn fit<T: Real>(pairs: &SnapshotPair<T>, spec: &KernelSpec, trunc_tol: f64) -> Result<KdmdModel<T>, KdmdError> {
    spec.validate()?;
    let m = pairs.pair_count();
    if m < 2 {
        return Err(KdmdError::TooFewPairs(m));
    }
    let mut kernel = *spec;
    if kernel.kind == KernelKind::Gaussian && kernel.scale.is_none() {
        kernel.scale = Some(median_pairwise_distance(pairs.x_matrix()));
    }

    let xs = columns(pairs.x_matrix());
    let ys = columns(pairs.y_matrix());
    let mut gram = Array2::<T>::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let v = kernel.eval_unchecked(&xs[i], &xs[j]);
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
    }
    let a_hat = Array2::from_shape_fn((m, m), |(i, j)| kernel.eval_unchecked(&ys[i], &xs[j]));

    let eig = eig_symmetric(&gram)?;
    let lmax = eig.eigenvalues[0];
    let lmin = *eig.eigenvalues.last().expect("m >= 2");
    if lmax <= T::zero() || lmin < -Float::sqrt(T::epsilon()) * lmax {
        return Err(KdmdError::NotPsd {
            min: lmin.to_f64_lossy(),
            max: lmax.to_f64_lossy(),
        });
    }
    // The tolerance applies to the Gram eigenvalues Σ², where rounding noise
    // sits near eps·Σ²_max. Applied to Σ it would keep noise directions whose
    // 1/Σ blows up K̂.
    let cutoff = T::lit(trunc_tol) * lmax;
    let rank = eig.eigenvalues.iter().take_while(|&&l| l > cutoff).count();
    let sigma: Vec<T> = eig.eigenvalues.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
    if rank == 0 {
        return Err(KdmdError::RankZero);
    }
    let q = eig.eigenvectors.slice(ndarray::s![.., ..rank]).to_owned();
    let sigma_inv = Array1::from_iter(sigma[..rank].iter().map(|&s| T::one() / s));
    let sigma_r = Array1::from_iter(sigma[..rank].iter().copied());

    // QΣ⁺ scales column k of Q by 1/σ_k.
    let q_sinv = &q * &sigma_inv.view().insert_axis(Axis(0));
    let k_hat = q_sinv.t().dot(&a_hat).dot(&q_sinv);
    let keig = eig_general(&k_hat)?;

    let v = keig.eigenvectors;
    let to_c = |a: &Array2<T>| a.mapv(|x| Complex::new(x, T::zero()));
    let eigfun_coeffs = to_c(&q_sinv).dot(&v);
    let q_s = &q * &sigma_r.view().insert_axis(Axis(0));
    let training_eigenfunctions = to_c(&q_s).dot(&v);

    let xt = to_c(&pairs.x_matrix().t().to_owned());
    let rcond = T::lit(1e-12);
    let modes_t = lstsq(&training_eigenfunctions, &xt, rcond)?;
    let modes = modes_t.t().to_owned();

    Ok(KdmdModel {
        eigenvalues: keig.eigenvalues,
        eigfun_coeffs,
        modes,
        basis: pairs.x_matrix().clone(),
        kernel,
        rank,
        training_eigenfunctions,
    })
}

impl<T: Real> KdmdModel<T> {
    pub fn state_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Continuous-time exponents `ln(λ_k) / dt`.
    pub fn continuous_eigenvalues(&self, dt: f64) -> Vec<Complex<T>> {
        let inv = T::lit(1.0 / dt);
        self.eigenvalues.iter().map(|l| l.ln() * inv).collect()
    }

    /// `[f(z, x_i)]_i` over the retained basis.
    pub fn kernel_row(&self, z: &[T]) -> Result<Array1<T>, KdmdError> {
        if z.len() != self.state_dim() {
            return Err(KdmdError::LengthMismatch {
                expected: self.state_dim(),
                got: z.len(),
            });
        }
        Ok(self
            .basis
            .axis_iter(Axis(1))
            .map(|col| {
                let xi: Vec<T> = col.to_vec();
                self.kernel.eval_unchecked(z, &xi)
            })
            .collect())
    }

    /// Eigenfunction values `φ_k(z)`.
    pub fn eigenfunctions(&self, z: &[T]) -> Result<Array1<Complex<T>>, KdmdError> {
        let row = self.kernel_row(z)?.mapv(|v| Complex::new(v, T::zero()));
        Ok(row.dot(&self.eigfun_coeffs))
    }

    /// Complex predictions `Σ_k λ_kⁿ ξ_k φ_k(z)` for `n = 0..=horizon`.
    pub fn predict_complex(&self, z: &[T], horizon: usize) -> Result<Vec<Array1<Complex<T>>>, KdmdError> {
        let phi = self.eigenfunctions(z)?;
        let mut amp = phi;
        let mut out = Vec::with_capacity(horizon + 1);
        for n in 0..=horizon {
            if n > 0 {
                for (a, l) in amp.iter_mut().zip(&self.eigenvalues) {
                    *a = *a * *l;
                }
            }
            out.push(self.modes.dot(&amp));
        }
        Ok(out)
    }

    /// `Σ_k ξ_k φ_k(z)`, the model's reconstruction of `z`.
    pub fn reconstruct(&self, z: &[T]) -> Result<Vec<T>, KdmdError> {
        Ok(self.predict_complex(z, 0)?[0].iter().map(|c| c.re).collect())
    }

    /// Real predictions for steps `1..=horizon`.
    pub fn predict(&self, entry: &[T], horizon: usize) -> Result<Vec<Vec<T>>, KdmdError> {
        Ok(self
            .predict_complex(entry, horizon)?
            .into_iter()
            .skip(1)
            .map(|v| v.iter().map(|c| c.re).collect())
            .collect())
    }

    /// Largest `‖Im‖ / ‖Re‖` across predicted steps `1..=horizon`.
    pub fn imaginary_residue(&self, entry: &[T], horizon: usize) -> Result<T, KdmdError> {
        let preds = self.predict_complex(entry, horizon)?;
        Ok(preds
            .iter()
            .skip(1)
            .map(|v| {
                let re: T = v.iter().map(|c| c.re * c.re).sum::<T>().sqrt();
                let im: T = v.iter().map(|c| c.im * c.im).sum::<T>().sqrt();
                if re > T::zero() {
                    im / re
                } else {
                    im
                }
            })
            .fold(T::zero(), |a, b| a.max(b)))
    }

    /// Frobenius residual `‖X - Re(ΞΦᵀ)‖ / ‖X‖` of the mode fit.
    pub fn training_residual(&self) -> T {
        let recon = self.modes.dot(&self.training_eigenfunctions.t());
        let mut num = T::zero();
        let mut den = T::zero();
        for (x, r) in self.basis.iter().zip(recon.iter()) {
            num = num + (*x - r.re) * (*x - r.re);
            den = den + *x * *x;
        }
        if den > T::zero() {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    /// Field-valued prediction for steps `1..=horizon`.
    pub fn predict_fields(&self, entry: &ScalarField<T>, horizon: usize) -> Result<Vec<ScalarField<T>>, KdmdError> {
        let grid: Grid = *entry.grid();
        self.predict(&entry.to_flat(), horizon)?
            .into_iter()
            .map(|v| ScalarField::from_flat(grid, v).map_err(KdmdError::from))
            .collect()
    }
}

/// Convenience wrapper: `model.predict(entry, horizon)`.
pub fn predict<T: Real>(model: &KdmdModel<T>, entry: &[T], horizon: usize) -> Result<Vec<Vec<T>>, KdmdError> {
    model.predict(entry, horizon)
}

/// Fits on consecutive field snapshots (`m` fields give `m - 1` pairs).
pub fn fit_fields<T: Real>(
    snapshots: &[ScalarField<T>],
    spec: &KernelSpec,
    trunc_tol: f64,
) -> Result<KdmdModel<T>, KdmdError> {
    fit(&SnapshotPair::from_fields(snapshots)?, spec, trunc_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kernel_examples() {
        let g = KernelSpec::gaussian(1.0).with_scale(1.0);
        assert_eq!(kernel_eval(&g, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        let p = KernelSpec::polynomial(1);
        assert_eq!(kernel_eval(&p, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let g2 = KernelSpec::gaussian(2.0).with_scale(1.0);
        let v = kernel_eval(&g2, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3679).abs() < 1e-4);
        assert!(matches!(
            kernel_eval(&p, &[1.0], &[1.0, 2.0]),
            Err(KdmdError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn invalid_kernels_are_rejected() {
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
        assert!(KernelSpec::polynomial(0).validate().is_err());
    }

    #[test]
    fn median_heuristic_falls_back_on_identical_columns() {
        let x = Array2::<f64>::ones((3, 4));
        assert_eq!(median_pairwise_distance(&x), 1.0);
        let x = array![[0.0, 1.0, 3.0]];
        assert_eq!(median_pairwise_distance(&x), 2.0);
    }

    #[test]
    fn geometric_decay_eigenvalue() {
        let traj = Array2::from_shape_fn((1, 8), |(_, k)| 0.5f64.powi(k as i32));
        let pairs = SnapshotPair::from_trajectory(&traj).unwrap();
        let model = fit(&pairs, &KernelSpec::polynomial(1), 1e-10).unwrap();
        assert!(model.eigenvalues.iter().any(|l| (l - Complex::new(0.5, 0.0)).norm() < 1e-8));
        let pred = model.predict(&[1.0], 3).unwrap();
        for (p, want) in pred.iter().zip([0.5, 0.25, 0.125]) {
            assert!((p[0] - want).abs() < 1e-6, "{p:?} vs {want}");
        }
    }

    #[test]
    fn constant_sequence_is_a_fixed_point() {
        for spec in [KernelSpec::polynomial(1), KernelSpec::gaussian(2.0)] {
            let c = [1.5, -0.5, 2.0];
            let traj = Array2::from_shape_fn((3, 6), |(i, _)| c[i]);
            let pairs = SnapshotPair::from_trajectory(&traj).unwrap();
            let model = fit(&pairs, &spec, 1e-10).unwrap();
            assert!((model.eigenvalues[0] - Complex::new(1.0, 0.0)).norm() < 1e-10);
            let rec = model.reconstruct(&c).unwrap();
            let err: f64 = rec.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * norm);
            for p in model.predict(&c, 4).unwrap() {
                for (a, b) in p.iter().zip(&c) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rank_zero_when_tolerance_too_strict() {
        let traj = Array2::from_shape_fn((1, 4), |(_, k)| k as f64);
        let pairs = SnapshotPair::from_trajectory(&traj).unwrap();
        assert!(matches!(
            fit(&pairs, &KernelSpec::polynomial(1), 2.0),
            Err(KdmdError::RankZero)
        ));
    }

    #[test]
    fn too_few_pairs() {
        let traj = Array2::<f64>::zeros((2, 2));
        let pairs = SnapshotPair::from_trajectory(&traj).unwrap();
        assert!(matches!(
            fit(&pairs, &KernelSpec::polynomial(1), 1e-10),
            Err(KdmdError::TooFewPairs(1))
        ));
    }
}
