//! Dense eigensolvers, complex least squares and tridiagonal solves.
//!
//! Everything here is generic over [`Real`]; matrices are `ndarray` arrays.
//! The general eigensolver reduces to complex Schur form (Householder
//! Hessenberg reduction, then single-shift QR with Wilkinson shifts) and
//! recovers eigenvectors by back substitution on the triangular factor.

use std::cmp::Ordering;
use std::ops::{Div, Mul, Sub};

use ndarray::Array2;
use num_complex::Complex;
use num_traits::{Float, Zero};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric: ||M - M^T||_F = {asym:e}, ||M||_F = {norm:e}")]
    NotSymmetric { asym: f64, norm: f64 },
    #[error("eigen iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("matrix contains non-finite values")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular system")]
    Singular,
}

/// Eigenpairs of a general real matrix. Column `k` of `eigenvectors` pairs
/// with `eigenvalues[k]`; vectors have unit 2-norm.
#[derive(Clone, Debug)]
pub struct EigenResult<T: Real> {
    pub eigenvalues: Vec<Complex<T>>,
    pub eigenvectors: Array2<Complex<T>>,
}

impl<T: Real> EigenResult<T> {
    /// Largest relative residual `||M v - λ v|| / (||M||_F ||v||)` over all pairs.
    pub fn max_relative_residual(&self, m: &Array2<T>) -> T {
        let norm = frobenius(m);
        let mc = m.mapv(|v| Complex::new(v, T::zero()));
        let mut worst = T::zero();
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let v = self.eigenvectors.column(k);
            let mv = mc.dot(&v);
            let r = mv
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (*a - *b * lam).norm_sqr())
                .sum::<T>()
                .sqrt();
            let vn = v.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
            let denom = norm * vn;
            let rel = if denom > T::zero() { r / denom } else { r };
            worst = worst.max(rel);
        }
        worst
    }
}

/// Real eigenpairs of a symmetric matrix, eigenvalues in descending order,
/// eigenvectors orthonormal columns.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T: Real> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Array2<T>,
}

impl<T: Real> From<SymmetricEigen<T>> for EigenResult<T> {
    fn from(s: SymmetricEigen<T>) -> Self {
        EigenResult {
            eigenvalues: s.eigenvalues.iter().map(|&v| Complex::new(v, T::zero())).collect(),
            eigenvectors: s.eigenvectors.mapv(|v| Complex::new(v, T::zero())),
        }
    }
}

pub fn frobenius<T: Real>(m: &Array2<T>) -> T {
    m.iter().map(|&v| v * v).sum::<T>().sqrt()
}

fn check_square<T: Real>(m: &Array2<T>) -> Result<usize, LinalgError> {
    let (r, c) = m.dim();
    if r != c {
        return Err(LinalgError::NotSquare(r, c));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(r)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn eig_symmetric<T: Real>(m: &Array2<T>) -> Result<SymmetricEigen<T>, LinalgError> {
    let n = check_square(m)?;
    let norm = frobenius(m);
    let asym = frobenius(&(m - &m.t()));
    if asym > T::lit(1e-9) * norm {
        return Err(LinalgError::NotSymmetric {
            asym: asym.to_f64_lossy(),
            norm: norm.to_f64_lossy(),
        });
    }
    let half = T::lit(0.5);
    let mut a = (m + &m.t()).mapv(|v| v * half);
    let mut v = Array2::<T>::eye(n);
    const MAX_SWEEPS: usize = 100;
    let tiny = T::min_positive_value();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<T>()
            .sqrt();
        if off <= T::epsilon() * norm || off <= tiny {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if Float::abs(apq) <= tiny {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (T::lit(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (Float::abs(theta) + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
                a[[p, q]] = T::zero();
                a[[q, p]] = T::zero();
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence(MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[[j, j]]
            .partial_cmp(&a[[i, i]])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let eigenvalues = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        // Fix the sign so the largest-magnitude entry is positive.
        let col = v.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(T::zero(), |best, x| if Float::abs(x) > Float::abs(best) { x } else { best });
        let sign = if pivot < T::zero() { -T::one() } else { T::one() };
        for k in 0..n {
            vectors[[k, dst]] = col[k] * sign;
        }
    }
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// Eigendecomposition of a general real square matrix, eigenvalues sorted by
/// descending modulus (conjugate pairs: positive imaginary part first).
pub fn eig_general<T: Real>(m: &Array2<T>) -> Result<EigenResult<T>, LinalgError> {
    let n = check_square(m)?;
    if n == 0 {
        return Ok(EigenResult {
            eigenvalues: vec![],
            eigenvectors: Array2::zeros((0, 0)),
        });
    }
    let mut h = m.mapv(|v| Complex::new(v, T::zero()));
    let mut z = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Complex::new(T::one(), T::zero())
        } else {
            Complex::zero()
        }
    });
    hessenberg(&mut h, &mut z);
    schur_qr(&mut h, &mut z)?;
    let vectors = triangular_eigenvectors(&h);
    let mut eigvecs = z.dot(&vectors);
    for mut col in eigvecs.columns_mut() {
        let norm = col.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
        if norm > T::zero() {
            col.mapv_inplace(|c| c / norm);
        }
    }
    let values: Vec<Complex<T>> = (0..n).map(|k| h[[k, k]]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (values[i], values[j]);
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(Ordering::Equal)
            .then(b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal))
            .then(b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal))
            .then(i.cmp(&j))
    });
    let eigenvalues = order.iter().map(|&i| values[i]).collect();
    let mut eigenvectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).assign(&eigvecs.column(src));
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Householder reduction to upper Hessenberg form, accumulating the
/// similarity into `z` (`A = Z H Z^H`).
fn hessenberg<T: Real>(h: &mut Array2<Complex<T>>, z: &mut Array2<Complex<T>>) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let norm = (k + 1..n).map(|i| h[[i, k]].norm_sqr()).sum::<T>().sqrt();
        if norm <= T::min_positive_value() {
            continue;
        }
        let x0 = h[[k + 1, k]];
        let phase = if x0.norm() > T::zero() {
            x0 / x0.norm()
        } else {
            Complex::new(T::one(), T::zero())
        };
        let alpha = -phase * norm;
        let mut v: Vec<Complex<T>> = (k + 1..n).map(|i| h[[i, k]]).collect();
        v[0] = v[0] - alpha;
        let vn = v.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
        if vn <= T::min_positive_value() {
            continue;
        }
        for c in v.iter_mut() {
            *c = *c / vn;
        }
        let two = T::lit(2.0);
        // H <- (I - 2 v v^H) H on rows k+1..n
        for j in 0..n {
            let dot: Complex<T> = v
                .iter()
                .enumerate()
                .map(|(a, vi)| vi.conj() * h[[k + 1 + a, j]])
                .fold(Complex::zero(), |s, x| s + x);
            for (a, vi) in v.iter().enumerate() {
                h[[k + 1 + a, j]] = h[[k + 1 + a, j]] - *vi * dot * two;
            }
        }
        // H <- H (I - 2 v v^H), Z <- Z (I - 2 v v^H) on columns k+1..n
        for mat in [&mut *h, &mut *z] {
            for i in 0..n {
                let dot: Complex<T> = v
                    .iter()
                    .enumerate()
                    .map(|(a, vi)| mat[[i, k + 1 + a]] * *vi)
                    .fold(Complex::zero(), |s, x| s + x);
                for (a, vi) in v.iter().enumerate() {
                    mat[[i, k + 1 + a]] = mat[[i, k + 1 + a]] - dot * vi.conj() * two;
                }
            }
        }
        for i in k + 2..n {
            h[[i, k]] = Complex::zero();
        }
    }
}

struct Givens<T: Real> {
    c: T,
    s: Complex<T>,
}

impl<T: Real> Givens<T> {
    /// Rotation mapping `(a, b)` to `(r, 0)`.
    fn new(a: Complex<T>, b: Complex<T>) -> Self {
        let an = a.norm();
        let bn = b.norm();
        if bn == T::zero() {
            return Self {
                c: T::one(),
                s: Complex::zero(),
            };
        }
        if an == T::zero() {
            return Self {
                c: T::zero(),
                s: b.conj() / bn,
            };
        }
        let r = an.hypot(bn);
        let alpha = a / an;
        Self {
            c: an / r,
            s: alpha * b.conj() / r,
        }
    }

    fn rotate_rows(&self, m: &mut Array2<Complex<T>>, p: usize, q: usize, cols: std::ops::Range<usize>) {
        for j in cols {
            let xp = m[[p, j]];
            let xq = m[[q, j]];
            m[[p, j]] = xp * self.c + self.s * xq;
            m[[q, j]] = -self.s.conj() * xp + xq * self.c;
        }
    }

    fn rotate_cols(&self, m: &mut Array2<Complex<T>>, p: usize, q: usize, rows: std::ops::Range<usize>) {
        for i in rows {
            let yp = m[[i, p]];
            let yq = m[[i, q]];
            m[[i, p]] = yp * self.c + self.s.conj() * yq;
            m[[i, q]] = -self.s * yp + yq * self.c;
        }
    }
}

/// Shifted QR on a Hessenberg matrix until it is upper triangular.
fn schur_qr<T: Real>(h: &mut Array2<Complex<T>>, z: &mut Array2<Complex<T>>) -> Result<(), LinalgError> {
    let n = h.nrows();
    let eps = T::epsilon();
    let max_iter = 60 * n.max(1);
    let mut total = 0usize;
    let mut hi = n - 1;
    let mut iter = 0usize;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let scale = h[[l - 1, l - 1]].norm() + h[[l, l]].norm();
            let sub = h[[l, l - 1]].norm();
            if sub <= eps * scale || sub <= T::min_positive_value() {
                h[[l, l - 1]] = Complex::zero();
                break;
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > max_iter {
            return Err(LinalgError::NoConvergence(total));
        }
        let shift = if iter % 11 == 0 {
            // exceptional shift to break cycles
            h[[hi, hi]] + Complex::new(Float::abs(h[[hi, hi - 1]].re) + Float::abs(h[[hi, hi - 1]].im), T::zero()) * T::lit(0.75)
        } else {
            wilkinson_shift(h[[hi - 1, hi - 1]], h[[hi - 1, hi]], h[[hi, hi - 1]], h[[hi, hi]])
        };
        for k in l..=hi {
            h[[k, k]] = h[[k, k]] - shift;
        }
        let mut rots = Vec::with_capacity(hi - l);
        for k in l..hi {
            let g = Givens::new(h[[k, k]], h[[k + 1, k]]);
            g.rotate_rows(h, k, k + 1, k..n);
            h[[k + 1, k]] = Complex::zero();
            rots.push(g);
        }
        for (idx, g) in rots.iter().enumerate() {
            let k = l + idx;
            g.rotate_cols(h, k, k + 1, 0..(k + 2).min(hi + 1));
            g.rotate_cols(z, k, k + 1, 0..n);
        }
        for k in l..=hi {
            h[[k, k]] = h[[k, k]] + shift;
        }
    }
    Ok(())
}

fn wilkinson_shift<T: Real>(a: Complex<T>, b: Complex<T>, c: Complex<T>, d: Complex<T>) -> Complex<T> {
    let half = T::lit(0.5);
    let tr = (a + d) * half;
    let det = a * d - b * c;
    let disc = (tr * tr - det).sqrt();
    let l1 = tr + disc;
    let l2 = tr - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Eigenvectors of an upper triangular matrix (columns, unnormalized).
fn triangular_eigenvectors<T: Real>(t: &Array2<Complex<T>>) -> Array2<Complex<T>> {
    let n = t.nrows();
    let tnorm = t.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
    let smin = (T::epsilon() * tnorm).max(T::min_positive_value());
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let lam = t[[k, k]];
        let mut y = vec![Complex::zero(); n];
        y[k] = Complex::new(T::one(), T::zero());
        for j in (0..k).rev() {
            let mut acc = Complex::<T>::zero();
            for l in j + 1..=k {
                acc = acc + t[[j, l]] * y[l];
            }
            let mut d = t[[j, j]] - lam;
            if d.norm() < smin {
                d = Complex::new(smin, T::zero());
            }
            y[j] = -acc / d;
        }
        for (i, v) in y.into_iter().enumerate() {
            out[[i, k]] = v;
        }
    }
    out
}

/// Least-squares solution of `A X ≈ B` by Householder QR with column
/// pivoting. Columns whose pivot falls below `rcond · |R_00|` are dropped
/// (their unknowns set to zero), so rank-deficient systems still return a
/// minimizer.
pub fn lstsq<T: Real>(
    a: &Array2<Complex<T>>,
    b: &Array2<Complex<T>>,
    rcond: T,
) -> Result<Array2<Complex<T>>, LinalgError> {
    let (m, n) = a.dim();
    if b.nrows() != m {
        return Err(LinalgError::DimensionMismatch(format!(
            "A has {m} rows, B has {}",
            b.nrows()
        )));
    }
    let p = b.ncols();
    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut colnorm: Vec<T> = (0..n)
        .map(|j| r.column(j).iter().map(|c| c.norm_sqr()).sum())
        .collect();
    let steps = m.min(n);
    for k in 0..steps {
        let (best, _) = colnorm
            .iter()
            .enumerate()
            .skip(k)
            .fold((k, -T::one()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        if best != k {
            for i in 0..m {
                r.swap([i, k], [i, best]);
            }
            perm.swap(k, best);
            colnorm.swap(k, best);
        }
        let norm = (k..m).map(|i| r[[i, k]].norm_sqr()).sum::<T>().sqrt();
        if norm <= T::min_positive_value() {
            continue;
        }
        let x0 = r[[k, k]];
        let phase = if x0.norm() > T::zero() {
            x0 / x0.norm()
        } else {
            Complex::new(T::one(), T::zero())
        };
        let alpha = -phase * norm;
        let mut v: Vec<Complex<T>> = (k..m).map(|i| r[[i, k]]).collect();
        v[0] = v[0] - alpha;
        let vn = v.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
        if vn > T::min_positive_value() {
            for c in v.iter_mut() {
                *c = *c / vn;
            }
            reflect_rows(&mut r, &v, k, k);
            reflect_rows(&mut qtb, &v, k, 0);
        }
        for j in k + 1..n {
            colnorm[j] = (k + 1..m).map(|i| r[[i, j]].norm_sqr()).sum();
        }
    }
    let r00 = if steps > 0 { r[[0, 0]].norm() } else { T::zero() };
    let rank = (0..steps)
        .take_while(|&k| r[[k, k]].norm() > rcond * r00 && r[[k, k]].norm() > T::zero())
        .count();
    let mut x_perm = Array2::<Complex<T>>::zeros((n, p));
    for col in 0..p {
        for i in (0..rank).rev() {
            let mut acc = qtb[[i, col]];
            for j in i + 1..rank {
                acc = acc - r[[i, j]] * x_perm[[j, col]];
            }
            x_perm[[i, col]] = acc / r[[i, i]];
        }
    }
    let mut x = Array2::zeros((n, p));
    for (k, &orig) in perm.iter().enumerate() {
        x.row_mut(orig).assign(&x_perm.row(k));
    }
    Ok(x)
}

/// LU factors of a constant tridiagonal matrix (Thomas algorithm without
/// pivoting; callers supply diagonally dominant systems).
#[derive(Clone, Debug)]
pub struct Tridiagonal<T: Real> {
    lower: Vec<T>,
    inv_pivot: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> Tridiagonal<T> {
    /// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused),
    /// `upper[i]` multiplies `x[i+1]` (last unused).
    pub fn new(lower: Vec<T>, diag: Vec<T>, upper: Vec<T>) -> Result<Self, LinalgError> {
        let n = diag.len();
        if lower.len() != n || upper.len() != n {
            return Err(LinalgError::DimensionMismatch("tridiagonal bands".into()));
        }
        let mut inv_pivot = vec![T::zero(); n];
        let mut prev_upper = T::zero();
        let mut prev_inv = T::zero();
        for i in 0..n {
            let pivot = if i == 0 {
                diag[0]
            } else {
                diag[i] - lower[i] * prev_upper * prev_inv
            };
            if pivot == T::zero() || !pivot.is_finite() {
                return Err(LinalgError::Singular);
            }
            inv_pivot[i] = T::one() / pivot;
            prev_upper = upper[i];
            prev_inv = inv_pivot[i];
        }
        Ok(Self {
            lower,
            inv_pivot,
            upper,
        })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Solves in place; works for any right-hand side that scales by `T`
    /// (real or complex).
    pub fn solve_in_place<V>(&self, rhs: &mut [V])
    where
        V: Copy + Sub<Output = V> + Mul<T, Output = V> + Div<T, Output = V>,
    {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        if n == 0 {
            return;
        }
        rhs[0] = rhs[0] * self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - rhs[i - 1] * self.lower[i]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] = rhs[i] - rhs[i + 1] * (self.upper[i] * self.inv_pivot[i]);
        }
    }
}

/// Applies `I - 2 v v^H` to rows `k..k+len(v)` of `mat`, columns `from..`.
fn reflect_rows<T: Real>(mat: &mut Array2<Complex<T>>, v: &[Complex<T>], k: usize, from: usize) {
    let two = T::lit(2.0);
    for j in from..mat.ncols() {
        let dot = v
            .iter()
            .enumerate()
            .map(|(a, vi)| vi.conj() * mat[[k + a, j]])
            .fold(Complex::zero(), |s, x| s + x);
        for (a, vi) in v.iter().enumerate() {
            mat[[k + a, j]] = mat[[k + a, j]] - *vi * dot * two;
        }
    }
}
