//! Dense complex matrices at the small dimensions used throughout (2x2 and 4x4),
//! with a Hermitian eigensolver and a pivoted real linear solver.
//!
//! The eigensolver runs cyclic Jacobi sweeps with complex rotations. For 2x2
//! input a single rotation is exact, so the closed form and the sweep coincide.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Shorthand constructor for a complex scalar.
#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![C64::ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C64::ONE;
        }
        m
    }

    /// Builds a matrix from row-major data; the length must be a perfect square.
    pub fn from_rows(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Dimension { expected: dim * dim, got: data.len() });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matrix product needs equal dimensions");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == C64::ZERO {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Self { dim: self.dim, data }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Self { dim: self.dim, data }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(c(s, 0.0))
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self[(j, i)].conj();
            }
        }
        out
    }

    pub fn conjugate(&self) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|a| a.conj()).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Kronecker product; a 2x2 pair yields the 4x4 two-qubit operator with
    /// the left factor acting on the first qubit.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (n, m) = (self.dim, rhs.dim);
        let mut out = Self::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self[(i, j)];
                if a == C64::ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out[(i * m + k, j * m + l)] = a * rhs[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn hermitian_part(&self) -> Self {
        self.add(&self.adjoint()).scale_re(0.5)
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!(self.dim, rhs.dim);
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Applies a matrix to a vector.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        let mut out = vec![C64::ZERO; n];
        for i in 0..n {
            for j in 0..n {
                out[i] += self[(i, j)] * v[j];
            }
        }
        out
    }

    /// Eigenvalues of a Hermitian matrix, ascending.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.hermitian_eigen()?.values)
    }

    /// Full spectral decomposition of a Hermitian matrix.
    ///
    /// Cyclic Jacobi with complex plane rotations: each pivot (p, q) is phased
    /// to a real off-diagonal element and then annihilated by the classic
    /// rotation; off-diagonal mass decreases monotonically. Eigenvalues come
    /// back ascending with matching eigenvector columns.
    pub fn hermitian_eigen(&self) -> Result<Eigen> {
        let dev = self.hermiticity_deviation();
        let scale = self.frobenius_norm().max(1.0);
        if dev > 1e-10 * scale {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let n = self.dim;
        let mut a = self.hermitian_part();
        let mut v = Self::identity(n);
        let tol = 1e-13 * scale;
        let max_sweeps = 60;
        let mut converged = false;
        for _ in 0..max_sweeps {
            if off_diagonal_mass(&a) <= tol {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    let g = apq.norm();
                    if g <= tol * 1e-2 {
                        continue;
                    }
                    // Phase w makes the pivot real; then rotate by theta with
                    // tan(2 theta) = 2 g / (a_pp - a_qq).
                    let w = apq / g;
                    let alpha = a[(p, p)].re;
                    let beta = a[(q, q)].re;
                    let tau = (alpha - beta) / (2.0 * g);
                    let t = if tau == 0.0 {
                        1.0
                    } else {
                        tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                    };
                    let cth = 1.0 / (1.0 + t * t).sqrt();
                    let sth = t * cth;
                    let s_w = w * sth; // appears as col_p' = c col_p + s w^* col_q
                    // Column update A <- A U.
                    for i in 0..n {
                        let aip = a[(i, p)];
                        let aiq = a[(i, q)];
                        a[(i, p)] = aip * cth + aiq * s_w.conj();
                        a[(i, q)] = -aip * s_w + aiq * cth;
                    }
                    // Row update A <- U^dagger A.
                    for j in 0..n {
                        let apj = a[(p, j)];
                        let aqj = a[(q, j)];
                        a[(p, j)] = apj * cth + aqj * s_w;
                        a[(q, j)] = -apj * s_w.conj() + aqj * cth;
                    }
                    // Accumulate eigenvectors V <- V U.
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = vip * cth + viq * s_w.conj();
                        v[(i, q)] = -vip * s_w + viq * cth;
                    }
                }
            }
        }
        if !converged && off_diagonal_mass(&a) > tol {
            return Err(Error::EigenNoConvergence { sweeps: max_sweeps, off: off_diagonal_mass(&a) });
        }
        let mut order: Vec<usize> = (0..n).collect();
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
        order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
        let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
        let mut vectors = Self::zeros(n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for i in 0..n {
                vectors[(i, new_col)] = v[(i, old_col)];
            }
        }
        Ok(Eigen { values, vectors })
    }

    /// Principal square root of a positive semidefinite Hermitian matrix.
    /// Eigenvalues slightly negative from roundoff (above -1e-10 of scale)
    /// are clamped to zero; anything lower is rejected.
    pub fn psd_sqrt(&self) -> Result<Self> {
        let eig = self.hermitian_eigen()?;
        let scale = self.frobenius_norm().max(1.0);
        let mut out = Self::zeros(self.dim);
        for (k, &lam) in eig.values.iter().enumerate() {
            if lam < -1e-10 * scale {
                return Err(Error::NonPhysical { min_eigenvalue: lam });
            }
            let root = lam.max(0.0).sqrt();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    out[(i, j)] += eig.vectors[(i, k)] * eig.vectors[(j, k)].conj() * root;
                }
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Spectral decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the matching eigenvectors.
    pub vectors: ComplexMatrix,
}

fn off_diagonal_mass(a: &ComplexMatrix) -> f64 {
    let n = a.dim();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)].norm_sqr();
            }
        }
    }
    sum.sqrt()
}

/// Serialization shim: a matrix as its dimension plus row-major (re, im) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixDto {
    pub dim: usize,
    pub entries: Vec<[f64; 2]>,
}

impl From<&ComplexMatrix> for MatrixDto {
    fn from(m: &ComplexMatrix) -> Self {
        Self { dim: m.dim(), entries: m.data().iter().map(|z| [z.re, z.im]).collect() }
    }
}

impl MatrixDto {
    pub fn to_matrix(&self) -> Result<ComplexMatrix> {
        ComplexMatrix::from_rows(self.dim, self.entries.iter().map(|&[re, im]| c(re, im)).collect())
    }
}

/// Solves the real linear system `a x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major n x n.
pub fn solve_real(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    for col in 0..n {
        let mut piv = col;
        for row in (col + 1)..n {
            if m[row * n + col].abs() > m[piv * n + col].abs() {
                piv = row;
            }
        }
        let pval = m[piv * n + col];
        if pval.abs() < 1e-12 * scale {
            return Err(Error::SingularSystem { pivot: pval });
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        for row in (col + 1)..n {
            let f = m[row * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in (col + 1)..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}
