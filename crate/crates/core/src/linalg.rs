//! Dense complex linear algebra shared by every module.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Linear maps on `M_k` are
//! stored as `k²×k²` "superoperators" acting on the column-major
//! vectorisation `vec(x)`, so that `vec(a·x·b) = (bᵀ ⊗ a)·vec(x)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;
pub type Vector = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[inline]
pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn identity(k: usize) -> Mat {
    Mat::identity(k, k)
}

pub fn zeros(k: usize) -> Mat {
    Mat::zeros(k, k)
}

pub fn from_real_diagonal(values: &[f64]) -> Mat {
    let k = values.len();
    let mut m = zeros(k);
    for (i, v) in values.iter().enumerate() {
        m[(i, i)] = real(*v);
    }
    m
}

/// Matrix unit `E_ij`.
pub fn matrix_unit(k: usize, i: usize, j: usize) -> Mat {
    let mut m = zeros(k);
    m[(i, j)] = ONE;
    m
}

pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, k: usize) -> Mat {
    Mat::from_column_slice(k, k, v.as_slice())
}

/// Superoperator of `x ↦ a·x·b`.
pub fn sandwich_superop(a: &Mat, b: &Mat) -> Mat {
    b.transpose().kronecker(a)
}

pub fn apply_superop(s: &Mat, x: &Mat) -> Mat {
    let k = x.nrows();
    unvec(&(s * vec(x)), k)
}

/// Permutation `P` with `P·vec(a) = vec(aᵀ)`.
pub fn transpose_permutation(k: usize) -> Mat {
    let n = k * k;
    let mut p = Mat::zeros(n, n);
    for i in 0..k {
        for j in 0..k {
            // vec index of (i,j) is i + j k; of (j,i) is j + i k
            p[(j + i * k, i + j * k)] = ONE;
        }
    }
    p
}

pub fn trace(m: &Mat) -> C64 {
    m.diagonal().iter().sum()
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermiticity_deviation(m: &Mat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn hermitian_part(m: &Mat) -> Mat {
    (m + m.adjoint()) * real(0.5)
}

pub fn commutator(a: &Mat, b: &Mat) -> Mat {
    a * b - b * a
}

/// Eigendecomposition of a hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl Eigh {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Orthonormal columns spanning the eigenvectors whose eigenvalue passes `keep`.
    pub fn select(&self, keep: impl Fn(f64) -> bool) -> Mat {
        let idx: Vec<usize> = (0..self.values.len())
            .filter(|&i| keep(self.values[i]))
            .collect();
        let mut q = Mat::zeros(self.vectors.nrows(), idx.len());
        for (c, &i) in idx.iter().enumerate() {
            q.set_column(c, &self.vectors.column(i));
        }
        q
    }

    pub fn reconstruct(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = real(f(self.values[j]));
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        &scaled * self.vectors.adjoint()
    }
}

/// Hermitian eigendecomposition of the hermitian part of `m`.
pub fn eigh(m: &Mat) -> Eigh {
    let n = m.nrows();
    if n == 0 {
        return Eigh {
            values: vec![],
            vectors: Mat::zeros(0, 0),
        };
    }
    let se = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &se.eigenvectors.column(i));
    }
    Eigh { values, vectors }
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    eigh(m).min()
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    to_faer(m)
        .singular_values()
        .expect("singular values converge")
}

struct FullSvd {
    s: Vec<f64>,
    u: Mat,
    v: Mat,
}

fn full_svd(m: &Mat) -> FullSvd {
    let svd = to_faer(m).svd().expect("svd converges");
    let s = (0..m.nrows().min(m.ncols()))
        .map(|i| svd.S()[i].re)
        .collect();
    FullSvd {
        s,
        u: from_faer(svd.U()),
        v: from_faer(svd.V()),
    }
}

fn to_faer(m: &Mat) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    })
}

fn from_faer(m: faer::MatRef<'_, faer::c64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
        let z = m[(i, j)];
        C64::new(z.re, z.im)
    })
}

/// Spectral (largest singular value) norm.
pub fn op_norm(m: &Mat) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

/// Schatten-1 norm `Tr|m|` (unnormalised).
pub fn nuclear_norm(m: &Mat) -> f64 {
    singular_values(m).into_iter().sum()
}

/// Induced 1-norm (max column sum), a cheap upper bound for series truncation.
pub fn one_norm(m: &Mat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Orthonormal basis of the null space: right singular vectors with
/// singular value at most `cutoff`.
pub fn null_space(a: &Mat, cutoff: f64) -> Mat {
    let (r, c) = a.shape();
    if c == 0 {
        return Mat::zeros(0, 0);
    }
    if r == 0 {
        return identity(c);
    }
    let svd = full_svd(a);
    let idx: Vec<usize> = (0..c)
        .filter(|&i| svd.s.get(i).is_none_or(|&v| v <= cutoff))
        .collect();
    let mut q = Mat::zeros(c, idx.len());
    for (col, &i) in idx.iter().enumerate() {
        q.set_column(col, &svd.v.column(i));
    }
    q
}

/// Orthonormal basis of the column space (singular values above `cutoff`).
pub fn column_space(a: &Mat, cutoff: f64) -> Mat {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(r, 0);
    }
    let svd = full_svd(a);
    let idx: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > cutoff).collect();
    let mut q = Mat::zeros(r, idx.len());
    for (col, &i) in idx.iter().enumerate() {
        q.set_column(col, &svd.u.column(i));
    }
    q
}

pub fn projector(basis: &Mat) -> Mat {
    basis * basis.adjoint()
}

pub fn random_gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

pub fn random_hermitian(rng: &mut impl Rng, k: usize) -> Mat {
    hermitian_part(&random_gaussian(rng, k, k))
}

/// Haar unitary from the QR decomposition of a complex Ginibre matrix.
pub fn random_unitary(rng: &mut impl Rng, k: usize) -> Mat {
    let g = random_gaussian(rng, k, k);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut u = q.clone();
    for j in 0..k {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..k {
            u[(i, j)] = q[(i, j)] * phase;
        }
    }
    u
}

pub fn random_unit_vector(rng: &mut impl Rng, k: usize) -> Vector {
    let g = random_gaussian(rng, k, 1);
    let n = g.norm();
    Vector::from_column_slice((g / real(n)).as_slice())
}

pub fn random_rank_one_projection(rng: &mut impl Rng, k: usize) -> Mat {
    let v = random_unit_vector(rng, k);
    &v * v.adjoint()
}

/// Random positive semidefinite matrix of the given rank, unit operator norm scale.
pub fn random_psd(rng: &mut impl Rng, k: usize, rank: usize) -> Mat {
    let g = random_gaussian(rng, k, rank);
    let p = &g * g.adjoint();
    let n = op_norm(&p).max(f64::MIN_POSITIVE);
    p / real(n)
}

/// Rank-one projections followed by a few full-rank PSD matrices.
pub fn psd_samples(rng: &mut impl Rng, k: usize, rank_one: usize, full: usize) -> Vec<Mat> {
    let mut out: Vec<Mat> = (0..rank_one)
        .map(|_| random_rank_one_projection(rng, k))
        .collect();
    out.extend((0..full).map(|_| random_psd(rng, k, k)));
    out
}

/// `exp(i·h)` for hermitian `h`.
pub fn unitary_from_hermitian(h: &Mat) -> Mat {
    let e = eigh(h);
    let n = e.values.len();
    let mut scaled = e.vectors.clone();
    for j in 0..n {
        let ph = C64::from_polar(1.0, e.values[j]);
        for i in 0..n {
            scaled[(i, j)] *= ph;
        }
    }
    &scaled * e.vectors.adjoint()
}
