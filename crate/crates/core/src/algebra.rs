//! The ambient `(M_k, τ, ρ)`: normalised trace, faithful state, Loewner
//! order, spectral projections and the GNS space with its commutant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, eigh, hermiticity_deviation, max_abs, null_space, projector, real, trace, Mat, Vector,
    C64,
};

pub const HERMITIAN_TOL: f64 = 1e-8;
pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const BOUNDARY_TOL: f64 = 1e-12;
pub const PROJECTION_TOL: f64 = 1e-10;
pub const NULL_CUTOFF: f64 = 1e-9;

pub fn check_hermitian(m: &Mat) -> Result<()> {
    let deviation = hermiticity_deviation(m);
    if deviation > HERMITIAN_TOL {
        return Err(Error::NotHermitian {
            deviation,
            tolerance: HERMITIAN_TOL,
        });
    }
    Ok(())
}

fn check_square(m: &Mat, k: usize) -> Result<()> {
    if m.nrows() != k || m.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

/// `M_k` with normalised trace and the faithful state `ρ(x) = τ(Dx)`.
#[derive(Debug, Clone)]
pub struct AlgebraContext {
    k: usize,
    density: Mat,
    spectrum: Vec<f64>,
    sqrt: Mat,
    inv_sqrt: Mat,
    inv: Mat,
}

impl AlgebraContext {
    pub fn new(density: Mat) -> Result<Self> {
        let k = density.nrows();
        check_square(&density, k)?;
        check_hermitian(&density)?;
        let density = linalg::hermitian_part(&density);
        let e = eigh(&density);
        if e.min() <= 0.0 {
            return Err(Error::NotFaithful {
                min_eigenvalue: e.min(),
            });
        }
        let t = trace(&density).re / k as f64;
        if (t - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { trace: t });
        }
        Ok(Self {
            k,
            sqrt: e.reconstruct(f64::sqrt),
            inv_sqrt: e.reconstruct(|x| 1.0 / x.sqrt()),
            inv: e.reconstruct(|x| 1.0 / x),
            spectrum: e.values,
            density,
        })
    }

    /// `ρ = τ`.
    pub fn tracial(k: usize) -> Self {
        Self::new(linalg::identity(k)).expect("identity is a faithful normalised density")
    }

    /// Rescales a positive definite matrix so that `τ(D) = 1`.
    pub fn normalized(density: Mat) -> Result<Self> {
        let k = density.nrows();
        let t = trace(&density).re / k as f64;
        if !(t > 0.0) {
            return Err(Error::NotNormalized { trace: t });
        }
        Self::new(density / real(t))
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn density(&self) -> &Mat {
        &self.density
    }

    /// Eigenvalues of `D`, ascending.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn density_sqrt(&self) -> &Mat {
        &self.sqrt
    }

    pub fn density_inv_sqrt(&self) -> &Mat {
        &self.inv_sqrt
    }

    pub fn density_inv(&self) -> &Mat {
        &self.inv
    }

    pub fn tau(&self, x: &Mat) -> C64 {
        trace(x) / real(self.k as f64)
    }

    pub fn rho(&self, x: &Mat) -> C64 {
        // Tr(Dx) without forming the product
        let mut s = C64::new(0.0, 0.0);
        for a in 0..self.k {
            for b in 0..self.k {
                s += self.density[(a, b)] * x[(b, a)];
            }
        }
        s / real(self.k as f64)
    }

    pub fn identity(&self) -> Mat {
        linalg::identity(self.k)
    }

    /// Row vector `r` with `r·vec(x) = ρ(x)`.
    pub fn rho_row(&self) -> Vector {
        let k = self.k;
        let mut r = Vector::zeros(k * k);
        for a in 0..k {
            for b in 0..k {
                r[b + a * k] = self.density[(a, b)] / real(k as f64);
            }
        }
        r
    }

    /// Matrix `G` with `ρ(yz) = vec(y)ᵀ·G·vec(z)`.
    pub fn rho_bilinear(&self) -> Mat {
        let k = self.k;
        let mut g = Mat::zeros(k * k, k * k);
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    g[(b + c * k, c + a * k)] = self.density[(a, b)] / real(k as f64);
                }
            }
        }
        g
    }

    pub fn check_dim(&self, m: &Mat) -> Result<()> {
        check_square(m, self.k)
    }
}

/// A self-adjoint functional `μ(x) = τ(Yx)`.
#[derive(Debug, Clone)]
pub struct SelfAdjointFunctional {
    pub density: Mat,
    pub norm1: f64,
}

impl SelfAdjointFunctional {
    pub fn from_density(y: Mat) -> Result<Self> {
        check_hermitian(&y)?;
        let y = linalg::hermitian_part(&y);
        let norm1 = tau_abs(&y);
        Ok(Self { density: y, norm1 })
    }

    pub fn state(ctx: &AlgebraContext) -> Self {
        Self::from_density(ctx.density().clone()).expect("state density is hermitian")
    }

    pub fn dim(&self) -> usize {
        self.density.nrows()
    }

    pub fn eval(&self, x: &Mat) -> C64 {
        let k = self.dim();
        let mut s = C64::new(0.0, 0.0);
        for a in 0..k {
            for b in 0..k {
                s += self.density[(a, b)] * x[(b, a)];
            }
        }
        s / real(k as f64)
    }

    pub fn norm(&self) -> f64 {
        self.norm1
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        linalg::min_eigenvalue(&self.density) >= -tol
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            density: &self.density * real(c),
            norm1: self.norm1 * c.abs(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_density(&self.density - &other.density).expect("difference stays hermitian")
    }
}

/// `τ(|Y|)` for hermitian `Y`.
pub fn tau_abs(y: &Mat) -> f64 {
    let k = y.nrows().max(1) as f64;
    eigh(y).values.iter().map(|v| v.abs()).sum::<f64>() / k
}

pub fn functional_from_density(y: Mat) -> Result<SelfAdjointFunctional> {
    SelfAdjointFunctional::from_density(y)
}

/// Recovers `Y` from a functional known only through its values on matrix units.
pub fn density_from_functional(k: usize, mu: impl Fn(&Mat) -> C64) -> Result<Mat> {
    let mut y = linalg::zeros(k);
    for i in 0..k {
        for j in 0..k {
            // μ(E_ij) = Y_ji / k
            y[(j, i)] = mu(&linalg::matrix_unit(k, i, j)) * real(k as f64);
        }
    }
    check_hermitian(&y)?;
    Ok(y)
}

/// Orthogonal projection together with its state and trace deficits.
#[derive(Debug, Clone)]
pub struct ProjectionCert {
    pub matrix: Mat,
    /// Orthonormal basis of the range.
    pub basis: Mat,
    pub rank: usize,
    pub deficit_rho: f64,
    pub deficit_tau: f64,
}

impl ProjectionCert {
    pub fn from_basis(ctx: &AlgebraContext, basis: Mat) -> Self {
        let matrix = projector(&basis);
        let complement = ctx.identity() - &matrix;
        Self {
            rank: basis.ncols(),
            deficit_rho: ctx.rho(&complement).re,
            deficit_tau: ctx.tau(&complement).re,
            matrix,
            basis,
        }
    }

    pub fn identity(ctx: &AlgebraContext) -> Self {
        Self::from_basis(ctx, ctx.identity())
    }

    pub fn zero(ctx: &AlgebraContext) -> Self {
        Self::from_basis(ctx, Mat::zeros(ctx.dim(), 0))
    }

    /// Accepts any projection matrix, recomputing an orthonormal basis.
    pub fn from_matrix(ctx: &AlgebraContext, e: &Mat) -> Result<Self> {
        ctx.check_dim(e)?;
        check_hermitian(e)?;
        let idem = max_abs(&(e * e - e));
        if idem > PROJECTION_TOL {
            return Err(Error::NotPositive {
                min_eigenvalue: -idem,
                tolerance: PROJECTION_TOL,
            });
        }
        let basis = eigh(e).select(|v| v > 0.5);
        Ok(Self::from_basis(ctx, basis))
    }

    pub fn is_valid(&self) -> bool {
        let e = &self.matrix;
        hermiticity_deviation(e) <= PROJECTION_TOL
            && max_abs(&(e * e - e)) <= PROJECTION_TOL
            && (-1e-12..=1.0 + 1e-12).contains(&self.deficit_rho)
            && (-1e-12..=1.0 + 1e-12).contains(&self.deficit_tau)
    }

    pub fn compress(&self, x: &Mat) -> Mat {
        &self.matrix * x * &self.matrix
    }
}

/// `A ⪯ B` up to `tol`; the margin is the least eigenvalue of `B − A`.
pub fn loewner_leq(a: &Mat, b: &Mat, tol: f64) -> Result<(bool, f64)> {
    check_hermitian(a)?;
    check_hermitian(b)?;
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let margin = linalg::min_eigenvalue(&(b - a));
    Ok((margin >= -tol, margin))
}

/// `χ_(lo,hi)(A)`; errors if an eigenvalue sits on an endpoint.
pub fn spectral_projection(
    ctx: &AlgebraContext,
    a: &Mat,
    lo: f64,
    hi: f64,
) -> Result<ProjectionCert> {
    ctx.check_dim(a)?;
    check_hermitian(a)?;
    let e = eigh(a);
    for &v in &e.values {
        for endpoint in [lo, hi] {
            if endpoint.is_finite() && (v - endpoint).abs() <= BOUNDARY_TOL {
                return Err(Error::BoundaryAmbiguous {
                    eigenvalue: v,
                    endpoint,
                });
            }
        }
    }
    Ok(ProjectionCert::from_basis(
        ctx,
        e.select(|v| lo < v && v < hi),
    ))
}

/// Spectral projection with explicit endpoint inclusion.
pub fn spectral_projection_with(
    ctx: &AlgebraContext,
    a: &Mat,
    lo: f64,
    hi: f64,
    include_lo: bool,
    include_hi: bool,
) -> Result<ProjectionCert> {
    ctx.check_dim(a)?;
    check_hermitian(a)?;
    let e = eigh(a);
    let inside = |v: f64| {
        let above = if include_lo {
            v >= lo - BOUNDARY_TOL
        } else {
            v > lo + BOUNDARY_TOL
        };
        let below = if include_hi {
            v <= hi + BOUNDARY_TOL
        } else {
            v < hi - BOUNDARY_TOL
        };
        above && below
    };
    Ok(ProjectionCert::from_basis(ctx, e.select(inside)))
}

pub fn support_projection(ctx: &AlgebraContext, c: &Mat) -> Result<ProjectionCert> {
    ctx.check_dim(c)?;
    check_hermitian(c)?;
    let e = eigh(c);
    if e.min() < -PROJECTION_TOL {
        return Err(Error::NotPositive {
            min_eigenvalue: e.min(),
            tolerance: PROJECTION_TOL,
        });
    }
    let scale = e.max().abs().max(1.0);
    Ok(ProjectionCert::from_basis(
        ctx,
        e.select(|v| v > NULL_CUTOFF * scale),
    ))
}

/// `e ∧ f`: projection onto `range(e) ∩ range(f)`.
pub fn meet(ctx: &AlgebraContext, e: &ProjectionCert, f: &ProjectionCert) -> ProjectionCert {
    let one = ctx.identity();
    let s = (&one - &e.matrix) + (&one - &f.matrix);
    ProjectionCert::from_basis(ctx, null_space(&s, NULL_CUTOFF))
}

pub fn meet_all<'a>(
    ctx: &AlgebraContext,
    items: impl IntoIterator<Item = &'a ProjectionCert>,
) -> ProjectionCert {
    let one = ctx.identity();
    let mut s = linalg::zeros(ctx.dim());
    for p in items {
        s += &one - &p.matrix;
    }
    ProjectionCert::from_basis(ctx, null_space(&s, NULL_CUTOFF))
}

/// The GNS Hilbert space `L²(M, ρ)` in orthonormal coordinates
/// `x ↦ vec(x·D^{1/2})/√k`.
#[derive(Debug, Clone)]
pub struct GnsSpace {
    pub context: AlgebraContext,
    w: Mat,
    w_inv: Mat,
}

impl GnsSpace {
    pub fn new(context: AlgebraContext) -> Self {
        let k = context.dim();
        let scale = real(1.0 / (k as f64).sqrt());
        let w = linalg::sandwich_superop(&linalg::identity(k), context.density_sqrt()) * scale;
        let w_inv =
            linalg::sandwich_superop(&linalg::identity(k), context.density_inv_sqrt()) / scale;
        Self { context, w, w_inv }
    }

    pub fn dim(&self) -> usize {
        self.context.dim().pow(2)
    }

    pub fn coords(&self, x: &Mat) -> Vector {
        &self.w * linalg::vec(x)
    }

    pub fn element(&self, v: &Vector) -> Mat {
        linalg::unvec(&(&self.w_inv * v), self.context.dim())
    }

    /// `⟨x, y⟩_ρ = ρ(y*x)`.
    pub fn inner(&self, x: &Mat, y: &Mat) -> C64 {
        self.context.rho(&(y.adjoint() * x))
    }

    pub fn omega(&self) -> Mat {
        self.context.identity()
    }

    /// GNS operator `xΩ ↦ S(x)Ω` of a superoperator `S`.
    pub fn operator(&self, superop: &Mat) -> Mat {
        &self.w * superop * &self.w_inv
    }

    /// Left multiplication `L_a`.
    pub fn left(&self, a: &Mat) -> Mat {
        self.operator(&linalg::sandwich_superop(a, &self.context.identity()))
    }

    /// Right multiplication `R_b`, an element of the commutant.
    pub fn right(&self, b: &Mat) -> Mat {
        self.operator(&linalg::sandwich_superop(&self.context.identity(), b))
    }

    /// Operator norm of `R_b` on the GNS space, `‖D^{-1/2} b D^{1/2}‖`.
    pub fn right_norm(&self, b: &Mat) -> f64 {
        linalg::op_norm(&self.right_symbol(b))
    }

    /// `D^{-1/2} b D^{1/2}`; `R_b ⪰ 0` iff this is positive semidefinite.
    pub fn right_symbol(&self, b: &Mat) -> Mat {
        self.context.density_inv_sqrt() * b * self.context.density_sqrt()
    }

    /// Dimension of `span{L_a Ω}` over the matrix units.
    pub fn cyclic_rank(&self) -> usize {
        let k = self.context.dim();
        let mut span = Mat::zeros(k * k, k * k);
        for i in 0..k {
            for j in 0..k {
                let v = self.left(&linalg::matrix_unit(k, i, j)) * self.coords(&self.omega());
                span.set_column(i + j * k, &v);
            }
        }
        linalg::column_space(&span, NULL_CUTOFF).ncols()
    }
}

/// `{"re": [[..]], "im": [[..]]}`, row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixLiteral {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixLiteral {
    pub fn from_mat(m: &Mat) -> Self {
        let rows = |f: fn(&C64) -> f64| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect())
                .collect()
        };
        Self {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        let r = self.re.len();
        let c = self.re.first().map_or(0, Vec::len);
        let ragged = self.re.iter().any(|row| row.len() != c)
            || self.im.len() != r
            || self.im.iter().any(|row| row.len() != c);
        if ragged {
            return Err(Error::Config(
                "matrix literal rows must share one length and re/im must match".into(),
            ));
        }
        Ok(Mat::from_fn(r, c, |i, j| {
            C64::new(self.re[i][j], self.im[i][j])
        }))
    }

    /// Parses a state density and normalises nothing: `τ(D) = 1` is validated.
    pub fn to_context(&self) -> Result<AlgebraContext> {
        AlgebraContext::new(self.to_mat()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_real_diagonal, random_gaussian, random_hermitian, random_psd};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx3() -> AlgebraContext {
        AlgebraContext::new(from_real_diagonal(&[0.5, 1.0, 1.5])).unwrap()
    }

    #[test]
    fn loewner_examples() {
        let i = linalg::identity(2);
        let z = linalg::zeros(2);
        assert_eq!(loewner_leq(&z, &i, 1e-12).unwrap(), (true, 1.0));
        let (ok, m) = loewner_leq(&i, &z, 1e-12).unwrap();
        assert!(!ok && (m + 1.0).abs() < 1e-15);
        let (ok, m) = loewner_leq(
            &from_real_diagonal(&[1.0, 2.0]),
            &from_real_diagonal(&[2.0, 2.0]),
            1e-12,
        )
        .unwrap();
        assert!(ok && m.abs() < 1e-15);
    }

    #[test]
    fn loewner_rejects_non_hermitian() {
        let mut a = linalg::zeros(2);
        a[(0, 1)] = real(1.0);
        assert!(matches!(
            loewner_leq(&a, &a, 1e-12),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn spectral_projection_examples() {
        let ctx = ctx3();
        let a = from_real_diagonal(&[0.1, 1.0, 10.0]);
        let e = spectral_projection(&ctx, &a, 0.5, 2.0).unwrap();
        assert!(max_abs(&(e.matrix - from_real_diagonal(&[0.0, 1.0, 0.0]))) < 1e-12);
        let e = spectral_projection(&ctx, &ctx.identity(), 0.0, 2.0).unwrap();
        assert_eq!(e.rank, 3);
        assert!(matches!(
            spectral_projection(&ctx, &a, 1.0, 2.0),
            Err(Error::BoundaryAmbiguous { .. })
        ));
        let e = spectral_projection_with(&ctx, &a, 1.0, 2.0, true, false).unwrap();
        assert_eq!(e.rank, 1);
    }

    #[test]
    fn negative_eigenspace_compresses_nonpositive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ctx = AlgebraContext::tracial(4);
        let a = random_hermitian(&mut rng, 4);
        let e = spectral_projection(&ctx, &a, f64::NEG_INFINITY, 0.0).unwrap();
        assert!(linalg::eigh(&e.compress(&a)).max() <= 1e-12);
        assert!(max_abs(&linalg::commutator(&e.matrix, &a)) <= 1e-10);
    }

    #[test]
    fn degenerate_eigenvalues_give_subspace() {
        let ctx = ctx3();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = linalg::random_unitary(&mut rng, 3);
        let a = &u * from_real_diagonal(&[1.0, 1.0, 5.0]) * u.adjoint();
        let e = spectral_projection(&ctx, &a, 0.0, 2.0).unwrap();
        assert_eq!(e.rank, 2);
        assert!(e.is_valid());
    }

    #[test]
    fn support_examples() {
        let ctx = AlgebraContext::tracial(2);
        assert_eq!(support_projection(&ctx, &linalg::zeros(2)).unwrap().rank, 0);
        let s = support_projection(&ctx, &from_real_diagonal(&[0.0, 3.0])).unwrap();
        assert!(max_abs(&(s.matrix - from_real_diagonal(&[0.0, 1.0]))) < 1e-12);
        assert!(support_projection(&ctx, &from_real_diagonal(&[-1.0, 3.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ctx = AlgebraContext::tracial(4);
        let c = random_psd(&mut rng, 4, 2);
        let s = support_projection(&ctx, &c).unwrap();
        assert_eq!(s.rank, 2);
        assert!(max_abs(&(&s.matrix * &c - &c)) < 1e-10);
        let bound = &s.matrix * real(linalg::op_norm(&c));
        assert!(loewner_leq(&c, &bound, 1e-10).unwrap().0);
    }

    #[test]
    fn functional_examples() {
        let ctx = ctx3();
        let rho = SelfAdjointFunctional::state(&ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_gaussian(&mut rng, 3, 3);
        assert!((rho.eval(&x) - ctx.rho(&x)).norm() < 1e-14);
        let tau = functional_from_density(ctx.identity()).unwrap();
        assert!((tau.norm() - 1.0).abs() < 1e-14);
        let y = from_real_diagonal(&[1.0, -1.0]);
        assert!((functional_from_density(y).unwrap().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gns_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ctx = AlgebraContext::normalized(random_psd(&mut rng, 3, 3) + linalg::identity(3) * real(0.1))
            .unwrap();
        let gns = GnsSpace::new(ctx);
        assert!((gns.inner(&gns.omega(), &gns.omega()) - real(1.0)).norm() < 1e-12);
        let a = random_gaussian(&mut rng, 3, 3);
        let b = random_gaussian(&mut rng, 3, 3);
        assert!(max_abs(&linalg::commutator(&gns.left(&a), &gns.right(&b))) < 1e-10);
        assert_eq!(gns.cyclic_rank(), 9);
        // orthonormal coordinates reproduce the ρ inner product
        let x = random_gaussian(&mut rng, 3, 3);
        let y = random_gaussian(&mut rng, 3, 3);
        let lhs = gns.inner(&x, &y);
        let rhs = gns.coords(&y).dotc(&gns.coords(&x));
        assert!((lhs - rhs).norm() < 1e-12);
        assert!(max_abs(&(gns.element(&gns.coords(&x)) - &x)) < 1e-12);
        // the GNS operator norm of R_b matches the symbol norm
        let rb = gns.right(&b);
        assert!((linalg::op_norm(&rb) - gns.right_norm(&b)).abs() < 1e-9);
    }

    #[test]
    fn rho_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let ctx = AlgebraContext::normalized(random_psd(&mut rng, 3, 3) + linalg::identity(3)).unwrap();
        let y = random_gaussian(&mut rng, 3, 3);
        let z = random_gaussian(&mut rng, 3, 3);
        let g = ctx.rho_bilinear();
        let lhs = (linalg::vec(&y).transpose() * &g * linalg::vec(&z))[(0, 0)];
        assert!((lhs - ctx.rho(&(&y * &z))).norm() < 1e-12);
        let r = ctx.rho_row();
        assert!(((r.transpose() * linalg::vec(&y))[(0, 0)] - ctx.rho(&y)).norm() < 1e-12);
    }

    #[test]
    fn context_validation() {
        assert!(matches!(
            AlgebraContext::new(from_real_diagonal(&[2.0, 0.0])),
            Err(Error::NotFaithful { .. })
        ));
        assert!(matches!(
            AlgebraContext::new(from_real_diagonal(&[1.0, 2.0])),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn matrix_literal_round_trip() {
        let ctx = ctx3();
        let lit = MatrixLiteral::from_mat(ctx.density());
        let json = serde_json::to_string(&lit).unwrap();
        let back: MatrixLiteral = serde_json::from_str(&json).unwrap();
        let c2 = back.to_context().unwrap();
        assert!(max_abs(&(c2.density() - ctx.density())) < 1e-15);
    }

    fn seeded_context(rng: &mut ChaCha8Rng, k: usize) -> AlgebraContext {
        AlgebraContext::normalized(random_psd(rng, k, k) + linalg::identity(k) * real(0.05)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn state_is_positive_and_unital(seed in any::<u64>(), k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = seeded_context(&mut rng, k);
            prop_assert!((ctx.rho(&ctx.identity()) - real(1.0)).norm() < 1e-12);
            let x = random_gaussian(&mut rng, k, k);
            prop_assert!(ctx.rho(&(x.adjoint() * &x)).re >= -1e-12);
        }

        #[test]
        fn duality_two_ways(seed in any::<u64>(), k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_hermitian(&mut rng, k);
            let x = random_gaussian(&mut rng, k, k);
            let mu = functional_from_density(y.clone()).unwrap();
            let direct = trace(&(&y * &x)) / real(k as f64);
            prop_assert!((mu.eval(&x) - direct).norm() < 1e-12);
            let back = density_from_functional(k, |m| mu.eval(m)).unwrap();
            prop_assert!(max_abs(&(back - &y)) < 1e-12);
        }

        #[test]
        fn order_isometry(seed in any::<u64>(), k in 2usize..5, shift in -0.5f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_psd(&mut rng, k, k) + linalg::identity(k) * real(shift);
            let mu = functional_from_density(y.clone()).unwrap();
            let psd = mu.is_positive(1e-12);
            let samples = linalg::psd_samples(&mut rng, k, 200, 0);
            let witness = samples.iter().find(|x| mu.eval(x).re < -1e-12);
            if psd {
                prop_assert!(witness.is_none());
            } else {
                // the least eigenvector is itself a rank-one witness
                let e = eigh(&y);
                let v = e.vectors.column(0).into_owned();
                let p = &v * v.adjoint();
                prop_assert!(mu.eval(&p).re < 0.0);
            }
        }

        #[test]
        fn partition_projections_sum_to_identity(seed in any::<u64>(), k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = AlgebraContext::tracial(k);
            let a = random_hermitian(&mut rng, k);
            let cuts = [f64::NEG_INFINITY, -0.7, 0.1, 0.9, f64::INFINITY];
            let mut total = linalg::zeros(k);
            let mut parts = vec![];
            for w in cuts.windows(2) {
                let e = spectral_projection_with(&ctx, &a, w[0], w[1], false, true).unwrap();
                total += &e.matrix;
                parts.push(e.matrix);
            }
            prop_assert!(max_abs(&(total - ctx.identity())) < 1e-10);
            for i in 0..parts.len() {
                for j in i + 1..parts.len() {
                    prop_assert!(max_abs(&(&parts[i] * &parts[j])) < 1e-10);
                }
            }
        }

        #[test]
        fn meet_is_subadditive(seed in any::<u64>(), k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = seeded_context(&mut rng, k);
            let e = spectral_projection_with(&ctx, &random_hermitian(&mut rng, k), 0.0, f64::INFINITY, false, false).unwrap();
            let f = spectral_projection_with(&ctx, &random_hermitian(&mut rng, k), 0.0, f64::INFINITY, false, false).unwrap();
            let m = meet(&ctx, &e, &f);
            prop_assert!(m.is_valid());
            prop_assert!(m.deficit_tau <= e.deficit_tau + f.deficit_tau + 1e-10);
            prop_assert!(max_abs(&(&e.matrix * &m.matrix - &m.matrix)) < 1e-9);
            prop_assert!(max_abs(&(&f.matrix * &m.matrix - &m.matrix)) < 1e-9);
        }
    }
}
