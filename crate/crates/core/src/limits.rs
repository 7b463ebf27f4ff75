//! Mean ergodic limits on the GNS space and on the predual.
//!
//! `μ̄` is computed twice. The spectral route projects onto the joint fixed
//! space of the predual maps along the sum of their ranges `ran(V_i − I)`.
//! The iterative route forms the Cesàro operator at a moderate length and
//! squares it until it is idempotent, which never touches an eigensolver.

use serde::{Deserialize, Serialize};

use crate::algebra::{tau_abs, AlgebraContext, SelfAdjointFunctional, NULL_CUTOFF};
use crate::error::{Error, Result};
use crate::linalg::{self, apply_superop, max_abs, real, Mat};
use crate::maps::PositiveMapRep;

pub const AGREEMENT_TARGET: f64 = 1e-8;
pub const AGREEMENT_HARD_LIMIT: f64 = 1e-6;
pub const CONTRACTION_SLACK: f64 = 1e-6;
const PLATEAU: f64 = 1e-9;

/// Orthogonal projection onto the joint fixed vectors of GNS contractions.
#[derive(Debug, Clone)]
pub struct FixedSpaceProjection {
    pub projection: Mat,
    pub basis: Mat,
}

impl FixedSpaceProjection {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

pub fn fixed_space(contractions: &[Mat]) -> Result<FixedSpaceProjection> {
    let n = contractions
        .first()
        .map(|c| c.nrows())
        .ok_or_else(|| Error::InvalidKernel("fixed_space needs an operator".into()))?;
    let mut stacked = Mat::zeros(n * contractions.len(), n);
    for (i, u) in contractions.iter().enumerate() {
        let norm = linalg::op_norm(u);
        if norm > 1.0 + CONTRACTION_SLACK {
            return Err(Error::NotContraction { norm });
        }
        // fixed vectors of a contraction and of its adjoint coincide
        let block = u.adjoint() - linalg::identity(n);
        stacked.view_mut((i * n, 0), (n, n)).copy_from(&block);
    }
    let basis = linalg::null_space(&stacked, NULL_CUTOFF);
    Ok(FixedSpaceProjection {
        projection: linalg::projector(&basis),
        basis,
    })
}

/// Which averages define the limit.
#[derive(Debug, Clone)]
pub enum Averaging {
    /// Box averages of commuting maps; predual densities via `T_i*`.
    Box(Vec<PositiveMapRep>),
    /// Cesàro means of `σ_n = p_n(σ₁)` with the `w`-recurrence.
    Sphere { sigma1: PositiveMapRep, w: f64 },
}

impl Averaging {
    fn generators(&self) -> Vec<&PositiveMapRep> {
        match self {
            Averaging::Box(maps) => maps.iter().collect(),
            Averaging::Sphere { sigma1, .. } => vec![sigma1],
        }
    }

    fn dim(&self) -> usize {
        self.generators()[0].dim()
    }

    /// Trace-dual superoperators of the generators.
    pub fn duals(&self) -> Vec<Mat> {
        self.generators()
            .iter()
            .map(|m| m.trace_dual().superop().clone())
            .collect()
    }

    /// Predual averaging operator at length `l` (box side `l`, or `S_{l−1}`).
    pub fn predual_average(&self, l: u64) -> Mat {
        let duals = self.duals();
        match self {
            Averaging::Box(_) => {
                let kk = self.dim().pow(2);
                duals.iter().fold(linalg::identity(kk), |acc, v| {
                    acc * power_sum(v, l).0 / real(l as f64)
                })
            }
            Averaging::Sphere { w, .. } => sphere_cesaro(&duals[0], *w, l - 1),
        }
    }
}

/// `(Σ_{j<l} A^j, A^l)` by binary splitting.
pub fn power_sum(a: &Mat, l: u64) -> (Mat, Mat) {
    let n = a.nrows();
    if l == 0 {
        return (Mat::zeros(n, n), linalg::identity(n));
    }
    let (half_sum, half_pow) = power_sum(a, l / 2);
    let mut sum = &half_sum + &half_pow * &half_sum;
    let mut pow = &half_pow * &half_pow;
    if l % 2 == 1 {
        sum = linalg::identity(n) + a * sum;
        pow = a * pow;
    }
    (sum, pow)
}

/// `(1/(n+1)) Σ_{k≤n} p_k(A)` with `p_{k+1} = (A p_k − (1−w) p_{k−1})/w`.
pub fn sphere_cesaro(a: &Mat, w: f64, n: u64) -> Mat {
    let dim = a.nrows();
    let mut prev = linalg::identity(dim);
    let mut sum = prev.clone();
    if n == 0 {
        return sum;
    }
    let mut cur = a.clone();
    sum += &cur;
    for _ in 1..n {
        let next = (a * &cur - &prev * real(1.0 - w)) / real(w);
        prev = cur;
        cur = next;
        sum += &cur;
    }
    sum / real((n + 1) as f64)
}

/// Scalar shadow of the sphere Cesàro mean at an eigenvalue `x`.
pub fn sphere_scalar_cesaro(x: f64, w: f64, n: u64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    let mut sum = 1.0;
    if n == 0 {
        return sum;
    }
    sum += cur;
    for _ in 1..n {
        let next = (x * cur - (1.0 - w) * prev) / w;
        prev = cur;
        cur = next;
        sum += cur;
    }
    sum / (n + 1) as f64
}

/// Spectral route: projection onto `∩ ker(V_i − I)` along `Σ ran(V_i − I)`.
pub fn spectral_projection_predual(duals: &[Mat]) -> Result<Mat> {
    let n = duals[0].nrows();
    let one = linalg::identity(n);
    let mut stacked = Mat::zeros(n * duals.len(), n);
    let mut ranges = Mat::zeros(n, n * duals.len());
    for (i, v) in duals.iter().enumerate() {
        let b = v - &one;
        stacked.view_mut((i * n, 0), (n, n)).copy_from(&b);
        ranges.view_mut((0, i * n), (n, n)).copy_from(&b);
    }
    let kernel = linalg::null_space(&stacked, NULL_CUTOFF);
    let range = linalg::column_space(&ranges, NULL_CUTOFF);
    if kernel.ncols() + range.ncols() != n {
        return Err(Error::InvalidKernel(format!(
            "fixed space ({}) and range ({}) do not split a space of dimension {n}",
            kernel.ncols(),
            range.ncols()
        )));
    }
    let mut m = Mat::zeros(n, n);
    m.view_mut((0, 0), (n, kernel.ncols())).copy_from(&kernel);
    m.view_mut((0, kernel.ncols()), (n, range.ncols()))
        .copy_from(&range);
    let m_inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSolve("fixed-space splitting".into()))?;
    let mut keep = Mat::zeros(n, n);
    for i in 0..kernel.ncols() {
        keep[(i, i)] = linalg::ONE;
    }
    Ok(m * keep * m_inv)
}

#[derive(Debug, Clone, Copy)]
pub struct IterativeOptions {
    pub length: u64,
    pub max_squarings: u32,
    pub idempotence_tol: f64,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            length: 128,
            max_squarings: 60,
            idempotence_tol: 1e-13,
        }
    }
}

/// Iterative route: square the Cesàro operator until it is idempotent.
///
/// Rounding pushes the unit eigenvalue slightly off 1, so squaring stops as
/// soon as the idempotence gap stops shrinking near convergence.
pub fn iterated_cesaro(avg: &Averaging, opts: IterativeOptions) -> (Mat, u32) {
    let mut b = avg.predual_average(opts.length);
    let mut last_gap = f64::INFINITY;
    let mut squarings = 0;
    while squarings < opts.max_squarings {
        let b2 = &b * &b;
        let gap = max_abs(&(&b2 - &b));
        if gap < opts.idempotence_tol || (gap >= last_gap && last_gap < PLATEAU) {
            break;
        }
        last_gap = gap;
        b = b2;
        squarings += 1;
    }
    (b, squarings)
}

/// `‖μ‖₁ = τ(|Y|)` for a possibly slightly non-hermitian density.
pub fn l1(y: &Mat) -> f64 {
    tau_abs(&linalg::hermitian_part(y))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub l: u64,
    pub l1_error: f64,
}

#[derive(Debug, Clone)]
pub struct MeanLimit {
    pub limit: SelfAdjointFunctional,
    pub spectral: Mat,
    pub iterative: Mat,
    /// `‖μ̄_spectral − μ̄_iterative‖₁`.
    pub agreement: f64,
    pub squarings: u32,
    pub invariance: f64,
    pub rates: Vec<RateRow>,
}

/// `μ̄` by both routes, with a rate table at dyadic lengths up to `2^max_log2`.
pub fn mean_limit(
    mu: &SelfAdjointFunctional,
    avg: &Averaging,
    opts: IterativeOptions,
    max_log2: u32,
) -> Result<MeanLimit> {
    let y = &mu.density;
    let duals = avg.duals();
    let p = spectral_projection_predual(&duals)?;
    let (b, squarings) = iterated_cesaro(avg, opts);
    let spectral = linalg::hermitian_part(&apply_superop(&p, y));
    let iterative = linalg::hermitian_part(&apply_superop(&b, y));
    let agreement = l1(&(&spectral - &iterative));
    if agreement > AGREEMENT_HARD_LIMIT {
        return Err(Error::MeanLimitDisagreement {
            difference: agreement,
        });
    }
    let limit = SelfAdjointFunctional::from_density(spectral.clone())?;
    let invariance = invariance_residual(&limit, avg);
    let rates = rate_table(mu, &limit, avg, max_log2);
    Ok(MeanLimit {
        limit,
        spectral,
        iterative,
        agreement,
        squarings,
        invariance,
        rates,
    })
}

/// `‖B_l(μ) − μ̄‖₁` at `l = 1, 2, 4, …, 2^max_log2`.
pub fn rate_table(
    mu: &SelfAdjointFunctional,
    limit: &SelfAdjointFunctional,
    avg: &Averaging,
    max_log2: u32,
) -> Vec<RateRow> {
    (0..=max_log2)
        .map(|e| {
            let l = 1u64 << e;
            let bl = apply_superop(&avg.predual_average(l), &mu.density);
            RateRow {
                l,
                l1_error: l1(&(bl - &limit.density)),
            }
        })
        .collect()
}

/// `max_g ‖μ̄∘T_g − μ̄‖₁` over the generators.
pub fn invariance_residual(limit: &SelfAdjointFunctional, avg: &Averaging) -> f64 {
    avg.duals()
        .iter()
        .map(|v| l1(&(apply_superop(v, &limit.density) - &limit.density)))
        .fold(0.0, f64::max)
}

/// Smallest `λ` with `Y ⪯ λ·D`, i.e. the top eigenvalue of `D^{-1/2} Y D^{-1/2}`.
pub fn domination_constant(ctx: &AlgebraContext, y: &Mat) -> f64 {
    let s = ctx.density_inv_sqrt();
    linalg::eigh(&(s * y * s)).max()
}
