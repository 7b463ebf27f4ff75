//! Maximal-inequality certificates.
//!
//! For the τ-densities `Z_n` of the averages of `μ`, a projection `e`
//! certifies `|S_n(μ)(x)| ≤ ε ρ(x)` on `(eMe)_+` exactly when both
//! `ε·eDe − eZ_ne` and `ε·eDe + eZ_ne` are positive on the range of `e`.
//! Peeling starts from `e = 1` and removes negative spectral subspaces until
//! every index passes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraContext, MatrixLiteral, ProjectionCert, SelfAdjointFunctional};
use crate::averages::{ContinuousAction, DiscreteAction};
use crate::brunel;
use crate::certificate::Certificate;
use crate::error::{Error, Result};
use crate::linalg::{self, apply_superop, eigh, real, transpose_permutation, Mat, Vector};
use crate::maps::PositiveMapRep;

pub const MARGIN_TOL: f64 = 1e-9;
pub const SOUNDNESS_SLACK: f64 = 1e-8;
pub const SOUNDNESS_SAMPLES: usize = 500;
pub const CORNER_SAMPLES: usize = 200;
/// Relative threshold below which a compressed eigenvalue counts as negative.
pub const PEEL_REL_TOL: f64 = 1e-12;
pub const DEFAULT_RD_STEP: f64 = 0.25;
pub const DIAGONAL_MAX_K: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Zd,
    Rd,
    Sphere,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zd" => Ok(Family::Zd),
            "rd" => Ok(Family::Rd),
            "sphere" => Ok(Family::Sphere),
            other => Err(Error::Config(format!(
                "unknown family '{other}' (expected zd, rd or sphere)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Zd => "zd",
            Family::Rd => "rd",
            Family::Sphere => "sphere",
        }
    }
}

/// Least eigenvalues of `ε·eDe ∓ eZe` on the range of `e`.
pub fn loewner_condition(z: &Mat, d: &Mat, eps: f64, e: &ProjectionCert) -> (f64, f64) {
    loewner_on_basis(z, d, eps, &e.basis)
}

fn loewner_on_basis(z: &Mat, d: &Mat, eps: f64, q: &Mat) -> (f64, f64) {
    if q.ncols() == 0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let dq = q.adjoint() * d * q * real(eps);
    let zq = q.adjoint() * z * q;
    (
        eigh(&(&dq - &zq)).min(),
        eigh(&(&dq + &zq)).min(),
    )
}

/// The deficit bound a theorem attaches to a family, with its constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeficitBound {
    pub value: f64,
    pub constants: BTreeMap<String, f64>,
}

impl DeficitBound {
    /// `‖μ‖/ε` for one map; `χ_d‖μ‖/ε` above, with `χ` built from `c`.
    pub fn zd(d: usize, norm: f64, eps: f64, c: f64) -> Self {
        let mut constants = BTreeMap::new();
        let chi = if d == 1 {
            1.0
        } else {
            let m = brunel::PhiTower::new(d).m;
            let chi = brunel::chi_recursive(m, c);
            constants.insert("c".into(), c);
            constants.insert("chi_recursive".into(), chi);
            if let Some(stated) = brunel::chi_stated(d, c) {
                constants.insert("chi_stated".into(), stated);
            }
            chi
        };
        constants.insert("chi".into(), chi);
        Self {
            value: chi * norm / eps,
            constants,
        }
    }

    /// `2^d χ_d ‖μ‖/ε`; the factor covers `M_a ⪯ (([a]+1)/a)^d A_{[a]+1}`.
    pub fn rd(d: usize, norm: f64, eps: f64, c: f64) -> Self {
        let mut b = Self::zd(d, norm, eps, c);
        let factor = 2f64.powi(d as i32);
        b.value *= factor;
        b.constants.insert("grid_factor".into(), factor);
        if let Some(stated) = b.constants.get("chi_stated").copied() {
            b.constants
                .insert("bound_with_stated_chi".into(), factor * stated * norm / eps);
        }
        b
    }

    pub fn sphere(c_w: f64, norm: f64, eps: f64) -> Self {
        Self {
            value: c_w * norm / eps,
            constants: BTreeMap::from([("c_w".to_string(), c_w)]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaximalCertificate {
    pub e: ProjectionCert,
    pub epsilon: f64,
    pub family: Option<Family>,
    /// Averaging parameters (`n`, or `a` for the continuous family).
    pub indices: Vec<f64>,
    /// `(ε·eDe − eZe, ε·eDe + eZe)` least eigenvalues per index.
    pub margins: Vec<(f64, f64)>,
    pub peels: usize,
    pub vacuous: bool,
    pub deficit_measured: f64,
    pub bound: Option<DeficitBound>,
}

impl MaximalCertificate {
    pub fn horizon(&self) -> usize {
        self.indices.len()
    }

    pub fn worst_margin(&self) -> f64 {
        self.margins
            .iter()
            .map(|(a, b)| a.min(*b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.worst_margin() >= -MARGIN_TOL
    }

    pub fn within_bound(&self) -> Option<bool> {
        self.bound.as_ref().map(|b| self.deficit_measured < b.value)
    }

    pub fn report(&self) -> MaximalReport {
        MaximalReport {
            family: self.family.map(|f| f.as_str().to_string()),
            epsilon: self.epsilon,
            horizon: self.horizon(),
            indices: self.indices.clone(),
            deficit_measured: self.deficit_measured,
            deficit_bound: self.bound.as_ref().map(|b| b.value),
            bound_constants: self.bound.as_ref().map(|b| b.constants.clone()).unwrap_or_default(),
            margins: self
                .margins
                .iter()
                .map(|(a, b)| [finite(*a), finite(*b)])
                .collect(),
            peels: self.peels,
            rank: self.e.rank,
            vacuous: self.vacuous,
            passed: self.passed(),
            projection: MatrixLiteral::from_mat(&self.e.matrix),
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximalReport {
    pub family: Option<String>,
    pub epsilon: f64,
    pub horizon: usize,
    pub indices: Vec<f64>,
    pub deficit_measured: f64,
    pub deficit_bound: Option<f64>,
    pub bound_constants: BTreeMap<String, f64>,
    /// `null` entries mark the vacuous `e = 0` case.
    pub margins: Vec<[Option<f64>; 2]>,
    pub peels: usize,
    pub rank: usize,
    pub vacuous: bool,
    pub passed: bool,
    pub projection: MatrixLiteral,
}

/// Peel until every `Z_n` satisfies the Loewner condition on `e`.
pub fn peel_projection(ctx: &AlgebraContext, z_list: &[Mat], eps: f64) -> MaximalCertificate {
    let d = ctx.density();
    let scale = eps * linalg::op_norm(d)
        + z_list.iter().map(linalg::op_norm).fold(0.0, f64::max);
    let thr = PEEL_REL_TOL * scale;
    let mut q = ctx.identity();
    let mut peels = 0;
    loop {
        let mut worst: Option<(f64, Mat)> = None;
        for z in z_list {
            if q.ncols() == 0 {
                break;
            }
            let dq = q.adjoint() * d * &q * real(eps);
            let zq = q.adjoint() * z * &q;
            for a in [&dq - &zq, &dq + &zq] {
                let m = eigh(&a).min();
                if m < -thr && worst.as_ref().is_none_or(|(w, _)| m < *w) {
                    worst = Some((m, a));
                }
            }
        }
        let Some((_, a)) = worst else { break };
        let keep = eigh(&a).select(|v| v >= -thr);
        q = &q * keep;
        peels += 1;
    }
    let e = ProjectionCert::from_basis(ctx, q);
    let margins = z_list.iter().map(|z| loewner_condition(z, d, eps, &e)).collect();
    MaximalCertificate {
        vacuous: e.rank == 0,
        deficit_measured: e.deficit_rho,
        e,
        epsilon: eps,
        family: None,
        indices: (1..=z_list.len()).map(|n| n as f64).collect(),
        margins,
        peels,
        bound: None,
    }
}

fn dual_superop(s: &Mat, k: usize) -> Mat {
    let p = transpose_permutation(k);
    &p * s.transpose() * &p
}

/// Densities of `A_n(μ)` for `n = 1..=horizon`.
pub fn zd_densities(action: &DiscreteAction, y: &Mat, horizon: usize) -> Vec<Mat> {
    (1..=horizon).map(|n| action.box_average_dual(n, y)).collect()
}

/// All integers in `[1, horizon]` together with the `step` grid.
pub fn rd_grid(horizon: usize, step: f64) -> Vec<f64> {
    let count = ((horizon as f64 - 1.0) / step).round() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|i| 1.0 + i as f64 * step).collect();
    grid.extend((1..=horizon).map(|n| n as f64));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid.retain(|a| *a <= horizon as f64 + 1e-12);
    grid
}

/// Densities of `M_a(μ)` on a grid of `a`.
pub fn rd_densities(action: &ContinuousAction, y: &Mat, grid: &[f64]) -> Result<Vec<Mat>> {
    let k = action.dim();
    grid.iter()
        .map(|&a| {
            let (s, _) = action.box_average_superop(a)?;
            Ok(apply_superop(&dual_superop(&s, k), y))
        })
        .collect()
}

/// Densities of `S_n(μ) = (1/(n+1)) Σ_{j≤n} σ_j(μ)` for `n = 1..=horizon`.
pub fn sphere_densities(sigma1: &PositiveMapRep, w: f64, y: &Mat, horizon: usize) -> Vec<Mat> {
    let k = sigma1.dim();
    let v = sigma1.trace_dual().superop().clone();
    let mut prev = linalg::vec(y);
    let mut cur = &v * &prev;
    let mut sum: Vector = &prev + &cur;
    let mut out = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        if n > 1 {
            let next = (&v * &cur - &prev * real(1.0 - w)) / real(w);
            prev = cur;
            cur = next;
            sum += &cur;
        }
        out.push(linalg::unvec(&(&sum / real((n + 1) as f64)), k));
    }
    out
}

/// The averaging family a certificate is built for.
pub enum AveragingFamily<'a> {
    Zd(&'a DiscreteAction),
    Rd { action: &'a ContinuousAction, step: f64 },
    Sphere { sigma1: &'a PositiveMapRep, w: f64 },
}

impl AveragingFamily<'_> {
    pub fn family(&self) -> Family {
        match self {
            AveragingFamily::Zd(_) => Family::Zd,
            AveragingFamily::Rd { .. } => Family::Rd,
            AveragingFamily::Sphere { .. } => Family::Sphere,
        }
    }

    /// `(indices, densities)` up to `horizon`.
    pub fn densities(&self, y: &Mat, horizon: usize) -> Result<(Vec<f64>, Vec<Mat>)> {
        Ok(match self {
            AveragingFamily::Zd(a) => (
                (1..=horizon).map(|n| n as f64).collect(),
                zd_densities(a, y, horizon),
            ),
            AveragingFamily::Rd { action, step } => {
                let grid = rd_grid(horizon, *step);
                let z = rd_densities(action, y, &grid)?;
                (grid, z)
            }
            AveragingFamily::Sphere { sigma1, w } => (
                (1..=horizon).map(|n| n as f64).collect(),
                sphere_densities(sigma1, *w, y, horizon),
            ),
        })
    }
}

pub fn certify_family(
    ctx: &AlgebraContext,
    family: &AveragingFamily,
    mu: &SelfAdjointFunctional,
    eps: f64,
    horizon: usize,
    bound: Option<DeficitBound>,
) -> Result<MaximalCertificate> {
    if !(eps > 0.0) || horizon == 0 {
        return Err(Error::Config(format!(
            "certification needs ε > 0 and a positive horizon (got ε={eps}, N={horizon})"
        )));
    }
    ctx.check_dim(&mu.density)?;
    let (indices, z) = family.densities(&mu.density, horizon)?;
    let mut cert = peel_projection(ctx, &z, eps);
    cert.family = Some(family.family());
    cert.indices = indices;
    cert.bound = bound;
    Ok(cert)
}

/// Recheck `|τ(Z_n x)| ≤ (ε + slack)·ρ(x)` on random `x = eWe`, `W ⪰ 0`.
pub fn reverify(
    ctx: &AlgebraContext,
    cert: &MaximalCertificate,
    z_list: &[Mat],
    rng: &mut impl Rng,
    samples: usize,
) -> Certificate {
    let mut out = Certificate::new("maximal-soundness", 0.0)
        .constant("epsilon", cert.epsilon)
        .constant("deficit", cert.deficit_measured);
    let k = ctx.dim();
    let e = &cert.e.matrix;
    for s in 0..samples {
        let w = if s % 2 == 0 {
            linalg::random_psd(rng, k, 1)
        } else {
            linalg::random_psd(rng, k, k)
        };
        let x = e * w * e;
        let rho_x = ctx.rho(&x).re;
        for z in z_list {
            let lhs = ctx.tau(&(z * &x)).norm();
            out.record((cert.epsilon + SOUNDNESS_SLACK) * rho_x - lhs, &x);
        }
    }
    if cert.vacuous {
        out.notes.push("vacuous: e = 0".into());
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerCheck {
    pub premise_holds: bool,
    pub corner_norm: f64,
    pub delta: f64,
    pub passed: bool,
}

/// If `|τ(Y pxp)| ≤ δ τ(pxp)` on sampled `x ⪰ 0`, then `‖pYp‖ ≤ δ`.
pub fn corner_norm_check(y: &Mat, p: &Mat, delta: f64, rng: &mut impl Rng) -> CornerCheck {
    let k = y.nrows();
    let tau = |m: &Mat| linalg::trace(m) / real(k as f64);
    let premise_holds = (0..CORNER_SAMPLES).all(|s| {
        let w = linalg::random_psd(rng, k, if s % 2 == 0 { 1 } else { k });
        let x = p * w * p;
        tau(&(y * &x)).norm() <= delta * tau(&x).re + 1e-12
    });
    let corner_norm = linalg::op_norm(&(p * y * p));
    CornerCheck {
        premise_holds,
        corner_norm,
        delta,
        passed: !premise_holds || corner_norm <= delta + 1e-9,
    }
}

/// Measured deficits along an increasing `ε` grid, and whether they never increase.
pub fn deficit_profile(ctx: &AlgebraContext, z_list: &[Mat], eps_grid: &[f64]) -> (Vec<f64>, bool) {
    let deficits: Vec<f64> = eps_grid
        .iter()
        .map(|&eps| peel_projection(ctx, z_list, eps).deficit_measured)
        .collect();
    let monotone = deficits.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    (deficits, monotone)
}

/// Metropolis chain on `k` sites reversible for the weights `d`, as the
/// Kraus family `√P_ij E_ji`. It acts on diagonals as `f ↦ P f`.
pub fn metropolis_chain(rng: &mut impl Rng, d: &[f64]) -> Result<PositiveMapRep> {
    let k = d.len();
    let mut q = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let v = rng.random::<f64>() + 0.05;
            q[i][j] = v;
            q[j][i] = v;
        }
    }
    let qmax = q.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    let mut p = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                p[i][j] = q[i][j] / qmax * (d[j] / d[i]).min(1.0);
            }
        }
        p[i][i] = 1.0 - p[i].iter().sum::<f64>();
    }
    let mut kraus = Vec::new();
    for (i, row) in p.iter().enumerate() {
        for (j, &pij) in row.iter().enumerate() {
            if pij > 0.0 {
                kraus.push(linalg::matrix_unit(k, j, i) * real(pij.sqrt()));
            }
        }
    }
    PositiveMapRep::from_kraus(k, kraus)
}

/// Commuting diagonal data: `T_1` a Metropolis chain and `T_i` for `i ≥ 2`
/// convex combinations of its powers.
#[derive(Debug, Clone)]
pub struct DiagonalKernel {
    pub context: AlgebraContext,
    pub weights: Vec<f64>,
    pub maps: Vec<PositiveMapRep>,
}

pub fn diagonal_kernel(seed: u64, k: usize, d: usize, condition: f64) -> Result<DiagonalKernel> {
    if !(2..=DIAGONAL_MAX_K).contains(&k) || d == 0 {
        return Err(Error::Config(format!(
            "diagonal kernels need 2 ≤ k ≤ {DIAGONAL_MAX_K} and d ≥ 1 (got k={k}, d={d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..k)
        .map(|_| condition.powf(rng.random::<f64>()))
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|v| v * k as f64 / total).collect();
    let context = AlgebraContext::new(linalg::from_real_diagonal(&weights))?;
    let t1 = metropolis_chain(&mut rng, &weights)?;
    let powers = [
        PositiveMapRep::identity(k),
        t1.clone(),
        t1.compose(&t1)?,
        t1.compose(&t1)?.compose(&t1)?,
    ];
    let mut maps = vec![t1.verified(&context)];
    for _ in 1..d {
        let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let parts: Vec<(f64, &PositiveMapRep)> =
            raw.iter().zip(&powers).map(|(c, m)| (c / s, m)).collect();
        maps.push(PositiveMapRep::combination(&parts)?.verified(&context));
    }
    Ok(DiagonalKernel {
        context,
        weights,
        maps,
    })
}

/// Exhaustive search over all `2^k` diagonal projections for the least
/// deficit `ρ(1−e)` with `|z_n(i)| ≤ ε d_i` on the kept sites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagonalSearch {
    pub mask: u32,
    pub deficit: f64,
    pub subsets: u64,
}

pub fn exhaustive_diagonal_search(weights: &[f64], z_diag: &[Vec<f64>], eps: f64) -> Result<DiagonalSearch> {
    let k = weights.len();
    if k > DIAGONAL_MAX_K {
        return Err(Error::Config(format!(
            "exhaustive diagonal search is capped at k = {DIAGONAL_MAX_K} (got {k})"
        )));
    }
    let ok: Vec<bool> = (0..k)
        .map(|i| z_diag.iter().all(|z| z[i].abs() <= eps * weights[i] * (1.0 + 1e-12)))
        .collect();
    let mut best = DiagonalSearch {
        mask: 0,
        deficit: f64::INFINITY,
        subsets: 1 << k,
    };
    for mask in 0u32..(1 << k) {
        if (0..k).any(|i| mask & (1 << i) != 0 && !ok[i]) {
            continue;
        }
        let deficit: f64 = (0..k)
            .filter(|i| mask & (1 << i) == 0)
            .map(|i| weights[i])
            .sum::<f64>()
            / k as f64;
        if deficit < best.deficit {
            best.mask = mask;
            best.deficit = deficit;
        }
    }
    Ok(best)
}

pub fn diagonal_entries(z: &Mat) -> Vec<f64> {
    (0..z.nrows()).map(|i| z[(i, i)].re).collect()
}
