//! Positive and completely positive maps on `M_k`, trace duals, commutant
//! lifts, kernel validation and a seeded kernel generator.
//!
//! A Kraus list `{V_i}` acts as `Φ(x) = Σ V_i* x V_i`. Every map also keeps
//! its `k²×k²` superoperator, which is the representation used for
//! arithmetic; the Kraus list is carried along while it stays small.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraContext, GnsSpace, MatrixLiteral};
use crate::error::{Error, Result};
use crate::linalg::{
    self, apply_superop, max_abs, real, sandwich_superop, transpose_permutation, Mat, C64,
};

/// Kraus lists longer than this are dropped after composition.
pub const KRAUS_CAP: usize = 4096;
pub const FLAG_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-9;
pub const POSITIVITY_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tri {
    VerifiedTrue,
    VerifiedFalse,
    Unknown,
}

impl Tri {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Tri::VerifiedTrue
        } else {
            Tri::VerifiedFalse
        }
    }

    pub fn is_true(self) -> bool {
        self == Tri::VerifiedTrue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapFlags {
    pub cp: Tri,
    pub positive: Tri,
    pub sub_unital: Tri,
    pub rho_preserving: Tri,
    pub rho_selfadjoint: Tri,
    pub tau_preserving: Tri,
}

impl MapFlags {
    pub fn unknown() -> Self {
        Self {
            cp: Tri::Unknown,
            positive: Tri::Unknown,
            sub_unital: Tri::Unknown,
            rho_preserving: Tri::Unknown,
            rho_selfadjoint: Tri::Unknown,
            tau_preserving: Tri::Unknown,
        }
    }

    fn completely_positive() -> Self {
        Self {
            cp: Tri::VerifiedTrue,
            positive: Tri::VerifiedTrue,
            ..Self::unknown()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PositiveMapRep {
    k: usize,
    superop: Mat,
    kraus: Option<Vec<Mat>>,
    pub flags: MapFlags,
}

impl PositiveMapRep {
    pub fn from_kraus(k: usize, kraus: Vec<Mat>) -> Result<Self> {
        let mut superop = Mat::zeros(k * k, k * k);
        for v in &kraus {
            if v.shape() != (k, k) {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: v.nrows(),
                });
            }
            superop += sandwich_superop(&v.adjoint(), v);
        }
        Ok(Self {
            k,
            superop,
            kraus: Some(kraus),
            flags: MapFlags::completely_positive(),
        })
    }

    /// A map given only by its superoperator; flags start unknown.
    pub fn from_superop(k: usize, superop: Mat) -> Result<Self> {
        if superop.shape() != (k * k, k * k) {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                got: superop.nrows(),
            });
        }
        Ok(Self {
            k,
            superop,
            kraus: None,
            flags: MapFlags::unknown(),
        })
    }

    pub fn identity(k: usize) -> Self {
        Self::from_kraus(k, vec![linalg::identity(k)]).expect("square identity")
    }

    /// `Ad(u): x ↦ u* x u`.
    pub fn conjugation(u: &Mat) -> Self {
        Self::from_kraus(u.nrows(), vec![u.clone()]).expect("square unitary")
    }

    /// The state-collapse channel `x ↦ ρ(x)·1`.
    pub fn collapse(ctx: &AlgebraContext) -> Self {
        let k = ctx.dim();
        let e = linalg::eigh(ctx.density());
        let mut kraus = Vec::with_capacity(k * k);
        for a in 0..k {
            let c = (e.values[a] / k as f64).sqrt();
            let wa = e.vectors.column(a);
            for b in 0..k {
                // √(d_a/k)·|w_a⟩⟨e_b|
                let mut v = Mat::zeros(k, k);
                for i in 0..k {
                    v[(i, b)] = wa[i] * real(c);
                }
                kraus.push(v);
            }
        }
        Self::from_kraus(k, kraus).expect("square kraus operators")
    }

    /// Convex (or any nonnegative) combination `Σ w_i Φ_i`.
    pub fn combination(parts: &[(f64, &PositiveMapRep)]) -> Result<Self> {
        let k = parts.first().map(|(_, m)| m.k).ok_or_else(|| {
            Error::InvalidKernel("empty combination".into())
        })?;
        let mut superop = Mat::zeros(k * k, k * k);
        let mut kraus = Some(Vec::new());
        let mut cp = true;
        for (w, m) in parts {
            m.same_dim(k)?;
            superop += &m.superop * real(*w);
            cp &= *w >= 0.0 && m.flags.cp.is_true();
            match (&mut kraus, &m.kraus) {
                (Some(list), Some(ks)) if *w >= 0.0 && list.len() + ks.len() <= KRAUS_CAP => {
                    list.extend(ks.iter().map(|v| v * real(w.sqrt())));
                }
                _ => kraus = None,
            }
        }
        let mut flags = MapFlags::unknown();
        if cp {
            flags = MapFlags::completely_positive();
        }
        Ok(Self {
            k,
            superop,
            kraus,
            flags,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn superop(&self) -> &Mat {
        &self.superop
    }

    pub fn kraus(&self) -> Option<&[Mat]> {
        self.kraus.as_deref()
    }

    fn same_dim(&self, k: usize) -> Result<()> {
        if self.k != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.k,
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        apply_superop(&self.superop, x)
    }

    /// `Φ∘Ψ` (apply `Ψ` first).
    pub fn compose(&self, psi: &PositiveMapRep) -> Result<Self> {
        psi.same_dim(self.k)?;
        let kraus = match (&self.kraus, &psi.kraus) {
            (Some(vs), Some(ws)) if vs.len() * ws.len() <= KRAUS_CAP => Some(
                vs.iter()
                    .flat_map(|v| ws.iter().map(move |w| w * v))
                    .collect(),
            ),
            _ => None,
        };
        let cp = self.flags.cp.is_true() && psi.flags.cp.is_true();
        let positive = cp || (self.flags.positive.is_true() && psi.flags.positive.is_true());
        let mut flags = MapFlags::unknown();
        flags.cp = if cp { Tri::VerifiedTrue } else { Tri::Unknown };
        flags.positive = if positive { Tri::VerifiedTrue } else { Tri::Unknown };
        Ok(Self {
            k: self.k,
            superop: &self.superop * &psi.superop,
            kraus,
            flags,
        })
    }

    /// Dense-form power, dropping the Kraus list.
    pub fn power(&self, n: u32) -> Self {
        let mut out = Self::from_superop(self.k, linalg::identity(self.k * self.k))
            .expect("square identity");
        let mut base = self.superop.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                out.superop = &out.superop * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        out.flags.cp = self.flags.cp;
        out.flags.positive = self.flags.positive;
        out
    }

    /// `Φ*` with `τ(Φ*(x)·Y) = τ(x·Φ(Y))`.
    pub fn trace_dual(&self) -> Self {
        let p = transpose_permutation(self.k);
        let superop = &p * self.superop.transpose() * &p;
        let kraus = self
            .kraus
            .as_ref()
            .map(|ks| ks.iter().map(|v| v.adjoint()).collect());
        let mut flags = MapFlags::unknown();
        flags.cp = self.flags.cp;
        flags.positive = self.flags.positive;
        Self {
            k: self.k,
            superop,
            kraus,
            flags,
        }
    }

    pub fn distance(&self, other: &PositiveMapRep) -> f64 {
        max_abs(&(&self.superop - &other.superop))
    }

    pub fn commutator_norm(&self, other: &PositiveMapRep) -> f64 {
        max_abs(&linalg::commutator(&self.superop, &other.superop))
    }

    pub fn image_of_one(&self) -> Mat {
        self.apply(&linalg::identity(self.k))
    }

    /// Least eigenvalue of `Φ(P)` over random rank-one projections.
    pub fn positivity_margin(&self, rng: &mut impl Rng, samples: usize) -> f64 {
        (0..samples)
            .map(|_| linalg::min_eigenvalue(&self.apply(&linalg::random_rank_one_projection(rng, self.k))))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn sub_unital_margin(&self) -> f64 {
        linalg::min_eigenvalue(&(linalg::identity(self.k) - self.image_of_one()))
    }

    /// `max |ρ(Φ(E_ij)) − ρ(E_ij)|`.
    pub fn rho_invariance_residual(&self, ctx: &AlgebraContext) -> f64 {
        let r = ctx.rho_row().transpose();
        (&r * &self.superop - &r)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn tau_invariance_residual(&self) -> f64 {
        let ctx = AlgebraContext::tracial(self.k);
        self.rho_invariance_residual(&ctx)
    }

    /// `max |ρ(E_ab·Φ(E_cd)) − ρ(Φ(E_ab)·E_cd)|`.
    pub fn rho_selfadjoint_residual(&self, ctx: &AlgebraContext) -> f64 {
        let g = ctx.rho_bilinear();
        max_abs(&(&g * &self.superop - self.superop.transpose() * &g))
    }

    /// Fills unknown flags by direct checks.
    pub fn verify_flags(&mut self, ctx: &AlgebraContext) {
        if self.flags.positive == Tri::Unknown {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            self.flags.positive = Tri::from_bool(
                self.positivity_margin(&mut rng, POSITIVITY_SAMPLES) >= -POSITIVITY_TOL,
            );
        }
        self.flags.sub_unital = Tri::from_bool(self.sub_unital_margin() >= -FLAG_TOL);
        self.flags.rho_preserving = Tri::from_bool(self.rho_invariance_residual(ctx) <= FLAG_TOL);
        self.flags.rho_selfadjoint =
            Tri::from_bool(self.rho_selfadjoint_residual(ctx) <= FLAG_TOL);
        self.flags.tau_preserving = Tri::from_bool(self.tau_invariance_residual() <= FLAG_TOL);
    }

    pub fn verified(mut self, ctx: &AlgebraContext) -> Self {
        self.verify_flags(ctx);
        self
    }

    /// Norm of the induced operator `xΩ ↦ Φ(x)Ω` on the GNS space.
    pub fn gns_norm(&self, gns: &GnsSpace) -> f64 {
        linalg::op_norm(&gns.operator(&self.superop))
    }
}

/// A linear map on the commutant, acting on the symbol `b` of `R_b`.
#[derive(Debug, Clone)]
pub struct CommutantMapRep {
    k: usize,
    matrix: Mat,
}

impl CommutantMapRep {
    pub fn identity(k: usize) -> Self {
        Self {
            k,
            matrix: linalg::identity(k * k),
        }
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn apply(&self, b: &Mat) -> Mat {
        apply_superop(&self.matrix, b)
    }

    /// `self∘other` (apply `other` first).
    pub fn compose(&self, other: &CommutantMapRep) -> Self {
        Self {
            k: self.k,
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn combination(parts: &[(f64, &CommutantMapRep)]) -> Self {
        let k = parts[0].1.k;
        let mut matrix = Mat::zeros(k * k, k * k);
        for (w, m) in parts {
            matrix += &m.matrix * real(*w);
        }
        Self { k, matrix }
    }
}

/// Coefficient matrices of `b ↦ ρ(E_ij·c)` and `b ↦ ρ(Φ(E_ij)·b)`.
fn lift_system(ctx: &AlgebraContext, phi: &PositiveMapRep) -> (Mat, Mat) {
    let k = ctx.dim();
    let d = ctx.density();
    let kk = real(k as f64);
    let mut a = Mat::zeros(k * k, k * k);
    let mut b = Mat::zeros(k * k, k * k);
    for i in 0..k {
        for j in 0..k {
            let row = i + j * k;
            for s in 0..k {
                a[(row, j + s * k)] = d[(s, i)] / kk;
            }
            let dphi = d * phi.apply(&linalg::matrix_unit(k, i, j));
            for s in 0..k {
                for t in 0..k {
                    b[(row, t + s * k)] = dphi[(s, t)] / kk;
                }
            }
        }
    }
    (a, b)
}

/// `Φ′` with `⟨Φ′(R_b)xΩ, Ω⟩_ρ = ⟨R_b Φ(x)Ω, Ω⟩_ρ`, by a dense solve.
pub fn commutant_lift(ctx: &AlgebraContext, phi: &PositiveMapRep) -> Result<CommutantMapRep> {
    ctx.check_dim(&linalg::zeros(phi.dim()))?;
    let residual = phi.rho_invariance_residual(ctx);
    if phi.flags.rho_preserving == Tri::VerifiedFalse || residual > 1e-9 {
        return Err(Error::InvalidKernel(format!(
            "commutant lift needs a ρ-preserving map (residual {residual:.3e})"
        )));
    }
    let (a, b) = lift_system(ctx, phi);
    let matrix = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSolve("commutant lift".into()))?;
    Ok(CommutantMapRep {
        k: ctx.dim(),
        matrix,
    })
}

/// Closed form `b ↦ Φ*(b·D)·D⁻¹` of the same lift.
pub fn commutant_lift_closed_form(ctx: &AlgebraContext, phi: &PositiveMapRep) -> CommutantMapRep {
    let k = ctx.dim();
    let one = linalg::identity(k);
    let dual = phi.trace_dual();
    let matrix = sandwich_superop(&one, ctx.density_inv())
        * dual.superop()
        * sandwich_superop(&one, ctx.density());
    CommutantMapRep { k, matrix }
}

/// Defining-relation residual of a lift over all matrix-unit pairs.
pub fn lift_residual(ctx: &AlgebraContext, phi: &PositiveMapRep, lift: &CommutantMapRep) -> f64 {
    let (a, b) = lift_system(ctx, phi);
    max_abs(&(a * &lift.matrix - b))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapCheck {
    pub index: usize,
    pub positivity_margin: f64,
    pub kadison_margin: f64,
    pub russo_dye_estimate: f64,
    pub norm_of_image_of_one: f64,
    pub sub_unital_margin: f64,
    pub rho_invariance_residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelReport {
    pub maps: Vec<MapCheck>,
    pub commutator_norms: Vec<(usize, usize, f64)>,
    /// Certificates are stated for the predual family `μ ↦ μ∘T`.
    pub orientation: String,
    pub passed: bool,
}

impl KernelReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = vec![];
        for m in &self.maps {
            if m.positivity_margin < -POSITIVITY_TOL {
                out.push(format!("map {} is not positive", m.index));
            }
            if m.kadison_margin < -1e-10 {
                out.push(format!("map {} violates Kadison", m.index));
            }
            if m.russo_dye_estimate > m.norm_of_image_of_one + 1e-8 {
                out.push(format!("map {} violates Russo-Dye", m.index));
            }
            if m.sub_unital_margin < -FLAG_TOL {
                out.push(format!("map {} is not sub-unital", m.index));
            }
            if m.rho_invariance_residual > FLAG_TOL {
                out.push(format!(
                    "map {} is not ρ-preserving (residual {:.3e})",
                    m.index, m.rho_invariance_residual
                ));
            }
        }
        for (i, j, n) in &self.commutator_norms {
            if *n > 1e-11 {
                out.push(format!("maps {i} and {j} do not commute ({n:.3e})"));
            }
        }
        out
    }
}

pub const KADISON_SAMPLES: usize = 100;

/// Kadison, Russo–Dye, sub-unitality, ρ-invariance and commutation checks.
pub fn validate_kernel(ctx: &AlgebraContext, maps: &[PositiveMapRep]) -> KernelReport {
    let k = ctx.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b65726e);
    let mut checks = Vec::with_capacity(maps.len());
    for (index, t) in maps.iter().enumerate() {
        let positivity_margin = if t.flags.cp.is_true() {
            0.0_f64.min(t.positivity_margin(&mut rng, 50))
        } else {
            t.positivity_margin(&mut rng, POSITIVITY_SAMPLES)
        };
        let mut kadison_margin = f64::INFINITY;
        let mut russo_dye_estimate: f64 = 0.0;
        for _ in 0..KADISON_SAMPLES {
            let x = linalg::random_hermitian(&mut rng, k);
            let tx = t.apply(&x);
            let lhs = ctx.rho(&(&tx * &tx)).re;
            let rhs = ctx.rho(&(&x * &x)).re;
            kadison_margin = kadison_margin.min((rhs - lhs) / rhs.max(1.0));
            let g = linalg::random_gaussian(&mut rng, k, k);
            for y in [&x, &g] {
                russo_dye_estimate =
                    russo_dye_estimate.max(linalg::op_norm(&t.apply(y)) / linalg::op_norm(y));
            }
        }
        let norm_of_image_of_one = linalg::op_norm(&t.image_of_one());
        let mut check = MapCheck {
            index,
            positivity_margin,
            kadison_margin,
            russo_dye_estimate,
            norm_of_image_of_one,
            sub_unital_margin: t.sub_unital_margin(),
            rho_invariance_residual: t.rho_invariance_residual(ctx),
            passed: false,
        };
        check.passed = positivity_margin >= -POSITIVITY_TOL
            && check.kadison_margin >= -1e-10
            && check.russo_dye_estimate <= check.norm_of_image_of_one + 1e-8
            && check.sub_unital_margin >= -FLAG_TOL
            && check.rho_invariance_residual <= FLAG_TOL;
        checks.push(check);
    }
    let mut commutator_norms = vec![];
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            commutator_norms.push((i, j, maps[i].commutator_norm(&maps[j])));
        }
    }
    let mut report = KernelReport {
        maps: checks,
        commutator_norms,
        orientation: "predual".into(),
        passed: false,
    };
    report.passed = report.failures().is_empty();
    report
}

/// How the generator mixes unitary conjugations with the collapse channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Collapse {
    None,
    Fixed(f64),
    /// Per map: `λ = 0` or `λ ∈ [0.1, 0.5]` with equal odds.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub k: usize,
    pub d: usize,
    /// Ratio between the largest and smallest eigenvalue of `D`.
    pub condition: f64,
    pub collapse: Collapse,
}

impl KernelSpec {
    pub fn new(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            condition: 8.0,
            collapse: Collapse::Random,
        }
    }
}

/// A state density with distinct eigenvalues drawn log-uniformly in
/// `[1, condition]`, in a Haar-random basis.
pub fn random_density(rng: &mut impl Rng, k: usize, condition: f64) -> (AlgebraContext, Mat) {
    let spread = condition.max(1.0 + 1e-3).ln();
    let mut values: Vec<f64>;
    loop {
        values = (0..k)
            .map(|_| (rng.random::<f64>() * spread).exp())
            .collect();
        values.sort_by(f64::total_cmp);
        let gap = values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if k == 1 || gap > 1e-3 * values[k - 1] {
            break;
        }
    }
    let basis = linalg::random_unitary(rng, k);
    let d = &basis * linalg::from_real_diagonal(&values) * basis.adjoint();
    (
        AlgebraContext::normalized(linalg::hermitian_part(&d)).expect("positive definite"),
        basis,
    )
}

/// Phases on the circle whose pairwise differences stay `gap` away from `2πℤ`.
pub fn separated_phases(rng: &mut impl Rng, k: usize, gap: f64) -> Vec<f64> {
    use std::f64::consts::TAU;
    loop {
        let theta: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * TAU).collect();
        let ok = (0..k).all(|a| {
            (a + 1..k).all(|b| {
                let diff = (theta[a] - theta[b]).rem_euclid(TAU);
                diff > gap && diff < TAU - gap
            })
        });
        if ok {
            return theta;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Kernel {
    pub context: AlgebraContext,
    pub maps: Vec<PositiveMapRep>,
    pub seed: u64,
    pub collapse_rates: Vec<f64>,
}

/// Seeded kernel: `T_i = (1−λ_i)·Ad(u_i) + λ_i·C` with `u_i` diagonal in the
/// eigenbasis of `D` and `C` the collapse channel.
pub fn random_kernel(seed: u64, spec: KernelSpec) -> Result<Kernel> {
    if spec.k < 2 || spec.d < 1 {
        return Err(Error::Config(format!(
            "random_kernel needs k ≥ 2 and d ≥ 1 (got k={}, d={})",
            spec.k, spec.d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (context, basis) = random_density(&mut rng, spec.k, spec.condition);
    let collapse = PositiveMapRep::collapse(&context);
    let mut maps = Vec::with_capacity(spec.d);
    let mut collapse_rates = Vec::with_capacity(spec.d);
    for _ in 0..spec.d {
        let theta = separated_phases(&mut rng, spec.k, 0.05);
        let mut u = Mat::zeros(spec.k, spec.k);
        for (a, t) in theta.iter().enumerate() {
            u[(a, a)] = C64::from_polar(1.0, *t);
        }
        let u = &basis * u * basis.adjoint();
        let lambda = match spec.collapse {
            Collapse::None => 0.0,
            Collapse::Fixed(l) => l,
            Collapse::Random => {
                if rng.random::<bool>() {
                    0.0
                } else {
                    0.1 + 0.4 * rng.random::<f64>()
                }
            }
        };
        let ad = PositiveMapRep::conjugation(&u);
        let t = if lambda == 0.0 {
            ad
        } else {
            PositiveMapRep::combination(&[(1.0 - lambda, &ad), (lambda, &collapse)])?
        };
        maps.push(t.verified(&context));
        collapse_rates.push(lambda);
    }
    Ok(Kernel {
        context,
        maps,
        seed,
        collapse_rates,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kraus: Option<Vec<MatrixLiteral>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub superop: Option<MatrixLiteral>,
    pub flags: MapFlags,
}

/// Serialized kernel: context, maps, flags and the generating seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelBundle {
    pub seed: Option<u64>,
    pub density: MatrixLiteral,
    pub maps: Vec<MapRecord>,
    pub orientation: String,
}

impl KernelBundle {
    pub fn from_kernel(kernel: &Kernel) -> Self {
        Self::new(&kernel.context, &kernel.maps, Some(kernel.seed))
    }

    pub fn new(ctx: &AlgebraContext, maps: &[PositiveMapRep], seed: Option<u64>) -> Self {
        let maps = maps
            .iter()
            .map(|m| match m.kraus() {
                Some(ks) if ks.len() <= 64 => MapRecord {
                    kraus: Some(ks.iter().map(MatrixLiteral::from_mat).collect()),
                    superop: None,
                    flags: m.flags,
                },
                _ => MapRecord {
                    kraus: None,
                    superop: Some(MatrixLiteral::from_mat(m.superop())),
                    flags: m.flags,
                },
            })
            .collect();
        Self {
            seed,
            density: MatrixLiteral::from_mat(ctx.density()),
            maps,
            orientation: "predual".into(),
        }
    }

    /// Rebuilds the context and maps; flags are re-verified, never trusted.
    pub fn load(&self) -> Result<(AlgebraContext, Vec<PositiveMapRep>)> {
        let ctx = self.density.to_context()?;
        let k = ctx.dim();
        let mut maps = Vec::with_capacity(self.maps.len());
        for rec in &self.maps {
            let m = match (&rec.kraus, &rec.superop) {
                (Some(ks), _) => PositiveMapRep::from_kraus(
                    k,
                    ks.iter().map(MatrixLiteral::to_mat).collect::<Result<_>>()?,
                )?,
                (None, Some(s)) => PositiveMapRep::from_superop(k, s.to_mat()?)?,
                (None, None) => {
                    return Err(Error::InvalidKernel(
                        "map record needs kraus or superop".into(),
                    ))
                }
            };
            maps.push(m.verified(&ctx));
        }
        Ok((ctx, maps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_gaussian, random_unitary};
    use proptest::prelude::*;

    fn basis(k: usize) -> Vec<Mat> {
        let mut out = vec![];
        for i in 0..k {
            for j in 0..k {
                out.push(linalg::matrix_unit(k, i, j));
            }
        }
        out
    }

    #[test]
    fn compose_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(&mut rng, 3);
        let v = random_unitary(&mut rng, 3);
        let id = PositiveMapRep::identity(3);
        let adu = PositiveMapRep::conjugation(&u);
        assert!(id.compose(&adu).unwrap().distance(&adu) < 1e-12);
        let both = adu.compose(&PositiveMapRep::conjugation(&v)).unwrap();
        // Ad(u)∘Ad(v) = Ad(vu)
        assert!(both.distance(&PositiveMapRep::conjugation(&(&v * &u))) < 1e-11);
        assert_eq!(both.kraus().unwrap().len(), 1);
        for x in basis(3) {
            let direct = (&v * &u).adjoint() * &x * (&v * &u);
            assert!(max_abs(&(both.apply(&x) - direct)) < 1e-11);
        }
        assert!(matches!(
            adu.compose(&PositiveMapRep::identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trace_dual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = 3;
        let u = random_unitary(&mut rng, k);
        let dual = PositiveMapRep::conjugation(&u).trace_dual();
        assert!(dual.distance(&PositiveMapRep::conjugation(&u.adjoint())) < 1e-12);
        let id = PositiveMapRep::identity(k);
        assert!(id.trace_dual().distance(&id) < 1e-15);

        let kernel = random_kernel(4, KernelSpec::new(k, 1)).unwrap();
        let phi = &kernel.maps[0];
        let dual = phi.trace_dual();
        let tau = AlgebraContext::tracial(k);
        for x in basis(k) {
            for y in basis(k) {
                let lhs = tau.tau(&(dual.apply(&x) * &y));
                let rhs = tau.tau(&(&x * phi.apply(&y)));
                assert!((lhs - rhs).norm() < 1e-11);
            }
            // unital CP ⇒ dual is τ-preserving
            assert!((tau.tau(&dual.apply(&x)) - tau.tau(&x)).norm() < 1e-11);
        }
        assert!(dual.trace_dual().distance(phi) < 1e-11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(dual.positivity_margin(&mut rng, 100) >= -1e-9);
    }

    #[test]
    fn collapse_channel_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ctx, _) = random_density(&mut rng, 3, 5.0);
        let c = PositiveMapRep::collapse(&ctx);
        let x = random_gaussian(&mut rng, 3, 3);
        let expect = ctx.identity() * ctx.rho(&x);
        assert!(max_abs(&(c.apply(&x) - expect)) < 1e-12);
    }

    #[test]
    fn lift_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (ctx, basis_w) = random_density(&mut rng, 3, 6.0);
        let id_lift = commutant_lift(&ctx, &PositiveMapRep::identity(3)).unwrap();
        assert!(max_abs(&(id_lift.matrix() - linalg::identity(9))) < 1e-10);

        // u commuting with D: Ad(u)′(R_b) = R_{u b u*}
        let theta = separated_phases(&mut rng, 3, 0.05);
        let diag = Mat::from_fn(3, 3, |i, j| if i == j { C64::from_polar(1.0, theta[i]) } else { C64::new(0.0, 0.0) });
        let u = &basis_w * diag * basis_w.adjoint();
        let ad = PositiveMapRep::conjugation(&u).verified(&ctx);
        let lift = commutant_lift(&ctx, &ad).unwrap();
        let b = random_gaussian(&mut rng, 3, 3);
        assert!(max_abs(&(lift.apply(&b) - &u * &b * u.adjoint())) < 1e-10);

        // R_1 under a sub-unital ρ-preserving map stays below the identity
        let kernel = random_kernel(8, KernelSpec { collapse: Collapse::Fixed(0.3), ..KernelSpec::new(3, 1) }).unwrap();
        let gns = GnsSpace::new(kernel.context.clone());
        let lift = commutant_lift(&kernel.context, &kernel.maps[0]).unwrap();
        let c = lift.apply(&kernel.context.identity());
        let sym = gns.right_symbol(&c);
        assert!(linalg::min_eigenvalue(&(linalg::identity(3) - sym)) >= -1e-9);
    }

    #[test]
    fn lift_rejects_non_preserving_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ctx, _) = random_density(&mut rng, 3, 6.0);
        let u = random_unitary(&mut rng, 3);
        let ad = PositiveMapRep::conjugation(&u).verified(&ctx);
        assert_eq!(ad.flags.rho_preserving, Tri::VerifiedFalse);
        assert!(commutant_lift(&ctx, &ad).is_err());
    }

    #[test]
    fn validate_examples() {
        let ctx = AlgebraContext::tracial(3);
        let r = validate_kernel(&ctx, &[PositiveMapRep::identity(3)]);
        assert!(r.passed);
        assert!(r.maps[0].kadison_margin.abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_unitary(&mut rng, 3);
        let v = u.clone() * u.clone();
        let r = validate_kernel(&ctx, &[PositiveMapRep::conjugation(&u), PositiveMapRep::conjugation(&v)]);
        assert!(r.passed, "{:?}", r.failures());
        let (ctx, _) = random_density(&mut rng, 3, 4.0);
        let r = validate_kernel(&ctx, &[PositiveMapRep::collapse(&ctx)]);
        assert!(r.passed && r.maps[0].kadison_margin >= 0.0);
    }

    #[test]
    fn generator_examples() {
        let k0 = random_kernel(0, KernelSpec::new(2, 1)).unwrap();
        assert!(validate_kernel(&k0.context, &k0.maps).passed);
        let k1 = random_kernel(0, KernelSpec::new(2, 1)).unwrap();
        assert_eq!(k0.maps[0].distance(&k1.maps[0]), 0.0);
        let auto = random_kernel(1, KernelSpec { collapse: Collapse::None, ..KernelSpec::new(3, 2) }).unwrap();
        for m in &auto.maps {
            assert!(max_abs(&(m.image_of_one() - linalg::identity(3))) < 1e-14);
        }
        let two = random_kernel(2, KernelSpec::new(4, 2)).unwrap();
        assert!(two.maps[0].commutator_norm(&two.maps[1]) < 1e-11);
    }

    #[test]
    fn bundle_round_trip() {
        let kernel = random_kernel(3, KernelSpec::new(3, 2)).unwrap();
        let bundle = KernelBundle::from_kernel(&kernel);
        let json = serde_json::to_string(&bundle).unwrap();
        let back: KernelBundle = serde_json::from_str(&json).unwrap();
        let (ctx, maps) = back.load().unwrap();
        assert!(max_abs(&(ctx.density() - kernel.context.density())) < 1e-15);
        for (a, b) in maps.iter().zip(&kernel.maps) {
            assert!(a.distance(b) < 1e-14);
            assert_eq!(a.flags, b.flags);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dual_is_involutive(seed in any::<u64>(), k in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_gaussian(&mut rng, k * k, k * k);
            let phi = PositiveMapRep::from_superop(k, s).unwrap();
            prop_assert!(phi.trace_dual().trace_dual().distance(&phi) < 1e-11);
        }

        #[test]
        fn lift_routes_agree(seed in any::<u64>(), k in 2usize..5, d in 1usize..3) {
            let kernel = random_kernel(seed, KernelSpec::new(k, d)).unwrap();
            for m in &kernel.maps {
                let solved = commutant_lift(&kernel.context, m).unwrap();
                let closed = commutant_lift_closed_form(&kernel.context, m);
                prop_assert!(max_abs(&(solved.matrix() - closed.matrix())) < 1e-9);
                prop_assert!(lift_residual(&kernel.context, m, &solved) < 1e-9);
            }
        }

        #[test]
        fn lift_reverses_composition(seed in any::<u64>(), k in 2usize..5) {
            let kernel = random_kernel(seed, KernelSpec::new(k, 2)).unwrap();
            let (phi, psi) = (&kernel.maps[0], &kernel.maps[1]);
            let ctx = &kernel.context;
            let lhs = commutant_lift(ctx, &phi.compose(psi).unwrap()).unwrap();
            let rhs = commutant_lift(ctx, psi).unwrap().compose(&commutant_lift(ctx, phi).unwrap());
            prop_assert!(max_abs(&(lhs.matrix() - rhs.matrix())) < 1e-9);
        }

        #[test]
        fn lift_preserves_positivity(seed in any::<u64>(), k in 2usize..5) {
            let kernel = random_kernel(seed, KernelSpec::new(k, 1)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let gns = GnsSpace::new(kernel.context.clone());
            let lift = commutant_lift(&kernel.context, &kernel.maps[0]).unwrap();
            // R_b ⪰ 0 iff D^{-1/2} b D^{1/2} ⪰ 0
            let p = linalg::random_psd(&mut rng, k, k);
            let b = kernel.context.density_sqrt() * p * kernel.context.density_inv_sqrt();
            let c = lift.apply(&b);
            let op = gns.right(&c);
            prop_assert!(linalg::min_eigenvalue(&op) >= -1e-9);
            prop_assert!(linalg::hermiticity_deviation(&op) < 1e-9);
        }

        #[test]
        fn generated_kernels_validate(seed in any::<u64>(), k in 2usize..5, d in 1usize..4) {
            let kernel = random_kernel(seed, KernelSpec::new(k, d)).unwrap();
            let report = validate_kernel(&kernel.context, &kernel.maps);
            prop_assert!(report.passed, "{:?}", report.failures());
            let gns = GnsSpace::new(kernel.context.clone());
            for m in &kernel.maps {
                prop_assert!(m.gns_norm(&gns) <= 1.0 + 1e-9);
            }
        }
    }
}
