//! Bilateral almost uniform convergence: `q_s` truncation, the residual
//! ladder of maximal certificates, the projection meet and dyadic tails.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::{
    meet_all, spectral_projection, tau_abs, AlgebraContext, MatrixLiteral, ProjectionCert,
    SelfAdjointFunctional,
};
use crate::averages::{random_semigroup, ContinuousAction, DiscreteAction};
use crate::error::{Error, Result};
use crate::limits::{
    l1, mean_limit, spectral_projection_predual, Averaging, IterativeOptions, AGREEMENT_TARGET,
};
use crate::linalg::{self, apply_superop, real, Mat};
use crate::maps::{random_kernel, KernelSpec, PositiveMapRep};
use crate::maximal::{
    certify_family, corner_norm_check, peel_projection, AveragingFamily, Family, DEFAULT_RD_STEP,
};
use crate::sphere::{generalized_kernel, GeneralizedSpec};

pub const RATIO_SAMPLES: usize = 200;
pub const BRIDGE_TOL: f64 = 1e-9;
const MAX_S_LOG2: u32 = 60;

/// `q_s = χ_(1/s, s)(D)`.
pub fn qs_projection(ctx: &AlgebraContext, s: f64) -> Result<ProjectionCert> {
    if !(s > 1.0) {
        return Err(Error::Config(format!("q_s needs s > 1, got {s}")));
    }
    spectral_projection(ctx, ctx.density(), 1.0 / s, s)
}

/// Largest sampled `ρ(x)/τ(x)` over `x = qWq`, `W ⪰ 0`.
pub fn ratio_bound(ctx: &AlgebraContext, q: &ProjectionCert, rng: &mut impl rand::Rng) -> f64 {
    let k = ctx.dim();
    if q.rank == 0 {
        return 0.0;
    }
    (0..RATIO_SAMPLES)
        .map(|i| {
            let w = linalg::random_psd(rng, k, if i % 2 == 0 { 1 } else { k });
            let x = q.compress(&w);
            let t = ctx.tau(&x).re;
            if t <= 1e-14 {
                0.0
            } else {
                ctx.rho(&x).re / t
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest dyadic `s₀` with `τ(1 − q_{s₀}) < budget`, skipping boundary hits.
pub fn select_s0(ctx: &AlgebraContext, budget: f64) -> Result<(f64, ProjectionCert)> {
    for j in 1..=MAX_S_LOG2 {
        let s = 2f64.powi(j as i32);
        match qs_projection(ctx, s) {
            Ok(q) if q.deficit_tau < budget => return Ok((s, q)),
            Ok(_) | Err(Error::BoundaryAmbiguous { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "no dyadic s ≤ 2^{MAX_S_LOG2} gives τ(1 − q_s) < {budget}"
    )))
}

/// `D^{-1/2} Y D^{-1/2}`.
fn relative_density(ctx: &AlgebraContext, y: &Mat) -> Mat {
    let s = ctx.density_inv_sqrt();
    linalg::hermitian_part(&(s * y * s))
}

/// Density of `ν_λ`: the relative density clamped to `[−λ, λ]`, so `|ν_λ| ≤ λρ`.
pub fn truncate(ctx: &AlgebraContext, y: &Mat, lambda: f64) -> Mat {
    let clamped = linalg::eigh(&relative_density(ctx, y)).reconstruct(|v| v.clamp(-lambda, lambda));
    let r = ctx.density_sqrt();
    linalg::hermitian_part(&(r * clamped * r))
}

/// Smallest `λ` with `|μ| ≤ λρ`.
pub fn abs_domination(ctx: &AlgebraContext, y: &Mat) -> f64 {
    let e = linalg::eigh(&relative_density(ctx, y));
    e.max().abs().max(e.min().abs())
}

/// `sup_{a ≥ A} ‖e(Y_a − Ȳ)e‖` over the dyadic points `A = 2^j`.
pub fn tail_table(e: &Mat, dyadic: &[Mat], limit: &Mat) -> Vec<(u64, f64)> {
    let mut values: Vec<f64> = dyadic
        .iter()
        .map(|y| linalg::op_norm(&(e * (y - limit) * e)))
        .collect();
    for j in (0..values.len().saturating_sub(1)).rev() {
        values[j] = values[j].max(values[j + 1]);
    }
    values
        .into_iter()
        .enumerate()
        .map(|(j, v)| (1u64 << j, v))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Achieved,
    NotAchieved,
}

#[derive(Debug, Clone)]
pub struct BauOptions {
    pub epsilon: f64,
    pub tail_tol: f64,
    pub max_log2: u32,
    pub horizon: usize,
    pub rd_step: f64,
    /// Skip the truncation ladder.
    pub direct: bool,
    pub max_ladder: usize,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub condition: f64,
}

impl Default for BauOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            tail_tol: 1e-3,
            max_log2: 20,
            horizon: 16,
            rd_step: DEFAULT_RD_STEP,
            direct: false,
            max_ladder: 32,
            k: None,
            d: None,
            condition: 8.0,
        }
    }
}

/// A kernel together with the averages it is sampled through.
pub enum Dynamics {
    Zd(DiscreteAction),
    Rd {
        action: ContinuousAction,
        /// Predual superoperators of `M_{2^j}`.
        dyadic: Vec<Mat>,
    },
    Sphere { sigma1: PositiveMapRep, w: f64 },
}

pub struct Instance {
    pub context: AlgebraContext,
    pub dynamics: Dynamics,
    pub averaging: Averaging,
}

impl Instance {
    pub fn zd(context: AlgebraContext, maps: Vec<PositiveMapRep>) -> Result<Self> {
        let action = DiscreteAction::new(maps.clone())?;
        Ok(Self {
            context,
            dynamics: Dynamics::Zd(action),
            averaging: Averaging::Box(maps),
        })
    }

    pub fn rd(context: AlgebraContext, action: ContinuousAction, max_log2: u32) -> Result<Self> {
        let k = action.dim();
        let time_one = action
            .time_one()?
            .into_iter()
            .map(|s| PositiveMapRep::from_superop(k, s))
            .collect::<Result<Vec<_>>>()?;
        let dyadic = action
            .dyadic_box_averages(max_log2)?
            .into_iter()
            .map(|s| PositiveMapRep::from_superop(k, s).map(|m| m.trace_dual().superop().clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            context,
            dynamics: Dynamics::Rd { action, dyadic },
            averaging: Averaging::Box(time_one),
        })
    }

    pub fn sphere(context: AlgebraContext, sigma1: PositiveMapRep, w: f64) -> Self {
        Self {
            context,
            averaging: Averaging::Sphere {
                sigma1: sigma1.clone(),
                w,
            },
            dynamics: Dynamics::Sphere { sigma1, w },
        }
    }

    pub fn family(&self, rd_step: f64) -> AveragingFamily<'_> {
        match &self.dynamics {
            Dynamics::Zd(a) => AveragingFamily::Zd(a),
            Dynamics::Rd { action, .. } => AveragingFamily::Rd {
                action,
                step: rd_step,
            },
            Dynamics::Sphere { sigma1, w } => AveragingFamily::Sphere { sigma1, w: *w },
        }
    }

    /// Densities of the averages of `Y` at `a = 2^j`, `j = 0..=max_log2`.
    pub fn dyadic_densities(&self, y: &Mat, max_log2: u32) -> Result<Vec<Mat>> {
        Ok(match &self.dynamics {
            Dynamics::Zd(_) => (0..=max_log2)
                .map(|j| apply_superop(&self.averaging.predual_average(1 << j), y))
                .collect(),
            Dynamics::Rd { dyadic, .. } => {
                if dyadic.len() <= max_log2 as usize {
                    return Err(Error::Config(format!(
                        "dyadic table holds {} lengths, {} requested",
                        dyadic.len(),
                        max_log2 + 1
                    )));
                }
                dyadic[..=max_log2 as usize]
                    .iter()
                    .map(|s| apply_superop(s, y))
                    .collect()
            }
            Dynamics::Sphere { sigma1, w } => sphere_dyadic(sigma1, *w, y, max_log2),
        }
        .into_iter()
        .map(|m| linalg::hermitian_part(&m))
        .collect())
    }
}

/// `S_n(μ)` at `n = 2^j` by the three-term recurrence on densities.
fn sphere_dyadic(sigma1: &PositiveMapRep, w: f64, y: &Mat, max_log2: u32) -> Vec<Mat> {
    let k = y.nrows();
    let v = sigma1.trace_dual().superop().clone();
    let mut prev = linalg::vec(y);
    let mut cur = &v * &prev;
    let mut sum = &prev + &cur;
    let mut out = Vec::with_capacity(max_log2 as usize + 1);
    let (a, b) = (real(1.0 / w), real(-(1.0 - w) / w));
    for n in 1..=(1u64 << max_log2) {
        if n > 1 {
            prev.gemv(a, &v, &cur, b);
            std::mem::swap(&mut prev, &mut cur);
            sum += &cur;
        }
        if n.is_power_of_two() {
            out.push(linalg::unvec(&(&sum / real((n + 1) as f64)), k));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderStep {
    pub j: usize,
    pub lambda: f64,
    pub delta: f64,
    pub residual: f64,
    pub limit_residual: f64,
    pub e_deficit_tau: f64,
    pub f_deficit_tau: f64,
    pub peels: usize,
}

#[derive(Debug, Clone)]
pub struct BauSearch {
    pub e: ProjectionCert,
    pub s0: f64,
    pub q: ProjectionCert,
    pub ratio_max: f64,
    pub ladder: Vec<LadderStep>,
    pub tail: Vec<(u64, f64)>,
    pub bridge: bool,
    pub diagnostics: Vec<String>,
}

impl BauSearch {
    pub fn final_tail(&self) -> f64 {
        self.tail.last().map_or(0.0, |t| t.1)
    }

    pub fn verdict(&self, opts: &BauOptions) -> Verdict {
        if self.e.deficit_tau < opts.epsilon && self.final_tail() < opts.tail_tol {
            Verdict::Achieved
        } else {
            Verdict::NotAchieved
        }
    }
}

/// Build `e = q_{s₀} ∧ ⋀_j (e_j ∧ f_j)` for `μ` with limit density `limit`.
///
/// `e_j` certifies the averages of `μ − ν_j` at accuracy `δ_j = 2^{-j}`, and
/// `f_j` certifies `μ̄ − ν̄_j`; `λ_j` is the smallest dyadic level whose
/// residual is below `ε·δ_j·2^{-(j+3)}`.
pub fn find_bau_projection(
    inst: &Instance,
    mu: &SelfAdjointFunctional,
    limit: &Mat,
    opts: &BauOptions,
    rng: &mut impl rand::Rng,
) -> Result<BauSearch> {
    let ctx = &inst.context;
    let y = &mu.density;
    ctx.check_dim(y)?;
    let (s0, q) = select_s0(ctx, opts.epsilon / 2.0).map_err(|e| e.at("qs"))?;
    let ratio_max = ratio_bound(ctx, &q, rng);
    let mut diagnostics = Vec::new();
    if ratio_max > s0 * (1.0 + 1e-9) {
        diagnostics.push(format!("[qs] sampled ρ/τ ratio {ratio_max:.6e} exceeds s₀ = {s0}"));
    }

    let mut parts = vec![q.clone()];
    let mut ladder = Vec::new();
    let mut bridge_terms: Vec<(Vec<Mat>, f64)> = Vec::new();
    if !opts.direct {
        let projector = spectral_projection_predual(&inst.averaging.duals()).map_err(|e| e.at("mean-limit"))?;
        let family = inst.family(opts.rd_step);
        let dom = abs_domination(ctx, y);
        for j in 1..=opts.max_ladder {
            let delta = 2f64.powi(-(j as i32));
            let target = opts.epsilon * delta * 2f64.powi(-(j as i32 + 3));
            let mut lambda = 1.0;
            let mut nu = truncate(ctx, y, lambda);
            while lambda < dom && l1(&(y - &nu)) > target {
                lambda *= 2.0;
                nu = truncate(ctx, y, lambda);
            }
            let r = linalg::hermitian_part(&(y - &nu));
            let r_bar = linalg::hermitian_part(&apply_superop(&projector, &r));
            let residual = SelfAdjointFunctional::from_density(r.clone())?;
            let e_j = certify_family(ctx, &family, &residual, delta, opts.horizon, None)
                .map_err(|e| e.at("maximal"))?;
            let f_j = peel_projection(ctx, std::slice::from_ref(&r_bar), delta);
            if !e_j.passed() || !f_j.passed() {
                diagnostics.push(format!("[maximal] ladder step {j} certificate has a negative margin"));
            }
            let (_, z) = family.densities(&r, opts.horizon).map_err(|e| e.at("maximal"))?;
            bridge_terms.push((z, delta));
            bridge_terms.push((vec![r_bar.clone()], delta));
            ladder.push(LadderStep {
                j,
                lambda,
                delta,
                residual: tau_abs(&r),
                limit_residual: tau_abs(&r_bar),
                e_deficit_tau: e_j.e.deficit_tau,
                f_deficit_tau: f_j.e.deficit_tau,
                peels: e_j.peels + f_j.peels,
            });
            parts.push(e_j.e);
            parts.push(f_j.e);
            if lambda >= dom {
                break;
            }
        }
        if ladder.last().is_some_and(|s| s.lambda < dom) {
            diagnostics.push(format!(
                "[ladder] budget of {} steps ended below the domination constant {dom:.6e}",
                opts.max_ladder
            ));
        }
    }
    let e = meet_all(ctx, parts.iter());

    let mut bridge = true;
    for (z_list, delta) in &bridge_terms {
        for z in z_list {
            let check = corner_norm_check(z, &e.matrix, delta * s0, rng);
            if check.premise_holds && check.corner_norm > delta * s0 + BRIDGE_TOL {
                bridge = false;
            }
        }
    }
    if !bridge {
        diagnostics.push("[bridge] a corner norm exceeds its functional bound".into());
    }

    let dyadic = inst
        .dyadic_densities(y, opts.max_log2)
        .map_err(|e| e.at("tails"))?;
    let tail = tail_table(&e.matrix, &dyadic, limit);
    if e.deficit_tau >= opts.epsilon {
        diagnostics.push(format!(
            "[meet] τ(1 − e) = {:.6e} is not below ε = {}",
            e.deficit_tau, opts.epsilon
        ));
    }
    let final_tail = tail.last().map_or(0.0, |t| t.1);
    if final_tail >= opts.tail_tol {
        diagnostics.push(format!(
            "[tails] tail at A = 2^{} is {final_tail:.6e}, above {}",
            opts.max_log2, opts.tail_tol
        ));
    }
    Ok(BauSearch {
        e,
        s0,
        q,
        ratio_max,
        ladder,
        tail,
        bridge,
        diagnostics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BauReport {
    pub kind: String,
    pub seed: u64,
    pub epsilon: f64,
    /// `τ(1 − e)`.
    pub deficit: f64,
    pub deficit_rho: f64,
    pub tail: Vec<(u64, f64)>,
    pub verdict: Verdict,
    pub tail_tolerance: f64,
    pub k: usize,
    pub d: usize,
    pub s0: f64,
    pub qs_deficit: f64,
    pub ratio_max: f64,
    pub ladder: Vec<LadderStep>,
    pub mean_limit_agreement: f64,
    pub corner_bridge: bool,
    pub diagnostics: Vec<String>,
    pub projection: MatrixLiteral,
    pub limit: MatrixLiteral,
}

/// Default ensemble sizes for a seed: `k = 2 + seed mod 4`, `d = 1 + ⌊seed/4⌋ mod 2`.
pub fn default_sizes(seed: u64) -> (usize, usize) {
    (2 + (seed % 4) as usize, 1 + ((seed / 4) % 2) as usize)
}

fn build_instance(kind: Family, seed: u64, k: usize, d: usize, opts: &BauOptions) -> Result<(Instance, usize)> {
    match kind {
        Family::Zd => {
            let kernel = random_kernel(
                seed,
                KernelSpec {
                    condition: opts.condition,
                    ..KernelSpec::new(k, d)
                },
            )?;
            Ok((Instance::zd(kernel.context, kernel.maps)?, d))
        }
        Family::Rd => {
            let (ctx, action) = random_semigroup(seed, k, d)?;
            Ok((Instance::rd(ctx, action, opts.max_log2)?, d))
        }
        Family::Sphere => {
            let spec = GeneralizedSpec {
                condition: opts.condition,
                ..GeneralizedSpec::new(k, 2)
            };
            let g = generalized_kernel(seed, spec)?;
            let w = g.w_f64();
            Ok((Instance::sphere(g.context, g.sigma1, w), spec.r))
        }
    }
}

/// Seeded hermitian density with `τ|Y| = 1`.
pub fn random_functional(seed: u64, k: usize) -> Result<SelfAdjointFunctional> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba_u64 << 32);
    let y = linalg::random_hermitian(&mut rng, k);
    let n = tau_abs(&y);
    SelfAdjointFunctional::from_density(y / real(n))
}

/// Kernel → mean limit → maximal certificates → meet → tails.
pub fn run_bau_experiment(kind: Family, seed: u64, opts: &BauOptions) -> Result<BauReport> {
    if !(opts.epsilon > 0.0) || !(opts.tail_tol > 0.0) || opts.horizon == 0 {
        return Err(Error::Config("b.a.u. needs ε > 0, a positive tail tolerance and horizon".into()));
    }
    let (k0, d0) = default_sizes(seed);
    let k = opts.k.unwrap_or(k0);
    let d = opts.d.unwrap_or(d0);
    let (inst, d) = build_instance(kind, seed, k, d, opts).map_err(|e| e.at("kernel"))?;
    let mu = random_functional(seed, k)?;
    run_on_instance(&inst, kind, seed, d, &mu, opts)
}

pub fn run_on_instance(
    inst: &Instance,
    kind: Family,
    seed: u64,
    d: usize,
    mu: &SelfAdjointFunctional,
    opts: &BauOptions,
) -> Result<BauReport> {
    let ml = mean_limit(mu, &inst.averaging, IterativeOptions::default(), 0).map_err(|e| e.at("mean-limit"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ba0);
    let mut search = find_bau_projection(inst, mu, &ml.limit.density, opts, &mut rng)?;
    if ml.agreement > AGREEMENT_TARGET {
        search.diagnostics.push(format!(
            "[mean-limit] routes agree only to {:.3e}",
            ml.agreement
        ));
    }
    Ok(BauReport {
        kind: kind.as_str().to_string(),
        seed,
        epsilon: opts.epsilon,
        deficit: search.e.deficit_tau,
        deficit_rho: search.e.deficit_rho,
        verdict: search.verdict(opts),
        tail_tolerance: opts.tail_tol,
        k: inst.context.dim(),
        d,
        s0: search.s0,
        qs_deficit: search.q.deficit_tau,
        ratio_max: search.ratio_max,
        mean_limit_agreement: ml.agreement,
        corner_bridge: search.bridge,
        projection: MatrixLiteral::from_mat(&search.e.matrix),
        limit: MatrixLiteral::from_mat(&ml.limit.density),
        tail: search.tail,
        ladder: search.ladder,
        diagnostics: search.diagnostics,
    })
}
