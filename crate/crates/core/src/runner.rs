//! Experiment configuration, dispatch and artifact emission.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algebra::{AlgebraContext, MatrixLiteral};
use crate::averages::{random_semigroup, DiscreteAction};
use crate::bau::{self, BauOptions, Instance, Verdict};
use crate::brunel;
use crate::error::{Error, Result};
use crate::limits::{mean_limit, Averaging, IterativeOptions, AGREEMENT_TARGET};
use crate::linalg;
use crate::maps::{random_kernel, validate_kernel, KernelBundle, KernelSpec, PositiveMapRep};
use crate::maximal::{
    certify_family, reverify, AveragingFamily, DeficitBound, Family, DEFAULT_RD_STEP,
    SOUNDNESS_SAMPLES,
};
use crate::sphere::{
    commutant_decay, estimate_cw, generalized_kernel, spectrum_report,
    transfer_inequality_check, verify_a2_free, GeneralizedSpec, TransferCoeffs,
    SIGMA_POSITIVITY_SAMPLES, SIGMA_POSITIVITY_TOL,
};

pub const A2_TOL: f64 = 1e-10;
/// Horizon of the empirical `c` used in the `ℤ₊^d` deficit bound.
pub const BOUND_C_HORIZON: u64 = 64;
const CW_HORIZON: usize = 60;
const A2_MAX_N: usize = 6;
const TRANSFER_MAX_N: usize = 8;
const TRANSFER_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BrunelTable,
    CertifyMax,
    MeanLimit,
    Sphere,
    Bau,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::BrunelTable => "brunel-table",
            Command::CertifyMax => "certify-max",
            Command::MeanLimit => "mean-limit",
            Command::Sphere => "sphere",
            Command::Bau => "bau",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

/// One experiment, as read from a flat TOML table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: Command,
    #[serde(default)]
    pub seed: u64,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub r: Option<usize>,
    /// Rational `"p/q"`.
    pub w: Option<String>,
    /// `zd`, `rd` or `sphere`.
    pub family: Option<String>,
    pub epsilon: Option<f64>,
    pub horizon: Option<usize>,
    pub n_max: Option<usize>,
    pub tol: Option<f64>,
    pub tail_tol: Option<f64>,
    /// Brunel truncation `Λ`.
    pub truncation: Option<u64>,
    pub max_log2: Option<u32>,
    pub direct: Option<bool>,
    /// Kernel bundle JSON replacing the seeded kernel.
    pub kernel: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: Command) -> Self {
        Self {
            name: None,
            kind,
            seed: 0,
            k: None,
            d: None,
            r: None,
            w: None,
            family: None,
            epsilon: None,
            horizon: None,
            n_max: None,
            tol: None,
            tail_tol: None,
            truncation: None,
            max_log2: None,
            direct: None,
            kernel: None,
            out: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(k) = &self.kernel {
            if k.is_relative() {
                self.kernel = Some(base.join(k));
            }
        }
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.kind.as_str(), self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol", self.tol),
            ("tail_tol", self.tail_tol),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(k) = self.k {
            if k < 2 {
                return Err(Error::Config(format!("k must be at least 2, got {k}")));
            }
        }
        if self.d == Some(0) {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if let Some(r) = self.r {
            if r < 2 {
                return Err(Error::Config(format!("r must be at least 2, got {r}")));
            }
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if let Some(w) = &self.w {
            parse_w(w)?;
        }
        if let Some(f) = &self.family {
            Family::parse(f)?;
        }
        Ok(())
    }

    fn family(&self) -> Result<Family> {
        self.family.as_deref().map_or(Ok(Family::Zd), Family::parse)
    }

    fn sizes(&self) -> (usize, usize) {
        let (k, d) = bau::default_sizes(self.seed);
        (self.k.unwrap_or(k), self.d.unwrap_or(d))
    }
}

/// Parses `"p/q"` (or an integer) and checks `w ∈ (1/2, 1]`.
pub fn parse_w(s: &str) -> Result<BigRational> {
    let bad = || Error::Config(format!("w must be a rational \"p/q\", got {s:?}"));
    let (p, q) = match s.trim().split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (s.trim(), "1"),
    };
    let p: BigInt = p.parse().map_err(|_| bad())?;
    let q: BigInt = q.parse().map_err(|_| bad())?;
    if q == BigInt::from(0) {
        return Err(bad());
    }
    let w = BigRational::new(p, q);
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    if w <= half || w > BigRational::one() {
        return Err(Error::Config(format!("w must lie in (1/2, 1], got {w}")));
    }
    Ok(w)
}

/// A CSV table held as formatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub name: String,
    pub kind: Command,
    pub seed: u64,
    pub passed: bool,
    pub failures: Vec<String>,
    pub report: Value,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl Outcome {
    fn new(cfg: &ExperimentConfig, report: Value, failures: Vec<String>, tables: Vec<Table>) -> Self {
        Self {
            name: cfg.display_name(),
            kind: cfg.kind,
            seed: cfg.seed,
            passed: failures.is_empty(),
            failures,
            report,
            tables,
        }
    }

    /// An entry that stopped with an error.
    pub fn from_error(cfg: &ExperimentConfig, err: &Error) -> Self {
        let msg = err.to_string();
        Self::new(cfg, json!({ "error": msg }), vec![msg], vec![])
    }

    /// The report object with `name`, `experiment`, `passed` and `failures` added.
    pub fn artifact(&self) -> Value {
        let mut v = self.report.clone();
        if let Some(obj) = v.as_object_mut() {
            obj.insert("name".into(), json!(self.name));
            obj.insert("experiment".into(), json!(self.kind));
            obj.entry("seed").or_insert(json!(self.seed));
            obj.insert("passed".into(), json!(self.passed));
            obj.insert("failures".into(), json!(self.failures));
        }
        v
    }

    /// Writes `<stem>.json` and `<stem>-<table>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&json_path, to_json(&self.artifact())?)?;
        let mut paths = vec![json_path];
        for t in &self.tables {
            let p = dir.join(format!("{stem}-{}.csv", t.name));
            t.write(&p)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

/// Pretty JSON with every float written as `{:.16e}`.
struct FixedFloats(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, FixedFloats(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn load_zd_kernel(cfg: &ExperimentConfig, k: usize, d: usize) -> Result<(AlgebraContext, Vec<PositiveMapRep>)> {
    match &cfg.kernel {
        Some(path) => {
            let bundle: KernelBundle = serde_json::from_str(&fs::read_to_string(path)?)?;
            let (ctx, maps) = bundle.load()?;
            let report = validate_kernel(&ctx, &maps);
            if !report.passed {
                return Err(Error::InvalidKernel(report.failures().join("; ")));
            }
            Ok((ctx, maps))
        }
        None => {
            let kernel = random_kernel(cfg.seed, KernelSpec::new(k, d))?;
            Ok((kernel.context, kernel.maps))
        }
    }
}

/// Runs one experiment; errors carry stage labels.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.kind {
        Command::BrunelTable => run_brunel_table(cfg),
        Command::CertifyMax => run_certify_max(cfg),
        Command::MeanLimit => run_mean_limit(cfg),
        Command::Sphere => run_sphere(cfg),
        Command::Bau => run_bau(cfg),
    }
}

fn run_brunel_table(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n_max = cfg.n_max.unwrap_or(10) as u64;
    let p_max = cfg.truncation.unwrap_or(60);
    let mut failures = vec![];
    let mut alpha = Table::new("alpha", &["n", "p", "alpha", "alpha_f64"]);
    for n in 0..=n_max {
        for p in 0..=p_max {
            let a = brunel::alpha(n, p);
            alpha.push(vec![
                n.to_string(),
                p.to_string(),
                a.to_string(),
                fmt_f64(a.to_f64().unwrap_or(f64::NAN)),
            ]);
        }
    }
    let convolution = (2..=n_max).all(|n| brunel::verify_convolution(1, n - 1, p_max));
    if !convolution {
        failures.push("[brunel] convolution identity fails".into());
    }
    let mut row_sums = vec![];
    for n in 1..=n_max.min(5) {
        let s = brunel::row_partial_sum(n, p_max).to_f64();
        let below_one = brunel::row_partial_sum(n, p_max) < brunel::Dyadic::one();
        let est = brunel::row_tail_estimate(n, p_max);
        if !below_one {
            failures.push(format!("[brunel] row {n} partial sum is not below 1"));
        }
        row_sums.push(json!({ "n": n, "partial_sum": s, "below_one": below_one, "tail_estimate": est, "above_lower_estimate": s > 1.0 - 2.0 * est }));
    }
    let lemma = brunel::lemma_ii_table(n_max.max(1));
    let mut lemma_rows = vec![];
    for v in &lemma {
        if v.value <= BigRational::from_integer(BigInt::from(0)) {
            failures.push(format!("[brunel] m({}) is not positive", v.n));
        }
        lemma_rows.push(json!({
            "n": v.n,
            "m": v.value.to_string(),
            "m_f64": v.value.to_f64(),
            "argmin": [v.argmin.0, v.argmin.1],
        }));
    }
    let c_emp = lemma.iter().map(|v| v.value.clone()).min().expect("n_max ≥ 1");
    let report = json!({
        "n_max": n_max,
        "p_max": p_max,
        "convolution": convolution,
        "row_sums": row_sums,
        "lemma_ii": lemma_rows,
        "c_emp": c_emp.to_string(),
        "c_emp_f64": c_emp.to_f64(),
    });
    Ok(Outcome::new(cfg, report, failures, vec![alpha]))
}

fn run_certify_max(cfg: &ExperimentConfig) -> Result<Outcome> {
    let family = cfg.family()?;
    let eps = cfg.epsilon.unwrap_or(0.25);
    let horizon = cfg.horizon.unwrap_or(16);
    let (k, d) = cfg.sizes();
    let r = cfg.r.unwrap_or(2);
    let c = || brunel::empirical_c(BOUND_C_HORIZON).to_f64().expect("finite");
    let (ctx, inst_family_data) = match family {
        Family::Zd => {
            let (ctx, maps) = load_zd_kernel(cfg, k, d).map_err(|e| e.at("kernel"))?;
            let d = maps.len();
            (ctx, FamilyData::Zd(DiscreteAction::new(maps).map_err(|e| e.at("kernel"))?, d))
        }
        Family::Rd => {
            let (ctx, action) = random_semigroup(cfg.seed, k, d).map_err(|e| e.at("kernel"))?;
            (ctx, FamilyData::Rd(action, d))
        }
        Family::Sphere => {
            let g = generalized_kernel(cfg.seed, GeneralizedSpec::new(k, r)).map_err(|e| e.at("kernel"))?;
            let w = g.w.clone();
            (g.context, FamilyData::Sphere(g.sigma1, w))
        }
    };
    let mu = bau::random_functional(cfg.seed, ctx.dim())?;
    let norm = mu.norm();
    let (avg_family, bound) = match &inst_family_data {
        FamilyData::Zd(a, d) => (AveragingFamily::Zd(a), DeficitBound::zd(*d, norm, eps, c())),
        FamilyData::Rd(a, d) => (
            AveragingFamily::Rd {
                action: a,
                step: DEFAULT_RD_STEP,
            },
            DeficitBound::rd(*d, norm, eps, c()),
        ),
        FamilyData::Sphere(s, w) => {
            let c_w = estimate_cw(w, CW_HORIZON).to_f64().expect("finite");
            (
                AveragingFamily::Sphere {
                    sigma1: s,
                    w: w.to_f64().expect("finite"),
                },
                DeficitBound::sphere(c_w, norm, eps),
            )
        }
    };
    let cert = certify_family(&ctx, &avg_family, &mu, eps, horizon, Some(bound)).map_err(|e| e.at("maximal"))?;
    let (_, z) = avg_family.densities(&mu.density, horizon).map_err(|e| e.at("maximal"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5017d);
    let soundness = reverify(&ctx, &cert, &z, &mut rng, SOUNDNESS_SAMPLES);
    let mut failures = vec![];
    if !cert.passed() {
        failures.push(format!("[maximal] worst margin {:.6e} is negative", cert.worst_margin()));
    }
    if !soundness.passed {
        failures.push(format!("[soundness] re-verification margin {:.6e}", soundness.worst_margin));
    }
    let mut report = serde_json::to_value(cert.report())?;
    let obj = report.as_object_mut().expect("struct serializes to an object");
    obj.insert("seed".into(), json!(cfg.seed));
    obj.insert("k".into(), json!(ctx.dim()));
    obj.insert("within_bound".into(), json!(cert.within_bound()));
    obj.insert("density".into(), serde_json::to_value(MatrixLiteral::from_mat(ctx.density()))?);
    obj.insert("mu".into(), serde_json::to_value(MatrixLiteral::from_mat(&mu.density))?);
    obj.insert("soundness".into(), serde_json::to_value(&soundness)?);
    let mut margins = Table::new("margins", &["index", "lower", "upper"]);
    for (a, (lo, hi)) in cert.indices.iter().zip(&cert.margins) {
        margins.push(vec![fmt_f64(*a), fmt_f64(*lo), fmt_f64(*hi)]);
    }
    Ok(Outcome::new(cfg, report, failures, vec![margins]))
}

enum FamilyData {
    Zd(DiscreteAction, usize),
    Rd(crate::averages::ContinuousAction, usize),
    Sphere(PositiveMapRep, BigRational),
}

fn run_mean_limit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (k, d) = cfg.sizes();
    let (ctx, maps) = load_zd_kernel(cfg, k, d).map_err(|e| e.at("kernel"))?;
    let mu = bau::random_functional(cfg.seed, ctx.dim())?;
    let max_log2 = cfg.max_log2.unwrap_or(12);
    let ml = mean_limit(&mu, &Averaging::Box(maps), IterativeOptions::default(), max_log2)
        .map_err(|e| e.at("mean-limit"))?;
    let mut failures = vec![];
    if ml.agreement > AGREEMENT_TARGET {
        failures.push(format!(
            "[mean-limit] routes differ by {:.6e}, above {AGREEMENT_TARGET:e}",
            ml.agreement
        ));
    }
    let mut rates = Table::new("rates", &["l", "l1_error"]);
    for r in &ml.rates {
        rates.push(vec![r.l.to_string(), fmt_f64(r.l1_error)]);
    }
    let report = json!({
        "seed": cfg.seed,
        "k": ctx.dim(),
        "agreement": ml.agreement,
        "squarings": ml.squarings,
        "invariance": ml.invariance,
        "rates": ml.rates,
        "limit": MatrixLiteral::from_mat(&ml.limit.density),
        "mu": MatrixLiteral::from_mat(&mu.density),
        "density": MatrixLiteral::from_mat(ctx.density()),
    });
    Ok(Outcome::new(cfg, report, failures, vec![rates]))
}

fn run_sphere(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = cfg.k.unwrap_or(3);
    let r = cfg.r.unwrap_or(2);
    let n_max = cfg.n_max.unwrap_or(200);
    let tol = cfg.tol.unwrap_or(1e-9);
    let g = generalized_kernel(cfg.seed, GeneralizedSpec::new(k, r)).map_err(|e| e.at("kernel"))?;
    let w_kernel = g.w.clone();
    let w_coeff = match &cfg.w {
        Some(s) => parse_w(s)?,
        None => w_kernel.clone(),
    };
    let mut failures = vec![];

    let a2 = verify_a2_free(&g.unitaries, A2_MAX_N.min(n_max.max(1))).map_err(|e| e.at("sphere"))?;
    let a2_worst = a2.iter().map(|row| row.residual).fold(0.0, f64::max);
    if a2_worst > A2_TOL {
        failures.push(format!("[sphere] A2 residual {a2_worst:.3e} above {A2_TOL:e}"));
    }

    let mut coeffs = TransferCoeffs::new(w_coeff.clone());
    coeffs.extend_to(n_max);
    let sums_exact = (0..=n_max).all(|n| coeffs.row(n).iter().sum::<BigRational>() == BigRational::one());
    if !sums_exact {
        failures.push("[sphere] a transfer-coefficient row does not sum to 1".into());
    }
    let c_w_coeff = estimate_cw(&w_coeff, CW_HORIZON);
    let c_w = estimate_cw(&w_kernel, CW_HORIZON).to_f64().expect("finite");

    let mut seq = g.sequence()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5f3e);
    let transfer = transfer_inequality_check(&mut seq, c_w, TRANSFER_MAX_N, &mut rng, TRANSFER_SAMPLES, tol);
    if !transfer.passed {
        failures.push(format!("[sphere] transfer inequality margin {:.3e}", transfer.worst_margin));
    }
    let positivity = seq.positivity_margin(TRANSFER_MAX_N, &mut rng, SIGMA_POSITIVITY_SAMPLES);
    if positivity < -SIGMA_POSITIVITY_TOL {
        failures.push(format!("[sphere] σ_n positivity margin {positivity:.3e}"));
    }
    let spectrum = spectrum_report(&g.context, &g.sigma1, g.w_f64()).map_err(|e| e.at("sphere"))?;
    let y = linalg::random_hermitian(&mut rng, k);
    let decay = commutant_decay(&g.context, &g.sigma1, g.w_f64(), &y, 1, n_max).map_err(|e| e.at("sphere"))?;
    if !decay.envelope_holds {
        failures.push(format!(
            "[sphere] commutant decay exceeds 2‖y′‖/(n+1) (ratio {:.6e})",
            decay.envelope_ratio
        ));
    }
    let mut a2_table = Table::new("a2", &["n", "residual"]);
    for row in &a2 {
        a2_table.push(vec![row.n.to_string(), fmt_f64(row.residual)]);
    }
    let mut decay_table = Table::new("decay", &["k", "n", "norm"]);
    for row in &decay.rows {
        decay_table.push(vec![row.k.to_string(), row.n.to_string(), fmt_f64(row.norm)]);
    }
    let report = json!({
        "seed": cfg.seed,
        "k": k,
        "r": r,
        "w": w_kernel.to_string(),
        "w_coefficients": w_coeff.to_string(),
        "a2_worst": a2_worst,
        "transfer_sums_exact": sums_exact,
        "c_w": c_w_coeff.to_f64(),
        "c_w_exact": c_w_coeff.to_string(),
        "c_w_kernel": c_w,
        "transfer": transfer,
        "positivity_margin": positivity,
        "spectrum": spectrum,
        "decay": {
            "y_norm": decay.y_norm,
            "envelope_holds": decay.envelope_holds,
            "envelope_ratio": decay.envelope_ratio,
            "tight_envelope_holds": decay.tight_envelope_holds,
            "thresholds": decay.thresholds,
        },
        "blocks": g.blocks,
    });
    Ok(Outcome::new(cfg, report, failures, vec![a2_table, decay_table]))
}

fn run_bau(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.family()?;
    let defaults = BauOptions::default();
    let opts = BauOptions {
        epsilon: cfg.epsilon.unwrap_or(defaults.epsilon),
        tail_tol: cfg.tail_tol.unwrap_or(defaults.tail_tol),
        max_log2: cfg.max_log2.unwrap_or(defaults.max_log2),
        horizon: cfg.horizon.unwrap_or(defaults.horizon),
        direct: cfg.direct.unwrap_or(false),
        k: cfg.k,
        d: cfg.d,
        ..defaults
    };
    let report = match (&cfg.kernel, kind) {
        (Some(_), Family::Zd) => {
            let (ctx, maps) = load_zd_kernel(cfg, 0, 0).map_err(|e| e.at("kernel"))?;
            let d = maps.len();
            let k = ctx.dim();
            let inst = Instance::zd(ctx, maps).map_err(|e| e.at("kernel"))?;
            let mu = bau::random_functional(cfg.seed, k)?;
            bau::run_on_instance(&inst, kind, cfg.seed, d, &mu, &opts)?
        }
        (Some(_), _) => {
            return Err(Error::Config("kernel files are supported for the zd family only".into()))
        }
        (None, _) => bau::run_bau_experiment(kind, cfg.seed, &opts)?,
    };
    let failures = if report.verdict == Verdict::Achieved {
        vec![]
    } else {
        report.diagnostics.clone()
    };
    let mut tail = Table::new("tail", &["A", "tail"]);
    for (a, v) in &report.tail {
        tail.push(vec![a.to_string(), fmt_f64(*v)]);
    }
    Ok(Outcome::new(cfg, serde_json::to_value(&report)?, failures, vec![tail]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub run: Vec<ExperimentConfig>,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for cfg in &m.run {
            cfg.validate()?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for cfg in &mut m.run {
            cfg.resolve_paths(base);
        }
        Ok(m)
    }

    /// One entry per experiment kind, b.a.u. for every family.
    pub fn default_suite() -> Self {
        let mut run = vec![
            ExperimentConfig::new(Command::BrunelTable),
            ExperimentConfig::new(Command::MeanLimit),
            ExperimentConfig::new(Command::Sphere),
        ];
        for family in [Family::Zd, Family::Rd, Family::Sphere] {
            run.push(ExperimentConfig {
                family: Some(family.as_str().into()),
                name: Some(format!("certify-max-{}", family.as_str())),
                ..ExperimentConfig::new(Command::CertifyMax)
            });
            run.push(ExperimentConfig {
                family: Some(family.as_str().into()),
                name: Some(format!("bau-{}", family.as_str())),
                ..ExperimentConfig::new(Command::Bau)
            });
        }
        Self { run }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub entries: Vec<SummaryEntry>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryEntry {
    pub name: String,
    pub kind: Command,
    pub seed: u64,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Runs the entries in parallel; results keep manifest order.
pub fn run_suite(manifest: &Manifest) -> Vec<Outcome> {
    manifest
        .run
        .par_iter()
        .map(|cfg| run(cfg).unwrap_or_else(|e| Outcome::from_error(cfg, &e)))
        .collect()
}

/// Writes each outcome as `NNN-<name>` plus `summary.json`.
pub fn write_suite(outcomes: &[Outcome], dir: &Path) -> Result<SuiteSummary> {
    for (i, o) in outcomes.iter().enumerate() {
        o.write(dir, &format!("{i:03}-{}", o.name))?;
    }
    let summary = SuiteSummary {
        passed: outcomes.iter().all(|o| o.passed),
        entries: outcomes
            .iter()
            .map(|o| SummaryEntry {
                name: o.name.clone(),
                kind: o.kind,
                seed: o.seed,
                passed: o.passed,
                failures: o.failures.clone(),
            })
            .collect(),
    };
    fs::write(dir.join("summary.json"), to_json(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::free_w;

    #[test]
    fn parses_flat_config() {
        let cfg = ExperimentConfig::from_toml(
            "kind = \"bau\"\nseed = 7\nk = 3\nepsilon = 0.1\nfamily = \"rd\"\nw = \"3/4\"\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, Command::Bau);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.family().unwrap(), Family::Rd);
    }

    #[test]
    fn rejects_invalid_configs() {
        for text in [
            "kind = \"bau\"\nepsilon = -1.0\n",
            "kind = \"sphere\"\nw = \"1/2\"\n",
            "kind = \"sphere\"\nw = \"5/4\"\n",
            "kind = \"bau\"\nk = 1\n",
            "kind = \"bau\"\ntol = 0.0\n",
            "kind = \"nothing\"\n",
            "kind = \"bau\"\nunknown = 3\n",
            "kind = \"certify-max\"\nfamily = \"zz\"\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn w_parsing() {
        assert_eq!(parse_w("3/4").unwrap(), BigRational::new(3.into(), 4.into()));
        assert_eq!(parse_w("1").unwrap(), BigRational::one());
        assert!(parse_w("x/4").is_err());
        assert!(parse_w("3/0").is_err());
        assert_eq!(free_w(2), parse_w("3/4").unwrap());
    }

    #[test]
    fn json_floats_have_seventeen_digits() {
        let s = to_json(&json!({ "x": 0.1, "n": 3, "nan": f64::NAN })).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"n\": 3"));
        assert!(s.contains("null"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64().unwrap(), 0.1);
    }

    #[test]
    fn each_command_runs() {
        let mk = |kind, family: Option<&str>| ExperimentConfig {
            family: family.map(String::from),
            n_max: Some(match kind {
                Command::BrunelTable => 4,
                _ => 20,
            }),
            horizon: Some(6),
            max_log2: Some(match kind {
                Command::Bau => 20,
                _ => 8,
            }),
            seed: 3,
            ..ExperimentConfig::new(kind)
        };
        for cfg in [
            mk(Command::BrunelTable, None),
            mk(Command::MeanLimit, None),
            mk(Command::Sphere, None),
            mk(Command::CertifyMax, Some("zd")),
            mk(Command::CertifyMax, Some("rd")),
            mk(Command::CertifyMax, Some("sphere")),
            mk(Command::Bau, Some("zd")),
        ] {
            let out = run(&cfg).unwrap();
            assert!(out.passed, "{}: {:?}", out.name, out.failures);
            assert!(!out.tables.is_empty());
        }
    }

    #[test]
    fn suite_preserves_order_and_is_reproducible() {
        let manifest = Manifest::from_toml(
            "[[run]]\nkind = \"mean-limit\"\nseed = 1\nmax_log2 = 6\n\n[[run]]\nkind = \"brunel-table\"\nn_max = 3\ntruncation = 20\n\n[[run]]\nkind = \"mean-limit\"\nseed = 2\nmax_log2 = 6\n",
        )
        .unwrap();
        let a = run_suite(&manifest);
        let b = run_suite(&manifest);
        assert_eq!(
            a.iter().map(|o| o.name.as_str()).collect::<Vec<_>>(),
            vec!["mean-limit-1", "brunel-table-0", "mean-limit-2"]
        );
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(to_json(x).unwrap(), to_json(y).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let summary = write_suite(&a, dir.path()).unwrap();
        assert!(summary.passed);
        assert!(dir.path().join("001-brunel-table-0-alpha.csv").exists());
    }

    #[test]
    fn broken_kernel_fails_with_stage_label() {
        let ctx = AlgebraContext::new(linalg::from_real_diagonal(&[1.5, 0.5])).unwrap();
        // the swap does not preserve a non-tracial state
        let swap = linalg::matrix_unit(2, 0, 1) + linalg::matrix_unit(2, 1, 0);
        let bundle = KernelBundle::new(&ctx, &[PositiveMapRep::conjugation(&swap)], None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kernel.json");
        fs::write(&path, serde_json::to_string(&bundle).unwrap()).unwrap();
        let cfg = ExperimentConfig {
            kernel: Some(path),
            ..ExperimentConfig::new(Command::MeanLimit)
        };
        let err = run(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("[kernel]"), "{msg}");
        let outcome = Outcome::from_error(&cfg, &err);
        assert!(!outcome.passed);
    }
}
