use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncergodic::runner::{self, Command, ExperimentConfig, Manifest, Outcome};
use ncergodic::Error;

#[derive(Parser)]
#[command(name = "ncergodic", version, about = "Ergodic averages, maximal certificates and b.a.u. convergence on matrix algebras")]
struct Cli {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report path (JSON; CSV tables are written next to it). A directory for `suite`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct Fields {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    /// Rational "p/q" in (1/2, 1].
    #[arg(long)]
    w: Option<String>,
    /// zd, rd or sphere.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    tail_tol: Option<f64>,
    /// Brunel truncation Λ.
    #[arg(long)]
    truncation: Option<u64>,
    #[arg(long)]
    max_log2: Option<u32>,
    #[arg(long)]
    direct: bool,
    /// Kernel bundle JSON.
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact Brunel coefficients, row sums and the positivity table.
    BrunelTable(Fields),
    /// Maximal-inequality certificate for one (kernel, μ, ε).
    CertifyMax(Fields),
    /// Mean ergodic limit by both routes, with the rate table.
    MeanLimit(Fields),
    /// Free-group sphere checks: A2, transfer coefficients, decay.
    Sphere(Fields),
    /// End-to-end b.a.u. experiment.
    Bau {
        /// zd, rd or sphere.
        #[arg(long)]
        kind: Option<String>,
        #[command(flatten)]
        fields: Fields,
    },
    /// Run a manifest of experiments (the default suite without one).
    Suite {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run one experiment from a config file and/or flags.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Experiment kind: brunel-table, certify-max, mean-limit, sphere or bau.
        #[arg(long)]
        kind: Option<String>,
        #[command(flatten)]
        fields: Fields,
    },
}

fn apply(cfg: &mut ExperimentConfig, f: Fields) {
    macro_rules! set {
        ($($name:ident),*) => { $( if f.$name.is_some() { cfg.$name = f.$name; } )* };
    }
    set!(k, d, r, w, family, epsilon, horizon, n_max, tail_tol, truncation, max_log2, kernel, name);
    if f.direct {
        cfg.direct = Some(true);
    }
}

enum Plan {
    Single(ExperimentConfig, Option<PathBuf>),
    Suite(Option<PathBuf>, Option<PathBuf>),
}

fn build(cli: Cli) -> Result<Plan, Error> {
    let mut cfg = match cli.cmd {
        Cmd::Suite { manifest } => return Ok(Plan::Suite(manifest, cli.out)),
        Cmd::BrunelTable(f) => with(Command::BrunelTable, f),
        Cmd::CertifyMax(f) => with(Command::CertifyMax, f),
        Cmd::MeanLimit(f) => with(Command::MeanLimit, f),
        Cmd::Sphere(f) => with(Command::Sphere, f),
        Cmd::Bau { kind, fields } => {
            let mut cfg = with(Command::Bau, fields);
            if kind.is_some() {
                cfg.family = kind;
            }
            cfg
        }
        Cmd::Run { config, kind, fields } => {
            let mut cfg = match (&config, &kind) {
                (Some(path), _) => ExperimentConfig::load(path)?,
                (None, Some(k)) => ExperimentConfig::new(Command::parse(k)?),
                (None, None) => {
                    return Err(Error::Config("run needs --config or --kind".into()));
                }
            };
            if let (Some(_), Some(k)) = (&config, &kind) {
                cfg.kind = Command::parse(k)?;
            }
            apply(&mut cfg, fields);
            cfg
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.tol.is_some() {
        cfg.tol = cli.tol;
    }
    let out = cli.out.or_else(|| cfg.out.clone());
    cfg.validate()?;
    Ok(Plan::Single(cfg, out))
}

fn with(kind: Command, f: Fields) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind);
    apply(&mut cfg, f);
    cfg
}

fn emit(outcome: &Outcome, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("bad output path {}", path.display())))?;
            outcome.write(dir, stem)?;
        }
        None => print!("{}", runner::to_json(&outcome.artifact())?),
    }
    Ok(())
}

fn report_failures(outcome: &Outcome) {
    for f in &outcome.failures {
        eprintln!("FAIL {}: {f}", outcome.name);
    }
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed;
    let plan = match build(cli) {
        Ok(p) => p,
        Err(e) => return exit_for(&e),
    };
    match plan {
        Plan::Single(cfg, out) => {
            let outcome = match runner::run(&cfg) {
                Ok(o) => o,
                Err(e @ Error::Config(_)) => return exit_for(&e),
                Err(e) => Outcome::from_error(&cfg, &e),
            };
            if let Err(e) = emit(&outcome, out.as_deref()) {
                return exit_for(&e);
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                report_failures(&outcome);
                ExitCode::from(1)
            }
        }
        Plan::Suite(manifest, out) => {
            let mut m = match manifest {
                Some(path) => match Manifest::load(&path) {
                    Ok(m) => m,
                    Err(e) => return exit_for(&e),
                },
                None => Manifest::default_suite(),
            };
            if let Some(s) = seed {
                for cfg in &mut m.run {
                    cfg.seed = s;
                }
            }
            let dir = out.unwrap_or_else(|| PathBuf::from("suite-out"));
            let outcomes = runner::run_suite(&m);
            match runner::write_suite(&outcomes, &dir) {
                Ok(summary) => {
                    for o in &outcomes {
                        println!("{} {}", if o.passed { "PASS" } else { "FAIL" }, o.name);
                        report_failures(o);
                    }
                    if summary.passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}
