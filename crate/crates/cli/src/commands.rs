use std::env;
use std::io::Write;
use std::path::{Path, PathBuf};

use crisp_alloc::analysis::{gamma_grid, nonmonotone_example, trajectory as gamma_trajectory};
use crisp_alloc::core_types::{markowitz_direct, sym_eigen_sorted, to_correlation, CovarianceMatrix, Signal};
use crisp_alloc::dendrogram::{build_tree, LinkageRule};
use crisp_alloc::experiments::presets::{preset_with_seed, run_preset, DEFAULT_SEED};
use crisp_alloc::experiments::{allocate as run_allocator, export_string, AllocInputs, Format, MethodId, MethodSpec, Table};
use crisp_alloc::metrics::{dir, dir_diag, sharpe};
use crisp_alloc::synthetic::{gen_factor_model, gen_regime, gen_signal_for, sector_map, worst_case_mu, RegimeKind, RegimeSpec, SignalSpec};

use crate::config::ConfigFile;
use crate::io;
use crate::{AllocateArgs, Cli, ExperimentArgs, GenArgs, TrajectoryArgs, UniverseArgs, WorstMuArgs};

pub const RESULTS_ENV: &str = "CRISP_ALLOC_RESULTS_DIR";

fn msg<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Options shared by every subcommand after merging flags and config.
pub struct Context {
    pub seed: u64,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn resolve(cli: &Cli, cfg: &ConfigFile) -> Result<Self, String> {
        let format = match cli.format.as_deref().or(cfg.raw("format")) {
            Some(f) => f.parse::<Format>().map_err(msg)?,
            None => Format::Csv,
        };
        if let Some(jobs) = cfg.resolve_opt(cli.jobs, "jobs")? {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| format!("cannot start {jobs} worker threads: {e}"))?;
        }
        Ok(Self {
            seed: cfg.resolve(cli.seed, "seed", DEFAULT_SEED)?,
            format,
            out: cfg.resolve_opt(cli.out.clone(), "out")?,
        })
    }

    /// Writes `text` to `--out`, or to stdout when no path was given.
    fn emit(&self, text: &str) -> Result<(), String> {
        match &self.out {
            Some(p) => io::write_file(p, text.as_bytes()),
            None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(msg),
        }
    }
}

struct Universe {
    sigma: CovarianceMatrix,
    mu: Signal,
    regime: Option<RegimeSpec>,
}

fn regime_spec(ctx: &Context, cfg: &ConfigFile, u: &UniverseArgs) -> Result<Option<RegimeSpec>, String> {
    let Some(kind) = cfg.resolve_opt(u.regime.clone(), "regime")? else {
        return Ok(None);
    };
    let kind: RegimeKind = kind.parse().map_err(msg)?;
    let n = cfg.resolve(u.n, "n", 100)?;
    Ok(Some(RegimeSpec::new(kind, n, ctx.seed)))
}

fn load_universe(ctx: &Context, cfg: &ConfigFile, u: &UniverseArgs) -> Result<Universe, String> {
    let cov = cfg.resolve_opt(u.cov.clone(), "cov")?;
    let regime = if cov.is_some() { None } else { regime_spec(ctx, cfg, u)? };
    let sigma = match (&cov, &regime) {
        (Some(path), _) => io::read_covariance(path)?,
        (None, Some(spec)) => gen_regime(spec).map_err(msg)?,
        (None, None) => return Err("no covariance given; pass --cov FILE or --regime SPEC".into()),
    };
    let mu = match cfg.resolve_opt(u.mu.clone(), "mu")? {
        Some(path) => io::read_signal(&path)?,
        None => {
            let spec: SignalSpec = cfg.resolve_opt(u.signal.clone(), "signal")?.as_deref().unwrap_or("ones").parse().map_err(msg)?;
            gen_signal_for(&spec, &sigma, &sector_map(sigma.n())).map_err(msg)?
        }
    };
    if mu.n() != sigma.n() {
        return Err(format!("signal has {} entries but the covariance is {}×{}", mu.n(), sigma.n(), sigma.n()));
    }
    Ok(Universe { sigma, mu, regime })
}

pub fn allocate(ctx: &Context, cfg: &ConfigFile, a: &AllocateArgs) -> Result<(), String> {
    let id: MethodId = cfg.resolve_opt(a.method.clone(), "method")?.as_deref().unwrap_or("crisp").parse().map_err(msg)?;
    let gamma = cfg.resolve(a.gamma, "gamma", 0.5)?;
    let sweeps = cfg.resolve(a.sweeps, "sweeps", 100)?;
    let eps = cfg.resolve(a.eps, "eps", 1e-8)?;
    let u = load_universe(ctx, cfg, &a.universe)?;

    let tree = if id.needs_tree() {
        Some(build_tree(&to_correlation(&u.sigma).map_err(msg)?, LinkageRule::Ward).map_err(msg)?)
    } else {
        None
    };
    let fm = if id == MethodId::CrispStream {
        let spec = u.regime.as_ref().ok_or("crisp-stream needs a factor model; pass --regime instead of --cov")?;
        Some(gen_factor_model(spec).map_err(msg)?)
    } else {
        None
    };
    let mut inputs = AllocInputs::new(&u.sigma, &u.mu);
    inputs.tree = tree.as_ref();
    inputs.factor_model = fm.as_ref();
    inputs.eps = eps;
    let method = MethodSpec::new(id, gamma, sweeps);
    let w = run_allocator(&method, &inputs).map_err(msg)?;

    let mut table = Table::new("weights", &["asset", "weight"]);
    for (i, x) in w.as_slice().iter().enumerate() {
        table.push(vec![i.into(), (*x).into()]);
    }
    ctx.emit(&export_string(&table, ctx.format).map_err(msg)?)?;

    let direct = markowitz_direct(&u.sigma, &u.mu).map_err(msg)?;
    eprintln!(
        "{}: dir vs direct {:.6e}, sharpe {:.6}, direct sharpe {:.6}",
        method.label(),
        dir(&w, &direct).map_err(msg)?,
        sharpe(&w, &u.sigma, &u.mu).map_err(msg)?,
        sharpe(&direct, &u.sigma, &u.mu).map_err(msg)?
    );
    Ok(())
}

fn results_root(ctx: &Context) -> PathBuf {
    ctx.out
        .clone()
        .or_else(|| env::var_os(RESULTS_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn summary_line(table: &Table, row: &[crisp_alloc::experiments::Value]) -> String {
    let fields: Vec<String> = table.columns.iter().zip(row).map(|(c, v)| format!("{c}={v}")).collect();
    format!("{}: {}", table.name, fields.join(" "))
}

pub fn experiment(ctx: &Context, cfg: &ConfigFile, a: &ExperimentArgs) -> Result<(), String> {
    let full = a.full || cfg.get::<bool>("full")?.unwrap_or(false);
    let mut spec = preset_with_seed(&a.preset, full, ctx.seed).map_err(msg)?;
    if let Some(t) = cfg.resolve_opt(a.trials, "trials")? {
        spec.trials = t;
    }
    let dir = results_root(ctx).join(&spec.name);
    let tables = run_preset(&spec).map_err(|e| format!("{e}; partial results (if any) are in {}", dir.display()))?;
    let mut stdout = std::io::stdout().lock();
    for table in &tables {
        let path = dir.join(format!("{}.{}", table.name, ctx.format.extension()));
        io::write_file(&path, export_string(table, ctx.format).map_err(msg)?.as_bytes())
            .map_err(|e| format!("{e}; partial results are in {}", dir.display()))?;
        for row in &table.rows {
            writeln!(stdout, "{}", summary_line(table, row)).map_err(msg)?;
        }
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

pub fn trajectory(ctx: &Context, cfg: &ConfigFile, a: &TrajectoryArgs) -> Result<(), String> {
    let (sigma, mu) = match a.example.as_deref() {
        Some("nonmonotone") => nonmonotone_example(),
        Some(other) => return Err(format!("unknown example '{other}'; available: nonmonotone")),
        None => {
            let u = load_universe(ctx, cfg, &a.universe)?;
            (u.sigma, u.mu)
        }
    };
    let points = cfg.resolve(a.points, "points", 21)?;
    let sweeps = cfg.resolve(a.sweeps, "sweeps", 100)?;
    if points < 2 {
        return Err("--points must be at least 2".into());
    }
    let pts = gamma_trajectory(&sigma, &mu, &gamma_grid(points), sweeps).map_err(msg)?;
    let mut table = Table::new("trajectory", &["gamma", "dir_exact", "dir_finite_sweep", "dir_slack"]);
    for p in &pts {
        table.push(vec![p.gamma.into(), p.dir_exact.into(), p.dir_finite_sweep.into(), p.dir_slack.into()]);
    }
    ctx.emit(&export_string(&table, ctx.format).map_err(msg)?)
}

pub fn worst_mu(ctx: &Context, cfg: &ConfigFile, a: &WorstMuArgs) -> Result<(), String> {
    let u = load_universe(ctx, cfg, &a.universe)?;
    let restarts = cfg.resolve(a.restarts, "restarts", 32)?;
    let (mu, _) = worst_case_mu(&u.sigma, restarts, ctx.seed).map_err(msg)?;
    ctx.emit(&io::vector_csv(mu.values().as_slice()))?;
    let (_, vecs) = sym_eigen_sorted(u.sigma.matrix());
    let v_min = vecs.column(u.sigma.n() - 1);
    let cos = mu.values().dot(&v_min).abs() / mu.values().norm();
    eprintln!("dir_diag {:.6}, |cos(mu, v_min)| {:.6}", dir_diag(&u.sigma, &mu).map_err(msg)?, cos);
    Ok(())
}

pub fn gen(ctx: &Context, cfg: &ConfigFile, a: &GenArgs) -> Result<(), String> {
    let mut universe = a.universe.clone();
    universe.cov = None;
    universe.mu = None;
    if universe.regime.is_none() && cfg.raw("regime").is_none() {
        universe.regime = Some("block".into());
    }
    let u = load_universe(ctx, cfg, &universe)?;
    ctx.emit(&io::covariance_csv(&u.sigma))?;
    if let Some(path) = &a.mu_out {
        write_signal(path, &u.mu)?;
    }
    Ok(())
}

fn write_signal(path: &Path, mu: &Signal) -> Result<(), String> {
    io::write_file(path, io::vector_csv(mu.values().as_slice()).as_bytes())
}
