//! Named experiment designs.
//!
//! Walk-forward presets (`oos_*`, `a1_pathology`) are plain Monte Carlo runs.
//! The in-sample presets evaluate allocators directly on analytic covariances
//! with the small analytic ridge, and the two grid presets (`sweep_regularization`,
//! `adaptive_calibration`) sweep the CRISP `(γ, p)` plane trial by trial.

use nalgebra::DVector;
use rayon::prelude::*;

use super::export::{Table, Value};
use super::methods::{allocate, AllocInputs, MethodId, MethodSpec};
use super::{cells_table, loglog_slope, mean_std, run_experiment_in, trial_stream, ExperimentSpec, MuEstimator, Universe};
use crate::analysis::{gamma_grid, nonmonotone_example, trajectory};
use crate::core_types::{kappa, preconditioned_kappa, sym_eigen_sorted, to_correlation, CovarianceMatrix, Signal};
use crate::crisp::{crisp_solve, crisp_solve_observed, sweeps_to_tolerance, SweepCount, SweepOrder};
use crate::dendrogram::{build_tree, LinkageRule};
use crate::error::{Error, Result};
use crate::metrics::{dir_diag, dir_vec, sharpe_vec, signed_cosine_vec};
use crate::synthetic::{
    analytic_ridge, gen_regime, gen_signal_for, noisy_signal, sample_cov, sample_returns_rng, sector_map, stream_rng,
    RegimeKind, RegimeSpec, SignalSpec, SAMPLE_RIDGE,
};

/// Every preset name, in presentation order.
pub const PRESET_NAMES: [&str; 12] = [
    "recovery",
    "minvar_direction",
    "graduated",
    "worst_case",
    "sweep_rate",
    "trajectory",
    "oos_sensitivity",
    "oos_structural",
    "oos_minvar",
    "sweep_regularization",
    "adaptive_calibration",
    "a1_pathology",
];

/// The global default seed.
pub const DEFAULT_SEED: u64 = 42;

/// Within-sector correlation of the ill-conditioned block instance used as
/// the hard case (`κ(C) ≈ 3.8e3` at `N = 200`).
pub const HARD_BLOCK_RHO: f64 = 0.9835;

/// How a preset is executed.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// One Monte Carlo table over `(method, T)`.
    WalkForward,
    Recovery,
    MinvarDirection,
    Graduated,
    WorstCase { restarts: usize },
    SweepRate { checkpoints: Vec<usize> },
    Trajectory { sweeps: Vec<usize> },
    /// Walk-forward repeated over Gaussian `μ` seeds and both estimators.
    OosSensitivity { mu_seeds: Vec<u64> },
    SweepRegularization {
        regimes: Vec<RegimeKind>,
        t_over_n: Vec<f64>,
        ics: Vec<Option<f64>>,
        gammas: Vec<f64>,
        sweeps: Vec<usize>,
    },
    AdaptiveCalibration {
        regimes: Vec<RegimeKind>,
        t_over_n: Vec<f64>,
        ics: Vec<f64>,
        grid_points: usize,
        sweeps: usize,
    },
}

fn four_regimes() -> Vec<RegimeKind> {
    vec![
        RegimeKind::Factor { k: 3 },
        RegimeKind::block(),
        RegimeKind::Spiked,
        RegimeKind::Equicorr { rho: 0.6 },
    ]
}

fn hard_block() -> RegimeKind {
    RegimeKind::BlockSector {
        rho_within: HARD_BLOCK_RHO,
        rho_cross: 0.15,
    }
}

fn tournament_methods(p: usize) -> Vec<MethodSpec> {
    let mut m = vec![
        MethodSpec::plain(MethodId::OneOverN),
        MethodSpec::plain(MethodId::Hrp),
        MethodSpec::plain(MethodId::Markowitz),
    ];
    for g in [0.5, 1.0] {
        m.push(MethodSpec::new(MethodId::HrpMu, g, 0));
        m.push(MethodSpec::new(MethodId::HrpSigmaMu, g, 0));
    }
    for g in [0.3, 0.5, 0.7, 1.0] {
        m.push(MethodSpec::new(MethodId::Crisp, g, p));
    }
    m
}

fn minvar_methods(p: usize) -> Vec<MethodSpec> {
    let mut m = vec![
        MethodSpec::plain(MethodId::OneOverN),
        MethodSpec::plain(MethodId::Hrp),
        MethodSpec::plain(MethodId::Markowitz),
    ];
    for g in [0.5, 0.7, 1.0] {
        m.push(MethodSpec::new(MethodId::Cotton, g, 0));
    }
    for g in [0.5, 1.0] {
        m.push(MethodSpec::new(MethodId::HrpSigmaMu, g, 0));
    }
    for g in [0.3, 0.5, 0.7, 1.0] {
        m.push(MethodSpec::new(MethodId::Crisp, g, p));
    }
    m
}

fn in_sample(name: &str, design: Design, regime: RegimeSpec, signal: SignalSpec, seed: u64) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        design,
        regime,
        signal,
        methods: Vec::new(),
        t_values: Vec::new(),
        trials: 1,
        mu_estimator: MuEstimator::Oracle,
        seed,
        ridge: 0.0,
    }
}

/// The preset named `name`. `full` restores the larger trial counts and grids.
pub fn preset(name: &str, full: bool) -> Result<ExperimentSpec> {
    preset_with_seed(name, full, DEFAULT_SEED)
}

pub fn preset_with_seed(name: &str, full: bool, seed: u64) -> Result<ExperimentSpec> {
    let key = name.trim().to_ascii_lowercase().replace('-', "_");
    let spec = match key.as_str() {
        "recovery" => in_sample(&key, Design::Recovery, RegimeSpec::base(200, seed), SignalSpec::Ones, seed),
        "minvar_direction" => in_sample(&key, Design::MinvarDirection, RegimeSpec::base(200, seed), SignalSpec::Ones, seed),
        "graduated" => in_sample(
            &key,
            Design::Graduated,
            RegimeSpec::base(200, seed),
            SignalSpec::Gaussian { sigma_mu: 0.02, seed },
            seed,
        ),
        "worst_case" => in_sample(
            &key,
            Design::WorstCase { restarts: if full { 64 } else { 16 } },
            RegimeSpec::new(RegimeKind::HedgedTightBlocks, 200, seed),
            SignalSpec::WorstCase { restarts: if full { 64 } else { 16 }, seed },
            seed,
        ),
        "sweep_rate" => in_sample(
            &key,
            Design::SweepRate {
                checkpoints: vec![50, 200, 500, 1000, 10_000],
            },
            RegimeSpec::new(RegimeKind::HedgedTightBlocks, 200, seed),
            SignalSpec::WorstCase { restarts: if full { 64 } else { 16 }, seed },
            seed,
        ),
        "trajectory" => in_sample(
            &key,
            Design::Trajectory { sweeps: vec![200, 5000] },
            RegimeSpec::new(hard_block(), 200, seed),
            SignalSpec::WorstCase { restarts: if full { 64 } else { 16 }, seed },
            seed,
        ),
        "oos_sensitivity" => {
            let mut s = ExperimentSpec::walk_forward(
                &key,
                RegimeSpec::base(100, seed),
                SignalSpec::Gaussian { sigma_mu: 0.02, seed: 1 },
                tournament_methods(100),
                vec![120],
                if full { 200 } else { 40 },
                seed,
            );
            s.design = Design::OosSensitivity {
                mu_seeds: (1..=8).collect(),
            };
            s
        }
        "oos_structural" => ExperimentSpec::walk_forward(
            &key,
            RegimeSpec::base(100, seed),
            SignalSpec::structural(),
            tournament_methods(100),
            vec![60, 120, 240],
            if full { 500 } else { 80 },
            seed,
        ),
        "oos_minvar" => ExperimentSpec::walk_forward(
            &key,
            RegimeSpec::base(100, seed),
            SignalSpec::Ones,
            minvar_methods(100),
            vec![60, 120, 240, 500],
            if full { 500 } else { 80 },
            seed,
        ),
        "a1_pathology" => ExperimentSpec::walk_forward(
            &key,
            RegimeSpec::base(100, seed),
            SignalSpec::structural(),
            vec![MethodSpec::new(MethodId::A1, 0.5, 0), MethodSpec::new(MethodId::HrpMu, 0.5, 0)],
            vec![60, 240, 1000],
            60,
            seed,
        ),
        "sweep_regularization" => {
            let n = if full { 100 } else { 50 };
            let mut s = ExperimentSpec::walk_forward(
                &key,
                RegimeSpec::base(n, seed),
                SignalSpec::Gaussian { sigma_mu: 0.02, seed: 1 },
                Vec::new(),
                Vec::new(),
                if full { 200 } else { 40 },
                seed,
            );
            s.design = Design::SweepRegularization {
                regimes: four_regimes(),
                t_over_n: vec![0.6, 1.0, 2.0, 5.0],
                ics: vec![None, Some(0.05)],
                gammas: vec![0.3, 0.5, 0.7, 1.0],
                sweeps: vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000],
            };
            s
        }
        "adaptive_calibration" => {
            let n = if full { 100 } else { 50 };
            let mut s = ExperimentSpec::walk_forward(
                &key,
                RegimeSpec::base(n, seed),
                SignalSpec::Gaussian { sigma_mu: 0.02, seed: 1 },
                Vec::new(),
                Vec::new(),
                if full { 500 } else { 100 },
                seed,
            );
            s.design = Design::AdaptiveCalibration {
                regimes: four_regimes(),
                t_over_n: vec![0.6, 1.0, 2.0, 5.0],
                ics: vec![0.02, 0.05, 0.10],
                grid_points: if full { 51 } else { 11 },
                sweeps: 100,
            };
            s
        }
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(spec)
}

/// Runs a preset spec and returns its tables.
pub fn run_preset(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    spec.validate()?;
    match &spec.design {
        Design::WalkForward => {
            let universe = Universe::build(&spec.regime, &spec.signal)?;
            Ok(vec![cells_table("cells", &run_experiment_in(spec, &universe)?)])
        }
        Design::Recovery => recovery(spec),
        Design::MinvarDirection => minvar_direction(spec),
        Design::Graduated => graduated(spec),
        Design::WorstCase { .. } => worst_case(spec),
        Design::SweepRate { checkpoints } => sweep_rate(spec, checkpoints),
        Design::Trajectory { sweeps } => trajectory_tables(spec, sweeps),
        Design::OosSensitivity { mu_seeds } => oos_sensitivity(spec, mu_seeds),
        Design::SweepRegularization {
            regimes,
            t_over_n,
            ics,
            gammas,
            sweeps,
        } => sweep_regularization(spec, regimes, t_over_n, ics, gammas, sweeps),
        Design::AdaptiveCalibration {
            regimes,
            t_over_n,
            ics,
            grid_points,
            sweeps,
        } => adaptive_calibration(spec, regimes, t_over_n, ics, *grid_points, *sweeps),
    }
}

/// Analytic covariance of a regime with the small in-sample ridge added.
pub fn analytic_sigma(regime: &RegimeSpec) -> Result<CovarianceMatrix> {
    let s = gen_regime(regime)?;
    s.with_ridge(analytic_ridge(&s))
}

fn analytic_instance(regime: &RegimeSpec, signal: &SignalSpec) -> Result<(CovarianceMatrix, Signal)> {
    let sigma = analytic_sigma(regime)?;
    let mu = gen_signal_for(signal, &sigma, &sector_map(regime.n))?;
    Ok((sigma, mu))
}

fn sum_normalized(w: &DVector<f64>) -> DVector<f64> {
    w / w.sum()
}

fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn recovery(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    let sigma = analytic_sigma(&spec.regime)?;
    let ones = Signal::ones(sigma.n());
    let tree = build_tree(&to_correlation(&sigma)?, LinkageRule::Ward)?;
    let inputs = AllocInputs::new(&sigma, &ones).with_tree(&tree);
    let hrp = sum_normalized(allocate(&MethodSpec::plain(MethodId::Hrp), &inputs)?.values());
    let mut t = Table::new("recovery", &["method", "gamma", "reference", "rel_diff", "cos", "verdict"]);
    let rows = [
        (MethodId::A2, 0.0),
        (MethodId::HrpMu, 0.0),
        (MethodId::HrpSigmaMu, 0.0),
        (MethodId::Cotton, 0.0),
        (MethodId::A1, 0.0),
    ];
    for (id, g) in rows {
        let w = sum_normalized(allocate(&MethodSpec::new(id, g, 0), &inputs)?.values());
        let rd = rel_diff(&w, &hrp);
        let cos = signed_cosine_vec(&w, &hrp)?;
        let verdict = if rd < 1e-12 {
            "match"
        } else if cos > 0.99 {
            "close"
        } else {
            "differs"
        };
        t.push(vec![id.name().into(), g.into(), "hrp".into(), rd.into(), cos.into(), verdict.into()]);
    }
    Ok(vec![t])
}

fn minvar_direction(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    let sigma = analytic_sigma(&spec.regime)?;
    let ones = Signal::ones(sigma.n());
    let tree = build_tree(&to_correlation(&sigma)?, LinkageRule::Ward)?;
    let inputs = AllocInputs::new(&sigma, &ones).with_tree(&tree);
    let target = sigma.solve(ones.values())?;
    let methods = [
        (MethodId::Cotton, 0),
        (MethodId::Crisp, 200),
        (MethodId::A2, 0),
        (MethodId::HrpMu, 0),
        (MethodId::A1, 0),
    ];
    let mut t = Table::new("minvar_direction", &["method", "gamma", "p", "dir"]);
    for (id, p) in methods {
        for g in [0.0, 0.3, 0.5, 0.7, 1.0] {
            let w = allocate(&MethodSpec::new(id, g, p), &inputs)?;
            t.push(vec![id.name().into(), g.into(), p.into(), dir_vec(w.values(), &target)?.into()]);
        }
    }
    Ok(vec![t])
}

fn graduated(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    let n = spec.regime.n;
    let seed = spec.seed;
    let restarts = 16;
    let panels: Vec<(&str, RegimeSpec, SignalSpec)> = vec![
        ("a", RegimeSpec::base(n, seed), spec.signal.clone()),
        ("b", RegimeSpec::new(RegimeKind::Factor { k: 3 }, n, seed), spec.signal.clone()),
        ("c", RegimeSpec::new(RegimeKind::HedgedTightBlocks, n, seed), spec.signal.clone()),
        (
            "d",
            RegimeSpec::new(RegimeKind::HedgedTightBlocks, n, seed),
            SignalSpec::WorstCase { restarts, seed },
        ),
    ];
    let mut t = Table::new(
        "graduated",
        &["panel", "regime", "signal", "kappa_c", "dir_diag", "method", "gamma", "dir"],
    );
    for (panel, regime, signal) in panels {
        let (sigma, mu) = analytic_instance(&regime, &signal)?;
        let tree = build_tree(&to_correlation(&sigma)?, LinkageRule::Ward)?;
        let inputs = AllocInputs::new(&sigma, &mu).with_tree(&tree);
        let w_star = sigma.solve(mu.values())?;
        let kc = kappa(&to_correlation(&sigma)?)?;
        let dd = dir_diag(&sigma, &mu)?;
        for (id, p) in [(MethodId::A1, 0), (MethodId::HrpSigmaMu, 0), (MethodId::Crisp, 200)] {
            for g in [0.0, 1.0] {
                let w = allocate(&MethodSpec::new(id, g, p), &inputs)?;
                t.push(vec![
                    panel.into(),
                    regime.kind.to_string().into(),
                    signal.to_string().into(),
                    kc.into(),
                    dd.into(),
                    MethodSpec::new(id, g, p).label().into(),
                    g.into(),
                    dir_vec(w.values(), &w_star)?.into(),
                ]);
            }
        }
    }
    Ok(vec![t])
}

fn worst_case(spec: &ExperimentSpec) -> Result<Vec<Table>> {
    let n = spec.regime.n;
    let instances = [
        ("hedged", spec.regime.clone()),
        ("hard_block", RegimeSpec::new(hard_block(), n, spec.seed)),
    ];
    let mut t = Table::new(
        "worst_case",
        &["instance", "kappa_sigma", "kappa_c", "dir_diag", "abs_cos_mu_vmin"],
    );
    for (name, regime) in instances {
        let (sigma, mu) = analytic_instance(&regime, &spec.signal)?;
        let (vals, vecs) = sym_eigen_sorted(sigma.matrix());
        let v_min = vecs.column(vals.len() - 1).into_owned();
        let cos = signed_cosine_vec(mu.values(), &v_min)?.abs();
        t.push(vec![
            name.into(),
            (vals[0] / vals[vals.len() - 1]).into(),
            kappa(&to_correlation(&sigma)?)?.into(),
            dir_diag(&sigma, &mu)?.into(),
            cos.into(),
        ]);
    }
    Ok(vec![t])
}

/// Regimes and shrinkage levels of the sweeps-versus-conditioning fit.
pub fn sweep_fit_instances(n: usize, seed: u64) -> Vec<(RegimeSpec, f64)> {
    let regimes = [
        RegimeKind::block(),
        RegimeKind::Factor { k: 3 },
        RegimeKind::Spiked,
        RegimeKind::Equicorr { rho: 0.6 },
        RegimeKind::BlockSector {
            rho_within: 0.9,
            rho_cross: 0.15,
        },
    ];
    let mut out = Vec::new();
    for kind in regimes {
        for g in [0.2, 0.4, 0.6, 0.8, 1.0] {
            out.push((RegimeSpec::new(kind.clone(), n, seed), g));
        }
    }
    out
}

/// Sweeps to a `1e-10` relative residual against `κ(D⁻¹P_γ)` over
/// [`sweep_fit_instances`], with the log-log slope.
pub fn sweeps_vs_kappa(n: usize, seed: u64) -> Result<(Table, f64)> {
    let inst = sweep_fit_instances(n, seed);
    let rows = inst
        .par_iter()
        .map(|(regime, g)| {
            let sigma = gen_regime(regime)?;
            let mu = gen_signal_for(&SignalSpec::Gaussian { sigma_mu: 0.02, seed }, &sigma, &sector_map(n))?;
            let k = preconditioned_kappa(&sigma, *g)?;
            let s = sweeps_to_tolerance(&sigma, &mu, *g, 1e-10)?;
            Ok((regime.kind.to_string(), *g, k, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new("sweeps_vs_kappa", &["regime", "gamma", "kappa_pre", "sweeps"]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (name, g, k, s) in rows {
        let sweeps = match s {
            SweepCount::Converged(p) => p,
            SweepCount::NotConverged { cap, .. } => cap,
        };
        xs.push(k);
        ys.push(sweeps as f64);
        t.push(vec![name.into(), g.into(), k.into(), sweeps.into()]);
    }
    let slope = loglog_slope(&xs, &ys)?;
    Ok((t, slope))
}

fn sweep_rate(spec: &ExperimentSpec, checkpoints: &[usize]) -> Result<Vec<Table>> {
    let (sigma, mu) = analytic_instance(&spec.regime, &spec.signal)?;
    let w_star = sigma.solve(mu.values())?;
    let p_max = checkpoints.iter().copied().max().unwrap_or(1);
    let mut hits: Vec<(usize, f64)> = Vec::new();
    let mut err = None;
    crisp_solve_observed(&sigma, &mu, 1.0, p_max, f64::MIN_POSITIVE, &SweepOrder::Natural, |p, w| {
        if checkpoints.contains(&p) {
            match dir_vec(w, &w_star) {
                Ok(d) => hits.push((p, d)),
                Err(e) => err = Some(e),
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let mut t = Table::new("sweep_rate", &["p", "dir"]);
    for (p, d) in hits {
        t.push(vec![p.into(), d.into()]);
    }
    let (fit, slope) = sweeps_vs_kappa(100, spec.seed)?;
    let mut summary = Table::new("sweeps_vs_kappa_fit", &["points", "loglog_slope"]);
    summary.push(vec![fit.rows.len().into(), slope.into()]);
    Ok(vec![t, fit, summary])
}

fn trajectory_tables(spec: &ExperimentSpec, sweeps: &[usize]) -> Result<Vec<Table>> {
    let (sigma, mu) = analytic_instance(&spec.regime, &spec.signal)?;
    let gammas = gamma_grid(11);
    let mut cols = vec!["gamma".to_string(), "dir_direct".to_string()];
    cols.extend(sweeps.iter().map(|p| format!("dir_p{p}")));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new("trajectory", &col_refs);
    let runs = sweeps
        .iter()
        .map(|&p| trajectory(&sigma, &mu, &gammas, p))
        .collect::<Result<Vec<_>>>()?;
    for (i, &g) in gammas.iter().enumerate() {
        let mut row: Vec<Value> = vec![g.into(), runs[0][i].dir_exact.into()];
        row.extend(runs.iter().map(|r| Value::from(r[i].dir_finite_sweep)));
        t.push(row);
    }
    let (s4, m4) = nonmonotone_example();
    let mut ex = Table::new("nonmonotone_example", &["gamma", "dir_exact"]);
    for pt in trajectory(&s4, &m4, &gamma_grid(21), 1)? {
        ex.push(vec![pt.gamma.into(), pt.dir_exact.into()]);
    }
    Ok(vec![t, ex])
}

fn oos_sensitivity(spec: &ExperimentSpec, mu_seeds: &[u64]) -> Result<Vec<Table>> {
    let sigma = gen_regime(&spec.regime)?;
    let sectors = sector_map(spec.regime.n);
    let mut all = Vec::new();
    let mut raw = Table::new(
        "per_seed",
        &["estimator", "mu_seed", "method", "mean_sharpe", "se_sharpe", "oracle_sharpe"],
    );
    for est in [MuEstimator::Oracle, MuEstimator::SampleMean] {
        for &ms in mu_seeds {
            let signal = SignalSpec::Gaussian { sigma_mu: 0.02, seed: ms };
            let mu = gen_signal_for(&signal, &sigma, &sectors)?;
            let universe = Universe::from_parts(sigma.clone(), mu, sectors.clone())?;
            let mut s = spec.clone();
            s.design = Design::WalkForward;
            s.signal = signal;
            s.mu_estimator = est;
            for c in run_experiment_in(&s, &universe)? {
                raw.push(vec![
                    est.name().into(),
                    (ms as usize).into(),
                    c.method.label().into(),
                    c.mean_sharpe.into(),
                    c.se_sharpe().into(),
                    c.oracle_sharpe.into(),
                ]);
                all.push((est, c));
            }
        }
    }
    let mut summary = Table::new(
        "summary",
        &["estimator", "method", "mean", "min", "max", "n_pos", "n_seeds"],
    );
    for est in [MuEstimator::Oracle, MuEstimator::SampleMean] {
        for m in &spec.methods {
            let v: Vec<f64> = all
                .iter()
                .filter(|(e, c)| *e == est && c.method == *m)
                .map(|(_, c)| c.mean_sharpe)
                .collect();
            let (mean, _) = mean_std(&v);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let n_pos = v.iter().filter(|&&x| x > 0.0).count();
            summary.push(vec![
                est.name().into(),
                m.label().into(),
                mean.into(),
                min.into(),
                max.into(),
                n_pos.into(),
                v.len().into(),
            ]);
        }
    }
    Ok(vec![summary, raw])
}

/// Per-trial `(Σ̂, μ̂)` under the shared trial protocol.
fn draw_estimates(
    universe: &Universe,
    t: usize,
    trial: usize,
    seed: u64,
    ic: Option<f64>,
) -> Result<(CovarianceMatrix, Signal)> {
    let mut rng = stream_rng(seed, trial_stream(t, trial));
    let r = sample_returns_rng(&universe.sigma, &universe.mu, t, &mut rng)?;
    let sigma_hat = sample_cov(&r, SAMPLE_RIDGE)?;
    let mu_hat = match ic {
        None => universe.mu.clone(),
        Some(ic) => noisy_signal(&universe.mu, ic, &mut rng)?,
    };
    Ok((sigma_hat, mu_hat))
}

/// Mean OOS Sharpe of the CRISP iterate at every `(γ, p)` checkpoint.
fn surface_cell(
    universe: &Universe,
    t: usize,
    trials: usize,
    seed: u64,
    ic: Option<f64>,
    gammas: &[f64],
    sweeps: &[usize],
) -> Result<Vec<Vec<(f64, f64)>>> {
    let p_max = sweeps.iter().copied().max().unwrap_or(1);
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let (sigma_hat, mu_hat) = draw_estimates(universe, t, trial, seed, ic)?;
            let mut out = vec![vec![f64::NAN; sweeps.len()]; gammas.len()];
            for (gi, &g) in gammas.iter().enumerate() {
                crisp_solve_observed(&sigma_hat, &mu_hat, g, p_max, f64::MIN_POSITIVE, &SweepOrder::Natural, |p, w| {
                    if let Some(k) = sweeps.iter().position(|&q| q == p) {
                        out[gi][k] = sharpe_vec(w, &universe.sigma, &universe.mu).unwrap_or(f64::NAN);
                    }
                })?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..gammas.len())
        .map(|gi| {
            (0..sweeps.len())
                .map(|k| {
                    let v: Vec<f64> = per_trial.iter().map(|o| o[gi][k]).filter(|x| x.is_finite()).collect();
                    let (m, s) = mean_std(&v);
                    (m, s / (v.len() as f64).sqrt())
                })
                .collect()
        })
        .collect())
}

fn sweep_regularization(
    spec: &ExperimentSpec,
    regimes: &[RegimeKind],
    t_over_n: &[f64],
    ics: &[Option<f64>],
    gammas: &[f64],
    sweeps: &[usize],
) -> Result<Vec<Table>> {
    let n = spec.regime.n;
    let mut surface = Table::new(
        "surface",
        &["regime", "t_over_n", "T", "signal", "gamma", "p", "mean_sharpe", "se_sharpe", "oracle_sharpe"],
    );
    for kind in regimes {
        let regime = RegimeSpec::new(kind.clone(), n, spec.seed);
        let universe = Universe::build(&regime, &spec.signal)?;
        for &ratio in t_over_n {
            let t = ((ratio * n as f64).round() as usize).max(2);
            for &ic in ics {
                let cell = surface_cell(&universe, t, spec.trials, spec.seed, ic, gammas, sweeps)?;
                let label = ic.map_or_else(|| "oracle".to_string(), |v| format!("noisy_ic={v}"));
                for (gi, &g) in gammas.iter().enumerate() {
                    for (k, &p) in sweeps.iter().enumerate() {
                        let (m, se) = cell[gi][k];
                        surface.push(vec![
                            kind.to_string().into(),
                            ratio.into(),
                            t.into(),
                            label.clone().into(),
                            g.into(),
                            p.into(),
                            m.into(),
                            se.into(),
                            universe.oracle_sharpe.into(),
                        ]);
                    }
                }
            }
        }
    }
    Ok(vec![surface, convergence_table(n, spec.seed)?])
}

/// Mean sweeps to a `1e-10` residual against `γ` on the base universe,
/// averaged over a handful of Gaussian signals.
pub fn convergence_table(n: usize, seed: u64) -> Result<Table> {
    let sigma = gen_regime(&RegimeSpec::base(n, seed))?;
    let sectors = sector_map(n);
    let gammas = [0.0, 0.3, 0.5, 0.7, 0.9, 1.0];
    let mut t = Table::new("convergence", &["gamma", "kappa_pre", "mean_sweeps", "max_sweeps"]);
    for g in gammas {
        let counts = (1..=5u64)
            .into_par_iter()
            .map(|s| {
                let mu = gen_signal_for(&SignalSpec::Gaussian { sigma_mu: 0.02, seed: s }, &sigma, &sectors)?;
                Ok(match sweeps_to_tolerance(&sigma, &mu, g, 1e-10)? {
                    SweepCount::Converged(p) => p,
                    SweepCount::NotConverged { cap, .. } => cap,
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        t.push(vec![
            g.into(),
            preconditioned_kappa(&sigma, g)?.into(),
            mean.into(),
            counts.iter().copied().max().unwrap_or(0).into(),
        ]);
    }
    Ok(t)
}

/// Fraction of grid points whose value is within 2% of the peak.
pub fn plateau_width(values: &[f64]) -> f64 {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let thr = peak - 0.02 * peak.abs();
    values.iter().filter(|&&v| v >= thr).count() as f64 / values.len() as f64
}

/// Grid-search fit of `c` in `γ⋆ = 1/(1 + c·NSR)` by least squares,
/// returning `(c, R²)`.
pub fn fit_calibration_constant(nsr: &[f64], gamma_emp: &[f64]) -> Result<(f64, f64)> {
    if nsr.len() != gamma_emp.len() || nsr.is_empty() {
        return Err(Error::Parameter("need paired, non-empty calibration data".into()));
    }
    let sse = |c: f64| -> f64 {
        nsr.iter()
            .zip(gamma_emp)
            .map(|(x, y)| {
                let r = y - 1.0 / (1.0 + c * x);
                r * r
            })
            .sum()
    };
    let mut best = (f64::NAN, f64::INFINITY);
    for i in 0..=1200 {
        let c = 10f64.powf(-8.0 + i as f64 * 0.01);
        let e = sse(c);
        if e < best.1 {
            best = (c, e);
        }
    }
    let mean = gamma_emp.iter().sum::<f64>() / gamma_emp.len() as f64;
    let sst: f64 = gamma_emp.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2 = if sst == 0.0 { f64::NAN } else { 1.0 - best.1 / sst };
    Ok((best.0, r2))
}

fn adaptive_calibration(
    spec: &ExperimentSpec,
    regimes: &[RegimeKind],
    t_over_n: &[f64],
    ics: &[f64],
    grid_points: usize,
    sweeps: usize,
) -> Result<Vec<Table>> {
    let n = spec.regime.n;
    let gammas = gamma_grid(grid_points);
    let mut cells = Table::new(
        "cells",
        &["regime", "t_over_n", "T", "ic", "kappa_c", "nsr", "gamma_emp", "peak_sharpe", "plateau_width"],
    );
    let mut nsrs = Vec::new();
    let mut gs = Vec::new();
    let mut plateaus = Vec::new();
    let mut half_inside = 0usize;
    for kind in regimes {
        let regime = RegimeSpec::new(kind.clone(), n, spec.seed);
        let universe = Universe::build(&regime, &spec.signal)?;
        let kc = kappa(&to_correlation(&universe.sigma)?)?;
        for &ratio in t_over_n {
            let t = ((ratio * n as f64).round() as usize).max(2);
            for &ic in ics {
                let surf = surface_cell(&universe, t, spec.trials, spec.seed, Some(ic), &gammas, &[sweeps])?;
                let curve: Vec<f64> = surf.iter().map(|row| row[0].0).collect();
                let (best, peak) = curve
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                let g_emp = gammas[best];
                let width = plateau_width(&curve);
                let half = gammas.iter().position(|&g| (g - 0.5).abs() < 1e-12);
                if let Some(h) = half {
                    if curve[h] >= peak - 0.02 * peak.abs() {
                        half_inside += 1;
                    }
                }
                let nsr = kc * kc * n as f64 / (t as f64 * ic * ic);
                nsrs.push(nsr);
                gs.push(g_emp);
                plateaus.push(width);
                cells.push(vec![
                    kind.to_string().into(),
                    ratio.into(),
                    t.into(),
                    ic.into(),
                    kc.into(),
                    nsr.into(),
                    g_emp.into(),
                    peak.into(),
                    width.into(),
                ]);
            }
        }
    }
    let (c, r2) = fit_calibration_constant(&nsrs, &gs)?;
    let mut sorted = plateaus.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut fit = Table::new(
        "fit",
        &["cells", "c", "r2", "median_plateau_width", "gamma_half_on_plateau"],
    );
    fit.push(vec![
        nsrs.len().into(),
        c.into(),
        r2.into(),
        median.into(),
        (half_inside as f64 / nsrs.len() as f64).into(),
    ]);
    Ok(vec![cells, fit])
}

/// Exact `P_γ⁻¹μ` via a converged CRISP solve.
pub fn converged_crisp(sigma: &CovarianceMatrix, mu: &Signal, gamma: f64) -> Result<DVector<f64>> {
    Ok(crisp_solve(sigma, mu, gamma, 200_000, 1e-14, &SweepOrder::Natural)?.weights.into_values())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for name in PRESET_NAMES {
            let s = preset(name, false).unwrap();
            assert_eq!(s.name, name);
            assert!(s.trials >= 1);
        }
        assert_eq!(preset("oos_minvar", false).unwrap().trials, 80);
        assert_eq!(preset("a1_pathology", false).unwrap().trials, 60);
        assert_eq!(preset("oos_sensitivity", false).unwrap().trials, 40);
    }

    #[test]
    fn unknown_preset_lists_options() {
        match preset("nope", false) {
            Err(Error::UnknownPreset { valid, .. }) => {
                for n in PRESET_NAMES {
                    assert!(valid.contains(n));
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_scale_restores_grid() {
        match preset("adaptive_calibration", true).unwrap().design {
            Design::AdaptiveCalibration { grid_points, .. } => assert_eq!(grid_points, 51),
            d => panic!("{d:?}"),
        }
        assert_eq!(preset("adaptive_calibration", false).unwrap().trials, 100);
        assert_eq!(preset("adaptive_calibration", true).unwrap().trials, 500);
    }

    #[test]
    fn recovery_table_has_exact_match_row() {
        let tables = run_preset(&preset("recovery", false).unwrap()).unwrap();
        let t = &tables[0];
        let rd = t.column_index("rel_diff").unwrap();
        for name in ["a2", "hrp-mu"] {
            let row = t.rows_where("method", name).next().unwrap();
            assert!(row[rd].as_f64().unwrap() < 1e-12, "{name}");
        }
    }

    #[test]
    fn minvar_direction_endpoints() {
        let tables = run_preset(&preset("minvar_direction", false).unwrap()).unwrap();
        let t = &tables[0];
        let (gi, di) = (t.column_index("gamma").unwrap(), t.column_index("dir").unwrap());
        for r in t.rows_where("method", "cotton") {
            if r[gi].as_f64() == Some(1.0) {
                assert!(r[di].as_f64().unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn plateau_and_fit_helpers() {
        assert_eq!(plateau_width(&[1.0, 0.99, 0.5, 0.1]), 0.5);
        let nsr = [0.1, 1.0, 10.0, 100.0];
        let g: Vec<f64> = nsr.iter().map(|x| 1.0 / (1.0 + 0.05 * x)).collect();
        let (c, r2) = fit_calibration_constant(&nsr, &g).unwrap();
        assert!((c / 0.05 - 1.0).abs() < 0.03);
        assert!(r2 > 0.999);
    }

    #[test]
    fn convergence_starts_at_one_sweep() {
        let t = convergence_table(30, 42).unwrap();
        let mi = t.column_index("mean_sweeps").unwrap();
        assert_eq!(t.rows[0][mi].as_f64(), Some(1.0));
        let v: Vec<f64> = t.rows.iter().map(|r| r[mi].as_f64().unwrap()).collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]), "{v:?}");
    }
}
