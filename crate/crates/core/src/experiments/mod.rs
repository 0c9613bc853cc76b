//! Walk-forward Monte Carlo harness.
//!
//! A trial draws `T` returns from `N(μ, Σ)`, estimates `Σ̂` (sample covariance
//! plus ridge) and `μ̂`, rebuilds the Ward tree from `Σ̂`, runs every method and
//! scores it under the true `(Σ, μ)`. Trials run in parallel on independent
//! RNG streams keyed by `(T, trial)`; aggregation sorts per-trial values before
//! summing, so cell statistics do not depend on scheduling.

pub mod export;
pub mod methods;
pub mod presets;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::core_types::{markowitz_direct, to_correlation, CovarianceMatrix, Signal, WeightVector};
use crate::dendrogram::{build_tree, Dendrogram, LinkageRule};
use crate::error::{Error, Result};
use crate::metrics::{minvar_sharpe_sum1_vec, sharpe_vec, signed_cosine_vec};
use crate::synthetic::{
    gen_regime, gen_signal_for, noisy_signal, sample_cov, sample_mean, sample_returns_rng, sector_map, stream_rng,
    RegimeSpec, SignalSpec, SAMPLE_RIDGE,
};

pub use export::{export, export_string, parse_delimited, Format, Table, Value};
pub use methods::{allocate, AllocInputs, MethodId, MethodSpec};
pub use presets::{preset, run_preset, Design, PRESET_NAMES};

/// Realized OOS volatility above this multiple of the oracle min-var
/// volatility marks a trial unstable.
pub const INSTABILITY_VOL_RATIO: f64 = 5.0;

/// How the allocator's `μ̂` is formed in each trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuEstimator {
    /// The true `μ`.
    Oracle,
    /// Column means of the `T` draws.
    SampleMean,
    /// `μ + ε` with the noise level implied by the information coefficient.
    NoisyIc(f64),
}

impl MuEstimator {
    pub fn name(&self) -> String {
        match self {
            MuEstimator::Oracle => "oracle".into(),
            MuEstimator::SampleMean => "sample_mean".into(),
            MuEstimator::NoisyIc(ic) => format!("noisy_ic={ic}"),
        }
    }
}

/// A fully populated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub design: Design,
    pub regime: RegimeSpec,
    pub signal: SignalSpec,
    pub methods: Vec<MethodSpec>,
    pub t_values: Vec<usize>,
    pub trials: usize,
    pub mu_estimator: MuEstimator,
    pub seed: u64,
    pub ridge: f64,
}

impl ExperimentSpec {
    /// A walk-forward spec with the default sample ridge.
    pub fn walk_forward(
        name: impl Into<String>,
        regime: RegimeSpec,
        signal: SignalSpec,
        methods: Vec<MethodSpec>,
        t_values: Vec<usize>,
        trials: usize,
        seed: u64,
    ) -> Self {
        Self {
            name: name.into(),
            design: Design::WalkForward,
            regime,
            signal,
            methods,
            t_values,
            trials,
            mu_estimator: MuEstimator::Oracle,
            seed,
            ridge: SAMPLE_RIDGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if self.design == Design::WalkForward {
            if self.methods.is_empty() {
                return Err(Error::Parameter("no methods listed".into()));
            }
            if let Some(t) = self.t_values.iter().find(|&&t| t < 2) {
                return Err(Error::Parameter(format!("sample length {t} < 2")));
            }
        }
        if self.methods.iter().any(|m| m.id == MethodId::CrispStream) {
            return Err(Error::Parameter(
                "crisp-stream needs a factor model and is not available on sample covariances".into(),
            ));
        }
        Ok(())
    }
}

/// True `(Σ, μ)` with the oracle quantities every trial is scored against.
#[derive(Debug, Clone)]
pub struct Universe {
    pub sigma: CovarianceMatrix,
    pub mu: Signal,
    pub sectors: Vec<usize>,
    /// `Σ⁻¹μ`.
    pub w_star: DVector<f64>,
    /// `true` when `μ = 1`: cells are scored on sum-to-one min-var Sharpe.
    pub minvar: bool,
    /// Per-period Sharpe of `w⋆` (min-var cells: `1/vol` of the oracle min-var portfolio).
    pub oracle_sharpe: f64,
    /// Volatility of the sum-to-one oracle min-var portfolio.
    pub oracle_minvar_vol: f64,
}

impl Universe {
    pub fn build(regime: &RegimeSpec, signal: &SignalSpec) -> Result<Self> {
        let sigma = gen_regime(regime)?;
        let sectors = sector_map(regime.n);
        let mu = gen_signal_for(signal, &sigma, &sectors)?;
        Self::from_parts(sigma, mu, sectors)
    }

    pub fn from_parts(sigma: CovarianceMatrix, mu: Signal, sectors: Vec<usize>) -> Result<Self> {
        mu.check_len(sigma.n())?;
        let w_star = sigma.solve(mu.values())?;
        let minvar = mu.values().iter().all(|&x| x == 1.0);
        let ones = DVector::from_element(sigma.n(), 1.0);
        let mv = sigma.solve(&ones)?;
        let oracle_minvar_vol = 1.0 / minvar_sharpe_sum1_vec(&mv, &sigma)?;
        let oracle_sharpe = if minvar {
            1.0 / oracle_minvar_vol
        } else {
            sharpe_vec(&w_star, &sigma, &mu)?
        };
        Ok(Self {
            sigma,
            mu,
            sectors,
            w_star,
            minvar,
            oracle_sharpe,
            oracle_minvar_vol,
        })
    }

    /// Scores one weight vector under the true moments.
    pub fn score(&self, w: &WeightVector) -> Result<Score> {
        let v = w.values();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateInput("non-finite weights".into()));
        }
        let sum = v.sum();
        let gross = v.lp_norm(1);
        if gross == 0.0 {
            return Err(Error::DegenerateInput("zero portfolio".into()));
        }
        let cos = signed_cosine_vec(v, &self.w_star)?;
        let leverage = if sum == 0.0 { f64::INFINITY } else { gross / sum.abs() };
        if self.minvar {
            let sharpe = minvar_sharpe_sum1_vec(v, &self.sigma)?;
            Ok(Score {
                sharpe,
                cos,
                leverage,
                vol: 1.0 / sharpe,
            })
        } else {
            let sharpe = sharpe_vec(v, &self.sigma, &self.mu)?;
            let vol = self.sigma.quad_form(v).sqrt() / gross;
            Ok(Score { sharpe, cos, leverage, vol })
        }
    }

    /// Whether a scored trial counts as unstable (min-var cells only).
    pub fn is_unstable(&self, s: &Score) -> bool {
        self.minvar && s.vol > INSTABILITY_VOL_RATIO * self.oracle_minvar_vol
    }
}

/// Per-method metrics for one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    /// Per-period OOS Sharpe (min-var cells: `1/vol` of the sum-to-one portfolio).
    pub sharpe: f64,
    /// Signed cosine against `Σ⁻¹μ`.
    pub cos: f64,
    /// `‖w‖₁ / |1ᵀw|`.
    pub leverage: f64,
    /// Volatility of the sum-to-one portfolio (min-var cells) or of the
    /// unit-gross portfolio (signal cells).
    pub vol: f64,
}

/// Outcome of one method in one trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(Score),
    Failed(String),
}

/// All method outcomes for one `(T, trial)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub t: usize,
    pub trial: usize,
    pub outcomes: Vec<Outcome>,
}

/// RNG stream for trial `trial` at sample length `t`.
pub fn trial_stream(t: usize, trial: usize) -> u64 {
    ((t as u64) << 32) | (trial as u64 & 0xFFFF_FFFF)
}

/// Allocates every method on `(Σ̂, μ̂)` and scores it under the true moments.
/// Allocator errors are recorded, never propagated.
pub fn evaluate_methods(
    universe: &Universe,
    sigma_hat: &CovarianceMatrix,
    mu_hat: &Signal,
    methods: &[MethodSpec],
) -> Result<Vec<Outcome>> {
    let tree: Option<Dendrogram> = if methods.iter().any(|m| m.id.needs_tree()) {
        Some(build_tree(&to_correlation(sigma_hat)?, LinkageRule::Ward)?)
    } else {
        None
    };
    let mut inputs = AllocInputs::new(sigma_hat, mu_hat);
    inputs.tree = tree.as_ref();
    Ok(methods
        .iter()
        .map(|m| match allocate(m, &inputs).and_then(|w| universe.score(&w)) {
            Ok(s) => Outcome::Ok(s),
            Err(e) => Outcome::Failed(e.to_string()),
        })
        .collect())
}

fn run_trial_in(spec: &ExperimentSpec, universe: &Universe, t: usize, trial: usize) -> Result<TrialRecord> {
    let mut rng = stream_rng(spec.seed, trial_stream(t, trial));
    let r = sample_returns_rng(&universe.sigma, &universe.mu, t, &mut rng)?;
    let sigma_hat = sample_cov(&r, spec.ridge)?;
    let mu_hat = match spec.mu_estimator {
        MuEstimator::Oracle => universe.mu.clone(),
        MuEstimator::SampleMean => sample_mean(&r)?,
        MuEstimator::NoisyIc(ic) => noisy_signal(&universe.mu, ic, &mut rng)?,
    };
    Ok(TrialRecord {
        t,
        trial,
        outcomes: evaluate_methods(universe, &sigma_hat, &mu_hat, &spec.methods)?,
    })
}

/// Runs a single trial.
pub fn run_trial(spec: &ExperimentSpec, t: usize, trial: usize) -> Result<TrialRecord> {
    spec.validate()?;
    let universe = Universe::build(&spec.regime, &spec.signal)?;
    run_trial_in(spec, &universe, t, trial)
}

/// Aggregated statistics of one `(method, γ, p, T)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: MethodSpec,
    pub t: usize,
    pub trials: usize,
    /// Trials in which the method produced a score.
    pub n_ok: usize,
    pub mean_sharpe: f64,
    pub std_sharpe: f64,
    pub oracle_sharpe: f64,
    pub mean_cos: f64,
    pub std_cos: f64,
    pub frac_neg_cos: f64,
    pub mean_leverage: f64,
    pub mean_vol: f64,
    /// Allocator failures plus trials over the volatility threshold.
    pub instability: usize,
}

impl CellResult {
    pub fn unstable(&self) -> bool {
        self.instability > 0
    }

    /// Standard error of the mean Sharpe.
    pub fn se_sharpe(&self) -> f64 {
        if self.n_ok == 0 {
            f64::NAN
        } else {
            self.std_sharpe / (self.n_ok as f64).sqrt()
        }
    }

    pub fn oracle_fraction(&self) -> f64 {
        self.mean_sharpe / self.oracle_sharpe
    }
}

/// Mean and sample standard deviation, summed in sorted order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n as f64 - 1.0)).sqrt())
}

/// Aggregates the outcomes of method `k` over `records`.
pub fn aggregate(method: MethodSpec, k: usize, t: usize, universe: &Universe, records: &[TrialRecord]) -> CellResult {
    let mut sharpe = Vec::new();
    let mut cos = Vec::new();
    let mut lev = Vec::new();
    let mut vol = Vec::new();
    let mut instability = 0;
    for r in records {
        match &r.outcomes[k] {
            Outcome::Ok(s) => {
                sharpe.push(s.sharpe);
                cos.push(s.cos);
                lev.push(s.leverage);
                vol.push(s.vol);
                if universe.is_unstable(s) {
                    instability += 1;
                }
            }
            Outcome::Failed(_) => instability += 1,
        }
    }
    let n_ok = sharpe.len();
    let (mean_sharpe, std_sharpe) = mean_std(&sharpe);
    let (mean_cos, std_cos) = mean_std(&cos);
    let neg = cos.iter().filter(|&&c| c < 0.0).count();
    CellResult {
        method,
        t,
        trials: records.len(),
        n_ok,
        mean_sharpe,
        std_sharpe,
        oracle_sharpe: universe.oracle_sharpe,
        mean_cos,
        std_cos,
        frac_neg_cos: if n_ok == 0 { f64::NAN } else { neg as f64 / n_ok as f64 },
        mean_leverage: mean_std(&lev).0,
        mean_vol: mean_std(&vol).0,
        instability,
    }
}

/// Runs every trial of a walk-forward spec and aggregates per cell. Rows are
/// ordered by `(method, γ, p, T)`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let universe = Universe::build(&spec.regime, &spec.signal)?;
    run_experiment_in(spec, &universe)
}

/// [`run_experiment`] on a prebuilt universe.
pub fn run_experiment_in(spec: &ExperimentSpec, universe: &Universe) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &t in &spec.t_values {
        let records = (0..spec.trials)
            .into_par_iter()
            .map(|i| run_trial_in(spec, universe, t, i))
            .collect::<Result<Vec<_>>>()?;
        for (k, m) in spec.methods.iter().enumerate() {
            cells.push(aggregate(*m, k, t, universe, &records));
        }
    }
    sort_cells(&mut cells);
    Ok(cells)
}

pub fn sort_cells(cells: &mut [CellResult]) {
    cells.sort_by(|a, b| {
        a.method
            .id
            .cmp(&b.method.id)
            .then(a.method.gamma.total_cmp(&b.method.gamma))
            .then(a.method.p.cmp(&b.method.p))
            .then(a.t.cmp(&b.t))
    });
}

/// Column layout of [`cells_table`].
pub const CELL_COLUMNS: [&str; 18] = [
    "method",
    "label",
    "gamma",
    "p",
    "T",
    "trials",
    "n_ok",
    "mean_sharpe",
    "std_sharpe",
    "se_sharpe",
    "oracle_sharpe",
    "oracle_fraction",
    "mean_cos",
    "frac_neg_cos",
    "mean_leverage",
    "mean_vol",
    "instability",
    "unstable",
];

/// Renders cells as a table.
pub fn cells_table(name: &str, cells: &[CellResult]) -> Table {
    let mut t = Table::new(name, &CELL_COLUMNS);
    for c in cells {
        t.push(vec![
            c.method.id.name().into(),
            c.method.label().into(),
            c.method.gamma.into(),
            c.method.p.into(),
            c.t.into(),
            c.trials.into(),
            c.n_ok.into(),
            c.mean_sharpe.into(),
            c.std_sharpe.into(),
            c.se_sharpe().into(),
            c.oracle_sharpe.into(),
            c.oracle_fraction().into(),
            c.mean_cos.into(),
            c.frac_neg_cos.into(),
            c.mean_leverage.into(),
            c.mean_vol.into(),
            c.instability.into(),
            c.unstable().into(),
        ]);
    }
    t
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Parameter("need at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Parameter("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("x values are all equal".into()));
    }
    Ok(sxy / sxx)
}

/// Oracle Markowitz weights `Σ⁻¹μ` of a universe.
pub fn oracle_weights(universe: &Universe) -> Result<WeightVector> {
    markowitz_direct(&universe.sigma, &universe.mu)
}
