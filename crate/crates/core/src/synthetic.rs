//! Synthetic covariance regimes, signals, Gaussian sampling and estimation.
//!
//! Every generator is a pure function of its seed. Random streams come from
//! ChaCha20 seeded with `seed_from_u64(seed)`; Monte Carlo trials select an
//! independent stream with [`stream_rng`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::core_types::{sym_eigen_sorted, CorrelationMatrix, CovarianceMatrix, Signal};
use crate::crisp::FactorModel;
use crate::error::{Error, Result};

/// Default eigenvalue floor for [`psd_floor`].
pub const PSD_FLOOR: f64 = 1e-4;
/// Ridge added to sample covariances in Monte Carlo trials.
pub const SAMPLE_RIDGE: f64 = 1e-4;
/// Number of sectors in the block universe.
pub const SECTORS: usize = 5;

/// RNG seeded with `seed` on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Covariance regime families.
#[derive(Debug, Clone, PartialEq)]
pub enum RegimeKind {
    /// Five equal sectors, within-sector `ρ_w`, cross-sector `ρ_c`.
    BlockSector { rho_within: f64, rho_cross: f64 },
    /// `k` latent factors plus idiosyncratic noise.
    Factor { k: usize },
    Equicorr { rho: f64 },
    /// One spike at `0.3·N` over a unit bulk, rescaled to trace `N`.
    Spiked,
    /// Five blocks at `ρ = 0.8` with one `ρ = −0.6` hedge pair per block pair.
    HedgedTightBlocks,
    /// Block-sector correlation with a wide volatility range.
    WideVol,
}

impl RegimeKind {
    pub fn block() -> Self {
        RegimeKind::BlockSector {
            rho_within: 0.6,
            rho_cross: 0.15,
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegimeKind::BlockSector { rho_within, rho_cross } => {
                if *rho_within == 0.6 && *rho_cross == 0.15 {
                    write!(f, "block")
                } else {
                    write!(f, "block:{rho_within}:{rho_cross}")
                }
            }
            RegimeKind::Factor { k } => write!(f, "factor:{k}"),
            RegimeKind::Equicorr { rho } => write!(f, "equicorr:{rho}"),
            RegimeKind::Spiked => write!(f, "spiked"),
            RegimeKind::HedgedTightBlocks => write!(f, "hedged"),
            RegimeKind::WideVol => write!(f, "wide_vol"),
        }
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parameter(format!("cannot parse {what} from '{s}'")))
}

impl FromStr for RegimeKind {
    type Err = Error;

    /// `block[:ρ_w:ρ_c]`, `factor:k`, `equicorr:ρ`, `spiked`, `hedged`, `wide_vol`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::Parameter(format!("unknown regime '{s}'"));
        match parts[0].to_ascii_lowercase().replace('-', "_").as_str() {
            "block" | "block_sector" => match parts.len() {
                1 => Ok(RegimeKind::block()),
                3 => Ok(RegimeKind::BlockSector {
                    rho_within: parse_f64(parts[1], "rho_within")?,
                    rho_cross: parse_f64(parts[2], "rho_cross")?,
                }),
                _ => Err(bad()),
            },
            "factor" => {
                let k = match parts.get(1) {
                    Some(k) => k
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parameter(format!("bad factor count in '{s}'")))?,
                    None => 3,
                };
                Ok(RegimeKind::Factor { k })
            }
            "equicorr" => Ok(RegimeKind::Equicorr {
                rho: parse_f64(parts.get(1).ok_or_else(bad)?, "rho")?,
            }),
            "spiked" => Ok(RegimeKind::Spiked),
            "hedged" | "hedged_tight_blocks" => Ok(RegimeKind::HedgedTightBlocks),
            "wide_vol" | "widevol" => Ok(RegimeKind::WideVol),
            _ => Err(bad()),
        }
    }
}

/// A fully specified covariance regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub n: usize,
    pub vol_range: (f64, f64),
    pub seed: u64,
}

impl RegimeSpec {
    /// Regime with the default volatility range for its kind.
    pub fn new(kind: RegimeKind, n: usize, seed: u64) -> Self {
        let vol_range = match kind {
            RegimeKind::WideVol => (0.05, 1.0),
            _ => (0.15, 0.40),
        };
        Self { kind, n, vol_range, seed }
    }

    /// The base block universe.
    pub fn base(n: usize, seed: u64) -> Self {
        Self::new(RegimeKind::block(), n, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::DegenerateUniverse(self.n));
        }
        let (lo, hi) = self.vol_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Parameter(format!("bad vol range ({lo}, {hi})")));
        }
        match self.kind {
            RegimeKind::BlockSector { rho_within, rho_cross } => {
                if !(-1.0..1.0).contains(&rho_within) || !(-1.0..1.0).contains(&rho_cross) {
                    return Err(Error::Parameter("block correlations must lie in [-1, 1)".into()));
                }
            }
            RegimeKind::Equicorr { rho } => {
                let lo = -1.0 / (self.n as f64 - 1.0);
                if !(rho > lo && rho < 1.0) {
                    return Err(Error::Parameter(format!("equicorrelation {rho} is not PD at n = {}", self.n)));
                }
            }
            RegimeKind::Factor { k } if k == 0 || k >= self.n => {
                return Err(Error::Parameter(format!("factor count {k} must be in 1..n")));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Contiguous near-equal sector labels `0..SECTORS`.
pub fn sector_map(n: usize) -> Vec<usize> {
    (0..n).map(|i| i * SECTORS / n).collect()
}

fn draw_vols(rng: &mut ChaCha20Rng, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect()
}

fn block_corr(n: usize, rho_w: f64, rho_c: f64) -> DMatrix<f64> {
    let sec = sector_map(n);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if sec[i] == sec[j] {
            rho_w
        } else {
            rho_c
        }
    })
}

fn to_unit_diag(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = m.diagonal().map(f64::sqrt);
    let mut c = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (s[i] * s[j]));
    c.fill_diagonal(1.0);
    c
}

/// Projects a symmetric matrix onto correlations with eigenvalues at least
/// `floor`: eigenvalues are clipped, the matrix reassembled and its diagonal
/// renormalized to 1. Already-PD input with eigenvalues above the floor is
/// returned unchanged up to rounding.
pub fn psd_floor(sym: &DMatrix<f64>, floor: f64) -> Result<CorrelationMatrix> {
    if !sym.is_square() {
        return Err(Error::DimensionMismatch {
            expected: sym.nrows(),
            got: sym.ncols(),
        });
    }
    if !(floor > 0.0) {
        return Err(Error::Parameter(format!("floor {floor} must be positive")));
    }
    let (vals, vecs) = sym_eigen_sorted(sym);
    if vals.iter().all(|&l| l >= floor) {
        return CorrelationMatrix::new(to_unit_diag(sym));
    }
    let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|&l| l.max(floor)));
    let m = &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose();
    let m = (&m + m.transpose()) * 0.5;
    CorrelationMatrix::new(to_unit_diag(&m))
}

/// Factor loadings in correlation units: a common market factor with mean
/// loading 0.55 and `k − 1` zero-mean style factors with s.d. 0.3.
/// Idiosyncratic shares are `1 − ‖b_i‖²`, floored at 0.2 by rescaling `b_i`.
fn factor_corr_loadings(rng: &mut ChaCha20Rng, n: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut b = DMatrix::zeros(n, k);
    for i in 0..n {
        b[(i, 0)] = 0.55 + 0.1 * normal(rng);
        for j in 1..k {
            b[(i, j)] = 0.3 * normal(rng);
        }
    }
    let mut idio = DVector::zeros(n);
    for i in 0..n {
        let r2 = b.row(i).norm_squared();
        if r2 > 0.8 {
            let s = (0.8 / r2).sqrt();
            for j in 0..k {
                b[(i, j)] *= s;
            }
        }
        idio[i] = 1.0 - b.row(i).norm_squared();
    }
    (b, idio)
}

/// The factor regime as a [`FactorModel`] (`Λ = I`), for streaming CRISP.
pub fn gen_factor_model(spec: &RegimeSpec) -> Result<FactorModel> {
    spec.validate()?;
    let RegimeKind::Factor { k } = spec.kind else {
        return Err(Error::Parameter(format!("regime {} is not a factor model", spec.kind)));
    };
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let vols = draw_vols(&mut rng, spec.n, spec.vol_range);
    let (b, idio) = factor_corr_loadings(&mut rng, spec.n, k);
    let loadings = DMatrix::from_fn(spec.n, k, |i, j| vols[i] * b[(i, j)]);
    let idio_var = DVector::from_fn(spec.n, |i, _| vols[i] * vols[i] * idio[i]);
    FactorModel::new(loadings, DMatrix::identity(k, k), idio_var)
}

fn spiked_corr(rng: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    let u = DVector::from_fn(n, |_, _| normal(rng)).normalize();
    let spike = 0.3 * n as f64;
    let m = DMatrix::identity(n, n) + &u * u.transpose() * (spike - 1.0);
    let scale = n as f64 / m.trace();
    to_unit_diag(&(m * scale))
}

fn hedged_corr(n: usize) -> DMatrix<f64> {
    let sec = sector_map(n);
    let mut c = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if sec[i] == sec[j] {
            0.8
        } else {
            0.0
        }
    });
    let first: Vec<usize> = (0..SECTORS)
        .map(|s| sec.iter().position(|&x| x == s).unwrap_or(0))
        .collect();
    for a in 0..SECTORS {
        for b in (a + 1)..SECTORS {
            // the k-th member of block a hedges the k-th member of block b
            let size_a = sec.iter().filter(|&&x| x == a).count().max(1);
            let size_b = sec.iter().filter(|&&x| x == b).count().max(1);
            let i = first[a] + (b - a - 1) % size_a;
            let j = first[b] + a % size_b;
            if sec[i] == a && sec[j] == b {
                c[(i, j)] = -0.6;
                c[(j, i)] = -0.6;
            }
        }
    }
    c
}

/// Generates the covariance for a regime. Correlations that are not PD
/// are projected with [`psd_floor`] at [`PSD_FLOOR`].
pub fn gen_regime(spec: &RegimeSpec) -> Result<CovarianceMatrix> {
    spec.validate()?;
    if let RegimeKind::Factor { .. } = spec.kind {
        return gen_factor_model(spec)?.materialize();
    }
    let n = spec.n;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let vols = draw_vols(&mut rng, n, spec.vol_range);
    let raw = match spec.kind {
        RegimeKind::BlockSector { rho_within, rho_cross } => block_corr(n, rho_within, rho_cross),
        RegimeKind::WideVol => block_corr(n, 0.6, 0.15),
        RegimeKind::Equicorr { rho } => {
            DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
        }
        RegimeKind::Spiked => spiked_corr(&mut rng, n),
        RegimeKind::HedgedTightBlocks => hedged_corr(n),
        RegimeKind::Factor { .. } => unreachable!(),
    };
    let corr = psd_floor(&raw, PSD_FLOOR)?;
    let sigma = CovarianceMatrix::from_correlation(&corr, &vols)?;
    if sigma.cholesky().is_err() {
        return Err(Error::Generation(format!("regime {} is not PD after flooring", spec.kind)));
    }
    Ok(sigma)
}

/// Signal families.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSpec {
    Ones,
    Gaussian { sigma_mu: f64, seed: u64 },
    /// Sector `s` receives `tilts[s % tilts.len()]`.
    SectorTilt { tilts: Vec<f64> },
    /// Adversarial unit-norm signal from [`worst_case_mu`].
    WorstCase { restarts: usize, seed: u64 },
}

impl SignalSpec {
    /// The tiled structural tilt `(+0.04, −0.04, +0.02, −0.02, 0)`.
    pub fn structural() -> Self {
        SignalSpec::SectorTilt {
            tilts: vec![0.04, -0.04, 0.02, -0.02, 0.0],
        }
    }
}

impl fmt::Display for SignalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalSpec::Ones => write!(f, "ones"),
            SignalSpec::Gaussian { sigma_mu, seed } => write!(f, "gaussian:{sigma_mu}:{seed}"),
            SignalSpec::SectorTilt { tilts } => {
                let t: Vec<String> = tilts.iter().map(|x| x.to_string()).collect();
                write!(f, "tilt:{}", t.join(","))
            }
            SignalSpec::WorstCase { restarts, seed } => write!(f, "worst:{restarts}:{seed}"),
        }
    }
}

impl FromStr for SignalSpec {
    type Err = Error;

    /// `ones`, `gaussian[:σ[:seed]]`, `tilt[:t1,t2,…]`, `structural`, `worst[:restarts[:seed]]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |i: usize, default: u64| -> Result<u64> {
            match parts.get(i) {
                Some(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad integer in signal '{s}'"))),
                None => Ok(default),
            }
        };
        match parts[0].to_ascii_lowercase().as_str() {
            "ones" => Ok(SignalSpec::Ones),
            "gaussian" => Ok(SignalSpec::Gaussian {
                sigma_mu: match parts.get(1) {
                    Some(v) => parse_f64(v, "sigma_mu")?,
                    None => 0.02,
                },
                seed: int(2, 7)?,
            }),
            "structural" => Ok(SignalSpec::structural()),
            "tilt" | "sector_tilt" => match parts.get(1) {
                None => Ok(SignalSpec::structural()),
                Some(list) => Ok(SignalSpec::SectorTilt {
                    tilts: list
                        .split(',')
                        .map(|t| parse_f64(t, "tilt"))
                        .collect::<Result<Vec<_>>>()?,
                }),
            },
            "worst" | "worst_case" => Ok(SignalSpec::WorstCase {
                restarts: int(1, 32)? as usize,
                seed: int(2, 42)?,
            }),
            _ => Err(Error::Parameter(format!("unknown signal '{s}'"))),
        }
    }
}

/// Generates a signal that does not depend on `Σ`. The worst-case family
/// needs the covariance; use [`gen_signal_for`] for it.
pub fn gen_signal(spec: &SignalSpec, n: usize, sectors: &[usize]) -> Result<Signal> {
    match spec {
        SignalSpec::Ones => Ok(Signal::ones(n)),
        SignalSpec::Gaussian { sigma_mu, seed } => {
            if !(*sigma_mu > 0.0) {
                return Err(Error::Parameter("sigma_mu must be positive".into()));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            Signal::new(DVector::from_fn(n, |_, _| sigma_mu * normal(&mut rng)))
        }
        SignalSpec::SectorTilt { tilts } => {
            if tilts.is_empty() {
                return Err(Error::Parameter("empty tilt list".into()));
            }
            if sectors.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: sectors.len(),
                });
            }
            Signal::new(DVector::from_fn(n, |i, _| tilts[sectors[i] % tilts.len()]))
        }
        SignalSpec::WorstCase { .. } => Err(Error::Parameter(
            "worst-case signal requires a covariance".into(),
        )),
    }
}

/// Like [`gen_signal`], with the covariance available for the worst-case family.
pub fn gen_signal_for(spec: &SignalSpec, sigma: &CovarianceMatrix, sectors: &[usize]) -> Result<Signal> {
    match spec {
        SignalSpec::WorstCase { restarts, seed } => Ok(worst_case_mu(sigma, *restarts, *seed)?.0),
        _ => gen_signal(spec, sigma.n(), sectors),
    }
}

/// Objective `f(μ) = dir(D⁻¹μ, Σ⁻¹μ) = 1 − g²/(h·k)` with its Euclidean gradient.
struct DiagDirObjective {
    d_inv: DVector<f64>,
    s_inv: DMatrix<f64>,
}

impl DiagDirObjective {
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let a = x.component_mul(&self.d_inv);
        let b = &self.s_inv * x;
        let g = a.dot(&b);
        let h = a.dot(&a);
        let k = b.dot(&b);
        let hk = h * k;
        let f = (1.0 - g * g / hk).clamp(0.0, 1.0);
        // ∇g = D⁻¹Σ⁻¹x + Σ⁻¹D⁻¹x, ∇h = 2D⁻²x, ∇k = 2Σ⁻²x
        let grad_g = b.component_mul(&self.d_inv) + &self.s_inv * &a;
        let grad_h = a.component_mul(&self.d_inv) * 2.0;
        let grad_k = &self.s_inv * &b * 2.0;
        let grad = -(grad_g * (2.0 * g / hk)) + (grad_h * k + grad_k * h) * (g * g / (hk * hk));
        (f, grad)
    }
}

/// Riemannian gradient ascent with backtracking on the unit sphere.
fn ascend(obj: &DiagDirObjective, mut x: DVector<f64>, iters: usize) -> (DVector<f64>, f64) {
    let (mut f, mut grad) = obj.eval(&x);
    let mut step = 1.0;
    for _ in 0..iters {
        let tangent = &grad - &x * grad.dot(&x);
        let tn = tangent.norm();
        if tn < 1e-14 || f >= 1.0 - 1e-15 {
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let cand = (&x + &tangent * (step / tn)).normalize();
            let (fc, gc) = obj.eval(&cand);
            if fc > f {
                x = cand;
                f = fc;
                grad = gc;
                step = (step * 2.0).min(1.0);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, f)
}

/// Multi-start search for a unit-norm `μ` maximizing `dir_diag`.
///
/// Each restart draws `x₀ ∼ N(0, I)`, normalizes it and runs monotone
/// gradient ascent on the sphere, so the result is never below the best
/// starting value.
pub fn worst_case_mu(sigma: &CovarianceMatrix, restarts: usize, seed: u64) -> Result<(Signal, f64)> {
    let n = sigma.n();
    let restarts = restarts.max(1);
    let d = sigma.diag();
    let chol = sigma.cholesky()?;
    let obj = DiagDirObjective {
        d_inv: d.map(|x| 1.0 / x),
        s_inv: chol.inverse(),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for _ in 0..restarts {
        let x0 = DVector::from_fn(n, |_, _| normal(&mut rng)).normalize();
        let (x, f) = ascend(&obj, x0, 2000);
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.expect("at least one restart");
    Ok((Signal::new(x)?, f))
}

/// `T` Gaussian draws from `N(μ, Σ)` as a `T×N` matrix.
pub fn sample_returns_rng(sigma: &CovarianceMatrix, mu: &Signal, t: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    mu.check_len(sigma.n())?;
    let n = sigma.n();
    let l = sigma.cholesky()?.l();
    let z = DMatrix::from_fn(t, n, |_, _| normal(rng));
    let mut r = z * l.transpose();
    for mut row in r.row_iter_mut() {
        row += mu.values().transpose();
    }
    Ok(r)
}

/// [`sample_returns_rng`] on a fresh stream seeded with `seed`.
pub fn sample_returns(sigma: &CovarianceMatrix, mu: &Signal, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    sample_returns_rng(sigma, mu, t, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// Column means of a `T×N` sample.
pub fn sample_mean(samples: &DMatrix<f64>) -> Result<Signal> {
    if samples.nrows() == 0 {
        return Err(Error::DegenerateInput("empty sample".into()));
    }
    Signal::new(samples.row_mean().transpose())
}

/// Unbiased sample covariance (denominator `T − 1`) plus `ridge·I`.
pub fn sample_cov(samples: &DMatrix<f64>, ridge: f64) -> Result<CovarianceMatrix> {
    let t = samples.nrows();
    if t < 2 {
        return Err(Error::DegenerateInput(format!("need T >= 2 samples, got {t}")));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Parameter(format!("ridge {ridge} must be non-negative")));
    }
    let mean = samples.row_mean();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut c = centered.transpose() * &centered / (t as f64 - 1.0);
    for i in 0..c.nrows() {
        c[(i, i)] += ridge;
    }
    CovarianceMatrix::new((&c + c.transpose()) * 0.5)
}

/// Ridge `10⁻⁶ · mean(diag Σ)` for analytic stress covariances.
pub fn analytic_ridge(sigma: &CovarianceMatrix) -> f64 {
    1e-6 * sigma.diag().mean()
}

/// Noisy estimate `μ̂ = μ + ε` with `ε_i ∼ N(0, s²(1 − IC²)/IC²)`, `s` the
/// cross-sectional standard deviation of `μ`.
pub fn noisy_signal(mu: &Signal, ic: f64, rng: &mut impl Rng) -> Result<Signal> {
    if !(ic > 0.0 && ic <= 1.0) {
        return Err(Error::Parameter(format!("ic = {ic} outside (0, 1]")));
    }
    let v = mu.values();
    let n = v.len() as f64;
    let mean = v.mean();
    let s = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let s = if s > 0.0 { s } else { v.abs().max() };
    let sd = s * ((1.0 - ic * ic) / (ic * ic)).sqrt();
    Signal::new(DVector::from_fn(v.len(), |i, _| v[i] + sd * normal(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::{kappa, to_correlation};
    use crate::metrics::dir_diag;

    fn kappa_of(spec: &RegimeSpec) -> f64 {
        kappa(&to_correlation(&gen_regime(spec).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn block_universe_condition_numbers() {
        assert!((kappa_of(&RegimeSpec::base(100, 42)) - 61.0).abs() < 0.5);
        assert!((kappa_of(&RegimeSpec::base(200, 42)) - 121.0).abs() < 0.5);
    }

    #[test]
    fn block_spectrum_matches_closed_form() {
        let (m, k, rw, rc) = (20.0, 5.0, 0.6, 0.15);
        let eigs = to_correlation(&gen_regime(&RegimeSpec::base(100, 1)).unwrap())
            .unwrap()
            .eigenvalues();
        let top = 1.0 + (m - 1.0) * rw + m * (k - 1.0) * rc;
        let mid = 1.0 + (m - 1.0) * rw - m * rc;
        let low = 1.0 - rw;
        assert!((eigs[0] - top).abs() < 1e-8);
        for e in &eigs[1..5] {
            assert!((e - mid).abs() < 1e-8);
        }
        for e in &eigs[5..] {
            assert!((e - low).abs() < 1e-8);
        }
    }

    #[test]
    fn vols_within_range_and_deterministic() {
        let spec = RegimeSpec::base(50, 9);
        let a = gen_regime(&spec).unwrap();
        assert_eq!(a, gen_regime(&spec).unwrap());
        assert_ne!(a, gen_regime(&RegimeSpec::base(50, 10)).unwrap());
        for v in a.diag().iter() {
            let s = v.sqrt();
            assert!((0.15..=0.40).contains(&s));
        }
    }

    #[test]
    fn equicorr_zero_is_identity() {
        let s = gen_regime(&RegimeSpec::new(RegimeKind::Equicorr { rho: 0.0 }, 10, 3)).unwrap();
        let c = to_correlation(&s).unwrap();
        assert_eq!(c.matrix(), &DMatrix::identity(10, 10));
    }

    #[test]
    fn factor_kappa_near_reference() {
        let k = kappa_of(&RegimeSpec::new(RegimeKind::Factor { k: 3 }, 200, 42));
        assert!(k > 111.0 / 3.0 && k < 111.0 * 3.0, "kappa = {k}");
    }

    #[test]
    fn factor_model_materializes_consistently() {
        let spec = RegimeSpec::new(RegimeKind::Factor { k: 3 }, 30, 5);
        let fm = gen_factor_model(&spec).unwrap();
        assert_eq!(fm.materialize().unwrap(), gen_regime(&spec).unwrap());
        assert!(gen_factor_model(&RegimeSpec::base(30, 5)).is_err());
    }

    #[test]
    fn every_regime_is_spd() {
        for kind in [
            RegimeKind::block(),
            RegimeKind::Factor { k: 3 },
            RegimeKind::Equicorr { rho: 0.6 },
            RegimeKind::Spiked,
            RegimeKind::HedgedTightBlocks,
            RegimeKind::WideVol,
        ] {
            let s = gen_regime(&RegimeSpec::new(kind.clone(), 100, 42)).unwrap();
            assert!(s.cholesky().is_ok(), "{kind}");
            let c = to_correlation(&s).unwrap();
            assert!(*c.eigenvalues().last().unwrap() > 0.0, "{kind}");
        }
    }

    #[test]
    fn spiked_top_eigenvalue_dominates() {
        let c = to_correlation(&gen_regime(&RegimeSpec::new(RegimeKind::Spiked, 100, 4)).unwrap()).unwrap();
        let e = c.eigenvalues();
        assert!(e[0] > 10.0 * e[1]);
        assert!((e.iter().sum::<f64>() - 100.0).abs() < 1e-8);
    }

    #[test]
    fn hedged_regime_is_hard() {
        let s = gen_regime(&RegimeSpec::new(RegimeKind::HedgedTightBlocks, 100, 42)).unwrap();
        let c = to_correlation(&s).unwrap();
        let k = kappa(&c).unwrap();
        assert!(k > 1e4, "kappa = {k}");
        let negs = c.matrix().iter().filter(|&&x| x < -0.25).count();
        assert_eq!(negs, 20);
    }

    #[test]
    fn wide_vol_range() {
        let s = gen_regime(&RegimeSpec::new(RegimeKind::WideVol, 100, 1)).unwrap();
        let v: Vec<f64> = s.diag().iter().map(|x| x.sqrt()).collect();
        assert!(v.iter().all(|x| (0.05..=1.0).contains(x)));
        assert!(v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(1.0, f64::min) > 5.0);
    }

    #[test]
    fn psd_floor_cases() {
        let pd = to_correlation(&gen_regime(&RegimeSpec::base(20, 2)).unwrap()).unwrap();
        let out = psd_floor(pd.matrix(), PSD_FLOOR).unwrap();
        assert!((out.matrix() - pd.matrix()).abs().max() < 1e-12);

        let ones = DMatrix::from_element(6, 6, 1.0);
        let out = psd_floor(&ones, PSD_FLOOR).unwrap();
        let e = out.eigenvalues();
        // renormalizing the diagonal rescales the floor by 1 / (1 + (1 − floor)/6 · ...) ≈ 1
        assert!((e[5] - PSD_FLOOR).abs() < 1e-6, "min eig {}", e[5]);
        assert!(out.matrix().diagonal().iter().all(|&d| d == 1.0));

        let h = psd_floor(&hedged_corr(50), PSD_FLOOR).unwrap();
        assert!(h.matrix().clone().cholesky().is_some());
    }

    #[test]
    fn signals() {
        let sec = sector_map(100);
        assert_eq!(gen_signal(&SignalSpec::Ones, 4, &sec[..4]).unwrap(), Signal::ones(4));
        let t = gen_signal(&SignalSpec::structural(), 100, &sec).unwrap();
        assert!(t.values().rows(0, 20).iter().all(|&x| x == 0.04));
        assert!(t.values().rows(20, 20).iter().all(|&x| x == -0.04));
        assert!(t.values().rows(80, 20).iter().all(|&x| x == 0.0));
        let g = gen_signal(&SignalSpec::Gaussian { sigma_mu: 0.02, seed: 7 }, 100, &sec).unwrap();
        let v = g.values();
        let m = v.mean();
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!((sd - 0.02).abs() < 0.004, "sd = {sd}");
        assert_eq!(g, gen_signal(&SignalSpec::Gaussian { sigma_mu: 0.02, seed: 7 }, 100, &sec).unwrap());
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["block", "block:0.9:0.1", "factor:3", "equicorr:0.6", "spiked", "hedged", "wide_vol"] {
            let k: RegimeKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        for s in ["ones", "gaussian:0.02:7", "tilt:0.04,-0.04,0.02,-0.02,0", "worst:32:1"] {
            let k: SignalSpec = s.parse().unwrap();
            assert_eq!(k.to_string().parse::<SignalSpec>().unwrap(), k);
        }
        assert!("nope".parse::<RegimeKind>().is_err());
        assert!("gaussian:x".parse::<SignalSpec>().is_err());
    }

    #[test]
    fn worst_case_identity_is_zero() {
        let s = CovarianceMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.09, 0.01, 0.16]))).unwrap();
        let (_, f) = worst_case_mu(&s, 4, 1).unwrap();
        assert!(f < 1e-12);
    }

    #[test]
    fn worst_case_gradient_matches_finite_differences() {
        let s = gen_regime(&RegimeSpec::base(10, 3)).unwrap();
        let obj = DiagDirObjective {
            d_inv: s.diag().map(|x| 1.0 / x),
            s_inv: s.cholesky().unwrap().inverse(),
        };
        let x = DVector::from_fn(10, |i, _| ((i * 7 % 5) as f64 - 2.0) + 0.3);
        let (_, g) = obj.eval(&x);
        for i in 0..10 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (obj.eval(&xp).0 - obj.eval(&xm).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "i={i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn worst_case_beats_random_start_on_block() {
        let s = gen_regime(&RegimeSpec::base(20, 8)).unwrap();
        let (mu, f) = worst_case_mu(&s, 8, 3).unwrap();
        assert!((mu.values().norm() - 1.0).abs() < 1e-12);
        assert!((dir_diag(&s, &mu).unwrap() - f).abs() < 1e-9);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x0 = Signal::new(DVector::from_fn(20, |_, _| normal(&mut rng)).normalize()).unwrap();
        assert!(f >= dir_diag(&s, &x0).unwrap());
    }

    #[test]
    fn sampling_determinism_and_ridge() {
        let s = gen_regime(&RegimeSpec::base(10, 1)).unwrap();
        let mu = Signal::ones(10);
        let a = sample_returns(&s, &mu, 50, 5).unwrap();
        assert_eq!(a, sample_returns(&s, &mu, 50, 5).unwrap());
        assert_eq!(a.shape(), (50, 10));
        let c0 = sample_cov(&a, 0.0).unwrap();
        let c1 = sample_cov(&a, 0.25).unwrap();
        for i in 0..10 {
            assert_eq!(c1.get(i, i), c0.get(i, i) + 0.25);
            let col = a.column(i);
            let m = col.mean();
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 49.0;
            assert!((c0.get(i, i) - var).abs() < 1e-14);
        }
        assert!(sample_cov(&a.rows(0, 1).into_owned(), 0.0).is_err());
    }

    #[test]
    fn sample_cov_is_consistent() {
        let s = gen_regime(&RegimeSpec::base(5, 2)).unwrap();
        let mu = Signal::from_slice(&[0.01, -0.02, 0.0, 0.03, 0.01]).unwrap();
        let t = 100_000;
        let r = sample_returns(&s, &mu, t, 11).unwrap();
        let c = sample_cov(&r, 0.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                // Var(s_ij) = (σ_ij² + σ_ii σ_jj) / T
                let se = ((s.get(i, j).powi(2) + s.get(i, i) * s.get(j, j)) / t as f64).sqrt();
                assert!((c.get(i, j) - s.get(i, j)).abs() < 3.0 * se, "({i},{j})");
            }
        }
        let m = sample_mean(&r).unwrap();
        for i in 0..5 {
            let se = (s.get(i, i) / t as f64).sqrt();
            assert!((m.get(i) - mu.get(i)).abs() < 3.0 * se);
        }
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = stream_rng(42, 1);
        let mut b = stream_rng(42, 2);
        let mut a2 = stream_rng(42, 1);
        let xa: f64 = a.random();
        assert_eq!(xa, a2.random::<f64>());
        assert_ne!(xa, b.random::<f64>());
    }

    #[test]
    fn noisy_signal_correlation_tracks_ic() {
        let sec = sector_map(2000);
        let mu = gen_signal(&SignalSpec::Gaussian { sigma_mu: 0.02, seed: 1 }, 2000, &sec).unwrap();
        let mut rng = stream_rng(5, 0);
        let noisy = noisy_signal(&mu, 0.5, &mut rng).unwrap();
        let (a, b) = (mu.values(), noisy.values());
        let (ma, mb) = (a.mean(), b.mean());
        let cov: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!((r - 0.5).abs() < 0.06, "r = {r}");
        assert!(noisy_signal(&mu, 0.0, &mut rng).is_err());
    }
}
