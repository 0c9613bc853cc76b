//! Shrinkage-trajectory and perturbation toolkit.
//!
//! Notation: `w⋆ = Σ⁻¹μ`, `ŵ(γ) = P_γ⁻¹μ`, `E = Σ − D`. The functions here
//! evaluate the exact error identity `w⋆ − ŵ = −(1−γ)P_γ⁻¹Ew⋆`, the
//! direction-error bound built on it, direction-error trajectories over a
//! γ grid, the adaptive γ⋆ rule and the shrinkage KL divergence.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::core_types::{check_gamma, materialize, shrink, CovarianceMatrix, Signal};
use crate::crisp::{crisp_solve, SweepOrder};
use crate::error::{Error, Result};
use crate::metrics::dir_vec;

/// Direction errors at one point of the shrinkage trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub gamma: f64,
    /// `dir(P_γ⁻¹μ, w⋆)`.
    pub dir_exact: f64,
    /// `dir(w⁽ᵖ⁾, w⋆)` for the `p`-sweep CRISP iterate.
    pub dir_finite_sweep: f64,
    /// `dir(w⁽ᵖ⁾, P_γ⁻¹μ)`.
    pub dir_slack: f64,
}

/// Inputs to the adaptive rule `γ⋆ = 1 / (1 + c·NSR)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveInputs {
    pub kappa_c: f64,
    pub ic: f64,
    pub n: usize,
    pub t: usize,
    pub c: f64,
}

impl AdaptiveInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_c >= 1.0) || !self.kappa_c.is_finite() {
            return Err(Error::Parameter(format!("kappa_c = {} must be >= 1", self.kappa_c)));
        }
        if !(self.ic > 0.0 && self.ic <= 1.0) {
            return Err(Error::Parameter(format!("ic = {} outside (0, 1]", self.ic)));
        }
        if self.n == 0 || self.t == 0 {
            return Err(Error::Parameter("n and t must be positive".into()));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Parameter(format!("c = {} must be positive", self.c)));
        }
        Ok(())
    }

    /// Noise-to-signal ratio `κ_C²·N / (T·IC²)`.
    pub fn nsr(&self) -> f64 {
        self.kappa_c * self.kappa_c * self.n as f64 / (self.t as f64 * self.ic * self.ic)
    }
}

/// `c = 𝓑·λ_min(C)·(κ_C − 1) / (𝓐·κ_C²)` from the two loss coefficients.
pub fn calibration_constant(a_coef: f64, b_coef: f64, lambda_min: f64, kappa_c: f64) -> Result<f64> {
    if !(a_coef > 0.0) || !(b_coef > 0.0) || !(lambda_min > 0.0) || !(kappa_c >= 1.0) {
        return Err(Error::Parameter(
            "coefficients and lambda_min must be positive, kappa_c >= 1".into(),
        ));
    }
    Ok(b_coef * lambda_min * (kappa_c - 1.0) / (a_coef * kappa_c * kappa_c))
}

/// The adaptive rule `γ⋆ = 1 / (1 + c·NSR)`.
///
/// At `κ_C = 1` the calibration constant vanishes by definition, so the
/// result is exactly 1 whatever `inputs.c` holds.
pub fn gamma_star(inputs: &AdaptiveInputs) -> Result<f64> {
    inputs.validate()?;
    if inputs.kappa_c == 1.0 {
        return Ok(1.0);
    }
    Ok(1.0 / (1.0 + inputs.c * inputs.nsr()))
}

fn check_eigs(eigs: &[f64]) -> Result<()> {
    if eigs.is_empty() {
        return Err(Error::Parameter("empty spectrum".into()));
    }
    if let Some(l) = eigs.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Parameter(format!("eigenvalue {l} is not positive")));
    }
    Ok(())
}

fn extremes(eigs: &[f64]) -> (f64, f64) {
    eigs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)))
}

/// `κ(D⁻¹P_γ) = [(1−γ) + γλ_max] / [(1−γ) + γλ_min]` from the eigenvalues of `C`.
pub fn kappa_eff(corr_eigs: &[f64], gamma: f64) -> Result<f64> {
    check_eigs(corr_eigs)?;
    check_gamma(gamma)?;
    let (lo, hi) = extremes(corr_eigs);
    Ok(((1.0 - gamma) + gamma * hi) / ((1.0 - gamma) + gamma * lo))
}

/// First-order expansion of `κ_eff(γ)²` about `γ = 0`:
/// `1 + 2γ·λ_min(C)·(κ_C − 1)`.
///
/// This approximates the square of [`kappa_eff`], not `kappa_eff` itself.
pub fn kappa_eff_linearized(corr_eigs: &[f64], gamma: f64) -> Result<f64> {
    check_eigs(corr_eigs)?;
    check_gamma(gamma)?;
    let (lo, hi) = extremes(corr_eigs);
    let kappa_c = hi / lo;
    Ok(1.0 + 2.0 * gamma * lo * (kappa_c - 1.0))
}

/// `KL(N(μ,Σ) ‖ N(μ,P_γ)) = ½ Σ_k [λ_k/p_k − 1 + ln p_k − ln λ_k]`,
/// `p_k = (1−γ) + γλ_k`, in nats.
pub fn shrinkage_kl(corr_eigs: &[f64], gamma: f64) -> Result<f64> {
    check_eigs(corr_eigs)?;
    check_gamma(gamma)?;
    let s: f64 = corr_eigs
        .iter()
        .map(|&l| {
            let p = (1.0 - gamma) + gamma * l;
            l / p - 1.0 + p.ln() - l.ln()
        })
        .sum();
    Ok(0.5 * s)
}

fn off_diag(sigma: &CovarianceMatrix) -> DMatrix<f64> {
    sigma.off_diagonal()
}

fn shrunk(sigma: &CovarianceMatrix, gamma: f64) -> Result<CovarianceMatrix> {
    Ok(materialize(&shrink(sigma, gamma)?))
}

/// Relative residual of the error identity,
/// `‖(w⋆ − ŵ) + (1−γ)P_γ⁻¹Ew⋆‖ / ‖w⋆‖`, using two independent solves.
pub fn perturbation_residual(sigma: &CovarianceMatrix, mu: &Signal, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    mu.check_len(sigma.n())?;
    let w_star = sigma.solve(mu.values())?;
    let p = shrunk(sigma, gamma)?;
    let w_hat = p.solve(mu.values())?;
    let u = p.solve(&(off_diag(sigma) * &w_star))?;
    let r = (&w_star - &w_hat) + u * (1.0 - gamma);
    let scale = w_star.norm();
    if scale == 0.0 {
        return Err(Error::DegenerateInput("w* is the zero vector".into()));
    }
    Ok(r.norm() / scale)
}

/// Right-hand side of the direction-error bound and its geometric factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirBound {
    /// `(1−γ)²·‖P_γ⁻¹E‖²_op·‖w⋆‖²/‖ŵ‖²·G`.
    pub bound: f64,
    /// `G = sin²∠(w⋆, P_γ⁻¹Ew⋆)`.
    pub g_factor: f64,
}

/// Evaluates the direction-error bound for `γ ∈ [0, 1)`.
pub fn dir_bound_factors(sigma: &CovarianceMatrix, mu: &Signal, gamma: f64) -> Result<DirBound> {
    check_gamma(gamma)?;
    if gamma >= 1.0 {
        return Err(Error::Parameter("dir bound requires gamma < 1".into()));
    }
    mu.check_len(sigma.n())?;
    let w_star = sigma.solve(mu.values())?;
    let p = shrunk(sigma, gamma)?;
    let chol = p.cholesky()?;
    let pinv_e = chol.solve(&off_diag(sigma));
    let op = pinv_e.singular_values().max();
    let u: DVector<f64> = &pinv_e * &w_star;
    let w_hat = chol.solve(mu.values());

    let uu = u.dot(&u);
    let ww = w_star.dot(&w_star);
    let g = if uu == 0.0 || ww == 0.0 {
        0.0
    } else {
        let c = u.dot(&w_star);
        (1.0 - c * c / (uu * ww)).clamp(0.0, 1.0)
    };
    let hh = w_hat.dot(&w_hat);
    if hh == 0.0 {
        return Err(Error::DegenerateInput("P_gamma^-1 mu is the zero vector".into()));
    }
    let one_m = 1.0 - gamma;
    Ok(DirBound {
        bound: one_m * one_m * op * op * ww / hh * g,
        g_factor: g,
    })
}

/// `n` evenly spaced points on `[0, 1]`, both endpoints included.
pub fn gamma_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// The default 21-point trajectory grid.
pub fn default_gamma_grid() -> Vec<f64> {
    gamma_grid(21)
}

/// Direction errors of the exact fixed point and of the `p`-sweep CRISP
/// iterate at every `γ` in `gammas`.
pub fn trajectory(sigma: &CovarianceMatrix, mu: &Signal, gammas: &[f64], p: usize) -> Result<Vec<TrajectoryPoint>> {
    mu.check_len(sigma.n())?;
    for &g in gammas {
        check_gamma(g)?;
    }
    if p == 0 {
        return Err(Error::Parameter("sweep budget must be at least 1".into()));
    }
    let w_star = sigma.solve(mu.values())?;
    gammas
        .par_iter()
        .map(|&gamma| {
            let exact = if gamma == 0.0 {
                mu.values().component_div(&sigma.diag())
            } else {
                shrunk(sigma, gamma)?.solve(mu.values())?
            };
            // eps below any attainable relative change: always run all p sweeps
            let iterate = crisp_solve(sigma, mu, gamma, p, f64::MIN_POSITIVE, &SweepOrder::Natural)?
                .weights
                .into_values();
            Ok(TrajectoryPoint {
                gamma,
                dir_exact: dir_vec(&exact, &w_star)?,
                dir_finite_sweep: dir_vec(&iterate, &w_star)?,
                dir_slack: dir_vec(&iterate, &exact)?,
            })
        })
        .collect()
}

/// The 4×4 instance with a non-monotone exact trajectory (inputs at 3 decimals).
pub fn nonmonotone_example() -> (CovarianceMatrix, Signal) {
    let sigma = CovarianceMatrix::from_row_slice(
        4,
        &[
            1.055, 0.078, -0.711, -1.874, //
            0.078, 6.058, -0.379, 1.775, //
            -0.711, -0.379, 1.036, 2.063, //
            -1.874, 1.775, 2.063, 6.477,
        ],
    )
    .expect("example covariance is SPD");
    let mu = Signal::from_slice(&[-1.695, 0.271, 0.322, -0.500]).expect("finite signal");
    (sigma, mu)
}
