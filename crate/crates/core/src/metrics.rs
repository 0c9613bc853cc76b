//! Portfolio comparison metrics.
//!
//! [`dir`] measures the angle between the lines spanned by two weight vectors
//! and is blind to sign and scale. [`signed_cosine`] and
//! [`sign_match_fraction`] keep the sign information that `dir` discards.

use nalgebra::DVector;

use crate::core_types::{CovarianceMatrix, Signal, WeightVector};
use crate::error::{Error, Result};

/// The three direction measures for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionReport {
    pub dir_error: f64,
    pub signed_cosine: f64,
    pub sign_match_fraction: f64,
}

fn nonzero(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateInput(format!("{what} is the zero vector")));
    }
    Ok(())
}

fn check_pair(a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    nonzero(a, "weight vector")?;
    nonzero(b, "reference vector")
}

/// Direction error on raw vectors: `1 − (aᵀb)² / (‖a‖²‖b‖²)`, clamped to [0, 1].
pub fn dir_vec(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    check_pair(a, b)?;
    let ab = a.dot(b);
    let aa = a.dot(a);
    let bb = b.dot(b);
    let c2 = (ab * ab) / (aa * bb);
    Ok((1.0 - c2).clamp(0.0, 1.0))
}

/// Signed cosine on raw vectors.
pub fn signed_cosine_vec(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    check_pair(a, b)?;
    Ok((a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

/// `sign(x)` with `sign(0) = +1`.
pub fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Direction error between the lines spanned by `w` and `w_star`.
pub fn dir(w: &WeightVector, w_star: &WeightVector) -> Result<f64> {
    dir_vec(w.values(), w_star.values())
}

/// Direction error of the diagonal solution `D⁻¹μ` against `Σ⁻¹μ`.
pub fn dir_diag(sigma: &CovarianceMatrix, mu: &Signal) -> Result<f64> {
    mu.check_len(sigma.n())?;
    let d = sigma.diag();
    let naive = mu.values().component_div(&d);
    let star = sigma.solve(mu.values())?;
    dir_vec(&naive, &star)
}

pub fn signed_cosine(w: &WeightVector, w_star: &WeightVector) -> Result<f64> {
    signed_cosine_vec(w.values(), w_star.values())
}

/// Fraction of coordinates on which `w` and `w_star` agree in sign.
pub fn sign_match_fraction(w: &WeightVector, w_star: &WeightVector) -> Result<f64> {
    let (a, b) = (w.values(), w_star.values());
    check_pair(a, b)?;
    let matches = a
        .iter()
        .zip(b.iter())
        .filter(|(x, y)| sign(**x) == sign(**y))
        .count();
    Ok(matches as f64 / a.len() as f64)
}

pub fn direction_report(w: &WeightVector, w_star: &WeightVector) -> Result<DirectionReport> {
    Ok(DirectionReport {
        dir_error: dir(w, w_star)?,
        signed_cosine: signed_cosine(w, w_star)?,
        sign_match_fraction: sign_match_fraction(w, w_star)?,
    })
}

/// `wᵀμ / √(wᵀΣw)`, per period.
pub fn sharpe(w: &WeightVector, sigma: &CovarianceMatrix, mu: &Signal) -> Result<f64> {
    sharpe_vec(w.values(), sigma, mu)
}

pub fn sharpe_vec(w: &DVector<f64>, sigma: &CovarianceMatrix, mu: &Signal) -> Result<f64> {
    mu.check_len(sigma.n())?;
    if w.len() != sigma.n() {
        return Err(Error::DimensionMismatch {
            expected: sigma.n(),
            got: w.len(),
        });
    }
    let var = sigma.quad_form(w);
    if !(var > 0.0) {
        return Err(Error::DegenerateInput("portfolio has zero risk".into()));
    }
    Ok(w.dot(mu.values()) / var.sqrt())
}

/// `1 / √(w̃ᵀΣw̃)` for the sum-normalized `w̃ = w / 1ᵀw`.
pub fn minvar_sharpe_sum1(w: &WeightVector, sigma: &CovarianceMatrix) -> Result<f64> {
    minvar_sharpe_sum1_vec(w.values(), sigma)
}

pub fn minvar_sharpe_sum1_vec(w: &DVector<f64>, sigma: &CovarianceMatrix) -> Result<f64> {
    let s = w.sum();
    if s == 0.0 || !s.is_finite() {
        return Err(Error::DegenerateInput("weights sum to zero".into()));
    }
    let var = sigma.quad_form(w) / (s * s);
    if !(var > 0.0) {
        return Err(Error::DegenerateInput("portfolio has zero risk".into()));
    }
    Ok(1.0 / var.sqrt())
}

/// `‖w‖₁`.
pub fn gross_leverage(w: &WeightVector) -> f64 {
    w.values().lp_norm(1)
}
