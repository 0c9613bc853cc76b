//! CRISP: Gauss–Seidel sweeps on `P_γ w = μ` with `P_γ = (1−γ)D + γΣ`.
//!
//! The coordinate update is `w_i ← (μ_i − γ Σ_{j≠i} σ_ij w_j) / σ_ii`, using the
//! latest value of every `w_j`. Iteration starts from the diagonal solve
//! `D⁻¹μ` and stops when `‖w − w_prev‖₂ ≤ ε‖w_prev‖₂` or after `p_max` sweeps.
//!
//! Three front ends share that sweep:
//! * [`crisp_solve`] on a dense covariance,
//! * [`crisp_solve_stream`] on a factor model without forming `Σ`,
//! * [`crisp_projected`] with box, budget and linear-inequality constraints.

use nalgebra::{DMatrix, DVector};

use crate::core_types::{check_gamma, to_correlation, CovarianceMatrix, Signal, WeightVector};
use crate::error::{Error, Result};

/// Recommended operating point: `γ = 0.5`, 100 sweeps, `ε = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrispPreset {
    pub gamma: f64,
    pub p_max: usize,
    pub eps: f64,
}

pub const DEFAULT_PRESET: CrispPreset = CrispPreset {
    gamma: 0.5,
    p_max: 100,
    eps: 1e-8,
};

/// Upper bound on sweeps for [`sweeps_to_tolerance`].
pub const SWEEP_CAP: usize = 200_000;

/// Result of a CRISP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub weights: WeightVector,
    pub sweeps_used: usize,
    pub final_rel_change: f64,
    pub converged: bool,
}

/// Order in which coordinates are visited within a sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SweepOrder {
    #[default]
    Natural,
    /// An explicit permutation of `0..n`, e.g. a dendrogram leaf order.
    Custom(Vec<usize>),
}

impl SweepOrder {
    fn indices(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            SweepOrder::Natural => Ok((0..n).collect()),
            SweepOrder::Custom(v) => {
                let mut s = v.clone();
                s.sort_unstable();
                if s.len() != n || s.iter().enumerate().any(|(i, &x)| i != x) {
                    return Err(Error::Parameter(format!(
                        "sweep order must be a permutation of 0..{n}"
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

fn check_solver_params(gamma: f64, p_max: usize, eps: f64) -> Result<()> {
    check_gamma(gamma)?;
    if p_max == 0 {
        return Err(Error::Parameter("p_max must be at least 1".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps = {eps} must be positive")));
    }
    Ok(())
}

fn diag_checked(sigma: &CovarianceMatrix) -> Result<DVector<f64>> {
    let d = sigma.diag();
    if let Some(i) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::InvalidCovariance(format!("zero diagonal entry {i}")));
    }
    Ok(d)
}

/// One in-place Gauss–Seidel sweep over a dense matrix.
fn dense_sweep(m: &DMatrix<f64>, d: &DVector<f64>, mu: &DVector<f64>, gamma: f64, order: &[usize], w: &mut DVector<f64>) {
    for &i in order {
        let row = m.row(i);
        let off = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() - m[(i, i)] * w[i];
        w[i] = (mu[i] - gamma * off) / d[i];
    }
}

fn rel_change(w: &DVector<f64>, prev: &DVector<f64>) -> f64 {
    let den = prev.norm();
    let num = (w - prev).norm();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Runs sweeps, calling `observe(sweep, &w)` after each one.
fn run_sweeps(
    p_max: usize,
    eps: f64,
    gamma: f64,
    mut w: DVector<f64>,
    mut sweep: impl FnMut(&mut DVector<f64>),
    mut observe: impl FnMut(usize, &DVector<f64>),
) -> SolveReport {
    if gamma < eps {
        return SolveReport {
            weights: WeightVector::raw(w),
            sweeps_used: 0,
            final_rel_change: 0.0,
            converged: true,
        };
    }
    let mut change = f64::INFINITY;
    let mut used = 0;
    for p in 1..=p_max {
        let prev = w.clone();
        sweep(&mut w);
        used = p;
        observe(p, &w);
        change = rel_change(&w, &prev);
        if change <= eps {
            break;
        }
    }
    SolveReport {
        weights: WeightVector::raw(w),
        sweeps_used: used,
        final_rel_change: change,
        converged: change <= eps,
    }
}

/// Dense CRISP solve.
pub fn crisp_solve(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    gamma: f64,
    p_max: usize,
    eps: f64,
    order: &SweepOrder,
) -> Result<SolveReport> {
    crisp_solve_observed(sigma, mu, gamma, p_max, eps, order, |_, _| {})
}

/// [`crisp_solve`] with a callback receiving the iterate after every sweep.
pub fn crisp_solve_observed(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    gamma: f64,
    p_max: usize,
    eps: f64,
    order: &SweepOrder,
    observe: impl FnMut(usize, &DVector<f64>),
) -> Result<SolveReport> {
    check_solver_params(gamma, p_max, eps)?;
    mu.check_len(sigma.n())?;
    let d = diag_checked(sigma)?;
    let idx = order.indices(sigma.n())?;
    let mu_v = mu.values();
    let w0 = mu_v.component_div(&d);
    let m = sigma.matrix();
    Ok(run_sweeps(
        p_max,
        eps,
        gamma,
        w0,
        |w| dense_sweep(m, &d, mu_v, gamma, &idx, w),
        observe,
    ))
}

/// `K`-factor covariance `Σ = BΛBᵀ + diag(d_idio)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    loadings: DMatrix<f64>,
    factor_cov: DMatrix<f64>,
    idio_var: DVector<f64>,
}

impl FactorModel {
    pub fn new(loadings: DMatrix<f64>, factor_cov: DMatrix<f64>, idio_var: DVector<f64>) -> Result<Self> {
        let (n, k) = loadings.shape();
        if factor_cov.shape() != (k, k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: factor_cov.nrows(),
            });
        }
        if idio_var.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: idio_var.len(),
            });
        }
        if idio_var.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidCovariance("negative idiosyncratic variance".into()));
        }
        if k > 0 && nalgebra::Cholesky::new(factor_cov.clone()).is_none() {
            return Err(Error::InvalidCovariance("factor covariance is not SPD".into()));
        }
        let fm = Self {
            loadings,
            factor_cov,
            idio_var,
        };
        if let Some(i) = fm.diag().iter().position(|&x| !(x > 0.0)) {
            return Err(Error::InvalidCovariance(format!("implied variance {i} is not positive")));
        }
        Ok(fm)
    }

    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn factor_cov(&self) -> &DMatrix<f64> {
        &self.factor_cov
    }

    pub fn idio_var(&self) -> &DVector<f64> {
        &self.idio_var
    }

    /// Implied variances `B_iΛB_iᵀ + d_idio,i`, computed in `O(NK²)`.
    pub fn diag(&self) -> DVector<f64> {
        let bl = &self.loadings * &self.factor_cov;
        DVector::from_fn(self.n(), |i, _| {
            bl.row(i).dot(&self.loadings.row(i)) + self.idio_var[i]
        })
    }

    /// Dense `Σ`.
    pub fn materialize(&self) -> Result<CovarianceMatrix> {
        let m = &self.loadings * &self.factor_cov * self.loadings.transpose()
            + DMatrix::from_diagonal(&self.idio_var);
        CovarianceMatrix::new((&m + m.transpose()) * 0.5)
    }
}

/// Factor-streaming CRISP. Maintains `z = Bᵀw` so that each coordinate update
/// costs `O(K²)` and no `N×N` array is formed. Uses the same stopping rule as
/// [`crisp_solve`].
pub fn crisp_solve_stream(fm: &FactorModel, mu: &Signal, gamma: f64, p_max: usize, eps: f64) -> Result<SolveReport> {
    crisp_solve_stream_observed(fm, mu, gamma, p_max, eps, |_, _| {})
}

pub fn crisp_solve_stream_observed(
    fm: &FactorModel,
    mu: &Signal,
    gamma: f64,
    p_max: usize,
    eps: f64,
    observe: impl FnMut(usize, &DVector<f64>),
) -> Result<SolveReport> {
    check_solver_params(gamma, p_max, eps)?;
    mu.check_len(fm.n())?;
    let n = fm.n();
    let b = &fm.loadings;
    let lam = &fm.factor_cov;
    let d = fm.diag();
    let mu_v = mu.values();
    let w0 = mu_v.component_div(&d);
    let mut z: DVector<f64> = b.transpose() * &w0;
    Ok(run_sweeps(
        p_max,
        eps,
        gamma,
        w0,
        |w| {
            for i in 0..n {
                let bi = b.row(i).transpose();
                let z_minus = &z - &bi * w[i];
                let off = bi.dot(&(lam * &z_minus));
                let new = (mu_v[i] - gamma * off) / d[i];
                z = z_minus + &bi * new;
                w[i] = new;
            }
        },
        observe,
    ))
}

/// Outcome of a residual-based sweep count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepCount {
    Converged(usize),
    NotConverged { cap: usize, residual: f64 },
}

impl SweepCount {
    pub fn sweeps(&self) -> Option<usize> {
        match self {
            SweepCount::Converged(n) => Some(*n),
            SweepCount::NotConverged { .. } => None,
        }
    }
}

/// Relative residual `‖P_γw − μ‖₂ / ‖μ‖₂`.
pub fn relative_residual(sigma: &CovarianceMatrix, mu: &Signal, gamma: f64, w: &DVector<f64>) -> f64 {
    let m = sigma.matrix();
    let sw = m * w;
    let r = DVector::from_fn(w.len(), |i, _| {
        gamma * sw[i] + (1.0 - gamma) * m[(i, i)] * w[i] - mu.get(i)
    });
    let mun = mu.values().norm();
    if mun == 0.0 {
        r.norm()
    } else {
        r.norm() / mun
    }
}

/// Number of sweeps until `‖P_γw − μ‖/‖μ‖ < tol`, counting from the diagonal
/// start. At `γ = 0` the first sweep lands on the exact solution, so the
/// count is 1.
pub fn sweeps_to_tolerance(sigma: &CovarianceMatrix, mu: &Signal, gamma: f64, tol: f64) -> Result<SweepCount> {
    sweeps_to_tolerance_with(sigma, mu, gamma, tol, &SweepOrder::Natural, SWEEP_CAP)
}

pub fn sweeps_to_tolerance_with(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    gamma: f64,
    tol: f64,
    order: &SweepOrder,
    cap: usize,
) -> Result<SweepCount> {
    check_gamma(gamma)?;
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tol = {tol} must be positive")));
    }
    mu.check_len(sigma.n())?;
    let d = diag_checked(sigma)?;
    let idx = order.indices(sigma.n())?;
    let m = sigma.matrix();
    let mu_v = mu.values();
    let mut w = mu_v.component_div(&d);
    let mut residual = f64::INFINITY;
    for p in 1..=cap {
        dense_sweep(m, &d, mu_v, gamma, &idx, &mut w);
        residual = relative_residual(sigma, mu, gamma, &w);
        if residual < tol {
            return Ok(SweepCount::Converged(p));
        }
    }
    Ok(SweepCount::NotConverged { cap, residual })
}

/// Spectral radius of the Jacobi iteration matrix `−γD⁻¹E`, computed from
/// the similar symmetric matrix `γ(C − I)`.
pub fn jacobi_spectral_radius(sigma: &CovarianceMatrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let c = to_correlation(sigma)?;
    let n = c.n();
    let m = (c.matrix() - DMatrix::identity(n, n)) * gamma;
    Ok(crate::core_types::sym_eigenvalues(&m)
        .iter()
        .fold(0.0f64, |a, &x| a.max(x.abs())))
}

/// Box bounds, optional budget and linear inequalities `aᵀw ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub budget: Option<f64>,
    pub linear_ineq: Vec<(DVector<f64>, f64)>,
}

impl ConstraintSet {
    pub fn unconstrained(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            budget: None,
            linear_ineq: Vec::new(),
        }
    }

    /// `w ≥ 0` and `1ᵀw = budget`.
    pub fn long_only(n: usize, budget: f64) -> Self {
        Self {
            lower: DVector::zeros(n),
            upper: DVector::from_element(n, f64::INFINITY),
            budget: Some(budget),
            linear_ineq: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn with_box(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_budget(mut self, budget: Option<f64>) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_ineq(mut self, a: DVector<f64>, b: f64) -> Self {
        self.linear_ineq.push((a, b));
        self
    }

    /// Caps the summed weight of `members` at `cap`.
    pub fn with_group_cap(self, members: &[usize], cap: f64) -> Self {
        let n = self.n();
        let mut a = DVector::zeros(n);
        for &i in members {
            a[i] = 1.0;
        }
        self.with_ineq(a, cap)
    }

    /// Largest violation of any constraint at `w`.
    pub fn max_violation(&self, w: &DVector<f64>) -> f64 {
        let mut v = 0.0f64;
        for i in 0..w.len() {
            v = v.max(self.lower[i] - w[i]).max(w[i] - self.upper[i]);
        }
        if let Some(b) = self.budget {
            v = v.max((w.sum() - b).abs());
        }
        for (a, b) in &self.linear_ineq {
            v = v.max(a.dot(w) - b);
        }
        v
    }

    /// Cheap necessary conditions for a nonempty feasible set.
    pub fn probe(&self) -> Result<()> {
        let n = self.n();
        if self.upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.upper.len(),
            });
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] || self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(Error::Infeasible(format!("lower bound exceeds upper bound at {i}")));
            }
        }
        if let Some(b) = self.budget {
            let (lo, hi) = (self.lower.sum(), self.upper.sum());
            if b < lo || b > hi {
                return Err(Error::Infeasible(format!(
                    "budget {b} outside the box range [{lo}, {hi}]"
                )));
            }
        }
        for (k, (a, _)) in self.linear_ineq.iter().enumerate() {
            if a.len() != n {
                return Err(Error::Infeasible(format!("inequality {k} has wrong length")));
            }
        }
        Ok(())
    }

    fn clamp(&self, i: usize, x: f64) -> f64 {
        x.max(self.lower[i]).min(self.upper[i])
    }

    /// Euclidean projection onto the box intersected with the budget
    /// hyperplane: `w_i = clamp(x_i − τ)` with `τ` found by bisection.
    pub fn project_box_budget(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let clamp_all = |tau: f64| DVector::from_fn(n, |i, _| self.clamp(i, x[i] - tau));
        let Some(budget) = self.budget else {
            return clamp_all(0.0);
        };
        let all_free = (0..n).all(|i| self.lower[i] == f64::NEG_INFINITY && self.upper[i] == f64::INFINITY);
        if all_free {
            let tau = (x.sum() - budget) / n as f64;
            return x.map(|v| v - tau);
        }
        let g = |tau: f64| clamp_all(tau).sum() - budget;
        let mut step = 1.0 + x.amax();
        let (mut lo, mut hi) = (-step, step);
        while g(lo) < 0.0 {
            step *= 2.0;
            lo = -step;
        }
        while g(hi) > 0.0 {
            step *= 2.0;
            hi = step;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        clamp_all(0.5 * (lo + hi))
    }

    /// Euclidean projection onto the full set by Dykstra's alternating
    /// projections between the box-budget set and each half-space, finished
    /// with a box-budget projection.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.linear_ineq.is_empty() {
            return Ok(self.project_box_budget(x));
        }
        let m = self.linear_ineq.len() + 1;
        let mut y = x.clone();
        let mut incr: Vec<DVector<f64>> = vec![DVector::zeros(x.len()); m];
        for _ in 0..20_000 {
            let start = y.clone();
            for (k, inc) in incr.iter_mut().enumerate() {
                let z = &y + &*inc;
                let p = if k == 0 {
                    self.project_box_budget(&z)
                } else {
                    let (a, b) = &self.linear_ineq[k - 1];
                    let excess = a.dot(&z) - b;
                    if excess > 0.0 {
                        &z - a * (excess / a.norm_squared())
                    } else {
                        z.clone()
                    }
                };
                *inc = &z - &p;
                y = p;
            }
            if (&y - &start).norm() <= 1e-10 * (1.0 + start.norm()) && self.max_violation(&y) <= 1e-10 {
                break;
            }
        }
        Ok(self.project_box_budget(&y))
    }
}

/// Minimiser over `x` of the one-dimensional piecewise quadratic whose
/// derivative is `q·x + c + Σ_k a_k·max(0, e_k + ρ a_k x)`.
fn hinge_root(q: f64, c: f64, rho: f64, hinges: &[(f64, f64)]) -> f64 {
    let deriv = |x: f64| {
        q * x + c + hinges.iter().map(|&(a, e)| a * (e + rho * a * x).max(0.0)).sum::<f64>()
    };
    let solve_at = |x: f64| {
        let (mut slope, mut intercept) = (q, c);
        for &(a, e) in hinges {
            if e + rho * a * x > 0.0 {
                slope += rho * a * a;
                intercept += a * e;
            }
        }
        -intercept / slope
    };
    if hinges.is_empty() {
        return -c / q;
    }
    let mut kinks: Vec<f64> = hinges.iter().map(|&(a, e)| -e / (rho * a)).collect();
    kinks.sort_by(f64::total_cmp);
    match kinks.iter().position(|&k| deriv(k) >= 0.0) {
        Some(0) => solve_at(kinks[0] - 1.0),
        Some(j) => solve_at(0.5 * (kinks[j - 1] + kinks[j])),
        None => solve_at(kinks[kinks.len() - 1] + 1.0),
    }
}

/// Projected CRISP for `min ½wᵀP_γw − μᵀw` over a constraint set.
///
/// Each sweep visits every coordinate once and minimises the augmented
/// Lagrangian of the budget and inequality constraints along it, clamped to
/// the box. The multipliers are updated at the end of the sweep. The returned
/// point is the Euclidean projection of the last iterate onto the set, so it
/// is feasible even when the sweep budget runs out. With no constraints the
/// sweep is the plain dense sweep.
pub fn crisp_projected(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    gamma: f64,
    p: usize,
    eps: f64,
    constraints: &ConstraintSet,
) -> Result<SolveReport> {
    check_solver_params(gamma, p, eps)?;
    mu.check_len(sigma.n())?;
    if constraints.n() != sigma.n() {
        return Err(Error::DimensionMismatch {
            expected: sigma.n(),
            got: constraints.n(),
        });
    }
    constraints.probe()?;
    let d = diag_checked(sigma)?;
    let m = sigma.matrix();
    let mu_v = mu.values();
    let n = sigma.n();
    let ineq = &constraints.linear_ineq;
    let rho = d.mean();
    let touching: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..ineq.len()).filter(|&k| ineq[k].0[i] != 0.0).collect())
        .collect();

    let mut w = mu_v.component_div(&d);
    let mut nu = 0.0;
    let mut lambda = vec![0.0; ineq.len()];
    let mut total = w.sum();
    let mut lhs: Vec<f64> = ineq.iter().map(|(a, _)| a.dot(&w)).collect();
    let mut hinges = Vec::new();
    let mut change = f64::INFINITY;
    let mut used = 0;
    for sweep in 1..=p {
        let prev = w.clone();
        for i in 0..n {
            let off = m.row(i).iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() - m[(i, i)] * w[i];
            let old = w[i];
            let x = match constraints.budget {
                None if touching[i].is_empty() => (mu_v[i] - gamma * off) / d[i],
                budget => {
                    let (mut q, mut c) = (d[i], gamma * off - mu_v[i]);
                    if let Some(b) = budget {
                        q += rho;
                        c += nu + rho * (total - old - b);
                    }
                    hinges.clear();
                    for &k in &touching[i] {
                        let a = ineq[k].0[i];
                        hinges.push((a, lambda[k] + rho * (lhs[k] - a * old - ineq[k].1)));
                    }
                    hinge_root(q, c, rho, &hinges)
                }
            };
            let x = constraints.clamp(i, x);
            w[i] = x;
            total += x - old;
            for &k in &touching[i] {
                lhs[k] += ineq[k].0[i] * (x - old);
            }
        }
        total = w.sum();
        if let Some(b) = constraints.budget {
            nu += rho * (total - b);
        }
        for (k, (a, b)) in ineq.iter().enumerate() {
            lhs[k] = a.dot(&w);
            lambda[k] = (lambda[k] + rho * (lhs[k] - b)).max(0.0);
        }
        used = sweep;
        change = rel_change(&w, &prev);
        if change <= eps && constraints.max_violation(&w) <= 1e-10 {
            break;
        }
    }
    let w = constraints.project(&w)?;
    let v = constraints.max_violation(&w);
    if v > 1e-8 {
        return Err(Error::Infeasible(format!(
            "projection left a constraint violated by {v:.3e}"
        )));
    }
    Ok(SolveReport {
        weights: WeightVector::raw(w),
        sweeps_used: used,
        final_rel_change: change,
        converged: change <= eps,
    })
}
