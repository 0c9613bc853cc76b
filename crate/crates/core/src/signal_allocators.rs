//! Signal-aware tree passes: HRP-μ, HRP-Σμ and the signed HSP endpoint.
//!
//! Every internal node solves the 2×2 mean–variance system
//!
//! ```text
//! [ v_L   γc ] [α_L]   [s_L]
//! [ γc   v_R ] [α_R] = [s_R]
//! ```
//!
//! with Cramer's rule. The passes differ in how the child representatives
//! are built and how the raw budgets are normalized.

use nalgebra::DVector;

use crate::core_types::{check_gamma, CovarianceMatrix, NormTag, Signal, WeightVector};
use crate::dendrogram::Dendrogram;
use crate::error::{Error, Result};
use crate::metrics::sign;

/// Relative threshold on the Cramer determinant below which the decoupled
/// diagonal solve `α_k = s_k / v_k` is used instead.
pub const DELTA_RTOL: f64 = 1e-10;

/// Scalar statistics of the two child clusters at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterStats {
    pub v_l: f64,
    pub v_r: f64,
    pub s_l: f64,
    pub s_r: f64,
    pub c: f64,
}

impl ClusterStats {
    /// Cramer determinant `Δ = v_L v_R − γ²c²`.
    pub fn delta(&self, gamma: f64) -> f64 {
        self.v_l * self.v_r - gamma * gamma * self.c * self.c
    }

    /// Whether `Δ` is below the degeneracy threshold.
    pub fn is_degenerate(&self, gamma: f64) -> bool {
        self.delta(gamma).abs() < DELTA_RTOL * self.v_l * self.v_r
    }
}

/// How node budgets were normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetNorm {
    SumOne,
    L1One,
}

/// Normalized budgets of the two children at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeBudget {
    pub alpha_l: f64,
    pub alpha_r: f64,
    pub normalization: BudgetNorm,
}

/// Everything recorded at one internal node of a tree pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub node: usize,
    pub depth: usize,
    pub stats: ClusterStats,
    pub delta: f64,
    pub fallback: bool,
    pub raw: (f64, f64),
    /// The normalizing denominator (`α_L^raw + α_R^raw` or `|α_L^raw| + |α_R^raw|`).
    pub denominator: f64,
    pub budget: NodeBudget,
}

/// Raw budgets `(α_L, α_R)` from the 2×2 system, with the diagonal fallback
/// when `Δ` is degenerate.
pub fn solve_2x2(stats: &ClusterStats, gamma: f64) -> (f64, f64) {
    if stats.is_degenerate(gamma) {
        return (stats.s_l / stats.v_l, stats.s_r / stats.v_r);
    }
    let d = stats.delta(gamma);
    let gc = gamma * stats.c;
    (
        (stats.v_r * stats.s_l - gc * stats.s_r) / d,
        (stats.v_l * stats.s_r - gc * stats.s_l) / d,
    )
}

pub(crate) fn normalize_budget(raw: (f64, f64), norm: BudgetNorm) -> (f64, NodeBudget) {
    let z = match norm {
        BudgetNorm::SumOne => raw.0 + raw.1,
        BudgetNorm::L1One => raw.0.abs() + raw.1.abs(),
    };
    let (alpha_l, alpha_r) = if z == 0.0 || !z.is_finite() {
        (0.5, 0.5)
    } else {
        (raw.0 / z, raw.1 / z)
    };
    (
        z,
        NodeBudget {
            alpha_l,
            alpha_r,
            normalization: norm,
        },
    )
}

pub(crate) fn check_inputs(sigma: &CovarianceMatrix, mu: &Signal, tree: &Dendrogram, gamma: f64) -> Result<()> {
    check_gamma(gamma)?;
    mu.check_len(sigma.n())?;
    if tree.n() != sigma.n() {
        return Err(Error::DimensionMismatch {
            expected: sigma.n(),
            got: tree.n(),
        });
    }
    Ok(())
}

/// Cross covariance `aᵀ Σ_{LR} b` between two sparse representatives.
pub(crate) fn cross(sigma: &CovarianceMatrix, a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let m = sigma.matrix();
    a.iter()
        .map(|&(i, wi)| wi * b.iter().map(|&(j, wj)| m[(i, j)] * wj).sum::<f64>())
        .sum()
}

/// `aᵀ Σ a` for a sparse representative.
pub(crate) fn quad(sigma: &CovarianceMatrix, a: &[(usize, f64)]) -> f64 {
    cross(sigma, a, a)
}

/// Flat inverse-variance representative on `leaves`, optionally signed by `μ`.
pub(crate) fn ivp_rep(sigma: &CovarianceMatrix, leaves: &[usize], signs: Option<&Signal>) -> Vec<(usize, f64)> {
    let total: f64 = leaves.iter().map(|&i| 1.0 / sigma.get(i, i)).sum();
    leaves
        .iter()
        .map(|&i| {
            let s = signs.map_or(1.0, |mu| sign(mu.get(i)));
            (i, s * (1.0 / sigma.get(i, i)) / total)
        })
        .collect()
}

/// Top-down pass where each child cluster is scored by a flat representative
/// and budgets multiply down the tree. Shared by HRP-μ, HSP and the flat-IVP
/// diagnostic.
pub(crate) fn flat_rep_pass(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    tree: &Dendrogram,
    gamma: f64,
    signed: bool,
    trace: &mut Vec<NodeTrace>,
) -> DVector<f64> {
    let n = sigma.n();
    let mut budget = DVector::zeros(n);
    let mut stack = vec![(tree.root(), 1.0, 0usize)];
    while let Some((id, b, depth)) = stack.pop() {
        let Some((l, r)) = tree.children(id) else {
            budget[tree.leaves(id)[0]] = b;
            continue;
        };
        let sgn = if signed { Some(mu) } else { None };
        let wl = ivp_rep(sigma, tree.leaves(l), sgn);
        let wr = ivp_rep(sigma, tree.leaves(r), sgn);
        let dot = |w: &[(usize, f64)]| w.iter().map(|&(i, x)| x * mu.get(i)).sum::<f64>();
        let stats = ClusterStats {
            v_l: quad(sigma, &wl),
            v_r: quad(sigma, &wr),
            s_l: dot(&wl),
            s_r: dot(&wr),
            c: cross(sigma, &wl, &wr),
        };
        let raw = solve_2x2(&stats, gamma);
        let (z, nb) = normalize_budget(raw, BudgetNorm::SumOne);
        trace.push(NodeTrace {
            node: id,
            depth,
            stats,
            delta: stats.delta(gamma),
            fallback: stats.is_degenerate(gamma),
            raw,
            denominator: z,
            budget: nb,
        });
        stack.push((r, b * nb.alpha_r, depth + 1));
        stack.push((l, b * nb.alpha_l, depth + 1));
    }
    budget
}

/// HRP-μ with the per-node trace.
pub fn hrp_mu_traced(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    tree: &Dendrogram,
    gamma: f64,
) -> Result<(WeightVector, Vec<NodeTrace>)> {
    check_inputs(sigma, mu, tree, gamma)?;
    let mut trace = Vec::new();
    let budget = flat_rep_pass(sigma, mu, tree, gamma, true, &mut trace);
    let w = DVector::from_fn(budget.len(), |i, _| budget[i] * sign(mu.get(i)));
    Ok((WeightVector::raw(w), trace))
}

/// HRP-μ: signed inverse-variance representatives, sum-normalized node
/// budgets and a final leaf sign `sign(μ_i)`.
pub fn hrp_mu(sigma: &CovarianceMatrix, mu: &Signal, tree: &Dendrogram, gamma: f64) -> Result<WeightVector> {
    hrp_mu_traced(sigma, mu, tree, gamma).map(|(w, _)| w)
}

/// Signed Hierarchical Signal Parity, the `γ = 0` endpoint of HRP-μ.
pub fn hsp(sigma: &CovarianceMatrix, mu: &Signal, tree: &Dendrogram) -> Result<WeightVector> {
    hrp_mu(sigma, mu, tree, 0.0)
}

/// Output of a bottom-up stacked pass at one subtree.
pub(crate) struct Stacked {
    pub rep: Vec<(usize, f64)>,
    pub v: f64,
    pub s: f64,
}

/// Bottom-up pass where each node's representative is the stacked
/// `(α_L ŵ_L, α_R ŵ_R)`. Shared by HRP-Σμ and the sum-normalized diagnostic.
pub(crate) fn stacked_pass(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    tree: &Dendrogram,
    gamma: f64,
    norm: BudgetNorm,
    trace: &mut Vec<NodeTrace>,
) -> Stacked {
    #[allow(clippy::too_many_arguments)]
    fn go(
        sigma: &CovarianceMatrix,
        mu: &Signal,
        tree: &Dendrogram,
        gamma: f64,
        norm: BudgetNorm,
        id: usize,
        depth: usize,
        trace: &mut Vec<NodeTrace>,
    ) -> Stacked {
        let Some((l, r)) = tree.children(id) else {
            let i = tree.leaves(id)[0];
            return Stacked {
                rep: vec![(i, 1.0)],
                v: sigma.get(i, i),
                s: mu.get(i),
            };
        };
        let left = go(sigma, mu, tree, gamma, norm, l, depth + 1, trace);
        let right = go(sigma, mu, tree, gamma, norm, r, depth + 1, trace);
        let c = cross(sigma, &left.rep, &right.rep);
        let stats = ClusterStats {
            v_l: left.v,
            v_r: right.v,
            s_l: left.s,
            s_r: right.s,
            c,
        };
        let raw = solve_2x2(&stats, gamma);
        let (z, nb) = normalize_budget(raw, norm);
        trace.push(NodeTrace {
            node: id,
            depth,
            stats,
            delta: stats.delta(gamma),
            fallback: stats.is_degenerate(gamma),
            raw,
            denominator: z,
            budget: nb,
        });
        let (al, ar) = (nb.alpha_l, nb.alpha_r);
        let mut rep = Vec::with_capacity(left.rep.len() + right.rep.len());
        rep.extend(left.rep.iter().map(|&(i, w)| (i, al * w)));
        rep.extend(right.rep.iter().map(|&(i, w)| (i, ar * w)));
        Stacked {
            rep,
            v: al * al * left.v + ar * ar * right.v + 2.0 * al * ar * c,
            s: al * left.s + ar * right.s,
        }
    }
    go(sigma, mu, tree, gamma, norm, tree.root(), 0, trace)
}

pub(crate) fn dense(n: usize, rep: &[(usize, f64)]) -> DVector<f64> {
    let mut w = DVector::zeros(n);
    for &(i, x) in rep {
        w[i] = x;
    }
    w
}

/// HRP-Σμ with the per-node trace.
pub fn hrp_sigma_mu_traced(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    tree: &Dendrogram,
    gamma: f64,
) -> Result<(WeightVector, Vec<NodeTrace>)> {
    check_inputs(sigma, mu, tree, gamma)?;
    let mut trace = Vec::new();
    let out = stacked_pass(sigma, mu, tree, gamma, BudgetNorm::L1One, &mut trace);
    let w = dense(sigma.n(), &out.rep);
    Ok((WeightVector::with_tag(w, NormTag::L1One), trace))
}

/// HRP-Σμ: recursive 2×2 mean–variance pass with L1-normalized node budgets.
/// The root representative is returned tagged `L1One`.
pub fn hrp_sigma_mu(sigma: &CovarianceMatrix, mu: &Signal, tree: &Dendrogram, gamma: f64) -> Result<WeightVector> {
    hrp_sigma_mu_traced(sigma, mu, tree, gamma).map(|(w, _)| w)
}
