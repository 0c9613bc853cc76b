//! Signal-blind baselines and two diagnostic tree passes.
//!
//! [`hrp`] and [`cotton`] allocate from `Σ` alone. [`a2_flat_ivp_tree`] and
//! [`a1_sum_norm_mvo`] are signal-aware tree passes that are known to fail;
//! they exist so the failure modes can be reproduced and tested.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::core_types::{check_gamma, kappa_spd, CovarianceMatrix, NormTag, Signal, WeightVector};
use crate::dendrogram::Dendrogram;
use crate::error::{Error, Result};
pub use crate::signal_allocators::ClusterStats;
use crate::signal_allocators::{
    check_inputs, dense, flat_rep_pass, ivp_rep, quad, stacked_pass, BudgetNorm, NodeTrace,
};

fn check_tree(sigma: &CovarianceMatrix, tree: &Dendrogram) -> Result<()> {
    if tree.n() != sigma.n() {
        return Err(Error::DimensionMismatch {
            expected: sigma.n(),
            got: tree.n(),
        });
    }
    Ok(())
}

/// `1/N` in every asset.
pub fn equal_weight(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::DegenerateUniverse(0));
    }
    Ok(WeightVector::with_tag(
        DVector::from_element(n, 1.0 / n as f64),
        NormTag::SumOne,
    ))
}

/// Unnormalized minimum-variance direction `Σ⁻¹1`.
pub fn direct_minvar(sigma: &CovarianceMatrix) -> Result<WeightVector> {
    let ones = DVector::from_element(sigma.n(), 1.0);
    Ok(WeightVector::raw(sigma.solve(&ones)?))
}

/// Hierarchical risk parity: each node splits its budget between children in
/// inverse proportion to the variance of their flat inverse-variance
/// portfolios. Output is long-only and sums to one.
pub fn hrp(sigma: &CovarianceMatrix, tree: &Dendrogram) -> Result<WeightVector> {
    check_tree(sigma, tree)?;
    let mut w = DVector::zeros(sigma.n());
    let mut stack = vec![(tree.root(), 1.0)];
    while let Some((id, b)) = stack.pop() {
        match tree.children(id) {
            None => w[tree.leaves(id)[0]] = b,
            Some((l, r)) => {
                let vl = quad(sigma, &ivp_rep(sigma, tree.leaves(l), None));
                let vr = quad(sigma, &ivp_rep(sigma, tree.leaves(r), None));
                let alpha = vr / (vl + vr);
                stack.push((l, b * alpha));
                stack.push((r, b * (1.0 - alpha)));
            }
        }
    }
    Ok(WeightVector::with_tag(w, NormTag::SumOne))
}

/// Root split `α_L` of [`hrp`].
pub fn hrp_root_alpha(sigma: &CovarianceMatrix, tree: &Dendrogram) -> Result<f64> {
    check_tree(sigma, tree)?;
    let (l, r) = tree
        .children(tree.root())
        .ok_or(Error::DegenerateUniverse(1))?;
    let vl = quad(sigma, &ivp_rep(sigma, tree.leaves(l), None));
    let vr = quad(sigma, &ivp_rep(sigma, tree.leaves(r), None));
    Ok(vr / (vl + vr))
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

fn subv(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |a, _| v[idx[a]])
}

fn chol(m: &DMatrix<f64>, depth: usize, gamma: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::SchurBreakdown { depth, gamma })
}

fn kappa_log10(m: &DMatrix<f64>, depth: usize, gamma: f64) -> Result<f64> {
    if m.nrows() == 1 {
        return Ok(0.0);
    }
    kappa_spd(m)
        .map(f64::log10)
        .map_err(|_| Error::SchurBreakdown { depth, gamma })
}

struct CottonPass<'a> {
    tree: &'a Dendrogram,
    gamma: f64,
    log10_kappa: f64,
    want_kappa: bool,
}

impl CottonPass<'_> {
    /// Returns the node's allocation in the local (sorted-leaf) order of `id`.
    fn run(&mut self, id: usize, q: &DMatrix<f64>, b: &DVector<f64>, depth: usize) -> Result<DVector<f64>> {
        let Some((l, r)) = self.tree.children(id) else {
            return Ok(DVector::from_element(1, b[0] / q[(0, 0)]));
        };
        let all = self.tree.leaves(id);
        let pos = |child: usize| -> Vec<usize> {
            self.tree
                .leaves(child)
                .iter()
                .map(|x| all.binary_search(x).expect("child leaf in parent"))
                .collect()
        };
        let (il, ir) = (pos(l), pos(r));
        let g = self.gamma;
        let a = sub(q, &il, &il);
        let d = sub(q, &ir, &ir);
        let bm = sub(q, &il, &ir);
        let (bl, br) = (subv(b, &il), subv(b, &ir));

        let ca = chol(&a, depth, g)?;
        let cd = chol(&d, depth, g)?;
        let dinv_bt = cd.solve(&bm.transpose());
        let dinv_br = cd.solve(&br);
        let ainv_b = ca.solve(&bm);
        let ainv_bl = ca.solve(&bl);

        let mut ac = &a - &bm * &dinv_bt * g;
        let mut dc = &d - bm.transpose() * &ainv_b * g;
        ac = (&ac + ac.transpose()) * 0.5;
        dc = (&dc + dc.transpose()) * 0.5;
        let ba = &bl - &bm * &dinv_br * g;
        let bd = &br - bm.transpose() * &ainv_bl * g;

        if self.want_kappa {
            self.log10_kappa += kappa_log10(&ac, depth + 1, g)? + kappa_log10(&dc, depth + 1, g)?;
        }
        let fit_l = ba.dot(&chol(&ac, depth + 1, g)?.solve(&ba));
        let fit_r = bd.dot(&chol(&dc, depth + 1, g)?.solve(&bd));

        let rl = self.run(l, &ac, &ba, depth + 1)?;
        let rr = self.run(r, &dc, &bd, depth + 1)?;
        let scale = |r: &DVector<f64>, rhs: &DVector<f64>, fit: f64| {
            let den = rhs.dot(r);
            if den == 0.0 {
                0.0
            } else {
                fit / den
            }
        };
        let (kl, kr) = (scale(&rl, &ba, fit_l), scale(&rr, &bd, fit_r));
        let mut out = DVector::zeros(all.len());
        for (k, &p) in il.iter().enumerate() {
            out[p] = kl * rl[k];
        }
        for (k, &p) in ir.iter().enumerate() {
            out[p] = kr * rr[k];
        }
        Ok(out)
    }
}

fn cotton_impl(sigma: &CovarianceMatrix, tree: &Dendrogram, gamma: f64, want_kappa: bool) -> Result<(DVector<f64>, f64)> {
    check_gamma(gamma)?;
    check_tree(sigma, tree)?;
    let mut pass = CottonPass {
        tree,
        gamma,
        log10_kappa: 0.0,
        want_kappa,
    };
    // The root's sorted leaf set is 0..n, so the root's local order is the asset order.
    let ones = DVector::from_element(sigma.n(), 1.0);
    let w = pass.run(tree.root(), sigma.matrix(), &ones, 0)?;
    Ok((w, pass.log10_kappa))
}

/// Cotton's Schur-complement recursion for the minimum-variance direction.
///
/// At a node with blocks `A` (left), `D` (right) and cross block `B`, the
/// children are entered with the augmented blocks `A^c = A − γBD⁻¹Bᵀ`,
/// `D^c = D − γBᵀA⁻¹B` and corrected right-hand sides
/// `b_A = b_L − γBD⁻¹b_R`, `b_D = b_R − γBᵀA⁻¹b_L`. Each child's output is
/// scaled so that its fit against the corrected right-hand side equals
/// `b_Aᵀ(A^c)⁻¹b_A`. At `γ = 1` the result is collinear with `Σ⁻¹1`.
pub fn cotton(sigma: &CovarianceMatrix, tree: &Dendrogram, gamma: f64) -> Result<WeightVector> {
    let (w, _) = cotton_impl(sigma, tree, gamma, false)?;
    let s = w.sum();
    if s == 0.0 || !s.is_finite() {
        return Err(Error::DegenerateInput("cotton weights sum to zero".into()));
    }
    Ok(WeightVector::with_tag(w / s, NormTag::SumOne))
}

/// `log₁₀` of the product of condition numbers of every augmented Schur block
/// visited by [`cotton`].
pub fn cotton_log10_kappa_product(sigma: &CovarianceMatrix, tree: &Dendrogram, gamma: f64) -> Result<f64> {
    cotton_impl(sigma, tree, gamma, true).map(|(_, k)| k)
}

/// Product of condition numbers of every augmented Schur block. May overflow
/// to infinity; see [`cotton_log10_kappa_product`].
pub fn cotton_kappa_product(sigma: &CovarianceMatrix, tree: &Dendrogram, gamma: f64) -> Result<f64> {
    cotton_log10_kappa_product(sigma, tree, gamma).map(|l| 10f64.powf(l))
}

/// Flat-IVP tree pass (diagnostic). Unsigned inverse-variance representatives
/// feed the 2×2 system and budgets are sum-normalized and multiplied down the
/// tree, with no leaf sign step.
pub fn a2_flat_ivp_tree(sigma: &CovarianceMatrix, mu: &Signal, tree: &Dendrogram, gamma: f64) -> Result<WeightVector> {
    a2_flat_ivp_tree_traced(sigma, mu, tree, gamma).map(|(w, _)| w)
}

pub fn a2_flat_ivp_tree_traced(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    tree: &Dendrogram,
    gamma: f64,
) -> Result<(WeightVector, Vec<NodeTrace>)> {
    check_inputs(sigma, mu, tree, gamma)?;
    let mut trace = Vec::new();
    let w = flat_rep_pass(sigma, mu, tree, gamma, false, &mut trace);
    Ok((WeightVector::raw(w), trace))
}

/// Sum-normalized recursive MVO (diagnostic). Identical to HRP-Σμ except that
/// node budgets are divided by their algebraic sum, which flips both child
/// signs whenever that sum is negative.
pub fn a1_sum_norm_mvo(sigma: &CovarianceMatrix, mu: &Signal, tree: &Dendrogram, gamma: f64) -> Result<WeightVector> {
    a1_sum_norm_mvo_traced(sigma, mu, tree, gamma).map(|(w, _)| w)
}

pub fn a1_sum_norm_mvo_traced(
    sigma: &CovarianceMatrix,
    mu: &Signal,
    tree: &Dendrogram,
    gamma: f64,
) -> Result<(WeightVector, Vec<NodeTrace>)> {
    check_inputs(sigma, mu, tree, gamma)?;
    let mut trace = Vec::new();
    let out = stacked_pass(sigma, mu, tree, gamma, BudgetNorm::SumOne, &mut trace);
    Ok((WeightVector::raw(dense(sigma.n(), &out.rep)), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::to_correlation;
    use crate::dendrogram::{build_tree, LinkageRule, Shape};
    use crate::metrics::{dir, dir_vec, minvar_sharpe_sum1};
    use crate::signal_allocators::hrp_sigma_mu;
    use proptest::prelude::*;

    fn four_asset() -> (CovarianceMatrix, Dendrogram) {
        let s = CovarianceMatrix::from_row_slice(
            4,
            &[
                0.0400, 0.0400, 0.0120, 0.0060, 0.0400, 0.0625, 0.0150, 0.0075, 0.0120, 0.0150,
                0.0900, 0.0360, 0.0060, 0.0075, 0.0360, 0.0225,
            ],
        )
        .unwrap();
        let t = build_tree(&to_correlation(&s).unwrap(), LinkageRule::Ward).unwrap();
        (s, t)
    }

    fn random_spd(n: usize, seed: u64) -> CovarianceMatrix {
        let mut st = seed.wrapping_mul(0x2545_F491_4F6C_DD1D) | 1;
        let mut next = || {
            st ^= st << 13;
            st ^= st >> 7;
            st ^= st << 17;
            (st >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::from_fn(n, n + 2, |_, _| next());
        let scale: Vec<f64> = (0..n).map(|_| 0.5 + (next() + 0.5) * 2.0).collect();
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
        CovarianceMatrix::new(DMatrix::from_fn(n, n, |i, j| scale[i] * m[(i, j)] * scale[j])).unwrap()
    }

    fn tree_for(s: &CovarianceMatrix) -> Dendrogram {
        build_tree(&to_correlation(s).unwrap(), LinkageRule::Ward).unwrap()
    }

    #[test]
    fn hrp_four_asset() {
        let (s, t) = four_asset();
        let w = hrp(&s, &t).unwrap();
        for (a, b) in w.as_slice().iter().zip([0.247, 0.158, 0.119, 0.476]) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!((hrp_root_alpha(&s, &t).unwrap() - 0.405).abs() < 1e-3);
        assert!(w.tag_holds(1e-12));
    }

    #[test]
    fn hrp_diagonal_is_inverse_variance() {
        let d = CovarianceMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 4.0, 5.0, 8.0])))
            .unwrap();
        let t = Dendrogram::balanced(&[0, 1, 2, 3, 4]).unwrap();
        let w = hrp(&d, &t).unwrap();
        let inv: f64 = [1.0, 0.5, 0.25, 0.2, 0.125].iter().sum();
        for (i, &v) in [1.0, 2.0, 4.0, 5.0, 8.0].iter().enumerate() {
            assert!((w.get(i) - (1.0 / v) / inv).abs() < 1e-15);
        }
    }

    #[test]
    fn cotton_gamma_one_is_minvar() {
        for seed in 0..50 {
            let s = random_spd(8 + (seed as usize % 5), seed);
            let t = tree_for(&s);
            let w = cotton(&s, &t, 1.0).unwrap();
            let mv = direct_minvar(&s).unwrap();
            assert!(dir(&w, &mv).unwrap() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn cotton_gamma_zero_not_hrp_on_four_asset() {
        let (s, t) = four_asset();
        let c = cotton(&s, &t, 0.0).unwrap();
        let h = hrp(&s, &t).unwrap();
        assert!(dir(&c, &h).unwrap() > 0.01);
    }

    #[test]
    fn cotton_gamma_zero_block_diagonal_matches_hrp() {
        let d = CovarianceMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![
            0.04, 0.09, 0.01, 0.16, 0.05, 0.02,
        ])))
        .unwrap();
        let t = Dendrogram::balanced(&[0, 1, 2, 3, 4, 5]).unwrap();
        let c = cotton(&d, &t, 0.0).unwrap();
        let h = hrp(&d, &t).unwrap();
        assert!((c.values() - h.values()).amax() < 1e-14);
    }

    #[test]
    fn cotton_kappa_product_gamma_zero_principal_blocks() {
        // Independent oracle: at γ = 0 the augmented blocks are principal blocks of Σ.
        let s = random_spd(7, 99);
        let t = tree_for(&s);
        let mut expected = 0.0;
        for id in t.internal_nodes() {
            let (l, r) = t.children(id).unwrap();
            for child in [l, r] {
                let idx = t.leaves(child);
                if idx.len() > 1 {
                    expected += kappa_spd(&s.block(idx, idx)).unwrap().log10();
                }
            }
        }
        let got = cotton_log10_kappa_product(&s, &t, 0.0).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn cotton_kappa_product_diagonal() {
        let d = CovarianceMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 2.0, 8.0])))
            .unwrap();
        let t = Dendrogram::balanced(&[0, 1, 2, 3]).unwrap();
        // Children {0,1} and {2,3}: κ = 4 each, grandchildren are 1×1.
        assert!((cotton_kappa_product(&d, &t, 0.7).unwrap() - 16.0).abs() < 1e-10);
    }

    #[test]
    fn baseline_helpers() {
        assert_eq!(equal_weight(4).unwrap().as_slice(), &[0.25; 4]);
        let id = CovarianceMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(direct_minvar(&id).unwrap().as_slice(), &[1.0; 3]);
        let s = random_spd(6, 1);
        let mv = direct_minvar(&s).unwrap();
        let oracle = 1.0 / (1.0 / s.solve(&DVector::from_element(6, 1.0)).unwrap().sum()).sqrt();
        assert!((minvar_sharpe_sum1(&mv, &s).unwrap() - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn a2_recovers_hrp_at_unit_signal() {
        let (s, t) = four_asset();
        let a = a2_flat_ivp_tree(&s, &Signal::ones(4), &t, 0.0).unwrap();
        let h = hrp(&s, &t).unwrap();
        assert!((a.values() - h.values()).amax() < 1e-15);
    }

    #[test]
    fn a2_aggregate_signal_can_vanish() {
        // Flat IVP weights a_i on a two-asset branch; μ_2 = −a_1 μ_1 / a_2 cancels s_L.
        let (s, t) = four_asset();
        let a = [25.0 / 41.0, 16.0 / 41.0];
        let mu1 = 0.03;
        let mu = Signal::from_slice(&[mu1, -a[0] * mu1 / a[1], 0.02, -0.01]).unwrap();
        let (_, trace) = a2_flat_ivp_tree_traced(&s, &mu, &t, 0.5).unwrap();
        assert!(trace[0].stats.s_l.abs() < 1e-6);
    }

    #[test]
    fn a1_is_sign_times_hrp_sigma_mu() {
        for seed in 0..30 {
            let s = random_spd(9, seed + 500);
            let t = tree_for(&s);
            let mu = Signal::from_slice(
                &(0..9).map(|i| ((i as f64 + 1.3) * (seed as f64 + 0.7)).sin()).collect::<Vec<_>>(),
            )
            .unwrap();
            let (a1, trace) = a1_sum_norm_mvo_traced(&s, &mu, &t, 0.5).unwrap();
            let l1 = hrp_sigma_mu(&s, &mu, &t, 0.5).unwrap();
            if trace.iter().any(|nt| nt.denominator == 0.0) {
                continue;
            }
            let root_sign = trace.last().unwrap().denominator.signum();
            // Each node divides by S; the L1 pass by |a_L| + |a_R|. The ratio of
            // the two outputs is the product of per-node S/Z factors along each path,
            // which collapses to sign(S_root)·‖a1‖₁.
            let a1n = a1.values() / a1.values().lp_norm(1);
            assert!((a1n - l1.values() * root_sign).amax() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn a1_recovery_cosine_on_depth_two() {
        let (s, _) = four_asset();
        let t = Dendrogram::from_shape(&Shape::node(
            Shape::node(Shape::Leaf(0), Shape::Leaf(1)),
            Shape::node(Shape::Leaf(2), Shape::Leaf(3)),
        ))
        .unwrap();
        let a = a1_sum_norm_mvo(&s, &Signal::ones(4), &t, 0.0).unwrap();
        let h = hrp(&s, &t).unwrap();
        assert!(dir_vec(a.values(), h.values()).unwrap() < 1e-12);
    }

    proptest! {
        #[test]
        fn hrp_positive_sum_one_and_scale_invariant(seed in 0u64..1000, k in 0.01f64..100.0) {
            let s = random_spd(10, seed);
            let t = tree_for(&s);
            let w = hrp(&s, &t).unwrap();
            prop_assert!(w.as_slice().iter().all(|&x| x > 0.0));
            prop_assert!(w.tag_holds(1e-12));
            let sk = CovarianceMatrix::new(s.matrix() * k).unwrap();
            let wk = hrp(&sk, &t).unwrap();
            prop_assert!((w.values() - wk.values()).amax() < 1e-12);
        }

        #[test]
        fn cotton_augmented_blocks_spd(seed in 0u64..200, g in 0.0f64..=1.0) {
            let s = random_spd(9, seed);
            let t = tree_for(&s);
            prop_assert!(cotton_log10_kappa_product(&s, &t, g).is_ok());
        }
    }
}
