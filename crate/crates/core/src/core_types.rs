//! Foundational numerical types: covariance, correlation, signal, weights and
//! the shrinkage operator `P_γ = (1−γ)D + γΣ`, plus the spectral helpers the
//! rest of the crate builds on.
//!
//! Constructors check only cheap invariants (symmetry, positive diagonal).
//! Positive definiteness is verified on demand through [`CovarianceMatrix::validate`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

const SYMMETRY_RTOL: f64 = 1e-12;

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Symmetrizes `m` in place after checking that it is symmetric to within a
/// relative tolerance of the largest absolute entry.
fn symmetrize_checked(m: &mut DMatrix<f64>, what: &str) -> Result<()> {
    let n = check_square(m)?;
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidCovariance(format!(
                    "{what}: non-finite entry at ({i}, {j})"
                )));
            }
            if (a - b).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::InvalidCovariance(format!(
                    "{what}: asymmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
            let avg = 0.5 * (a + b);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, sorted in descending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Full symmetric eigendecomposition with eigenpairs sorted by descending eigenvalue.
/// Column `k` of the returned matrix is the eigenvector for `values[k]`.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
    (values, vectors)
}

/// Condition number `λ_max / λ_min` of a symmetric positive definite matrix.
pub fn kappa_spd(m: &DMatrix<f64>) -> Result<f64> {
    let vals = sym_eigenvalues(m);
    let (hi, lo) = (vals[0], vals[vals.len() - 1]);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(hi / lo)
}

/// SPD return covariance `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Builds a covariance after checking symmetry (relative 1e-12) and a
    /// strictly positive diagonal. The stored matrix is exactly symmetric.
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        symmetrize_checked(&mut entries, "covariance")?;
        for i in 0..entries.nrows() {
            let d = entries[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidCovariance(format!(
                    "diagonal entry {i} is not strictly positive ({d})"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    /// `diag(σ) · C · diag(σ)`.
    pub fn from_correlation(corr: &CorrelationMatrix, vols: &[f64]) -> Result<Self> {
        let n = corr.n();
        if vols.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: vols.len(),
            });
        }
        let c = corr.matrix();
        Self::new(DMatrix::from_fn(n, n, |i, j| vols[i] * c[(i, j)] * vols[j]))
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `D = diag(Σ)` as a vector.
    pub fn diag(&self) -> DVector<f64> {
        self.entries.diagonal()
    }

    /// Opt-in positive definiteness check via Cholesky.
    pub fn validate(&self) -> Result<()> {
        self.cholesky().map(|_| ())
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.entries.clone()).ok_or(Error::SingularCovariance)
    }

    /// Solves `Σx = b` by Cholesky.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: b.len(),
            });
        }
        Ok(self.cholesky()?.solve(b))
    }

    /// `wᵀΣw`.
    pub fn quad_form(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.entries * w))
    }

    /// Dense sub-block `Σ[rows, cols]`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
            self.entries[(rows[a], cols[b])]
        })
    }

    /// Principal sub-covariance on `idx`.
    pub fn principal(&self, idx: &[usize]) -> CovarianceMatrix {
        CovarianceMatrix {
            entries: self.block(idx, idx),
        }
    }

    /// Re-indexes assets: entry `(a, b)` of the result is `Σ[order[a], order[b]]`.
    pub fn permuted(&self, order: &[usize]) -> CovarianceMatrix {
        self.principal(order)
    }

    /// `Σ + λI`.
    pub fn with_ridge(&self, lambda: f64) -> Result<CovarianceMatrix> {
        let n = self.n();
        Self::new(&self.entries + DMatrix::identity(n, n) * lambda)
    }

    /// Eigenvalues of `Σ`, descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.entries)
    }

    /// `E = Σ − D`.
    pub fn off_diagonal(&self) -> DMatrix<f64> {
        let mut e = self.entries.clone();
        e.fill_diagonal(0.0);
        e
    }
}

/// Correlation matrix `C = D^{-1/2} Σ D^{-1/2}` with an exactly unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Builds a correlation matrix. The diagonal must be 1 to within 1e-12 and is
    /// then forced to exactly 1; off-diagonals must lie in [−1, 1].
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        symmetrize_checked(&mut entries, "correlation")
            .map_err(|e| Error::InvalidCorrelation(e.to_string()))?;
        let n = entries.nrows();
        for i in 0..n {
            if (entries[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {i} is {} instead of 1",
                    entries[(i, i)]
                )));
            }
            entries[(i, i)] = 1.0;
            for j in 0..n {
                let v = entries[(i, j)];
                if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::InvalidCorrelation(format!(
                        "entry ({i}, {j}) = {v} outside [-1, 1]"
                    )));
                }
                entries[(i, j)] = v.clamp(-1.0, 1.0);
            }
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Eigenvalues `λ₁ ≥ … ≥ λ_N`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.entries)
    }
}

/// `C = D^{-1/2} Σ D^{-1/2}` with the diagonal forced to exactly 1.
pub fn to_correlation(sigma: &CovarianceMatrix) -> Result<CorrelationMatrix> {
    let n = sigma.n();
    let d = sigma.diag();
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidCovariance(format!(
            "diagonal entry {i} is not strictly positive"
        )));
    }
    let s: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let m = sigma.matrix();
    let mut c = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (m[(i, j)] / (s[i] * s[j])).clamp(-1.0, 1.0)
        }
    });
    c.fill_diagonal(1.0);
    Ok(CorrelationMatrix { entries: c })
}

/// `κ(C) = λ_max / λ_min`.
pub fn kappa(corr: &CorrelationMatrix) -> Result<f64> {
    kappa_spd(corr.matrix())
}

/// Expected-return vector `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: DVector<f64>,
}

impl Signal {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!("signal entry {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    pub fn ones(n: usize) -> Self {
        Self {
            values: DVector::from_element(n, 1.0),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.n(),
            });
        }
        Ok(())
    }
}

/// How a weight vector has been normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormTag {
    Raw,
    SumOne,
    L1One,
}

/// Portfolio weights together with their normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: DVector<f64>,
    tag: NormTag,
}

impl WeightVector {
    pub fn raw(values: DVector<f64>) -> Self {
        Self {
            values,
            tag: NormTag::Raw,
        }
    }

    /// Tags `values` without rescaling. Callers are responsible for the tag being true.
    pub fn with_tag(values: DVector<f64>, tag: NormTag) -> Self {
        Self { values, tag }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn tag(&self) -> NormTag {
        self.tag
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    /// Rescales so the entries sum to one.
    pub fn sum_normalized(&self) -> Result<WeightVector> {
        let s = self.values.sum();
        if s == 0.0 || !s.is_finite() {
            return Err(Error::DegenerateInput("weights sum to zero".into()));
        }
        Ok(Self::with_tag(&self.values / s, NormTag::SumOne))
    }

    /// Rescales so the absolute entries sum to one.
    pub fn l1_normalized(&self) -> Result<WeightVector> {
        let s = self.values.lp_norm(1);
        if s == 0.0 || !s.is_finite() {
            return Err(Error::DegenerateInput("zero weight vector".into()));
        }
        Ok(Self::with_tag(&self.values / s, NormTag::L1One))
    }

    /// Whether the stored tag holds to within `tol`.
    pub fn tag_holds(&self, tol: f64) -> bool {
        match self.tag {
            NormTag::Raw => true,
            NormTag::SumOne => (self.values.sum() - 1.0).abs() <= tol,
            NormTag::L1One => (self.values.lp_norm(1) - 1.0).abs() <= tol,
        }
    }
}

/// The pair `(Σ, γ)` standing for `P_γ = (1−γ)D + γΣ`.
#[derive(Debug, Clone, Copy)]
pub struct ShrinkageOperator<'a> {
    sigma: &'a CovarianceMatrix,
    gamma: f64,
}

impl<'a> ShrinkageOperator<'a> {
    pub fn sigma(&self) -> &'a CovarianceMatrix {
        self.sigma
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Entry `(i, j)` of `P_γ` without materializing the matrix.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.sigma.get(i, i)
        } else {
            self.gamma * self.sigma.get(i, j)
        }
    }

    /// `P_γ w`.
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let m = self.sigma.matrix();
        let sw = m * w;
        let d = m.diagonal();
        DVector::from_fn(w.len(), |i, _| {
            self.gamma * sw[i] + (1.0 - self.gamma) * d[i] * w[i]
        })
    }
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Parameter(format!("gamma = {gamma} outside [0, 1]")));
    }
    Ok(())
}

pub fn shrink(sigma: &CovarianceMatrix, gamma: f64) -> Result<ShrinkageOperator<'_>> {
    check_gamma(gamma)?;
    Ok(ShrinkageOperator { sigma, gamma })
}

/// Dense `P_γ`: the diagonal of `Σ` kept exactly, off-diagonals scaled by `γ`.
pub fn materialize(op: &ShrinkageOperator<'_>) -> CovarianceMatrix {
    let m = op.sigma.matrix();
    let n = m.nrows();
    let entries = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            m[(i, i)]
        } else {
            op.gamma * m[(i, j)]
        }
    });
    CovarianceMatrix { entries }
}

/// `w⋆ = Σ⁻¹μ` through a Cholesky factorization.
pub fn markowitz_direct(sigma: &CovarianceMatrix, mu: &Signal) -> Result<WeightVector> {
    mu.check_len(sigma.n())?;
    Ok(WeightVector::raw(sigma.solve(mu.values())?))
}

/// `κ(D⁻¹P_γ) = [(1−γ)+γλ₁] / [(1−γ)+γλ_N]` with `λ` the eigenvalues of `C`.
pub fn preconditioned_kappa(sigma: &CovarianceMatrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let eigs = to_correlation(sigma)?.eigenvalues();
    let (l1, ln) = (eigs[0], eigs[eigs.len() - 1]);
    if !(ln > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(((1.0 - gamma) + gamma * l1) / ((1.0 - gamma) + gamma * ln))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn four_asset() -> CovarianceMatrix {
        CovarianceMatrix::from_row_slice(
            4,
            &[
                0.0400, 0.0400, 0.0120, 0.0060, //
                0.0400, 0.0625, 0.0150, 0.0075, //
                0.0120, 0.0150, 0.0900, 0.0360, //
                0.0060, 0.0075, 0.0360, 0.0225,
            ],
        )
        .unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> CovarianceMatrix {
        // Small deterministic LCG keeps this module free of RNG dependencies.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::from_fn(n, n, |_, _| next());
        let scales: Vec<f64> = (0..n).map(|i| 0.1 + 0.5 * i as f64).collect();
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let m = DMatrix::from_fn(n, n, |i, j| scales[i] * m[(i, j)] * scales[j]);
        CovarianceMatrix::new(m).unwrap()
    }

    #[test]
    fn diagonal_covariance_has_identity_correlation() {
        let s = CovarianceMatrix::from_row_slice(2, &[4.0, 0.0, 0.0, 9.0]).unwrap();
        let c = to_correlation(&s).unwrap();
        assert_eq!(c.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn four_asset_correlations() {
        let c = to_correlation(&four_asset()).unwrap();
        assert!((c.get(0, 1) - 0.80).abs() < 1e-12);
        assert!((c.get(0, 2) - 0.20).abs() < 1e-12);
        assert_eq!(c.get(3, 3), 1.0);
    }

    #[test]
    fn correlation_round_trip() {
        let s = random_spd(5, 3);
        let c = to_correlation(&s).unwrap();
        let vols: Vec<f64> = s.diag().iter().map(|v| v.sqrt()).collect();
        let back = CovarianceMatrix::from_correlation(&c, &vols).unwrap();
        let rel = (back.matrix() - s.matrix()).amax() / s.matrix().amax();
        assert!(rel < 1e-12, "{rel}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(CovarianceMatrix::from_row_slice(2, &[1.0, 0.1, 0.2, 1.0]).is_err());
        assert!(CovarianceMatrix::from_row_slice(2, &[0.0, 0.0, 0.0, 1.0]).is_err());
        assert!(shrink(&four_asset(), 1.5).is_err());
        let indefinite = CovarianceMatrix::from_row_slice(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(indefinite.validate(), Err(Error::SingularCovariance));
    }

    #[test]
    fn identity_kappa_is_one() {
        assert!((kappa(&CorrelationMatrix::identity(6)).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn shrink_endpoints_and_midpoint() {
        let s = four_asset();
        let p0 = materialize(&shrink(&s, 0.0).unwrap());
        assert_eq!(p0.matrix(), &DMatrix::from_diagonal(&s.diag()));
        let p1 = materialize(&shrink(&s, 1.0).unwrap());
        assert_eq!(p1.matrix(), s.matrix());
        let ph = materialize(&shrink(&s, 0.5).unwrap());
        assert!((ph.get(0, 1) - 0.0200).abs() < 1e-15);
        assert_eq!(ph.get(2, 2), s.get(2, 2));
    }

    #[test]
    fn operator_apply_matches_materialized() {
        let s = random_spd(6, 11);
        let op = shrink(&s, 0.3).unwrap();
        let w = DVector::from_fn(6, |i, _| (i as f64) - 2.5);
        let a = op.apply(&w);
        let b = materialize(&op).matrix() * &w;
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn markowitz_direct_residual_and_diagonal_case() {
        let s = random_spd(6, 5);
        let mu = Signal::from_slice(&[0.1, -0.2, 0.05, 0.3, -0.1, 0.02]).unwrap();
        let w = markowitz_direct(&s, &mu).unwrap();
        let r = (s.matrix() * w.values() - mu.values()).norm() / mu.values().norm();
        assert!(r < 1e-10);

        let d = CovarianceMatrix::from_row_slice(2, &[2.0, 0.0, 0.0, 4.0]).unwrap();
        let w = markowitz_direct(&d, &Signal::from_slice(&[1.0, 1.0]).unwrap()).unwrap();
        assert!((w.get(0) - 0.5).abs() < 1e-15 && (w.get(1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn four_asset_markowitz_sum_normalized() {
        let mu = Signal::from_slice(&[0.03, -0.01, 0.02, -0.04]).unwrap();
        let w = markowitz_direct(&four_asset(), &mu)
            .unwrap()
            .sum_normalized()
            .unwrap();
        let expected = [-1.019, 0.674, -1.003, 2.348];
        for (a, b) in w.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        assert!((w.values().lp_norm(1) - 5.04).abs() < 0.02);
    }

    #[test]
    fn preconditioned_kappa_endpoints() {
        let s = random_spd(7, 9);
        assert!((preconditioned_kappa(&s, 0.0).unwrap() - 1.0).abs() < 1e-14);
        let k1 = preconditioned_kappa(&s, 1.0).unwrap();
        let kc = kappa(&to_correlation(&s).unwrap()).unwrap();
        assert!((k1 - kc).abs() < 1e-10 * kc);
    }

    #[test]
    fn preconditioned_kappa_matches_generalized_eigenproblem() {
        // Independent route: eigenvalues of D^{-1/2} P_γ D^{-1/2} computed directly.
        let s = random_spd(8, 21);
        for &g in &[0.2, 0.5, 0.9] {
            let p = materialize(&shrink(&s, g).unwrap());
            let d = s.diag();
            let n = s.n();
            let m = DMatrix::from_fn(n, n, |i, j| p.get(i, j) / (d[i] * d[j]).sqrt());
            let direct = kappa_spd(&m).unwrap();
            let formula = preconditioned_kappa(&s, g).unwrap();
            assert!((direct - formula).abs() < 1e-9 * formula);
        }
    }

    #[test]
    fn weight_tags() {
        let w = WeightVector::raw(DVector::from_vec(vec![0.5, -1.5, 2.0]));
        assert!(w.sum_normalized().unwrap().tag_holds(1e-12));
        assert!(w.l1_normalized().unwrap().tag_holds(1e-12));
        assert!(WeightVector::raw(DVector::from_vec(vec![1.0, -1.0]))
            .sum_normalized()
            .is_err());
    }
}
