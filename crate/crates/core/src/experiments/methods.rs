//! Method identifiers and a single dispatch point for every allocator.

use std::fmt;
use std::str::FromStr;

use crate::baseline::{a1_sum_norm_mvo, a2_flat_ivp_tree, cotton, direct_minvar, equal_weight, hrp};
use crate::core_types::{markowitz_direct, CovarianceMatrix, Signal, WeightVector};
use crate::crisp::{crisp_projected, crisp_solve, crisp_solve_stream, ConstraintSet, FactorModel, SweepOrder};
use crate::dendrogram::Dendrogram;
use crate::error::{Error, Result};
use crate::signal_allocators::{hrp_mu, hrp_sigma_mu, hsp};

/// Every allocator exposed by the harness and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    OneOverN,
    Hrp,
    Cotton,
    HrpMu,
    Hsp,
    HrpSigmaMu,
    Crisp,
    CrispStream,
    CrispProjected,
    Markowitz,
    A1,
    A2,
}

impl MethodId {
    pub const ALL: [MethodId; 12] = [
        MethodId::OneOverN,
        MethodId::Hrp,
        MethodId::Cotton,
        MethodId::HrpMu,
        MethodId::Hsp,
        MethodId::HrpSigmaMu,
        MethodId::Crisp,
        MethodId::CrispStream,
        MethodId::CrispProjected,
        MethodId::Markowitz,
        MethodId::A1,
        MethodId::A2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::OneOverN => "one-over-n",
            MethodId::Hrp => "hrp",
            MethodId::Cotton => "cotton",
            MethodId::HrpMu => "hrp-mu",
            MethodId::Hsp => "hsp",
            MethodId::HrpSigmaMu => "hrp-sigma-mu",
            MethodId::Crisp => "crisp",
            MethodId::CrispStream => "crisp-stream",
            MethodId::CrispProjected => "crisp-projected",
            MethodId::Markowitz => "markowitz",
            MethodId::A1 => "a1",
            MethodId::A2 => "a2",
        }
    }

    /// Methods whose output does not depend on `μ`.
    pub fn is_signal_blind(self) -> bool {
        matches!(self, MethodId::OneOverN | MethodId::Hrp | MethodId::Cotton)
    }

    /// Methods that take `γ`.
    pub fn uses_gamma(self) -> bool {
        !matches!(
            self,
            MethodId::OneOverN | MethodId::Hrp | MethodId::Hsp | MethodId::Markowitz
        )
    }

    /// Methods that take a sweep budget.
    pub fn uses_sweeps(self) -> bool {
        matches!(self, MethodId::Crisp | MethodId::CrispStream | MethodId::CrispProjected)
    }

    pub fn needs_tree(self) -> bool {
        matches!(
            self,
            MethodId::Hrp
                | MethodId::Cotton
                | MethodId::HrpMu
                | MethodId::Hsp
                | MethodId::HrpSigmaMu
                | MethodId::A1
                | MethodId::A2
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        MethodId::ALL
            .iter()
            .copied()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// A method with its shrinkage intensity and sweep budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub id: MethodId,
    pub gamma: f64,
    pub p: usize,
}

impl MethodSpec {
    pub fn new(id: MethodId, gamma: f64, p: usize) -> Self {
        Self { id, gamma, p }
    }

    /// Method without `γ` or sweep parameters.
    pub fn plain(id: MethodId) -> Self {
        Self { id, gamma: 0.0, p: 0 }
    }

    /// Display label such as `crisp(g=0.5,p=100)`.
    pub fn label(&self) -> String {
        match (self.id.uses_gamma(), self.id.uses_sweeps()) {
            (true, true) => format!("{}(g={},p={})", self.id, self.gamma, self.p),
            (true, false) => format!("{}(g={})", self.id, self.gamma),
            _ => self.id.to_string(),
        }
    }
}

/// Inputs available to an allocator.
#[derive(Debug, Clone, Copy)]
pub struct AllocInputs<'a> {
    pub sigma: &'a CovarianceMatrix,
    pub mu: &'a Signal,
    pub tree: Option<&'a Dendrogram>,
    pub factor_model: Option<&'a FactorModel>,
    pub constraints: Option<&'a ConstraintSet>,
    /// CRISP relative-change tolerance.
    pub eps: f64,
}

impl<'a> AllocInputs<'a> {
    pub fn new(sigma: &'a CovarianceMatrix, mu: &'a Signal) -> Self {
        Self {
            sigma,
            mu,
            tree: None,
            factor_model: None,
            constraints: None,
            eps: 1e-8,
        }
    }

    pub fn with_tree(mut self, tree: &'a Dendrogram) -> Self {
        self.tree = Some(tree);
        self
    }
}

fn need_tree<'a>(inputs: &AllocInputs<'a>, id: MethodId) -> Result<&'a Dendrogram> {
    inputs
        .tree
        .ok_or_else(|| Error::Parameter(format!("method {id} requires a dendrogram")))
}

/// Runs one allocator.
pub fn allocate(method: &MethodSpec, inputs: &AllocInputs<'_>) -> Result<WeightVector> {
    let (sigma, mu, g) = (inputs.sigma, inputs.mu, method.gamma);
    let p = method.p.max(1);
    match method.id {
        MethodId::OneOverN => equal_weight(sigma.n()),
        MethodId::Hrp => hrp(sigma, need_tree(inputs, method.id)?),
        MethodId::Cotton => cotton(sigma, need_tree(inputs, method.id)?, g),
        MethodId::HrpMu => hrp_mu(sigma, mu, need_tree(inputs, method.id)?, g),
        MethodId::Hsp => hsp(sigma, mu, need_tree(inputs, method.id)?),
        MethodId::HrpSigmaMu => hrp_sigma_mu(sigma, mu, need_tree(inputs, method.id)?, g),
        MethodId::A1 => a1_sum_norm_mvo(sigma, mu, need_tree(inputs, method.id)?, g),
        MethodId::A2 => a2_flat_ivp_tree(sigma, mu, need_tree(inputs, method.id)?, g),
        MethodId::Crisp => Ok(crisp_solve(sigma, mu, g, p, inputs.eps, &SweepOrder::Natural)?.weights),
        MethodId::CrispStream => {
            let fm = inputs
                .factor_model
                .ok_or_else(|| Error::Parameter("crisp-stream requires a factor model".into()))?;
            Ok(crisp_solve_stream(fm, mu, g, p, inputs.eps)?.weights)
        }
        MethodId::CrispProjected => {
            let default = ConstraintSet::long_only(sigma.n(), 1.0);
            let cs = inputs.constraints.unwrap_or(&default);
            Ok(crisp_projected(sigma, mu, g, p, inputs.eps, cs)?.weights)
        }
        MethodId::Markowitz => {
            if mu.values().iter().all(|&x| x == 1.0) {
                direct_minvar(sigma)
            } else {
                markowitz_direct(sigma, mu)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::to_correlation;
    use crate::dendrogram::{build_tree, LinkageRule};
    use crate::testutil::{random_signal, random_spd};

    #[test]
    fn names_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.name().parse::<MethodId>().unwrap(), m);
        }
        assert_eq!("HRP_SIGMA_MU".parse::<MethodId>().unwrap(), MethodId::HrpSigmaMu);
        assert!(matches!("nope".parse::<MethodId>(), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn every_dense_method_allocates() {
        let s = random_spd(8, 2);
        let mu = random_signal(8, 3);
        let tree = build_tree(&to_correlation(&s).unwrap(), LinkageRule::Ward).unwrap();
        let inputs = AllocInputs::new(&s, &mu).with_tree(&tree);
        for id in MethodId::ALL {
            let r = allocate(&MethodSpec::new(id, 0.5, 50), &inputs);
            if id == MethodId::CrispStream {
                assert!(r.is_err());
            } else {
                assert_eq!(r.unwrap().n(), 8, "{id}");
            }
        }
        let bare = AllocInputs::new(&s, &mu);
        assert!(allocate(&MethodSpec::plain(MethodId::Hrp), &bare).is_err());
    }

    #[test]
    fn crisp_at_zero_gamma_is_diagonal_solve() {
        let s = random_spd(5, 9);
        let mu = random_signal(5, 10);
        let w = allocate(&MethodSpec::new(MethodId::Crisp, 0.0, 100), &AllocInputs::new(&s, &mu)).unwrap();
        assert_eq!(w.values(), &mu.values().component_div(&s.diag()));
    }

    #[test]
    fn labels() {
        assert_eq!(MethodSpec::new(MethodId::Crisp, 0.5, 100).label(), "crisp(g=0.5,p=100)");
        assert_eq!(MethodSpec::new(MethodId::HrpMu, 1.0, 0).label(), "hrp-mu(g=1)");
        assert_eq!(MethodSpec::plain(MethodId::Hrp).label(), "hrp");
    }
}
