//! Probabilistic coupling models: the generative law of `(a, b)` given a context.
//!
//! Every model offers an exact route ([`CouplingModel::exact`]) computed by
//! closed form or finite summation over tabulated hidden values, and a
//! sampling route ([`CouplingModel::sample`]) used by the protocol simulators.

mod contextual;
mod local;
mod presets;
mod singlet;

pub use contextual::{ContextualHvModel, HiddenJoint, PostSelectionModel};
pub use local::{DeterministicLhvModel, StochasticLhvModel};
pub use presets::{context_disjoint, PearleLike, RejectionCurve};
pub use singlet::QuantumSingletModel;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{chsh_from, Outcome, SettingPair};
use crate::error::{Error, Result};

/// Weights below this are treated as exactly zero.
pub const WEIGHT_FLOOR: f64 = 1e-15;
/// Allowed deviation of a probability table's total from 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Exact moments of one context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `E(A B | A B ≠ 0)`.
    pub e_ab: f64,
    pub e_a: f64,
    pub e_b: f64,
    /// `C_xy = P(A B ≠ 0)`.
    pub c: f64,
}

/// Single-station outcome distributions without any post-selection, ordered `(+1, −1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMarginals {
    pub alice: [f64; 3],
    pub bob: [f64; 3],
}

#[derive(Debug, Clone)]
pub enum CouplingModel {
    Quantum(QuantumSingletModel),
    Deterministic(DeterministicLhvModel),
    Stochastic(StochasticLhvModel),
    Contextual(ContextualHvModel),
    PostSelection(PostSelectionModel),
}

impl CouplingModel {
    pub fn family(&self) -> &'static str {
        match self {
            CouplingModel::Quantum(_) => "quantum_singlet",
            CouplingModel::Deterministic(_) => "deterministic_lhv",
            CouplingModel::Stochastic(_) => "stochastic_lhv",
            CouplingModel::Contextual(_) => "contextual_hv",
            CouplingModel::PostSelection(_) => "post_selection",
        }
    }

    /// Whether the model can emit a vacuous outcome.
    pub fn may_emit_vacuous(&self) -> bool {
        matches!(self, CouplingModel::PostSelection(_))
    }

    pub fn exact(&self, s: SettingPair) -> Result<Moments> {
        match self {
            CouplingModel::Quantum(m) => Ok(m.exact(s)),
            CouplingModel::Deterministic(m) => Ok(m.exact(s)),
            CouplingModel::Stochastic(m) => Ok(m.exact(s)),
            CouplingModel::Contextual(m) => Ok(m.exact(s)),
            CouplingModel::PostSelection(m) => m.exact(s),
        }
    }

    /// Exact CHSH value `S = E₀₀ + E₀₁ + E₁₀ − E₁₁`.
    pub fn exact_chsh(&self) -> Result<f64> {
        let mut es = [0.0; 4];
        let mut starved = Vec::new();
        for s in SettingPair::ALL {
            match self.exact(s) {
                Ok(m) => es[s.index()] = m.e_ab,
                Err(Error::Starved(_)) => starved.push(s),
                Err(e) => return Err(e),
            }
        }
        if !starved.is_empty() {
            return Err(Error::Starved(starved));
        }
        Ok(chsh_from(es))
    }

    pub fn raw_marginals(&self, s: SettingPair) -> RawMarginals {
        let pm = |e: f64| [(1.0 + e) / 2.0, (1.0 - e) / 2.0, 0.0];
        match self {
            CouplingModel::Quantum(_) => RawMarginals {
                alice: pm(0.0),
                bob: pm(0.0),
            },
            CouplingModel::Contextual(m) => m.raw_marginals(s),
            CouplingModel::PostSelection(m) => m.raw_marginals(s),
            other => {
                let m = other.exact(s).expect("local models never starve");
                RawMarginals {
                    alice: pm(m.e_a),
                    bob: pm(m.e_b),
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: SettingPair, rng: &mut R) -> (Outcome, Outcome) {
        match self {
            CouplingModel::Quantum(m) => m.sample(s, rng),
            CouplingModel::Deterministic(m) => m.sample(s, rng),
            CouplingModel::Stochastic(m) => m.sample(s, rng),
            CouplingModel::Contextual(m) => m.sample(s, rng),
            CouplingModel::PostSelection(m) => m.sample(s, rng),
        }
    }

    /// Maximum total-variation distance between instrument tables of different
    /// contexts. `None` for families without instrument variables.
    pub fn statistical_dependence(&self) -> Option<f64> {
        match self {
            CouplingModel::Contextual(m) => Some(m.statistical_dependence()),
            CouplingModel::PostSelection(m) => Some(m.statistical_dependence()),
            _ => None,
        }
    }
}

macro_rules! impl_from_model {
    ($($variant:ident($ty:ty)),*) => {
        $(impl From<$ty> for CouplingModel {
            fn from(m: $ty) -> Self {
                CouplingModel::$variant(m)
            }
        })*
    };
}

impl_from_model!(
    Quantum(QuantumSingletModel),
    Deterministic(DeterministicLhvModel),
    Stochastic(StochasticLhvModel),
    Contextual(ContextualHvModel),
    PostSelection(PostSelectionModel)
);

/// A deterministic local strategy `(A₀, A₁, B₀, B₁) ∈ {±1}⁴`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub alice: [i8; 2],
    pub bob: [i8; 2],
}

impl Strategy {
    /// All 16 strategies; index bits are `A₀ A₁ B₀ B₁` with a set bit meaning `−1`.
    pub fn all() -> [Strategy; 16] {
        std::array::from_fn(|i| {
            let bit = |k: usize| if (i >> (3 - k)) & 1 == 1 { -1 } else { 1 };
            Strategy {
                alice: [bit(0), bit(1)],
                bob: [bit(2), bit(3)],
            }
        })
    }

    pub fn product(&self, s: SettingPair) -> i8 {
        self.alice[s.x() as usize] * self.bob[s.y() as usize]
    }

    pub fn chsh(&self) -> f64 {
        chsh_from(SettingPair::ALL.map(|s| self.product(s) as f64))
    }
}

/// Largest `|S|` over the 16 deterministic local strategies.
pub fn max_deterministic_chsh() -> f64 {
    Strategy::all().iter().map(|st| st.chsh().abs()).fold(0.0, f64::max)
}

/// Drop sub-floor weights and verify the table is a distribution.
pub(crate) fn normalized(name: &str, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::InvalidModel(format!("{name}: empty weight table")));
    }
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        if !w.is_finite() || w < -WEIGHT_FLOOR {
            return Err(Error::InvalidModel(format!("{name}: invalid weight {w}")));
        }
        out.push(if w < WEIGHT_FLOOR { 0.0 } else { w });
    }
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidModel(format!(
            "{name}: weights sum to {total}, expected 1"
        )));
    }
    Ok(out)
}

pub(crate) fn check_signs(name: &str, table: &[i8], allow_zero: bool) -> Result<()> {
    match table.iter().find(|&&v| !(v == 1 || v == -1 || (allow_zero && v == 0))) {
        Some(v) => Err(Error::InvalidModel(format!("{name}: response value {v} not allowed"))),
        None => Ok(()),
    }
}

pub(crate) fn outcome_of(v: i8) -> Outcome {
    match v {
        1 => Outcome::Plus,
        -1 => Outcome::Minus,
        _ => Outcome::Vacuous,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bound_is_two() {
        assert_eq!(max_deterministic_chsh(), 2.0);
    }

    #[test]
    fn all_plus_strategy() {
        let st = Strategy {
            alice: [1, 1],
            bob: [1, 1],
        };
        assert_eq!(st.chsh(), 2.0);
        assert_eq!(Strategy::all()[0], st);
    }

    #[test]
    fn strategy_table_takes_only_two_values() {
        // Direct enumeration of (A0 + A1) B0 + (A0 − A1) B1 over {±1}⁴.
        let mut seen = Vec::new();
        for a0 in [1i8, -1] {
            for a1 in [1i8, -1] {
                for b0 in [1i8, -1] {
                    for b1 in [1i8, -1] {
                        let s = (a0 * b0 + a0 * b1 + a1 * b0 - a1 * b1) as f64;
                        seen.push(s);
                        let st = Strategy {
                            alice: [a0, a1],
                            bob: [b0, b1],
                        };
                        assert_eq!(st.chsh(), s);
                    }
                }
            }
        }
        assert_eq!(seen.len(), 16);
        assert!(seen.iter().all(|s| s.abs() == 0.0 || s.abs() == 2.0));
        let strategies = Strategy::all();
        for (i, a) in strategies.iter().enumerate() {
            for b in &strategies[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn normalization_rules() {
        assert!(normalized("w", &[0.5, 0.5]).is_ok());
        assert_eq!(normalized("w", &[1.0, 1e-16]).unwrap(), vec![1.0, 0.0]);
        assert!(normalized("w", &[0.5, 0.4]).is_err());
        assert!(normalized("w", &[1.2, -0.2]).is_err());
        assert!(normalized("w", &[]).is_err());
    }
}
