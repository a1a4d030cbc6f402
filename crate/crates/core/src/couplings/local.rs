use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{check_signs, normalized, outcome_of, Moments};
use crate::context::{Outcome, SettingPair};
use crate::error::{Error, Result};

fn sampler(weights: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(weights).expect("weights validated by normalized()")
}

/// Responses fixed by a hidden value `λ`: `A_x(λ), B_y(λ) ∈ {±1}`.
#[derive(Debug, Clone)]
pub struct DeterministicLhvModel {
    weights: Vec<f64>,
    /// `alice[x][λ]`
    alice: [Vec<i8>; 2],
    bob: [Vec<i8>; 2],
    sampler: WeightedIndex<f64>,
}

impl DeterministicLhvModel {
    pub fn new(weights: Vec<f64>, alice: [Vec<i8>; 2], bob: [Vec<i8>; 2]) -> Result<Self> {
        let weights = normalized("lambda weights", &weights)?;
        for table in alice.iter().chain(bob.iter()) {
            if table.len() != weights.len() {
                return Err(Error::InvalidModel(format!(
                    "response table has {} entries, expected {}",
                    table.len(),
                    weights.len()
                )));
            }
            check_signs("deterministic response", table, false)?;
        }
        let sampler = sampler(&weights);
        Ok(DeterministicLhvModel {
            weights,
            alice,
            bob,
            sampler,
        })
    }

    pub fn hidden_values(&self) -> usize {
        self.weights.len()
    }

    pub fn exact(&self, s: SettingPair) -> Moments {
        let (ax, by) = (&self.alice[s.x() as usize], &self.bob[s.y() as usize]);
        let mut m = Moments {
            e_ab: 0.0,
            e_a: 0.0,
            e_b: 0.0,
            c: 1.0,
        };
        for (l, &w) in self.weights.iter().enumerate() {
            m.e_ab += w * (ax[l] * by[l]) as f64;
            m.e_a += w * ax[l] as f64;
            m.e_b += w * by[l] as f64;
        }
        m
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: SettingPair, rng: &mut R) -> (Outcome, Outcome) {
        let l = self.sampler.sample(rng);
        (
            outcome_of(self.alice[s.x() as usize][l]),
            outcome_of(self.bob[s.y() as usize][l]),
        )
    }
}

/// Factorized conditional responses `P(a|x,λ) P(b|y,λ)`.
#[derive(Debug, Clone)]
pub struct StochasticLhvModel {
    weights: Vec<f64>,
    /// `p_alice_plus[x][λ] = P(a = +1 | x, λ)`
    p_alice_plus: [Vec<f64>; 2],
    p_bob_plus: [Vec<f64>; 2],
    sampler: WeightedIndex<f64>,
}

impl StochasticLhvModel {
    pub fn new(weights: Vec<f64>, p_alice_plus: [Vec<f64>; 2], p_bob_plus: [Vec<f64>; 2]) -> Result<Self> {
        let weights = normalized("lambda weights", &weights)?;
        for table in p_alice_plus.iter().chain(p_bob_plus.iter()) {
            if table.len() != weights.len() {
                return Err(Error::InvalidModel(format!(
                    "conditional table has {} entries, expected {}",
                    table.len(),
                    weights.len()
                )));
            }
            if let Some(p) = table.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidModel(format!(
                    "conditional probability {p} outside [0, 1]"
                )));
            }
        }
        let sampler = sampler(&weights);
        Ok(StochasticLhvModel {
            weights,
            p_alice_plus,
            p_bob_plus,
            sampler,
        })
    }

    pub fn exact(&self, s: SettingPair) -> Moments {
        let (pa, pb) = (&self.p_alice_plus[s.x() as usize], &self.p_bob_plus[s.y() as usize]);
        let mut m = Moments {
            e_ab: 0.0,
            e_a: 0.0,
            e_b: 0.0,
            c: 1.0,
        };
        for (l, &w) in self.weights.iter().enumerate() {
            let (ma, mb) = (2.0 * pa[l] - 1.0, 2.0 * pb[l] - 1.0);
            m.e_ab += w * ma * mb;
            m.e_a += w * ma;
            m.e_b += w * mb;
        }
        m
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: SettingPair, rng: &mut R) -> (Outcome, Outcome) {
        let l = self.sampler.sample(rng);
        let a = rng.random_bool(self.p_alice_plus[s.x() as usize][l]);
        let b = rng.random_bool(self.p_bob_plus[s.y() as usize][l]);
        (Outcome::from_sign(a), Outcome::from_sign(b))
    }
}
