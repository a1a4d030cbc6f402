use rand::Rng;

use super::Moments;
use crate::context::{AngleAssignment, Outcome, SettingPair};
use crate::error::{invalid, Result};

/// Singlet correlations `E = −V cos θ_xy` with joint law
/// `p(α, β) = (1 − V α β cos θ_xy) / 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumSingletModel {
    angles: AngleAssignment,
    visibility: f64,
}

impl QuantumSingletModel {
    pub fn new(angles: AngleAssignment, visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(invalid("visibility", format!("must lie in [0, 1], got {visibility}")));
        }
        let angles = AngleAssignment::new(angles.alice, angles.bob)?;
        Ok(QuantumSingletModel { angles, visibility })
    }

    pub fn angles(&self) -> AngleAssignment {
        self.angles
    }

    pub fn visibility(&self) -> f64 {
        self.visibility
    }

    pub fn correlation(&self, s: SettingPair) -> f64 {
        -self.visibility * self.angles.relative(s).cos()
    }

    pub fn exact(&self, s: SettingPair) -> Moments {
        Moments {
            e_ab: self.correlation(s),
            e_a: 0.0,
            e_b: 0.0,
            c: 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: SettingPair, rng: &mut R) -> (Outcome, Outcome) {
        let a = Outcome::from_sign(rng.random_bool(0.5));
        // P(b = −a) = (1 − E) / 2
        let p_anti = ((1.0 - self.correlation(s)) / 2.0).clamp(0.0, 1.0);
        let b = if rng.random_bool(p_anti) { a.flipped() } else { a };
        (a, b)
    }
}
