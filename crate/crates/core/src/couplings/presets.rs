//! Ready-made post-selection models.

use serde::{Deserialize, Serialize};

use super::{HiddenJoint, PostSelectionModel};
use crate::context::AngleAssignment;
use crate::error::{invalid, Result};

/// Rejection probability `r(c)` as a function of `c = |cos(λ − θ)| ∈ [0, 1]`.
/// Every variant is non-increasing in `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectionCurve {
    None,
    Constant {
        rate: f64,
    },
    /// `r(c) = max · (1 − c)`
    Linear {
        max: f64,
    },
    /// `r(c) = 1 − c^exponent`
    Power {
        exponent: f64,
    },
}

impl RejectionCurve {
    pub fn rate(&self, c: f64) -> f64 {
        let c = c.clamp(0.0, 1.0);
        match *self {
            RejectionCurve::None => 0.0,
            RejectionCurve::Constant { rate } => rate,
            RejectionCurve::Linear { max } => max * (1.0 - c),
            RejectionCurve::Power { exponent } => 1.0 - c.powf(exponent),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RejectionCurve::None => true,
            RejectionCurve::Constant { rate } => (0.0..1.0).contains(&rate),
            RejectionCurve::Linear { max } => (0.0..=1.0).contains(&max),
            RejectionCurve::Power { exponent } => exponent.is_finite() && exponent >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("rejection", format!("{self:?} is not a valid rejection curve")))
        }
    }
}

/// Data-rejection model on a discretized circle.
///
/// A shared angle `λ` is uniform over `bins` points. Alice answers
/// `sign(cos(λ − θ_x))` and Bob `−sign(cos(λ − θ_y))`; each station keeps its
/// click with probability `(1 − r(|cos|)) · η(sign)` and otherwise reports `0`.
/// The keep decision is driven by a uniform instrument variable over `levels`
/// points, so the model is a finite [`PostSelectionModel`] with factorized
/// instrument law. `efficiency_*` are the per-channel efficiencies `η(+1), η(−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PearleLike {
    pub bins: usize,
    pub levels: usize,
    pub angles: AngleAssignment,
    pub rejection: RejectionCurve,
    pub efficiency_a: [f64; 2],
    pub efficiency_b: [f64; 2],
}

impl Default for PearleLike {
    fn default() -> Self {
        PearleLike {
            bins: 720,
            levels: 100,
            angles: AngleAssignment::canonical(),
            rejection: RejectionCurve::Power { exponent: 1.0 },
            efficiency_a: [1.0, 1.0],
            efficiency_b: [1.0, 1.0],
        }
    }
}

impl PearleLike {
    pub fn build(&self) -> Result<PostSelectionModel> {
        if self.bins < 2 {
            return Err(invalid("bins", "need at least 2 bins"));
        }
        if self.levels < 1 {
            return Err(invalid("levels", "need at least 1 level"));
        }
        self.rejection.validate()?;
        for &eta in self.efficiency_a.iter().chain(&self.efficiency_b) {
            if !(0.0..=1.0).contains(&eta) {
                return Err(invalid("efficiency", format!("{eta} outside [0, 1]")));
            }
        }
        let angles = AngleAssignment::new(self.angles.alice, self.angles.bob)?;
        let lambda: Vec<f64> = (0..self.bins)
            .map(|k| (k as f64 + 0.5) * std::f64::consts::TAU / self.bins as f64)
            .collect();
        let response = |theta: f64, flip: i8, eta: [f64; 2]| -> Vec<Vec<i8>> {
            lambda
                .iter()
                .map(|&l| {
                    let c = (l - theta).cos();
                    let sign = if c >= 0.0 { 1 } else { -1 };
                    let keep = (1.0 - self.rejection.rate(c.abs())) * if sign > 0 { eta[0] } else { eta[1] };
                    (0..self.levels)
                        .map(|u| {
                            let u = (u as f64 + 0.5) / self.levels as f64;
                            if u < keep {
                                sign * flip
                            } else {
                                0
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let resp_a = [0, 1].map(|x| response(angles.alice[x], 1, self.efficiency_a));
        let resp_b = [0, 1].map(|y| response(angles.bob[y], -1, self.efficiency_b));
        let uniform = vec![1.0 / self.levels as f64; self.levels];
        PostSelectionModel::factorized(
            HiddenJoint::diagonal(&vec![1.0 / self.bins as f64; self.bins])?,
            [uniform.clone(), uniform.clone()],
            [uniform.clone(), uniform],
            resp_a,
            resp_b,
        )
    }
}

/// Post-selection model whose retained hidden supports are disjoint across
/// contexts, reaching `S = 4` after post-selection.
///
/// The shared hidden value is `(k, σ)` with `k ∈ {0..4}` naming a context and
/// `σ = ±1` a uniform sign. Alice clicks only when `x` matches the first bit
/// of `k`, Bob only when `y` matches the second, so a pair survives only in
/// context `k`. Surviving pairs are `(σ, σ)`, except `(σ, −σ)` in context
/// `(1, 1)`. Raw single-station marginals do not depend on the remote setting.
pub fn context_disjoint() -> PostSelectionModel {
    let states: Vec<(usize, i8)> = (0..4).flat_map(|k| [(k, 1), (k, -1)]).collect();
    let resp_a = [0, 1].map(|x| {
        states
            .iter()
            .map(|&(k, sigma)| vec![if k >> 1 == x { sigma } else { 0 }])
            .collect()
    });
    let resp_b = [0, 1].map(|y| {
        states
            .iter()
            .map(|&(k, sigma)| {
                let b = if k == 3 { -sigma } else { sigma };
                vec![if k & 1 == y { b } else { 0 }]
            })
            .collect()
    });
    PostSelectionModel::factorized(
        HiddenJoint::diagonal(&vec![1.0 / states.len() as f64; states.len()]).expect("uniform weights"),
        [vec![1.0], vec![1.0]],
        [vec![1.0], vec![1.0]],
        resp_a,
        resp_b,
    )
    .expect("static preset is well formed")
}
