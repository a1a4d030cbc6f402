//! Run configuration: one JSON document per run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use belllab_core::couplings::ContextualHvModel;
use belllab_core::couplings::{
    context_disjoint, DeterministicLhvModel, HiddenJoint, PearleLike, PostSelectionModel, QuantumSingletModel,
    StochasticLhvModel,
};
use belllab_core::pipeline::{CoincidencePolicy, MatchStrategy};
use belllab_core::protocol::{EventReadyConfig, SettingProbabilities, SourceProtocolConfig};
use belllab_core::{AngleAssignment, CouplingModel};

use crate::error::{CliError, CliResult, Source};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Required, either here or through `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub angles: AngleAssignment,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub protocol: Option<ProtocolSpec>,
    #[serde(default)]
    pub window: Option<CoincidencePolicy>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenJointSpec {
    Dense(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
    Entries {
        dims: (usize, usize),
        values: Vec<(usize, usize, f64)>,
    },
}

impl HiddenJointSpec {
    fn build(&self) -> belllab_core::Result<HiddenJoint> {
        match self {
            HiddenJointSpec::Dense(rows) => HiddenJoint::dense(rows),
            HiddenJointSpec::Diagonal(w) => HiddenJoint::diagonal(w),
            HiddenJointSpec::Entries { dims, values } => HiddenJoint::from_entries(dims.0, dims.1, values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Uses the top-level `angles`.
    Singlet {
        #[serde(default = "one")]
        visibility: f64,
    },
    Deterministic {
        weights: Vec<f64>,
        alice: [Vec<i8>; 2],
        bob: [Vec<i8>; 2],
    },
    Stochastic {
        weights: Vec<f64>,
        p_alice_plus: [Vec<f64>; 2],
        p_bob_plus: [Vec<f64>; 2],
    },
    Contextual {
        lambda: HiddenJointSpec,
        mu: [Vec<Vec<f64>>; 4],
        resp_a: [Vec<Vec<i8>>; 2],
        resp_b: [Vec<Vec<i8>>; 2],
    },
    PostSelection {
        lambda: HiddenJointSpec,
        mu: [Vec<Vec<f64>>; 4],
        resp_a: [Vec<Vec<i8>>; 2],
        resp_b: [Vec<Vec<i8>>; 2],
    },
    PearleLike(PearleLike),
    ContextDisjoint {},
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self, angles: AngleAssignment) -> belllab_core::Result<CouplingModel> {
        Ok(match self {
            ModelSpec::Singlet { visibility } => QuantumSingletModel::new(angles, *visibility)?.into(),
            ModelSpec::Deterministic { weights, alice, bob } => {
                DeterministicLhvModel::new(weights.clone(), alice.clone(), bob.clone())?.into()
            }
            ModelSpec::Stochastic {
                weights,
                p_alice_plus,
                p_bob_plus,
            } => StochasticLhvModel::new(weights.clone(), p_alice_plus.clone(), p_bob_plus.clone())?.into(),
            ModelSpec::Contextual {
                lambda,
                mu,
                resp_a,
                resp_b,
            } => ContextualHvModel::new(lambda.build()?, mu.clone(), resp_a.clone(), resp_b.clone())?.into(),
            ModelSpec::PostSelection {
                lambda,
                mu,
                resp_a,
                resp_b,
            } => PostSelectionModel::new(lambda.build()?, mu.clone(), resp_a.clone(), resp_b.clone())?.into(),
            ModelSpec::PearleLike(p) => p.build()?.into(),
            ModelSpec::ContextDisjoint {} => context_disjoint().into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSpec {
    /// Heralded singlet trials; the model section is not used.
    EventReady {
        n_trials: u64,
        herald_prob: f64,
        visibility: f64,
        fidelity_a: f64,
        fidelity_b: f64,
        #[serde(default)]
        setting_probabilities: SettingProbabilities,
    },
    /// Time-tagged source run of the configured model.
    Source(SourceProtocolConfig),
    /// Direct trial-by-trial sampling of the configured model.
    Trials {
        n_trials: u64,
        #[serde(default)]
        setting_probabilities: SettingProbabilities,
    },
}

impl ProtocolSpec {
    pub fn event_ready(&self) -> Option<(EventReadyConfig, u64)> {
        match *self {
            ProtocolSpec::EventReady {
                n_trials,
                herald_prob,
                visibility,
                fidelity_a,
                fidelity_b,
                setting_probabilities,
            } => Some((
                EventReadyConfig {
                    herald_prob,
                    visibility,
                    fidelity_a,
                    fidelity_b,
                    setting_probabilities,
                },
                n_trials,
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    Linspace { start: f64, stop: f64, points: usize },
    Values(Vec<f64>),
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Linspace { points: 0, .. } => Vec::new(),
            Grid::Linspace { start, points: 1, .. } => vec![*start],
            Grid::Linspace { start, stop, points } => {
                let step = (stop - start) / (*points - 1) as f64;
                (0..*points).map(|k| start + step * k as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    /// Correlation against relative angle for a `singlet` or `pearle_like` model.
    /// Without `n_per_point` the curve is exact.
    Theta {
        grid: Grid,
        #[serde(default)]
        n_per_point: Option<u64>,
    },
    /// CHSH value against coincidence window for a simulated `source` run.
    Window {
        widths: Vec<f64>,
        #[serde(default)]
        strategy: MatchStrategy,
    },
}

/// A parsed configuration together with its source text for diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: Source,
}

impl LoadedConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let source = Source::read(path)?;
        let mut config: RunConfig = serde_json::from_str(&source.text).map_err(|e| source.json_error(e))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(source.at(
                "schema_version",
                format!(
                    "field `schema_version`: unsupported version {}, expected {SCHEMA_VERSION}",
                    config.schema_version
                ),
            ));
        }
        if let Some(seed) = seed_override {
            config.seed = Some(seed);
        }
        if config.seed.is_none() {
            return Err(CliError::Input(format!(
                "{}: missing field `seed` (set it in the config or pass --seed)",
                source.path.display()
            )));
        }
        if let Some(w) = &config.window {
            w.validate().map_err(|e| source.core_error(e, "window"))?;
        }
        Ok(LoadedConfig { config, source })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.expect("checked on load")
    }

    pub fn model(&self) -> CliResult<CouplingModel> {
        let spec = self
            .config
            .model
            .as_ref()
            .ok_or_else(|| self.source.at("model", "missing section `model`"))?;
        spec.build(self.config.angles)
            .map_err(|e| self.source.core_error(e, "model"))
    }

    pub fn protocol(&self) -> CliResult<&ProtocolSpec> {
        self.config
            .protocol
            .as_ref()
            .ok_or_else(|| self.source.at("protocol", "missing section `protocol`"))
    }
}
