//! Bell-test laboratory: coupling models, protocol simulators, coincidence
//! pipeline and statistical analysis of CHSH experiments.

pub mod analysis;
pub mod context;
pub mod couplings;
pub mod error;
pub mod pipeline;
pub mod protocol;
pub mod rng;

pub use context::{
    chsh, chsh_from, estimate, par_tally, tally, AngleAssignment, ContextSummary, ContextTable, CorrelationSummary,
    Outcome, SettingPair, TrialRecord,
};
pub use couplings::{max_deterministic_chsh, CouplingModel, Moments};
pub use error::{Error, Result};
