//! Inference on Bell-test data: CHSH significance, no-signalling tests,
//! coupling feasibility and angle sweeps.

mod feasibility;
mod nosignal;
mod pvalue;
mod sweep;

pub use feasibility::{
    chsh_combinations, coupling_feasibility, Certificate, ChshCombination, FeasibilityResult, PairwiseTables,
};
pub use nosignal::{
    nosignalling_test, two_proportion_z, MarginalBlock, MarginalComparison, NoSignallingReport, Party, ZTest,
};
pub use pvalue::{hoeffding_p, lhv_pvalue, HypothesisReport, Orientation};
pub use sweep::{fit_amplitude, theta_sweep, SweepFamily, SweepMode, SweepRow};
