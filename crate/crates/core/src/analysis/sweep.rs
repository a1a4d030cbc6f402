//! Correlation `E(θ)` as a function of the relative analyzer angle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{estimate, AngleAssignment, ContextTable, SettingPair};
use crate::couplings::{CouplingModel, PearleLike, QuantumSingletModel};
use crate::error::{invalid, Result};
use crate::protocol::sample_context;

/// Model family parametrized by the relative angle. At each grid point Alice
/// sits at `θ`, Bob at `0`, and context `(0,0)` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SweepFamily {
    Singlet { visibility: f64 },
    PearleLike(PearleLike),
}

impl SweepFamily {
    pub fn model_at(&self, theta: f64) -> Result<CouplingModel> {
        let angles = AngleAssignment::new([theta, theta], [0.0, 0.0])?;
        Ok(match *self {
            SweepFamily::Singlet { visibility } => QuantumSingletModel::new(angles, visibility)?.into(),
            SweepFamily::PearleLike(p) => PearleLike { angles, ..p }.build()?.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SweepMode {
    Exact,
    /// Grid point `k` draws from stream `k`, so rows do not depend on the thread count.
    MonteCarlo {
        n_per_point: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta_rad: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub stderr: f64,
    /// Nonzero pairs behind `E`; `0` for exact rows.
    pub n: u64,
}

pub fn theta_sweep(family: &SweepFamily, grid: &[f64], mode: SweepMode) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(invalid("grid", "must contain at least one angle"));
    }
    let s = SettingPair::ALL[0];
    grid.par_iter()
        .enumerate()
        .map(|(k, &theta)| {
            let model = family.model_at(theta)?;
            match mode {
                SweepMode::Exact => {
                    let m = model.exact(s)?;
                    Ok(SweepRow {
                        theta_rad: theta,
                        e: m.e_ab,
                        stderr: 0.0,
                        n: 0,
                    })
                }
                SweepMode::MonteCarlo { n_per_point, seed } => {
                    let mut table = ContextTable::new();
                    for (a, b) in sample_context(&model, s, n_per_point, seed, k as u64) {
                        table.add(s, a, b);
                    }
                    let summary = estimate(&table);
                    let c = summary.get(s);
                    let e = c.e_ab.ok_or_else(|| crate::Error::Starved(vec![s]))?;
                    let n = c.n_nonzero;
                    Ok(SweepRow {
                        theta_rad: theta,
                        e,
                        stderr: ((1.0 - e * e).max(0.0) / n as f64).sqrt(),
                        n,
                    })
                }
            }
        })
        .collect()
}

/// Least-squares `A` in `E(θ) ≈ −A cos θ`.
pub fn fit_amplitude(rows: &[SweepRow]) -> Option<f64> {
    let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), r| {
        let c = r.theta_rad.cos();
        (n - r.e * c, d + c * c)
    });
    (den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::TrialRecord;
    use crate::pipeline::{paired_from_trials, postselect, table_of};
    use std::f64::consts::PI;

    #[test]
    fn singlet_exact_cosines() {
        let rows = theta_sweep(
            &SweepFamily::Singlet { visibility: 1.0 },
            &[0.0, PI / 2.0, PI],
            SweepMode::Exact,
        )
        .unwrap();
        let e: Vec<f64> = rows.iter().map(|r| r.e).collect();
        assert!((e[0] + 1.0).abs() < 1e-12);
        assert!(e[1].abs() < 1e-12);
        assert!((e[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn amplitude_fit_recovers_visibility() {
        let grid: Vec<f64> = (0..32).map(|k| PI * k as f64 / 31.0).collect();
        let rows = theta_sweep(
            &SweepFamily::Singlet { visibility: 0.7335 },
            &grid,
            SweepMode::MonteCarlo {
                n_per_point: 100_000,
                seed: 11,
            },
        )
        .unwrap();
        let a = fit_amplitude(&rows).unwrap();
        assert!((a - 0.7335).abs() < 0.01, "{a}");
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let fam = SweepFamily::Singlet { visibility: 1.0 };
        let grid = [0.1, 0.7, 2.0];
        let mode = SweepMode::MonteCarlo {
            n_per_point: 5_000,
            seed: 3,
        };
        assert_eq!(
            theta_sweep(&fam, &grid, mode).unwrap(),
            theta_sweep(&fam, &grid, mode).unwrap()
        );
    }

    /// The pipeline (paired trials, post-selection, estimation) applied to the
    /// same draws must give the identical curve.
    #[test]
    fn post_selection_sweep_matches_pipeline() {
        let fam = SweepFamily::PearleLike(PearleLike {
            bins: 90,
            levels: 20,
            ..PearleLike::default()
        });
        let grid = [0.0, 0.6, 1.9];
        let (n, seed) = (4_000, 5);
        let rows = theta_sweep(&fam, &grid, SweepMode::MonteCarlo { n_per_point: n, seed }).unwrap();
        for (k, row) in rows.iter().enumerate() {
            let model = fam.model_at(grid[k]).unwrap();
            let s = SettingPair::ALL[0];
            let records: Vec<TrialRecord> = sample_context(&model, s, n, seed, k as u64)
                .into_iter()
                .enumerate()
                .map(|(i, (a, b))| TrialRecord {
                    trial_id: i as u64,
                    settings: s,
                    a,
                    b,
                    ready: true,
                })
                .collect();
            let pairs = paired_from_trials(&records);
            let kept = postselect(&pairs);
            let e = estimate(&table_of(&kept.final_pairs)).get(s).e_ab.unwrap();
            assert_eq!(row.e, e);
        }
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(theta_sweep(&SweepFamily::Singlet { visibility: 1.0 }, &[], SweepMode::Exact).is_err());
    }
}
