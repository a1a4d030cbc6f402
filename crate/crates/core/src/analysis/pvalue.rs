use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::context::{CorrelationSummary, SettingPair};
use crate::error::{Error, Result};

/// Contexts whose trial counts are this unlikely under uniform settings are refused.
const UNIFORMITY_P_FLOOR: f64 = 1e-6;

/// Which sign of the CHSH combination is tested against the local bound 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `S = E₀₀ + E₀₁ + E₁₀ − E₁₁`.
    #[default]
    Positive,
    /// `−S`.
    Negative,
    /// Larger of the two, with a union bound over both orientations.
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Mean per-trial score in the tested orientation.
    pub s_hat: f64,
    pub n: u64,
    pub p_value: f64,
    pub method: String,
    pub orientation: Orientation,
}

/// Hoeffding tail for scores in `[−4, 4]`: `exp(−N (Ŝ − 2)² / 32)` above the bound, 1 otherwise.
pub fn hoeffding_p(s_hat: f64, n: u64) -> f64 {
    if s_hat <= 2.0 {
        1.0
    } else {
        (-(n as f64) * (s_hat - 2.0).powi(2) / 32.0).exp()
    }
}

/// Significance of a CHSH violation against every local hidden-variable model.
///
/// Each trial scores `4 a b c(x, y)` with `c = −1` on `(1, 1)` only. With
/// uniform settings the score mean is at most 2 under any local model and the
/// scores are bounded, so the Hoeffding tail bounds the p-value.
pub fn lhv_pvalue(summary: &CorrelationSummary, orientation: Orientation) -> Result<HypothesisReport> {
    let empty: Vec<SettingPair> = summary
        .contexts
        .iter()
        .filter(|c| c.n_total == 0)
        .map(|c| c.settings)
        .collect();
    if !empty.is_empty() {
        return Err(Error::Starved(empty));
    }
    check_uniform(summary)?;
    let n: u64 = summary.contexts.iter().map(|c| c.n_total).sum();
    let score_sum: f64 = summary
        .contexts
        .iter()
        .map(|c| 4.0 * c.settings.chsh_sign() * c.e_ab.unwrap_or(0.0) * c.n_nonzero as f64)
        .sum();
    let s_plus = score_sum / n as f64;
    let (s_hat, p_value, method) = match orientation {
        Orientation::Positive => (s_plus, hoeffding_p(s_plus, n), "hoeffding"),
        Orientation::Negative => (-s_plus, hoeffding_p(-s_plus, n), "hoeffding"),
        Orientation::Either => {
            let s = s_plus.abs();
            (s, (2.0 * hoeffding_p(s, n)).min(1.0), "hoeffding-union2")
        }
    };
    Ok(HypothesisReport {
        s_hat,
        n,
        p_value,
        method: method.to_string(),
        orientation,
    })
}

fn check_uniform(summary: &CorrelationSummary) -> Result<()> {
    let counts: Vec<f64> = summary.contexts.iter().map(|c| c.n_total as f64).collect();
    let expected = counts.iter().sum::<f64>() / 4.0;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(3.0).expect("3 dof").cdf(stat);
    if p < UNIFORMITY_P_FLOOR {
        return Err(Error::NonUniformSettings(format!(
            "context counts {counts:?} reject uniform settings (chi-square {stat:.2}, p = {p:.3e})"
        )));
    }
    Ok(())
}
