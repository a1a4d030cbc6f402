use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::context::{ContextTable, Outcome, SettingPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

/// Pooled two-proportion z-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub delta: f64,
    pub stderr: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Compare `k1/n1` against `k2/n2`. `None` when either sample is empty.
pub fn two_proportion_z(k1: u64, n1: u64, k2: u64, n2: u64) -> Option<ZTest> {
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let stderr = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let delta = (p1 - p2).abs();
    if stderr == 0.0 {
        // both samples are all-plus or all-minus
        return Some(ZTest {
            delta,
            stderr,
            z: 0.0,
            p_value: 1.0,
        });
    }
    let z = (p1 - p2) / stderr;
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Some(ZTest {
        delta,
        stderr,
        z,
        p_value,
    })
}

/// Marginal of one party at one local setting, compared across the remote setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison {
    pub party: Party,
    pub local_setting: u8,
    /// `P̂(+1 | local, remote = 0)` and `P̂(+1 | local, remote = 1)`.
    pub p_plus: [Option<f64>; 2],
    pub n: [u64; 2],
    /// `None` when one of the two cells is starved.
    pub test: Option<ZTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalBlock {
    /// How the denominator of each marginal is formed.
    pub convention: String,
    pub comparisons: Vec<MarginalComparison>,
    /// Bonferroni-combined p-value over the defined comparisons.
    pub combined_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoSignallingReport {
    pub raw: MarginalBlock,
    #[serde(rename = "final")]
    pub final_data: MarginalBlock,
}

#[derive(Clone, Copy)]
enum Denominator {
    AllSlots,
    NonzeroPairs,
}

fn block(table: &ContextTable, denominator: Denominator) -> MarginalBlock {
    let detected = [Outcome::Plus, Outcome::Minus];
    let marginal = |party: Party, s: SettingPair| -> (u64, u64) {
        let plus: u64 = match (party, denominator) {
            (Party::Alice, Denominator::AllSlots) => {
                Outcome::ALL.iter().map(|&b| table.count(s, Outcome::Plus, b)).sum()
            }
            (Party::Bob, Denominator::AllSlots) => Outcome::ALL.iter().map(|&a| table.count(s, a, Outcome::Plus)).sum(),
            (Party::Alice, Denominator::NonzeroPairs) => {
                detected.iter().map(|&b| table.count(s, Outcome::Plus, b)).sum()
            }
            (Party::Bob, Denominator::NonzeroPairs) => detected.iter().map(|&a| table.count(s, a, Outcome::Plus)).sum(),
        };
        let n = match denominator {
            Denominator::AllSlots => table.total(s),
            Denominator::NonzeroPairs => table.nonzero_pairs(s),
        };
        (plus, n)
    };
    let mut comparisons = Vec::with_capacity(4);
    for party in [Party::Alice, Party::Bob] {
        for local in 0..2u8 {
            let ctx = |remote: u8| {
                match party {
                    Party::Alice => SettingPair::new(local, remote),
                    Party::Bob => SettingPair::new(remote, local),
                }
                .expect("binary labels")
            };
            let (k0, n0) = marginal(party, ctx(0));
            let (k1, n1) = marginal(party, ctx(1));
            let ratio = |k: u64, n: u64| (n > 0).then(|| k as f64 / n as f64);
            comparisons.push(MarginalComparison {
                party,
                local_setting: local,
                p_plus: [ratio(k0, n0), ratio(k1, n1)],
                n: [n0, n1],
                test: two_proportion_z(k0, n0, k1, n1),
            });
        }
    }
    let defined: Vec<f64> = comparisons.iter().filter_map(|c| c.test.map(|t| t.p_value)).collect();
    let combined_p = defined
        .iter()
        .copied()
        .reduce(f64::min)
        .map(|p| (p * defined.len() as f64).min(1.0));
    let convention = match denominator {
        Denominator::AllSlots => "raw: share of +1 among all slots of the context, vacuous outcomes included",
        Denominator::NonzeroPairs => "final: share of +1 among pairs with both outcomes non-zero",
    };
    MarginalBlock {
        convention: convention.to_string(),
        comparisons,
        combined_p,
    }
}

/// Two-proportion tests of whether each party's `+1` marginal depends on the
/// remote setting, once on raw data and once on post-selected data.
pub fn nosignalling_test(raw: &ContextTable, final_table: &ContextTable) -> NoSignallingReport {
    NoSignallingReport {
        raw: block(raw, Denominator::AllSlots),
        final_data: block(final_table, Denominator::NonzeroPairs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_marginals() {
        let t = two_proportion_z(300, 1000, 300, 1000).unwrap();
        assert_eq!(t.z, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(two_proportion_z(10, 10, 20, 20).unwrap().p_value, 1.0);
        assert!(two_proportion_z(1, 0, 1, 1).is_none());
    }

    #[test]
    fn six_tenths_vs_half() {
        // pooled 0.55: se = sqrt(0.2475 · 2e-4) = 0.0070356, z = 0.1 / se = 14.213
        let t = two_proportion_z(6000, 10_000, 5000, 10_000).unwrap();
        assert!((t.z - 14.2134).abs() < 1e-3, "{}", t.z);
        assert!(t.p_value < 1e-6);
        assert!((t.delta - 0.1).abs() < 1e-12);
    }

    #[test]
    fn p_value_matches_normal_tail() {
        // z = 1.959964 ⇒ two-sided p = 0.05
        let t = ZTest {
            delta: 0.0,
            stderr: 1.0,
            z: 1.959964,
            p_value: 0.0,
        };
        let p = erfc(t.z / std::f64::consts::SQRT_2);
        assert!((p - 0.05).abs() < 1e-6);
    }

    #[test]
    fn starved_cells_are_undefined() {
        let mut t = ContextTable::new();
        t.add_n(SettingPair::ALL[0], Outcome::Plus, Outcome::Minus, 10);
        let r = nosignalling_test(&t, &t);
        assert!(r.raw.comparisons.iter().all(|c| c.test.is_none()));
        assert_eq!(r.raw.combined_p, None);
    }

    #[test]
    fn raw_denominator_counts_vacuous_slots() {
        let mut t = ContextTable::new();
        for s in SettingPair::ALL {
            t.add_n(s, Outcome::Plus, Outcome::Plus, 50);
            t.add_n(s, Outcome::Minus, Outcome::Minus, 50);
        }
        // (0,1): Alice's extra vacuous slots only change the raw denominator
        t.add_n(SettingPair::ALL[1], Outcome::Vacuous, Outcome::Plus, 100);
        let r = nosignalling_test(&t, &t.nonzero_only());
        let a0 = &r.raw.comparisons[0];
        assert_eq!(a0.n, [100, 200]);
        assert_eq!(a0.p_plus, [Some(0.5), Some(0.25)]);
        let f0 = &r.final_data.comparisons[0];
        assert_eq!(f0.p_plus, [Some(0.5), Some(0.5)]);
    }
}
