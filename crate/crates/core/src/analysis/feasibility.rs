//! Does a joint distribution of `(A₀, A₁, B₀, B₁)` reproduce four pairwise tables?
//!
//! The question is a linear feasibility problem over the 16 deterministic
//! strategies, solved here with a dense two-phase-style simplex (phase I only)
//! using Bland's rule. Infeasible inputs come with a separating functional.

use serde::{Deserialize, Serialize};

use crate::context::SettingPair;
use crate::couplings::Strategy;
use crate::error::{Error, Result};

const LP_TOL: f64 = 1e-9;
const PIVOT_EPS: f64 = 1e-12;

/// Cells in the order `(+,+), (+,−), (−,+), (−,−)`.
const CELLS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Joint outcome distributions `p_xy(a, b)` for the four contexts, in
/// [`SettingPair::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTables {
    pub tables: [[f64; 4]; 4],
}

impl PairwiseTables {
    pub fn new(tables: [[f64; 4]; 4]) -> Result<Self> {
        for (k, t) in tables.iter().enumerate() {
            let s = SettingPair::from_index(k);
            if let Some(p) = t.iter().find(|p| !p.is_finite() || **p < -LP_TOL) {
                return Err(Error::MalformedDistribution(format!("context {s}: entry {p}")));
            }
            let total: f64 = t.iter().sum();
            if (total - 1.0).abs() > LP_TOL {
                return Err(Error::MalformedDistribution(format!(
                    "context {s}: entries sum to {total}"
                )));
            }
        }
        Ok(PairwiseTables { tables })
    }

    /// Tables `(1 + a m_A + b m_B + a b E) / 4` from marginal means and correlations.
    pub fn from_moments(alice_mean: [f64; 2], bob_mean: [f64; 2], correlations: [f64; 4]) -> Result<Self> {
        let tables = SettingPair::ALL.map(|s| {
            let (ma, mb, e) = (
                alice_mean[s.x() as usize],
                bob_mean[s.y() as usize],
                correlations[s.index()],
            );
            CELLS.map(|(a, b)| (1.0 + a as f64 * ma + b as f64 * mb + (a * b) as f64 * e) / 4.0)
        });
        Self::new(tables)
    }

    pub fn correlation(&self, s: SettingPair) -> f64 {
        self.tables[s.index()]
            .iter()
            .zip(CELLS)
            .map(|(p, (a, b))| p * (a * b) as f64)
            .sum()
    }

    /// `P(a = +1)` and `P(b = +1)` in context `s`.
    pub fn marginals(&self, s: SettingPair) -> (f64, f64) {
        let t = &self.tables[s.index()];
        (t[0] + t[1], t[0] + t[2])
    }

    fn dot(&self, coeffs: &[[f64; 4]; 4]) -> f64 {
        self.tables
            .iter()
            .flatten()
            .zip(coeffs.iter().flatten())
            .map(|(p, c)| p * c)
            .sum()
    }
}

/// Induced pairwise tables of a distribution over [`Strategy::all`].
fn margins_of(weights: &[f64; 16]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (st, &w) in Strategy::all().iter().zip(weights) {
        for s in SettingPair::ALL {
            let cell = CELLS
                .iter()
                .position(|&(a, b)| a == st.alice[s.x() as usize] && b == st.bob[s.y() as usize])
                .expect("every strategy hits one cell");
            out[s.index()][cell] += w;
        }
    }
    out
}

/// One of the eight CHSH-type combinations: a single minus sign at
/// `minus_at`, times an overall `sign`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshCombination {
    pub minus_at: SettingPair,
    pub sign: i8,
    pub value: f64,
}

impl ChshCombination {
    fn weights(&self) -> [f64; 4] {
        SettingPair::ALL.map(|s| if s == self.minus_at { -1.0 } else { 1.0 } * self.sign as f64)
    }
}

pub fn chsh_combinations(p: &PairwiseTables) -> [ChshCombination; 8] {
    let e = SettingPair::ALL.map(|s| p.correlation(s));
    std::array::from_fn(|k| {
        let minus_at = SettingPair::from_index(k / 2);
        let sign = if k % 2 == 0 { 1 } else { -1 };
        let mut c = ChshCombination {
            minus_at,
            sign,
            value: 0.0,
        };
        c.value = c.weights().iter().zip(e).map(|(w, e)| w * e).sum();
        c
    })
}

/// A linear functional `f` over the 16 table entries with
/// `f(p) = value > bound = max over local strategies of f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: String,
    pub coefficients: [[f64; 4]; 4],
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
}

impl Certificate {
    fn new(kind: &str, coefficients: [[f64; 4]; 4], p: &PairwiseTables) -> Self {
        let bound = Strategy::all()
            .iter()
            .map(|st| {
                let mut w = [0.0; 16];
                w[Strategy::all().iter().position(|o| o == st).expect("present")] = 1.0;
                let m = PairwiseTables { tables: margins_of(&w) };
                m.dot(&coefficients)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let value = p.dot(&coefficients);
        Certificate {
            kind: kind.to_string(),
            coefficients,
            value,
            bound,
            slack: value - bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// Weights over the 16 strategies, ordered as [`Strategy::all`].
    pub joint: Option<[f64; 16]>,
    /// Largest deviation of the witness's margins from the input.
    pub margin_error: Option<f64>,
    /// Largest CHSH-type combination when it exceeds 2.
    pub max_violation: Option<ChshCombination>,
    pub certificate: Option<Certificate>,
    /// Phase-I objective: total residual of the best convex combination.
    pub residual: f64,
}

pub fn coupling_feasibility(p: &PairwiseTables) -> FeasibilityResult {
    let lp = phase_one(p);
    let combos = chsh_combinations(p);
    let best = combos
        .iter()
        .copied()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("8 combos");
    let max_violation = (best.value > 2.0).then_some(best);

    if lp.objective <= LP_TOL {
        let induced = margins_of(&lp.weights);
        let margin_error = induced
            .iter()
            .flatten()
            .zip(p.tables.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        return FeasibilityResult {
            feasible: true,
            joint: Some(lp.weights),
            margin_error: Some(margin_error),
            max_violation,
            certificate: None,
            residual: lp.objective,
        };
    }

    let mut candidates: Vec<Certificate> = combos
        .iter()
        .map(|c| {
            let w = c.weights();
            let coeffs = std::array::from_fn(|k| CELLS.map(|(a, b)| w[k] * (a * b) as f64));
            Certificate::new("chsh", coeffs, p)
        })
        .collect();
    for (party, local) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        for sign in [1.0, -1.0] {
            let mut coeffs = [[0.0; 4]; 4];
            for remote in 0..2u8 {
                let s = if party == 0 {
                    SettingPair::new(local, remote)
                } else {
                    SettingPair::new(remote, local)
                }
                .expect("binary");
                let w = if remote == 0 { sign } else { -sign };
                for (cell, &(a, b)) in CELLS.iter().enumerate() {
                    let plus = if party == 0 { a == 1 } else { b == 1 };
                    if plus {
                        coeffs[s.index()][cell] = w;
                    }
                }
            }
            candidates.push(Certificate::new("marginal", coeffs, p));
        }
    }
    let mut certificate = candidates.into_iter().max_by(|a, b| a.slack.total_cmp(&b.slack));
    if certificate.as_ref().is_none_or(|c| c.slack <= LP_TOL) {
        certificate = Some(Certificate::new("lp_dual", lp.dual, p));
    }
    FeasibilityResult {
        feasible: false,
        joint: None,
        margin_error: None,
        max_violation,
        certificate,
        residual: lp.objective,
    }
}

struct PhaseOne {
    objective: f64,
    weights: [f64; 16],
    dual: [[f64; 4]; 4],
}

/// Minimize the total artificial slack of `M q + r = p`, `q, r ≥ 0`.
fn phase_one(p: &PairwiseTables) -> PhaseOne {
    let strategies = Strategy::all();
    // 16 table rows followed by the normalization row
    let m = 17;
    let n = 16;
    let width = n + m + 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    for (j, st) in strategies.iter().enumerate() {
        for s in SettingPair::ALL {
            let cell = CELLS
                .iter()
                .position(|&(a, b)| a == st.alice[s.x() as usize] && b == st.bob[s.y() as usize])
                .expect("cell");
            t[s.index() * 4 + cell][j] = 1.0;
        }
        t[16][j] = 1.0;
    }
    for (i, row) in t.iter_mut().take(m).enumerate() {
        row[n + i] = 1.0;
        row[width - 1] = if i < 16 { p.tables[i / 4][i % 4].max(0.0) } else { 1.0 };
    }
    // reduced costs of the phase-I objective
    let column_sums: Vec<f64> = (0..width).map(|j| t[..m].iter().map(|row| row[j]).sum()).collect();
    for (j, sum) in column_sums.into_iter().enumerate() {
        if !(n..n + m).contains(&j) {
            t[m][j] = -sum;
        }
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    while let Some(enter) = (0..n + m).find(|&j| t[m][j] < -PIVOT_EPS) {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][enter] > PIVOT_EPS {
                let ratio = t[i][width - 1] / t[i][enter];
                leave = match leave {
                    Some((li, lr)) if ratio > lr + PIVOT_EPS || (ratio >= lr - PIVOT_EPS && basis[i] > basis[li]) => {
                        Some((li, lr))
                    }
                    _ => Some((i, ratio)),
                };
            }
        }
        let Some((row, _)) = leave else { break };
        let pivot = t[row][enter];
        for v in t[row].iter_mut() {
            *v /= pivot;
        }
        let pivot_row = t[row].clone();
        for (i, r) in t.iter_mut().enumerate() {
            if i != row && r[enter] != 0.0 {
                let f = r[enter];
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        basis[row] = enter;
    }

    let mut weights = [0.0; 16];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            weights[b] = t[i][width - 1].max(0.0);
        }
    }
    // y_i = c_i − reduced cost of artificial i; the normalization row is dropped
    // because its functional is constant on distributions.
    let mut dual = [[0.0; 4]; 4];
    for i in 0..16 {
        dual[i / 4][i % 4] = 1.0 - t[m][n + i];
    }
    PhaseOne {
        objective: -t[m][width - 1],
        weights,
        dual,
    }
}
