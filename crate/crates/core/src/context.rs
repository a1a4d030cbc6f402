//! Setting contexts, trial records, count tables and the CHSH statistic.
//!
//! Label convention: `0` is the unprimed setting and `1` the primed one.
//! The minus sign of the CHSH combination sits on the `(1, 1)` context.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One of the four measurement contexts `(x, y)`, with `x, y ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(u8, u8)", into = "(u8, u8)")]
pub struct SettingPair {
    x: u8,
    y: u8,
}

impl SettingPair {
    pub const ALL: [SettingPair; 4] = [
        SettingPair { x: 0, y: 0 },
        SettingPair { x: 0, y: 1 },
        SettingPair { x: 1, y: 0 },
        SettingPair { x: 1, y: 1 },
    ];

    pub fn new(x: u8, y: u8) -> Result<Self> {
        if x > 1 || y > 1 {
            return Err(invalid("settings", format!("labels must be 0 or 1, got ({x}, {y})")));
        }
        Ok(SettingPair { x, y })
    }

    pub fn x(self) -> u8 {
        self.x
    }

    pub fn y(self) -> u8 {
        self.y
    }

    /// Position in [`SettingPair::ALL`].
    pub fn index(self) -> usize {
        (self.x as usize) * 2 + self.y as usize
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    /// Sign of this context in the CHSH combination.
    pub fn chsh_sign(self) -> f64 {
        if self.x == 1 && self.y == 1 {
            -1.0
        } else {
            1.0
        }
    }
}

impl TryFrom<(u8, u8)> for SettingPair {
    type Error = Error;

    fn try_from((x, y): (u8, u8)) -> Result<Self> {
        SettingPair::new(x, y)
    }
}

impl From<SettingPair> for (u8, u8) {
    fn from(s: SettingPair) -> Self {
        (s.x, s.y)
    }
}

impl fmt::Display for SettingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Planar measurement angles (radians) for both stations, indexed by setting label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleAssignment {
    pub alice: [f64; 2],
    pub bob: [f64; 2],
}

impl AngleAssignment {
    pub fn new(alice: [f64; 2], bob: [f64; 2]) -> Result<Self> {
        if alice.iter().chain(bob.iter()).any(|a| !a.is_finite()) {
            return Err(invalid("angles", "all angles must be finite"));
        }
        Ok(AngleAssignment { alice, bob })
    }

    /// Angles at which the singlet attains `|S| = 2√2`: Alice `{0, π/2}`, Bob `{π/4, −π/4}`.
    pub fn canonical() -> Self {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        AngleAssignment {
            alice: [0.0, FRAC_PI_2],
            bob: [FRAC_PI_4, -FRAC_PI_4],
        }
    }

    /// `θ_x − θ_y` for the given context.
    pub fn relative(&self, s: SettingPair) -> f64 {
        self.alice[s.x() as usize] - self.bob[s.y() as usize]
    }
}

impl Default for AngleAssignment {
    fn default() -> Self {
        Self::canonical()
    }
}

/// A single station readout: `±1`, or `0` for no detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Outcome {
    Plus,
    Minus,
    Vacuous,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Plus, Outcome::Minus, Outcome::Vacuous];

    pub fn value(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
            Outcome::Vacuous => 0,
        }
    }

    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    pub fn is_detected(self) -> bool {
        self != Outcome::Vacuous
    }

    pub fn flipped(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
            Outcome::Vacuous => Outcome::Vacuous,
        }
    }

    fn cell(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
            Outcome::Vacuous => 2,
        }
    }
}

impl TryFrom<i8> for Outcome {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Outcome::Plus),
            -1 => Ok(Outcome::Minus),
            0 => Ok(Outcome::Vacuous),
            other => Err(invalid("outcome", format!("expected -1, 0 or 1, got {other}"))),
        }
    }
}

impl From<Outcome> for i8 {
    fn from(o: Outcome) -> i8 {
        o.value()
    }
}

/// One trial of a Bell test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub settings: SettingPair,
    pub a: Outcome,
    pub b: Outcome,
    pub ready: bool,
}

/// Outcome counts `n_xy(a, b)` for each context, `a, b ∈ {+1, −1, 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContextTable {
    cells: [[[u64; 3]; 3]; 4],
}

impl ContextTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, s: SettingPair, a: Outcome, b: Outcome) {
        self.add_n(s, a, b, 1);
    }

    pub fn add_n(&mut self, s: SettingPair, a: Outcome, b: Outcome, n: u64) {
        self.cells[s.index()][a.cell()][b.cell()] += n;
    }

    pub fn count(&self, s: SettingPair, a: Outcome, b: Outcome) -> u64 {
        self.cells[s.index()][a.cell()][b.cell()]
    }

    /// `N_xy`, all cells of the context including vacuous outcomes.
    pub fn total(&self, s: SettingPair) -> u64 {
        self.cells[s.index()].iter().flatten().sum()
    }

    /// Number of pairs with `a·b ≠ 0`.
    pub fn nonzero_pairs(&self, s: SettingPair) -> u64 {
        let c = &self.cells[s.index()];
        c[0][0] + c[0][1] + c[1][0] + c[1][1]
    }

    pub fn grand_total(&self) -> u64 {
        SettingPair::ALL.iter().map(|&s| self.total(s)).sum()
    }

    /// Cell-wise sum; associative and commutative.
    pub fn merge(mut self, other: &ContextTable) -> ContextTable {
        for (mine, theirs) in self.cells.iter_mut().flatten().zip(other.cells.iter().flatten()) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += t;
            }
        }
        self
    }

    /// The same table restricted to pairs with `a·b ≠ 0`.
    pub fn nonzero_only(&self) -> ContextTable {
        let mut out = *self;
        for ctx in out.cells.iter_mut() {
            for (i, row) in ctx.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    if i == 2 || j == 2 {
                        *cell = 0;
                    }
                }
            }
        }
        out
    }
}

/// Fold a sequence of trial records into a count table.
pub fn tally<'a, I>(records: I) -> ContextTable
where
    I: IntoIterator<Item = &'a TrialRecord>,
{
    let mut table = ContextTable::new();
    for r in records {
        table.add(r.settings, r.a, r.b);
    }
    table
}

/// Parallel form of [`tally`]; the result is identical for any worker count.
pub fn par_tally(records: &[TrialRecord]) -> ContextTable {
    records
        .par_chunks(1 << 14)
        .map(tally)
        .reduce(ContextTable::new, |a, b| a.merge(&b))
}

#[derive(Serialize, Deserialize)]
struct ContextCountsJson {
    settings: SettingPair,
    /// Rows `a = +1, −1, 0`; columns `b = +1, −1, 0`.
    counts: [[u64; 3]; 3],
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct ContextTableJson {
    contexts: Vec<ContextCountsJson>,
}

impl Serialize for ContextTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ContextTableJson {
            contexts: SettingPair::ALL
                .iter()
                .map(|&s| ContextCountsJson {
                    settings: s,
                    counts: self.cells[s.index()],
                    total: self.total(s),
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ContextTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let json = ContextTableJson::deserialize(deserializer)?;
        let mut table = ContextTable::new();
        for ctx in json.contexts {
            let sum: u64 = ctx.counts.iter().flatten().sum();
            if sum != ctx.total {
                return Err(D::Error::custom(format!(
                    "context {}: total {} does not match cell sum {}",
                    ctx.settings, ctx.total, sum
                )));
            }
            table.cells[ctx.settings.index()] = ctx.counts;
        }
        Ok(table)
    }
}

/// Estimated moments for one context. `None` marks an undefined estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub settings: SettingPair,
    /// `N_xy`.
    pub n_total: u64,
    /// Pairs with `a·b ≠ 0`.
    pub n_nonzero: u64,
    pub e_ab: Option<f64>,
    pub e_a: Option<f64>,
    pub e_b: Option<f64>,
    /// `C_xy`, fraction of pairs with `a·b ≠ 0`.
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub contexts: [ContextSummary; 4],
}

impl CorrelationSummary {
    pub fn get(&self, s: SettingPair) -> &ContextSummary {
        &self.contexts[s.index()]
    }

    /// Contexts whose pairwise expectation is undefined.
    pub fn starved(&self) -> Vec<SettingPair> {
        self.contexts
            .iter()
            .filter(|c| c.e_ab.is_none())
            .map(|c| c.settings)
            .collect()
    }

    pub fn correlations(&self) -> Result<[f64; 4]> {
        let starved = self.starved();
        if !starved.is_empty() {
            return Err(Error::Starved(starved));
        }
        Ok(self.contexts.map(|c| c.e_ab.unwrap_or_default()))
    }
}

/// Expectations conditioned on `a·b ≠ 0`, plus the retention fraction `C_xy`.
pub fn estimate(table: &ContextTable) -> CorrelationSummary {
    let contexts = SettingPair::ALL.map(|s| {
        let n_total = table.total(s);
        let n_nonzero = table.nonzero_pairs(s);
        let (mut sum_ab, mut sum_a, mut sum_b) = (0i64, 0i64, 0i64);
        for a in [Outcome::Plus, Outcome::Minus] {
            for b in [Outcome::Plus, Outcome::Minus] {
                let n = table.count(s, a, b) as i64;
                sum_ab += (a.value() * b.value()) as i64 * n;
                sum_a += a.value() as i64 * n;
                sum_b += b.value() as i64 * n;
            }
        }
        let ratio = |num: i64| (n_nonzero > 0).then(|| num as f64 / n_nonzero as f64);
        ContextSummary {
            settings: s,
            n_total,
            n_nonzero,
            e_ab: ratio(sum_ab),
            e_a: ratio(sum_a),
            e_b: ratio(sum_b),
            c: (n_total > 0).then(|| n_nonzero as f64 / n_total as f64),
        }
    });
    CorrelationSummary { contexts }
}

/// `S = E₀₀ + E₀₁ + E₁₀ − E₁₁` from four correlations in [`SettingPair::ALL`] order.
pub fn chsh_from(correlations: [f64; 4]) -> f64 {
    SettingPair::ALL
        .iter()
        .zip(correlations)
        .map(|(s, e)| s.chsh_sign() * e)
        .sum()
}

pub fn chsh(summary: &CorrelationSummary) -> Result<f64> {
    summary.correlations().map(chsh_from)
}
