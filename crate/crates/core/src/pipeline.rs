//! Coincidence matching of time-tagged clicks and extraction of non-vacuous pairs.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{chsh, estimate, ContextTable, CorrelationSummary, Outcome, SettingPair, TrialRecord};
use crate::error::{invalid, Result};
use crate::protocol::RawEventStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Time axis cut into bins `[kW, (k+1)W)`.
    #[default]
    FixedLattice,
    /// Closest-first pairing of clicks with `|Δt| ≤ W`.
    GreedyNearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidencePolicy {
    pub window_ns: f64,
    #[serde(default)]
    pub strategy: MatchStrategy,
}

impl CoincidencePolicy {
    pub fn new(window_ns: f64, strategy: MatchStrategy) -> Result<Self> {
        let p = CoincidencePolicy { window_ns, strategy };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_ns.is_finite() && self.window_ns > 0.0) {
            return Err(invalid(
                "window_ns",
                format!("must be finite and > 0, got {}", self.window_ns),
            ));
        }
        Ok(())
    }
}

/// One raw-data slot `(a_r, b_r)`. A station without a click in the slot
/// reports a vacuous outcome, and its setting label is then unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPair {
    pub x: Option<u8>,
    pub y: Option<u8>,
    pub a: Outcome,
    pub b: Outcome,
}

impl RawPair {
    pub fn settings(&self) -> Option<SettingPair> {
        match (self.x, self.y) {
            (Some(x), Some(y)) => SettingPair::new(x, y).ok(),
            _ => None,
        }
    }

    pub fn is_nonzero(&self) -> bool {
        self.a.is_detected() && self.b.is_detected()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchMetadata {
    pub strategy: MatchStrategy,
    pub window_ns: f64,
    /// Input clicks at `[A, B]`.
    pub events: [u64; 2],
    pub pairs: u64,
    pub one_sided: [u64; 2],
    /// Extra clicks discarded from multi-click lattice bins.
    pub dropped: [u64; 2],
}

impl MatchMetadata {
    /// Every click is paired, one-sided or dropped exactly once.
    pub fn is_conserved(&self) -> bool {
        (0..2).all(|k| self.events[k] == self.pairs + self.one_sided[k] + self.dropped[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedRawData {
    pub pairs: Vec<RawPair>,
    pub metadata: MatchMetadata,
}

/// Turn ground-truth trial records into raw slots (labels always known).
pub fn paired_from_trials(records: &[TrialRecord]) -> Vec<RawPair> {
    records
        .iter()
        .map(|r| RawPair {
            x: Some(r.settings.x()),
            y: Some(r.settings.y()),
            a: r.a,
            b: r.b,
        })
        .collect()
}

pub fn match_coincidences(
    alice: &RawEventStream,
    bob: &RawEventStream,
    policy: CoincidencePolicy,
) -> Result<PairedRawData> {
    policy.validate()?;
    alice.validate()?;
    bob.validate()?;
    let mut metadata = MatchMetadata {
        strategy: policy.strategy,
        window_ns: policy.window_ns,
        events: [alice.len() as u64, bob.len() as u64],
        pairs: 0,
        one_sided: [0; 2],
        dropped: [0; 2],
    };
    let pairs = match policy.strategy {
        MatchStrategy::FixedLattice => lattice(alice, bob, policy.window_ns, &mut metadata),
        MatchStrategy::GreedyNearest => greedy(alice, bob, policy.window_ns, &mut metadata),
    };
    debug_assert!(metadata.is_conserved());
    Ok(PairedRawData { pairs, metadata })
}

fn lattice(alice: &RawEventStream, bob: &RawEventStream, w: f64, meta: &mut MatchMetadata) -> Vec<RawPair> {
    let bin = |t: i64| (t as f64 / w).floor() as i64;
    let (ea, eb) = (&alice.events, &bob.events);
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < ea.len() || j < eb.len() {
        let k = match (ea.get(i), eb.get(j)) {
            (Some(a), Some(b)) => bin(a.time_ns).min(bin(b.time_ns)),
            (Some(a), None) => bin(a.time_ns),
            (None, Some(b)) => bin(b.time_ns),
            (None, None) => unreachable!(),
        };
        let first_a = ea.get(i).filter(|e| bin(e.time_ns) == k).copied();
        let first_b = eb.get(j).filter(|e| bin(e.time_ns) == k).copied();
        let take = |events: &[crate::protocol::StationEvent], idx: &mut usize| {
            let start = *idx;
            while *idx < events.len() && bin(events[*idx].time_ns) == k {
                *idx += 1;
            }
            (*idx - start) as u64
        };
        let na = take(ea, &mut i);
        let nb = take(eb, &mut j);
        meta.dropped[0] += na.saturating_sub(1);
        meta.dropped[1] += nb.saturating_sub(1);
        match (first_a, first_b) {
            (Some(a), Some(b)) => {
                meta.pairs += 1;
                out.push(RawPair {
                    x: Some(a.setting),
                    y: Some(b.setting),
                    a: a.outcome,
                    b: b.outcome,
                });
            }
            (Some(a), None) => {
                meta.one_sided[0] += 1;
                out.push(RawPair {
                    x: Some(a.setting),
                    y: None,
                    a: a.outcome,
                    b: Outcome::Vacuous,
                });
            }
            (None, Some(b)) => {
                meta.one_sided[1] += 1;
                out.push(RawPair {
                    x: None,
                    y: Some(b.setting),
                    a: Outcome::Vacuous,
                    b: b.outcome,
                });
            }
            (None, None) => unreachable!("bin chosen from a pending click"),
        }
    }
    out
}

fn greedy(alice: &RawEventStream, bob: &RawEventStream, w: f64, meta: &mut MatchMetadata) -> Vec<RawPair> {
    let (ea, eb) = (&alice.events, &bob.events);
    let within = |i: usize, j: usize| ((ea[i].time_ns - eb[j].time_ns).unsigned_abs() as f64) <= w;
    // (|Δt|, t_A, i, j, direction): the nearest not-yet-rejected Bob click on each side of every Alice click.
    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<_>, i: usize, j: usize, dir: i8| {
        if within(i, j) {
            let delta = (ea[i].time_ns - eb[j].time_ns).unsigned_abs();
            heap.push(Reverse((delta, ea[i].time_ns, i, j, dir)));
        }
    };
    for (i, e) in ea.iter().enumerate() {
        let pos = eb.partition_point(|b| b.time_ns < e.time_ns);
        if pos > 0 {
            push(&mut heap, i, pos - 1, -1);
        }
        if pos < eb.len() {
            push(&mut heap, i, pos, 1);
        }
    }
    let mut partner_of_a: Vec<Option<usize>> = vec![None; ea.len()];
    let mut used_b = vec![false; eb.len()];
    while let Some(Reverse((_, _, i, j, dir))) = heap.pop() {
        if partner_of_a[i].is_some() {
            continue;
        }
        if used_b[j] {
            let next = j as i64 + dir as i64;
            if next >= 0 && (next as usize) < eb.len() {
                push(&mut heap, i, next as usize, dir);
            }
            continue;
        }
        partner_of_a[i] = Some(j);
        used_b[j] = true;
    }

    // Slots ordered by their earliest click, Alice first on ties.
    let mut slots: Vec<(i64, u8, usize, RawPair)> = Vec::new();
    for (i, partner) in partner_of_a.iter().enumerate() {
        let a = ea[i];
        match *partner {
            Some(j) => {
                let b = eb[j];
                meta.pairs += 1;
                let t = a.time_ns.min(b.time_ns);
                slots.push((
                    t,
                    0,
                    i,
                    RawPair {
                        x: Some(a.setting),
                        y: Some(b.setting),
                        a: a.outcome,
                        b: b.outcome,
                    },
                ));
            }
            None => {
                meta.one_sided[0] += 1;
                slots.push((
                    a.time_ns,
                    0,
                    i,
                    RawPair {
                        x: Some(a.setting),
                        y: None,
                        a: a.outcome,
                        b: Outcome::Vacuous,
                    },
                ));
            }
        }
    }
    for (j, b) in eb.iter().enumerate().filter(|(j, _)| !used_b[*j]) {
        meta.one_sided[1] += 1;
        slots.push((
            b.time_ns,
            1,
            j,
            RawPair {
                x: None,
                y: Some(b.setting),
                a: Outcome::Vacuous,
                b: b.outcome,
            },
        ));
    }
    slots.sort_by_key(|s| (s.0, s.1, s.2));
    slots.into_iter().map(|s| s.3).collect()
}

/// Result of discarding slots with a vacuous outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSelection {
    pub final_pairs: Vec<RawPair>,
    /// Attributable slots per context (both labels known).
    pub totals: [u64; 4],
    pub retained: [u64; 4],
    /// `C_xy = retained / total`; `None` when the context has no slots.
    pub retention: [Option<f64>; 4],
    /// Slots without a full setting pair (one-sided coincidence slots).
    pub unattributed: u64,
    pub discarded: u64,
}

pub fn postselect(pairs: &[RawPair]) -> PostSelection {
    let mut totals = [0u64; 4];
    let mut retained = [0u64; 4];
    let mut unattributed = 0;
    let mut final_pairs = Vec::new();
    for p in pairs {
        match p.settings() {
            Some(s) => {
                totals[s.index()] += 1;
                if p.is_nonzero() {
                    retained[s.index()] += 1;
                    final_pairs.push(*p);
                }
            }
            None => unattributed += 1,
        }
    }
    let retention = std::array::from_fn(|k| (totals[k] > 0).then(|| retained[k] as f64 / totals[k] as f64));
    let discarded = (pairs.len() - final_pairs.len()) as u64;
    PostSelection {
        final_pairs,
        totals,
        retained,
        retention,
        unattributed,
        discarded,
    }
}

/// Count table over slots with a known context.
pub fn table_of(pairs: &[RawPair]) -> ContextTable {
    let mut t = ContextTable::new();
    for p in pairs {
        if let Some(s) = p.settings() {
            t.add(s, p.a, p.b);
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window_ns: f64,
    pub summary: CorrelationSummary,
    /// `None` when a context is starved.
    pub s: Option<f64>,
    pub matching: MatchMetadata,
}

/// Match, post-select, estimate and compute `S` for every window width.
pub fn window_sweep(
    alice: &RawEventStream,
    bob: &RawEventStream,
    widths: &[f64],
    strategy: MatchStrategy,
) -> Result<Vec<WindowRow>> {
    if widths.is_empty() {
        return Err(invalid("widths", "window sweep needs at least one width"));
    }
    for &w in widths {
        CoincidencePolicy::new(w, strategy)?;
    }
    widths
        .par_iter()
        .map(|&w| {
            let paired = match_coincidences(alice, bob, CoincidencePolicy { window_ns: w, strategy })?;
            let selected = postselect(&paired.pairs);
            let summary = estimate(&table_of(&selected.final_pairs));
            let s = chsh(&summary).ok();
            Ok(WindowRow {
                window_ns: w,
                summary,
                s,
                matching: paired.metadata,
            })
        })
        .collect()
}
