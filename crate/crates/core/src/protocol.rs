//! Protocol simulators: the source-based experiment with time-tagged clicks
//! and the event-ready (heralded) experiment with readout noise.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{AngleAssignment, Outcome, SettingPair, TrialRecord};
use crate::couplings::{CouplingModel, QuantumSingletModel};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Role, StreamRng, CHUNK};

/// Probability that each station picks its primed setting. Fixed for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettingProbabilities {
    pub alice_primed: f64,
    pub bob_primed: f64,
}

impl Default for SettingProbabilities {
    fn default() -> Self {
        SettingProbabilities {
            alice_primed: 0.5,
            bob_primed: 0.5,
        }
    }
}

impl SettingProbabilities {
    fn validate(&self) -> Result<()> {
        for (field, p) in [("alice_primed", self.alice_primed), ("bob_primed", self.bob_primed)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(field, format!("setting probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.alice_primed == 0.5 && self.bob_primed == 0.5
    }
}

fn draw_label<R: Rng + ?Sized>(rng: &mut R, p_primed: f64) -> u8 {
    rng.random_bool(p_primed) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Station {
    A,
    B,
}

impl Station {
    pub fn letter(self) -> char {
        match self {
            Station::A => 'A',
            Station::B => 'B',
        }
    }
}

/// One registered click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationEvent {
    pub time_ns: i64,
    pub setting: u8,
    pub outcome: Outcome,
}

/// Time-ordered clicks of one station.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEventStream {
    pub station: Station,
    pub events: Vec<StationEvent>,
}

impl RawEventStream {
    /// Checks time order, setting labels and that every click is `±1`.
    pub fn new(station: Station, events: Vec<StationEvent>) -> Result<Self> {
        let stream = RawEventStream { station, events };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.events.windows(2).position(|w| w[1].time_ns < w[0].time_ns) {
            return Err(Error::Unsorted {
                station: self.station.letter(),
                index: i + 1,
            });
        }
        for e in &self.events {
            if e.setting > 1 {
                return Err(invalid("setting", format!("label {} at t={} ns", e.setting, e.time_ns)));
            }
            if !e.outcome.is_detected() {
                return Err(invalid("outcome", format!("vacuous click at t={} ns", e.time_ns)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Per-station deterministic time shift (ns) indexed by the local setting label.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettingDelay {
    pub alice: [f64; 2],
    pub bob: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceProtocolConfig {
    /// Mean emitted pairs per second.
    pub pair_rate: f64,
    /// Standard deviation of the per-station Gaussian time-tag jitter (ns).
    #[serde(default)]
    pub jitter_sd: f64,
    #[serde(default)]
    pub setting_delay: SettingDelay,
    /// Background clicks per second at each station.
    #[serde(default)]
    pub dark_rate: f64,
    /// Run length in seconds.
    pub duration: f64,
    #[serde(default)]
    pub setting_probabilities: SettingProbabilities,
}

impl SourceProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |field: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be finite and >= 0, got {v}")))
            }
        };
        nonneg("pair_rate", self.pair_rate)?;
        nonneg("jitter_sd", self.jitter_sd)?;
        nonneg("dark_rate", self.dark_rate)?;
        nonneg("duration", self.duration)?;
        let d = &self.setting_delay;
        if d.alice.iter().chain(&d.bob).any(|v| !v.is_finite()) {
            return Err(invalid("setting_delay", "delays must be finite"));
        }
        self.setting_probabilities.validate()
    }

    pub fn expected_pairs(&self) -> f64 {
        self.pair_rate * self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMetadata {
    pub pairs_emitted: u64,
    /// Clicks at `[A, B]` originating from emitted pairs.
    pub pair_events: [u64; 2],
    /// Background clicks at `[A, B]`.
    pub dark_events: [u64; 2],
    /// Expected background clicks per station, `dark_rate · duration`.
    pub expected_dark_events: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SourceRun {
    pub alice: RawEventStream,
    pub bob: RawEventStream,
    /// Ground-truth record of every emitted pair in emission-time order,
    /// with vacuous outcomes where a station did not click.
    pub emissions: Vec<TrialRecord>,
    pub metadata: SourceMetadata,
}

struct Emitted {
    time: f64,
    settings: SettingPair,
    a: Outcome,
    b: Outcome,
    jitter: [f64; 2],
}

fn chunk_ranges(n: u64) -> Vec<(u64, std::ops::Range<u64>)> {
    let chunk = CHUNK as u64;
    (0..n.div_ceil(chunk))
        .map(|c| (c, c * chunk..((c + 1) * chunk).min(n)))
        .collect()
}

/// Source-based experiment.
///
/// `round(pair_rate · duration)` pairs are emitted at uniform times over the
/// run. Each station draws its own setting; the model is sampled at the
/// realized context; a click is registered at
/// `round(emission + jitter + setting_delay)` unless its outcome is vacuous.
/// Dark clicks with uniform outcome are added at Poisson-distributed count.
pub fn run_source_experiment(cfg: &SourceProtocolConfig, model: &CouplingModel, seed: u64) -> Result<SourceRun> {
    cfg.validate()?;
    let n_pairs = cfg.expected_pairs().round() as u64;
    let span_ns = cfg.duration * 1e9;
    let probs = cfg.setting_probabilities;
    let jitter = Normal::new(0.0, cfg.jitter_sd).map_err(|e| invalid("jitter_sd", e.to_string()))?;

    let chunks: Vec<Vec<Emitted>> = chunk_ranges(n_pairs)
        .into_par_iter()
        .map(|(c, range)| {
            let mut time_rng = stream(seed, Role::Emission, c);
            let mut alice = stream(seed, Role::AliceSetting, c);
            let mut bob = stream(seed, Role::BobSetting, c);
            let mut source = stream(seed, Role::Source, c);
            let mut jit_a = stream(seed, Role::AliceJitter, c);
            let mut jit_b = stream(seed, Role::BobJitter, c);
            range
                .map(|_| {
                    let time = time_rng.random::<f64>() * span_ns;
                    let x = draw_label(&mut alice, probs.alice_primed);
                    let y = draw_label(&mut bob, probs.bob_primed);
                    let settings = SettingPair::new(x, y).expect("labels are binary");
                    let (a, b) = model.sample(settings, &mut source);
                    let jitter = [jitter.sample(&mut jit_a), jitter.sample(&mut jit_b)];
                    Emitted {
                        time,
                        settings,
                        a,
                        b,
                        jitter,
                    }
                })
                .collect()
        })
        .collect();
    let mut pairs: Vec<Emitted> = chunks.into_iter().flatten().collect();
    pairs.sort_by(|p, q| p.time.total_cmp(&q.time));

    let mut keyed: [Vec<(i64, u64, StationEvent)>; 2] = [Vec::new(), Vec::new()];
    let mut emissions = Vec::with_capacity(pairs.len());
    for (seq, p) in pairs.iter().enumerate() {
        emissions.push(TrialRecord {
            trial_id: seq as u64,
            settings: p.settings,
            a: p.a,
            b: p.b,
            ready: false,
        });
        let sides = [
            (p.a, p.settings.x(), cfg.setting_delay.alice, p.jitter[0]),
            (p.b, p.settings.y(), cfg.setting_delay.bob, p.jitter[1]),
        ];
        for (k, (outcome, label, delay, jit)) in sides.into_iter().enumerate() {
            if outcome.is_detected() {
                let time_ns = (p.time + jit + delay[label as usize]).round() as i64;
                keyed[k].push((
                    time_ns,
                    seq as u64,
                    StationEvent {
                        time_ns,
                        setting: label,
                        outcome,
                    },
                ));
            }
        }
    }
    let pair_events = [keyed[0].len() as u64, keyed[1].len() as u64];

    let expected_dark = cfg.dark_rate * cfg.duration;
    let mut dark_events = [0u64; 2];
    for (k, (role, p_primed)) in [(Role::AliceDark, probs.alice_primed), (Role::BobDark, probs.bob_primed)]
        .into_iter()
        .enumerate()
    {
        if expected_dark <= 0.0 {
            continue;
        }
        let mut rng = stream(seed, role, 0);
        let count = Poisson::new(expected_dark)
            .map_err(|e| invalid("dark_rate", e.to_string()))?
            .sample(&mut rng) as u64;
        for d in 0..count {
            let time_ns = (rng.random::<f64>() * span_ns).round() as i64;
            let setting = draw_label(&mut rng, p_primed);
            let outcome = Outcome::from_sign(rng.random_bool(0.5));
            keyed[k].push((
                time_ns,
                n_pairs + d,
                StationEvent {
                    time_ns,
                    setting,
                    outcome,
                },
            ));
        }
        dark_events[k] = count;
    }

    let [ka, kb] = keyed;
    let finish = |station, mut keyed: Vec<(i64, u64, StationEvent)>| {
        keyed.sort_by_key(|&(t, seq, _)| (t, seq));
        RawEventStream {
            station,
            events: keyed.into_iter().map(|(_, _, e)| e).collect(),
        }
    };
    let mut warnings = Vec::new();
    if cfg.expected_pairs() < 1.0 {
        warnings.push(format!(
            "pair_rate * duration = {} is below one expected pair",
            cfg.expected_pairs()
        ));
    }
    Ok(SourceRun {
        alice: finish(Station::A, ka),
        bob: finish(Station::B, kb),
        emissions,
        metadata: SourceMetadata {
            pairs_emitted: n_pairs,
            pair_events,
            dark_events,
            expected_dark_events: expected_dark,
            warnings,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventReadyConfig {
    /// Probability that one preparation attempt yields a ready signal.
    pub herald_prob: f64,
    pub visibility: f64,
    /// Readout fidelity `F_r` of station A, in `[0.5, 1]`.
    pub fidelity_a: f64,
    pub fidelity_b: f64,
    #[serde(default)]
    pub setting_probabilities: SettingProbabilities,
}

impl EventReadyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.herald_prob > 0.0 && self.herald_prob <= 1.0) {
            return Err(invalid(
                "herald_prob",
                format!("must lie in (0, 1], got {}", self.herald_prob),
            ));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid(
                "visibility",
                format!("must lie in [0, 1], got {}", self.visibility),
            ));
        }
        for (field, f) in [("fidelity_a", self.fidelity_a), ("fidelity_b", self.fidelity_b)] {
            if !(0.5..=1.0).contains(&f) {
                return Err(invalid(field, format!("must lie in [0.5, 1], got {f}")));
            }
        }
        self.setting_probabilities.validate()
    }

    /// Correlation after readout flips: `−(2F_A − 1)(2F_B − 1) V cos θ`.
    pub fn expected_correlation(&self, theta: f64) -> f64 {
        -(2.0 * self.fidelity_a - 1.0) * (2.0 * self.fidelity_b - 1.0) * self.visibility * theta.cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReadyMetadata {
    pub n_trials: u64,
    /// Preparation attempts including the successful ones.
    pub herald_attempts: u64,
}

#[derive(Debug, Clone)]
pub struct EventReadyRun {
    pub records: Vec<TrialRecord>,
    pub metadata: EventReadyMetadata,
}

/// Event-ready experiment: every heralded trial yields a valid `±1` readout.
pub fn run_event_ready(
    cfg: &EventReadyConfig,
    angles: AngleAssignment,
    n_trials: u64,
    seed: u64,
) -> Result<EventReadyRun> {
    cfg.validate()?;
    if n_trials == 0 {
        return Err(invalid("n_trials", "must be at least 1"));
    }
    let singlet = QuantumSingletModel::new(angles, cfg.visibility)?;
    let herald = Geometric::new(cfg.herald_prob).map_err(|e| invalid("herald_prob", e.to_string()))?;
    let probs = cfg.setting_probabilities;
    let chunks: Vec<(Vec<TrialRecord>, u64)> = chunk_ranges(n_trials)
        .into_par_iter()
        .map(|(c, range)| {
            let mut herald_rng = stream(seed, Role::Herald, c);
            let mut alice = stream(seed, Role::AliceSetting, c);
            let mut bob = stream(seed, Role::BobSetting, c);
            let mut source = stream(seed, Role::Source, c);
            let mut read_a = stream(seed, Role::AliceReadout, c);
            let mut read_b = stream(seed, Role::BobReadout, c);
            let mut attempts = 0u64;
            let records = range
                .map(|trial_id| {
                    attempts += herald.sample(&mut herald_rng) + 1;
                    let settings = SettingPair::new(
                        draw_label(&mut alice, probs.alice_primed),
                        draw_label(&mut bob, probs.bob_primed),
                    )
                    .expect("labels are binary");
                    let (mut a, mut b) = singlet.sample(settings, &mut source);
                    if read_a.random_bool(1.0 - cfg.fidelity_a) {
                        a = a.flipped();
                    }
                    if read_b.random_bool(1.0 - cfg.fidelity_b) {
                        b = b.flipped();
                    }
                    TrialRecord {
                        trial_id,
                        settings,
                        a,
                        b,
                        ready: true,
                    }
                })
                .collect();
            (records, attempts)
        })
        .collect();
    let herald_attempts = chunks.iter().map(|c| c.1).sum();
    let records: Vec<TrialRecord> = chunks.into_iter().flat_map(|c| c.0).collect();
    Ok(EventReadyRun {
        records,
        metadata: EventReadyMetadata {
            n_trials,
            herald_attempts,
        },
    })
}

/// Ideal trial-by-trial sampling of a model with independently drawn settings.
/// Vacuous outcomes are kept, so post-selection models can be analysed both
/// before and after discarding them.
pub fn run_model_trials(
    model: &CouplingModel,
    probs: SettingProbabilities,
    n_trials: u64,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    probs.validate()?;
    let chunks: Vec<Vec<TrialRecord>> = chunk_ranges(n_trials)
        .into_par_iter()
        .map(|(c, range)| {
            let mut alice = stream(seed, Role::AliceSetting, c);
            let mut bob = stream(seed, Role::BobSetting, c);
            let mut source = stream(seed, Role::Source, c);
            range
                .map(|trial_id| {
                    let settings = SettingPair::new(
                        draw_label(&mut alice, probs.alice_primed),
                        draw_label(&mut bob, probs.bob_primed),
                    )
                    .expect("labels are binary");
                    let (a, b) = model.sample(settings, &mut source);
                    TrialRecord {
                        trial_id,
                        settings,
                        a,
                        b,
                        ready: false,
                    }
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Sample `n` trials of a single fixed context.
pub fn sample_context(
    model: &CouplingModel,
    s: SettingPair,
    n: u64,
    seed: u64,
    stream_id: u64,
) -> Vec<(Outcome, Outcome)> {
    let mut rng: StreamRng = stream(seed, Role::Sweep, stream_id);
    (0..n).map(|_| model.sample(s, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{chsh, estimate, tally};
    use crate::couplings::{DeterministicLhvModel, PearleLike};

    fn singlet(v: f64) -> CouplingModel {
        QuantumSingletModel::new(AngleAssignment::canonical(), v)
            .unwrap()
            .into()
    }

    fn lossless(rate: f64) -> SourceProtocolConfig {
        SourceProtocolConfig {
            pair_rate: rate,
            jitter_sd: 0.0,
            setting_delay: SettingDelay::default(),
            dark_rate: 0.0,
            duration: 1.0,
            setting_probabilities: SettingProbabilities::default(),
        }
    }

    #[test]
    fn lossless_source_has_identical_tags() {
        let run = run_source_experiment(&lossless(1000.0), &singlet(1.0), 5).unwrap();
        assert_eq!(run.alice.len(), 1000);
        assert_eq!(run.bob.len(), 1000);
        for (a, b) in run.alice.events.iter().zip(&run.bob.events) {
            assert_eq!(a.time_ns, b.time_ns);
        }
        run.alice.validate().unwrap();
        assert!(run.metadata.warnings.is_empty());
    }

    #[test]
    fn dark_only_streams() {
        let cfg = SourceProtocolConfig {
            pair_rate: 0.0,
            dark_rate: 500.0,
            ..lossless(0.0)
        };
        let run = run_source_experiment(&cfg, &singlet(1.0), 9).unwrap();
        assert_eq!(run.metadata.pair_events, [0, 0]);
        assert_eq!(run.alice.len() as u64, run.metadata.dark_events[0]);
        assert!(run.alice.len() > 350 && run.alice.len() < 650);
        assert!(run.emissions.is_empty());
        assert_eq!(run.metadata.warnings.len(), 1);
        // background clicks carry no correlation across stations
        let n = run.alice.len().min(run.bob.len());
        let corr: i64 = (0..n)
            .map(|i| (run.alice.events[i].outcome.value() * run.bob.events[i].outcome.value()) as i64)
            .sum();
        assert!((corr as f64 / n as f64).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn jitter_keeps_streams_sorted() {
        let cfg = SourceProtocolConfig {
            jitter_sd: 500.0,
            dark_rate: 100.0,
            ..lossless(20_000.0)
        };
        let run = run_source_experiment(&cfg, &singlet(1.0), 1).unwrap();
        run.alice.validate().unwrap();
        run.bob.validate().unwrap();
    }

    /// Straight-line re-implementation of the emission loop for a small run.
    #[test]
    fn pearle_event_counts_match_reference_loop() {
        let model: CouplingModel = PearleLike::default().build().unwrap().into();
        let cfg = SourceProtocolConfig {
            jitter_sd: 2.0,
            ..lossless(3000.0)
        };
        let seed = 42;
        let run = run_source_experiment(&cfg, &model, seed).unwrap();

        let mut count = [0u64; 2];
        let mut time_rng = stream(seed, Role::Emission, 0);
        let mut alice = stream(seed, Role::AliceSetting, 0);
        let mut bob = stream(seed, Role::BobSetting, 0);
        let mut source = stream(seed, Role::Source, 0);
        for _ in 0..3000 {
            let _t: f64 = time_rng.random();
            let x = alice.random_bool(0.5) as u8;
            let y = bob.random_bool(0.5) as u8;
            let (a, b) = model.sample(SettingPair::new(x, y).unwrap(), &mut source);
            count[0] += a.is_detected() as u64;
            count[1] += b.is_detected() as u64;
        }
        assert_eq!(count, [run.alice.len() as u64, run.bob.len() as u64]);
        assert_eq!(count, run.metadata.pair_events);
    }

    #[test]
    fn source_run_is_reproducible() {
        let model: CouplingModel = PearleLike::default().build().unwrap().into();
        let cfg = SourceProtocolConfig {
            jitter_sd: 1.5,
            dark_rate: 50.0,
            ..lossless(200_000.0)
        };
        let r1 = run_source_experiment(&cfg, &model, 8).unwrap();
        let r2 = run_source_experiment(&cfg, &model, 8).unwrap();
        assert_eq!(r1.alice, r2.alice);
        assert_eq!(r1.bob, r2.bob);
        assert_eq!(r1.emissions, r2.emissions);
    }

    #[test]
    fn event_ready_ideal_readout_anticorrelates() {
        let cfg = EventReadyConfig {
            herald_prob: 0.3,
            visibility: 1.0,
            fidelity_a: 1.0,
            fidelity_b: 1.0,
            setting_probabilities: SettingProbabilities::default(),
        };
        let angles = AngleAssignment {
            alice: [0.0, 0.0],
            bob: [0.0, 0.0],
        };
        let run = run_event_ready(&cfg, angles, 5000, 3).unwrap();
        assert_eq!(run.records.len(), 5000);
        assert!(run.records.iter().all(|r| r.ready && r.a == r.b.flipped()));
        assert!(run.metadata.herald_attempts >= 5000);
        let mean = run.metadata.herald_attempts as f64 / 5000.0;
        assert!((mean - 1.0 / 0.3).abs() < 0.2, "{mean}");
    }

    #[test]
    fn event_ready_flip_noise_composition() {
        let cfg = EventReadyConfig {
            herald_prob: 1.0,
            visibility: 0.9,
            fidelity_a: 0.95,
            fidelity_b: 0.9,
            setting_probabilities: SettingProbabilities::default(),
        };
        let angles = AngleAssignment::canonical();
        let run = run_event_ready(&cfg, angles, 1_000_000, 21).unwrap();
        let sum = estimate(&tally(&run.records));
        for s in SettingPair::ALL {
            let c = sum.get(s);
            let e = cfg.expected_correlation(angles.relative(s));
            let sigma = ((1.0 - e * e) / c.n_total as f64).sqrt();
            assert!(
                (c.e_ab.unwrap() - e).abs() < 5.0 * sigma,
                "{s}: {} vs {e}",
                c.e_ab.unwrap()
            );
        }
    }

    #[test]
    fn event_ready_validation() {
        let ok = EventReadyConfig {
            herald_prob: 0.5,
            visibility: 1.0,
            fidelity_a: 1.0,
            fidelity_b: 1.0,
            setting_probabilities: SettingProbabilities::default(),
        };
        assert!(EventReadyConfig { fidelity_a: 1.2, ..ok }.validate().is_err());
        assert!(EventReadyConfig { fidelity_b: 0.4, ..ok }.validate().is_err());
        assert!(EventReadyConfig { herald_prob: 0.0, ..ok }.validate().is_err());
        assert!(run_event_ready(&ok, AngleAssignment::canonical(), 0, 1).is_err());
    }

    #[test]
    fn model_trials_of_local_model_respect_bound() {
        let m: CouplingModel = DeterministicLhvModel::new(vec![1.0], [vec![1], vec![1]], [vec![1], vec![-1]])
            .unwrap()
            .into();
        let recs = run_model_trials(&m, SettingProbabilities::default(), 10_000, 2).unwrap();
        let s = chsh(&estimate(&tally(&recs))).unwrap();
        assert!(s.abs() <= 2.0 + 1e-12);
    }
}
