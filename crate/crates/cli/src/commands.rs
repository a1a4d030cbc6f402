use std::path::{Path, PathBuf};

use serde::Serialize;

use belllab_core::analysis::{
    coupling_feasibility, lhv_pvalue, nosignalling_test, theta_sweep, FeasibilityResult, HypothesisReport,
    NoSignallingReport, Orientation, PairwiseTables, SweepFamily, SweepMode,
};
use belllab_core::couplings::{context_disjoint, PearleLike, QuantumSingletModel};
use belllab_core::pipeline::{
    match_coincidences, paired_from_trials, postselect, table_of, window_sweep, CoincidencePolicy, MatchMetadata,
    MatchStrategy, RawPair,
};
use belllab_core::protocol::{
    run_event_ready, run_model_trials, run_source_experiment, EventReadyConfig, EventReadyMetadata, SourceMetadata,
    Station,
};
use belllab_core::{
    chsh, estimate, max_deterministic_chsh, tally, AngleAssignment, CorrelationSummary, CouplingModel,
    Error as CoreError, TrialRecord,
};

use crate::config::{LoadedConfig, ModelSpec, ProtocolSpec, RunConfig, SweepSpec, SCHEMA_VERSION};
use crate::error::{data_error, CliError, CliResult, Source};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RunMetadata {
    EventReady(EventReadyMetadata),
    Source(SourceMetadata),
    Trials { n_trials: u64 },
}

#[derive(Serialize)]
struct SimulateMetadata<'a> {
    schema_version: u32,
    seed: u64,
    command: &'static str,
    config: &'a RunConfig,
    files: Vec<String>,
    run: RunMetadata,
}

#[derive(Serialize)]
struct TrialsDocument<'a> {
    schema_version: u32,
    seed: u64,
    records: &'a [TrialRecord],
}

#[derive(Serialize)]
struct EventsDocument<'a> {
    schema_version: u32,
    seed: u64,
    station: Station,
    events: &'a [belllab_core::protocol::StationEvent],
}

fn write_trials(dir: &Path, name: &str, seed: u64, records: &[TrialRecord], format: Format) -> CliResult<String> {
    let file = match format {
        Format::Csv => {
            let file = format!("{name}.csv");
            io::write_trials(&dir.join(&file), Some(seed), records)?;
            file
        }
        Format::Json => {
            let file = format!("{name}.json");
            io::write_json(
                &dir.join(&file),
                &TrialsDocument {
                    schema_version: SCHEMA_VERSION,
                    seed,
                    records,
                },
            )?;
            file
        }
    };
    Ok(file)
}

pub fn simulate(config: &Path, seed: Option<u64>, out: &Path, format: Format) -> CliResult<Vec<PathBuf>> {
    let loaded = LoadedConfig::load(config, seed)?;
    let seed = loaded.seed();
    let src = &loaded.source;
    ensure_dir(out)?;
    let mut files = Vec::new();
    let run = match loaded.protocol()? {
        ProtocolSpec::EventReady { .. } => {
            let (cfg, n) = loaded.protocol()?.event_ready().expect("event-ready variant");
            let run =
                run_event_ready(&cfg, loaded.config.angles, n, seed).map_err(|e| src.core_error(e, "protocol"))?;
            files.push(write_trials(out, "trials", seed, &run.records, format)?);
            RunMetadata::EventReady(run.metadata)
        }
        ProtocolSpec::Trials {
            n_trials,
            setting_probabilities,
        } => {
            let model = loaded.model()?;
            let records = run_model_trials(&model, *setting_probabilities, *n_trials, seed)
                .map_err(|e| src.core_error(e, "protocol"))?;
            files.push(write_trials(out, "trials", seed, &records, format)?);
            RunMetadata::Trials { n_trials: *n_trials }
        }
        ProtocolSpec::Source(cfg) => {
            let model = loaded.model()?;
            let run = run_source_experiment(cfg, &model, seed).map_err(|e| src.core_error(e, "protocol"))?;
            for (name, stream) in [("alice", &run.alice), ("bob", &run.bob)] {
                match format {
                    Format::Csv => {
                        let file = format!("{name}.csv");
                        io::write_events(&out.join(&file), Some(seed), stream)?;
                        files.push(file);
                    }
                    Format::Json => {
                        let file = format!("{name}.json");
                        let doc = EventsDocument {
                            schema_version: SCHEMA_VERSION,
                            seed,
                            station: stream.station,
                            events: &stream.events,
                        };
                        io::write_json(&out.join(&file), &doc)?;
                        files.push(file);
                    }
                }
            }
            files.push(write_trials(out, "emissions", seed, &run.emissions, format)?);
            RunMetadata::Source(run.metadata)
        }
    };
    files.push("metadata.json".into());
    let meta = SimulateMetadata {
        schema_version: SCHEMA_VERSION,
        seed,
        command: "simulate",
        config: &loaded.config,
        files: files.clone(),
        run,
    };
    io::write_json(&out.join("metadata.json"), &meta)?;
    Ok(files.into_iter().map(|f| out.join(f)).collect())
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeInputs {
    pub trials: Option<PathBuf>,
    pub alice: Option<PathBuf>,
    pub bob: Option<PathBuf>,
    pub emissions: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub window_ns: Option<f64>,
    pub strategy: Option<MatchStrategy>,
    pub orientation: Orientation,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PostSelectionStats {
    pub totals: [u64; 4],
    pub retained: [u64; 4],
    pub retention: [Option<f64>; 4],
    pub unattributed: u64,
    pub discarded: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub input: &'static str,
    pub window: Option<CoincidencePolicy>,
    pub matching: Option<MatchMetadata>,
    pub post_selection: PostSelectionStats,
    pub summary: CorrelationSummary,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    pub hypothesis: Option<HypothesisReport>,
    pub no_signalling: NoSignallingReport,
    pub warnings: Vec<String>,
}

pub struct AnalyzeOutput {
    pub report: AnalysisReport,
    pub pairs: Vec<RawPair>,
}

pub fn analyze(inputs: &AnalyzeInputs) -> CliResult<AnalyzeOutput> {
    let mut warnings = Vec::new();
    let loaded = inputs
        .config
        .as_deref()
        .map(|p| LoadedConfig::load(p, None))
        .transpose()?;
    let config_window = loaded.as_ref().and_then(|l| l.config.window);

    let (input, seed, pairs, raw_table, window, matching) = match (&inputs.trials, &inputs.alice, &inputs.bob) {
        (Some(trials), None, None) => {
            if inputs.emissions.is_some() {
                return Err(CliError::Input("--emissions applies to time-tag inputs only".into()));
            }
            let (records, seed) = io::read_trials(trials)?;
            let raw = tally(&records);
            ("trials", seed, paired_from_trials(&records), raw, None, None)
        }
        (None, Some(alice), Some(bob)) => {
            let (a, seed_a) = io::read_events(alice, Station::A)?;
            let (b, seed_b) = io::read_events(bob, Station::B)?;
            if seed_a != seed_b {
                warnings.push(format!("station files disagree on seed ({seed_a:?} vs {seed_b:?})"));
            }
            let window_ns = inputs.window_ns.or(config_window.map(|w| w.window_ns)).ok_or_else(|| {
                CliError::Input("a coincidence window is required: pass --window-ns or set `window` in --config".into())
            })?;
            let strategy = inputs
                .strategy
                .or(config_window.map(|w| w.strategy))
                .unwrap_or_default();
            let policy = CoincidencePolicy::new(window_ns, strategy).map_err(|e| data_error("--window-ns", e))?;
            let paired = match_coincidences(&a, &b, policy).map_err(|e| data_error("time tags", e))?;
            if !paired.metadata.is_conserved() {
                return Err(CliError::Internal(format!(
                    "coincidence bookkeeping lost events: {:?}",
                    paired.metadata
                )));
            }
            let raw = match &inputs.emissions {
                Some(path) => tally(&io::read_trials(path)?.0),
                None => {
                    warnings.push(
                        "raw no-signalling block uses paired slots only; pass --emissions for single counts".into(),
                    );
                    table_of(&paired.pairs)
                }
            };
            (
                "streams",
                seed_a,
                paired.pairs,
                raw,
                Some(policy),
                Some(paired.metadata),
            )
        }
        _ => {
            return Err(CliError::Input(
                "give either --trials FILE or both --alice FILE and --bob FILE".into(),
            ))
        }
    };
    let seed = seed.or(loaded.as_ref().map(|l| l.seed()));

    let selected = postselect(&pairs);
    let final_table = table_of(&selected.final_pairs);
    let summary = estimate(&final_table);
    let s = match chsh(&summary) {
        Ok(s) => Some(s),
        Err(CoreError::Starved(ctx)) => {
            let list: Vec<String> = ctx.iter().map(|c| c.to_string()).collect();
            warnings.push(format!(
                "no usable pairs in context {}; S is undefined",
                list.join(", ")
            ));
            None
        }
        Err(e) => return Err(CliError::Internal(e.to_string())),
    };
    let hypothesis = match lhv_pvalue(&summary, inputs.orientation) {
        Ok(h) => Some(h),
        Err(e @ (CoreError::Starved(_) | CoreError::NonUniformSettings(_))) => {
            warnings.push(format!("p-value not computed: {e}"));
            None
        }
        Err(e) => return Err(CliError::Internal(e.to_string())),
    };
    if hypothesis.is_some() && selected.discarded > 0 {
        warnings.push(format!(
            "{} slots were discarded before testing; the p-value treats the retained pairs as a fair sample",
            selected.discarded
        ));
    }
    let no_signalling = nosignalling_test(&raw_table, &final_table);

    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        seed,
        input,
        window,
        matching,
        post_selection: PostSelectionStats {
            totals: selected.totals,
            retained: selected.retained,
            retention: selected.retention,
            unattributed: selected.unattributed,
            discarded: selected.discarded,
        },
        summary,
        s,
        hypothesis,
        no_signalling,
        warnings,
    };
    if let Some(dir) = &inputs.out {
        ensure_dir(dir)?;
        io::write_json(&dir.join("report.json"), &report)?;
        if input == "streams" {
            io::write_pairs(&dir.join("paired.csv"), seed, &pairs)?;
        }
    }
    Ok(AnalyzeOutput { report, pairs })
}

#[derive(Serialize)]
struct SweepDocument<'a, T> {
    schema_version: u32,
    seed: u64,
    rows: &'a [T],
}

pub fn sweep(config: &Path, seed: Option<u64>, out: &Path, format: Format) -> CliResult<Vec<PathBuf>> {
    let loaded = LoadedConfig::load(config, seed)?;
    let seed = loaded.seed();
    let src = &loaded.source;
    let spec = loaded
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| src.at("sweep", "missing section `sweep`"))?;
    ensure_dir(out)?;
    let mut files = Vec::new();
    match spec {
        SweepSpec::Theta { grid, n_per_point } => {
            let family = match loaded.config.model.as_ref() {
                Some(ModelSpec::Singlet { visibility }) => SweepFamily::Singlet {
                    visibility: *visibility,
                },
                Some(ModelSpec::PearleLike(p)) => SweepFamily::PearleLike(*p),
                Some(_) => {
                    return Err(src.at(
                        "family",
                        "theta sweeps support the `singlet` and `pearle_like` families",
                    ))
                }
                None => return Err(src.at("sweep", "missing section `model`")),
            };
            let mode = match n_per_point {
                Some(n) => SweepMode::MonteCarlo { n_per_point: *n, seed },
                None => SweepMode::Exact,
            };
            let rows = theta_sweep(&family, &grid.points(), mode).map_err(|e| src.core_error(e, "grid"))?;
            files.push(match format {
                Format::Csv => {
                    io::write_sweep(&out.join("sweep.csv"), Some(seed), &rows)?;
                    "sweep.csv"
                }
                Format::Json => {
                    io::write_json(
                        &out.join("sweep.json"),
                        &SweepDocument {
                            schema_version: SCHEMA_VERSION,
                            seed,
                            rows: &rows,
                        },
                    )?;
                    "sweep.json"
                }
            });
        }
        SweepSpec::Window { widths, strategy } => {
            let ProtocolSpec::Source(cfg) = loaded.protocol()? else {
                return Err(src.at("protocol", "window sweeps need a `source` protocol"));
            };
            let model = loaded.model()?;
            let run = run_source_experiment(cfg, &model, seed).map_err(|e| src.core_error(e, "protocol"))?;
            let rows =
                window_sweep(&run.alice, &run.bob, widths, *strategy).map_err(|e| src.core_error(e, "widths"))?;
            files.push(match format {
                Format::Csv => {
                    io::write_window_sweep(&out.join("window_sweep.csv"), Some(seed), &rows)?;
                    "window_sweep.csv"
                }
                Format::Json => {
                    io::write_json(
                        &out.join("window_sweep.json"),
                        &SweepDocument {
                            schema_version: SCHEMA_VERSION,
                            seed,
                            rows: &rows,
                        },
                    )?;
                    "window_sweep.json"
                }
            });
        }
    }
    Ok(files.into_iter().map(|f| out.join(f)).collect())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TablesFile {
    #[serde(default)]
    #[allow(dead_code)]
    schema_version: Option<u32>,
    tables: [[f64; 4]; 4],
}

#[derive(Serialize)]
pub struct FeasibilityReport {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub tables: PairwiseTables,
    pub result: FeasibilityResult,
}

pub fn feasibility(tables: &Path) -> CliResult<FeasibilityReport> {
    let src = Source::read(tables)?;
    let file: TablesFile = serde_json::from_str(&src.text).map_err(|e| src.json_error(e))?;
    let tables = PairwiseTables::new(file.tables).map_err(|e| src.core_error(e, "tables"))?;
    Ok(FeasibilityReport {
        schema_version: SCHEMA_VERSION,
        seed: None,
        tables,
        result: coupling_feasibility(&tables),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Headline {
    pub quantity: &'static str,
    pub value: f64,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HeadlineReport {
    pub schema_version: u32,
    pub seed: u64,
    pub n_per_context: u64,
    pub headlines: Vec<Headline>,
}

/// Reference values: the Tsirelson and local bounds, two event-ready
/// calibration points, and the post-selection reach of 4.
pub fn reproduce(seed: u64, n_per_context: u64) -> CliResult<HeadlineReport> {
    let internal = |e: CoreError| CliError::Internal(e.to_string());
    let tsirelson = 2.0 * std::f64::consts::SQRT_2;
    let n = 4 * n_per_context;
    let mut headlines = Vec::new();
    let mut push = |quantity, value, target: Option<f64>, tolerance: Option<f64>| {
        headlines.push(Headline {
            quantity,
            value,
            target,
            tolerance,
        })
    };

    let singlet: CouplingModel = QuantumSingletModel::new(AngleAssignment::canonical(), 1.0)
        .map_err(internal)?
        .into();
    push(
        "singlet_exact_S",
        singlet.exact_chsh().map_err(internal)?,
        Some(-tsirelson),
        Some(1e-12),
    );
    let records = run_model_trials(&singlet, Default::default(), n, seed).map_err(internal)?;
    push(
        "singlet_monte_carlo_abs_S",
        chsh(&estimate(&tally(&records))).map_err(internal)?.abs(),
        Some(tsirelson),
        Some(0.01),
    );
    push("max_deterministic_S", max_deterministic_chsh(), Some(2.0), Some(0.0));

    for (quantity, target, tol) in [
        ("event_ready_abs_S_2.0747", 2.0747, 0.02),
        ("event_ready_abs_S_2.578", 2.578, 0.05),
    ] {
        let cfg = EventReadyConfig {
            herald_prob: 1.0,
            visibility: target / tsirelson,
            fidelity_a: 1.0,
            fidelity_b: 1.0,
            setting_probabilities: Default::default(),
        };
        let run = run_event_ready(&cfg, AngleAssignment::canonical(), n, seed).map_err(internal)?;
        push(
            quantity,
            chsh(&estimate(&tally(&run.records))).map_err(internal)?.abs(),
            Some(target),
            Some(tol),
        );
    }

    let disjoint: CouplingModel = context_disjoint().into();
    let records = run_model_trials(&disjoint, Default::default(), n, seed).map_err(internal)?;
    let kept = postselect(&paired_from_trials(&records));
    push(
        "context_disjoint_postselected_S",
        chsh(&estimate(&table_of(&kept.final_pairs))).map_err(internal)?,
        Some(4.0),
        Some(0.1),
    );

    let pearle: CouplingModel = PearleLike::default().build().map_err(internal)?.into();
    push(
        "pearle_like_exact_S",
        pearle.exact_chsh().map_err(internal)?,
        None,
        None,
    );

    let h = std::f64::consts::FRAC_1_SQRT_2;
    let table = PairwiseTables::from_moments([0.0; 2], [0.0; 2], [-h, -h, -h, h]).map_err(internal)?;
    let cert = coupling_feasibility(&table)
        .certificate
        .ok_or_else(|| CliError::Internal("singlet table reported feasible".into()))?;
    push("singlet_infeasibility_slack", cert.slack, Some(tsirelson - 2.0), None);

    Ok(HeadlineReport {
        schema_version: SCHEMA_VERSION,
        seed,
        n_per_context,
        headlines,
    })
}
