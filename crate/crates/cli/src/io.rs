//! CSV and JSON files. Every file carries the schema version and the seed of
//! the run that produced it: CSVs in a leading `#` comment line, JSON as fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use belllab_core::analysis::SweepRow;
use belllab_core::pipeline::{RawPair, WindowRow};
use belllab_core::protocol::{RawEventStream, Station, StationEvent};
use belllab_core::{Outcome, SettingPair, TrialRecord};

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};

pub fn header_line(seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("# belllab schema_version={SCHEMA_VERSION} seed={s}"),
        None => format!("# belllab schema_version={SCHEMA_VERSION} seed=none"),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, seed: Option<u64>, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", header_line(seed)).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn to_json_string<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))
}

/// Reads a CSV written by [`write_csv`]; returns the rows and the seed in the header, if any.
/// Rows tagged with their line number.
type Lines<T> = Vec<(usize, T)>;

fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<(Lines<T>, Option<u64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let seed = text
        .lines()
        .next()
        .filter(|l| l.starts_with('#'))
        .and_then(|l| l.split_whitespace().find_map(|f| f.strip_prefix("seed=")))
        .and_then(|s| s.parse().ok());
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let fail = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        CliError::Input(format!("{}:{line}: {e}", path.display()))
    };
    let headers = reader.headers().map_err(fail)?.clone();
    let mut record = csv::StringRecord::new();
    let mut rows = Vec::new();
    while reader.read_record(&mut record).map_err(fail)? {
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: T = record
            .deserialize(Some(&headers))
            .map_err(|e| CliError::Input(format!("{}:{line}: {e}", path.display())))?;
        rows.push((line, row));
    }
    Ok((rows, seed))
}

#[derive(Serialize, Deserialize)]
struct TrialRow {
    trial_id: u64,
    x: u8,
    y: u8,
    a: i8,
    b: i8,
    ready: bool,
}

pub fn write_trials(path: &Path, seed: Option<u64>, records: &[TrialRecord]) -> CliResult<()> {
    write_csv(
        path,
        seed,
        records.iter().map(|r| TrialRow {
            trial_id: r.trial_id,
            x: r.settings.x(),
            y: r.settings.y(),
            a: r.a.value(),
            b: r.b.value(),
            ready: r.ready,
        }),
    )
}

fn outcome(path: &Path, line: usize, column: &str, v: i8) -> CliResult<Outcome> {
    Outcome::try_from(v).map_err(|e| CliError::Input(format!("{}:{line}: column `{column}`: {e}", path.display())))
}

pub fn read_trials(path: &Path) -> CliResult<(Vec<TrialRecord>, Option<u64>)> {
    let (rows, seed) = read_csv::<TrialRow>(path)?;
    let records = rows
        .into_iter()
        .map(|(line, r)| {
            let settings = SettingPair::new(r.x, r.y)
                .map_err(|e| CliError::Input(format!("{}:{line}: columns `x,y`: {e}", path.display())))?;
            Ok(TrialRecord {
                trial_id: r.trial_id,
                settings,
                a: outcome(path, line, "a", r.a)?,
                b: outcome(path, line, "b", r.b)?,
                ready: r.ready,
            })
        })
        .collect::<CliResult<_>>()?;
    Ok((records, seed))
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    time_ns: i64,
    setting: u8,
    outcome: i8,
}

pub fn write_events(path: &Path, seed: Option<u64>, stream: &RawEventStream) -> CliResult<()> {
    write_csv(
        path,
        seed,
        stream.events.iter().map(|e| EventRow {
            time_ns: e.time_ns,
            setting: e.setting,
            outcome: e.outcome.value(),
        }),
    )
}

pub fn read_events(path: &Path, station: Station) -> CliResult<(RawEventStream, Option<u64>)> {
    let (rows, seed) = read_csv::<EventRow>(path)?;
    let events = rows
        .into_iter()
        .map(|(line, r)| {
            Ok(StationEvent {
                time_ns: r.time_ns,
                setting: r.setting,
                outcome: outcome(path, line, "outcome", r.outcome)?,
            })
        })
        .collect::<CliResult<_>>()?;
    let stream =
        RawEventStream::new(station, events).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((stream, seed))
}

#[derive(Serialize)]
struct PairRow {
    slot: usize,
    x: Option<u8>,
    y: Option<u8>,
    a: i8,
    b: i8,
}

/// Paired raw data; an empty `x` or `y` marks a slot without a click at that station.
pub fn write_pairs(path: &Path, seed: Option<u64>, pairs: &[RawPair]) -> CliResult<()> {
    write_csv(
        path,
        seed,
        pairs.iter().enumerate().map(|(slot, p)| PairRow {
            slot,
            x: p.x,
            y: p.y,
            a: p.a.value(),
            b: p.b.value(),
        }),
    )
}

pub fn write_sweep(path: &Path, seed: Option<u64>, rows: &[SweepRow]) -> CliResult<()> {
    write_csv(path, seed, rows)
}

#[derive(Serialize)]
struct WindowCsvRow {
    window_ns: f64,
    #[serde(rename = "S")]
    s: Option<f64>,
    #[serde(rename = "E00")]
    e00: Option<f64>,
    #[serde(rename = "E01")]
    e01: Option<f64>,
    #[serde(rename = "E10")]
    e10: Option<f64>,
    #[serde(rename = "E11")]
    e11: Option<f64>,
    pairs: u64,
    retained: u64,
}

pub fn write_window_sweep(path: &Path, seed: Option<u64>, rows: &[WindowRow]) -> CliResult<()> {
    write_csv(
        path,
        seed,
        rows.iter().map(|r| {
            let e = r.summary.contexts.map(|c| c.e_ab);
            WindowCsvRow {
                window_ns: r.window_ns,
                s: r.s,
                e00: e[0],
                e01: e[1],
                e10: e[2],
                e11: e[3],
                pairs: r.matching.pairs,
                retained: r.summary.contexts.iter().map(|c| c.n_nonzero).sum(),
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trials_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let records = vec![
            TrialRecord {
                trial_id: 0,
                settings: SettingPair::ALL[3],
                a: Outcome::Minus,
                b: Outcome::Vacuous,
                ready: true,
            },
            TrialRecord {
                trial_id: 1,
                settings: SettingPair::ALL[1],
                a: Outcome::Plus,
                b: Outcome::Plus,
                ready: false,
            },
        ];
        write_trials(&path, Some(42), &records).unwrap();
        let (back, seed) = read_trials(&path).unwrap();
        assert_eq!(back, records);
        assert_eq!(seed, Some(42));
    }

    #[test]
    fn unsorted_time_tags_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "time_ns,setting,outcome\n5,0,1\n3,1,-1\n").unwrap();
        assert!(matches!(read_events(&path, Station::A), Err(CliError::Input(_))));
    }

    #[test]
    fn header_carries_seed() {
        assert_eq!(header_line(Some(3)), "# belllab schema_version=1 seed=3");
        assert_eq!(header_line(None), "# belllab schema_version=1 seed=none");
    }
}
