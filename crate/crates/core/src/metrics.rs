//! Per-round metrics records and their CSV / JSONL serialization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accel::AccelResult;
use crate::dadm::RunResult;
use crate::error::{Error, Result};

pub const HEADER: &str = "round,stage,epoch_equiv,comms,time_ms,primal,dual,gap,gap_normalized,kappa,note";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Round index within the stage.
    pub round: u64,
    pub stage: u64,
    /// Cumulative fraction of the data visited per worker.
    pub epoch_equiv: f64,
    /// Cumulative global updates (gather + broadcast pairs).
    pub comms: u64,
    pub time_ms: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub gap_normalized: f64,
    pub kappa: f64,
    pub note: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown metrics format {other:?}"))),
        }
    }
}

/// Records of a plain run. Values are those of the unshifted objective.
pub fn from_dadm(res: &RunResult, n: usize, epoch_per_round: f64, note: &str) -> Vec<MetricsRecord> {
    res.trace
        .iter()
        .map(|r| MetricsRecord {
            round: r.round,
            stage: 0,
            epoch_equiv: r.round as f64 * epoch_per_round,
            comms: r.round,
            time_ms: r.elapsed.as_secs_f64() * 1e3,
            primal: r.original.primal,
            dual: r.original.dual,
            gap: r.original.gap,
            gap_normalized: r.original.gap / n as f64,
            kappa: 0.0,
            note: note.to_string(),
        })
        .collect()
}

/// Records of an accelerated run. `note` of each row carries the stage gap.
pub fn from_accel(res: &AccelResult, n: usize, kappa: f64, epoch_per_round: f64, note: &str) -> Vec<MetricsRecord> {
    let mut time_ms = 0.0f64;
    res.trace
        .iter()
        .map(|r| {
            // keeps the column monotone when stage clocks overlap by rounding
            time_ms = time_ms.max(r.record.elapsed.as_secs_f64() * 1e3);
            let stage_note = format!("stage_gap={:e}", r.record.values.gap);
            MetricsRecord {
                round: r.record.round,
                stage: r.stage,
                epoch_equiv: r.comms as f64 * epoch_per_round,
                comms: r.comms,
                time_ms,
                primal: r.record.original.primal,
                dual: r.record.original.dual,
                gap: r.record.original.gap,
                gap_normalized: r.record.original.gap / n as f64,
                kappa,
                note: if note.is_empty() { stage_note } else { format!("{note};{stage_note}") },
            }
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(HEADER.split(','))?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write(path: &Path, records: &[MetricsRecord], format: Format) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(out, records),
        Format::Jsonl => write_jsonl(out, records),
    }
}

/// Reads a metrics CSV, rejecting any other header.
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header = first.trim_end_matches(['\r', '\n']);
    if header != HEADER {
        return Err(Error::InvalidArgument(format!(
            "{}: metrics schema mismatch, header {header:?}",
            path.display()
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: u64, gap: f64) -> MetricsRecord {
        MetricsRecord {
            round,
            stage: 0,
            epoch_equiv: 0.2 * round as f64,
            comms: round,
            time_ms: 1.5,
            primal: 2.0,
            dual: 2.0 - gap,
            gap,
            gap_normalized: gap / 10.0,
            kappa: 0.0,
            note: String::new(),
        }
    }

    #[test]
    fn csv_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![rec(0, 1.0), rec(1, 0.1 + 0.2)];
        write(&path, &rows, Format::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), HEADER);
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn jsonl_one_object_per_line() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[rec(0, 1.0), rec(1, 0.5)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: MetricsRecord = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(back, rec(1, 0.5));
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "round,gap\n0,1\n").unwrap();
        assert!(matches!(read_csv(&path), Err(Error::InvalidArgument(_))));
    }
}
