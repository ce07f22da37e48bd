use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CollisionRecord, FreshnessReport, LatencyRecord, PublishReport};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidSpec(format!("unknown format {other:?}"))),
        }
    }
}

/// Column names of a record type, in field order. Written even when there
/// are no records.
pub trait CsvSchema {
    const HEADER: &'static [&'static str];
}

impl CsvSchema for CollisionRecord {
    const HEADER: &'static [&'static str] = &[
        "table_size",
        "capacity_ratio",
        "max_probe",
        "method",
        "collision_rate",
        "distinct_slots",
        "seed",
    ];
}

impl CsvSchema for FreshnessReport {
    const HEADER: &'static [&'static str] = &[
        "method",
        "steps",
        "first_occurrences",
        "inherited",
        "inheritance_rate",
        "eviction_count",
        "collision_count",
        "reset_violations",
        "unexplained_inheritance",
        "seed",
    ];
}

impl CsvSchema for PublishReport {
    const HEADER: &'static [&'static str] = &[
        "batches",
        "cuts",
        "rows",
        "occupied_rows",
        "snapshot_bytes",
        "expected_snapshot_bytes",
        "delta_records",
        "bit_equal",
        "consistency_violations",
    ];
}

impl CsvSchema for LatencyRecord {
    const HEADER: &'static [&'static str] = &[
        "max_probe",
        "mode",
        "batch_size",
        "repetitions",
        "calls",
        "lookups",
        "found",
        "inserted",
        "evicted",
        "collision",
        "total_seconds",
        "ms_per_batch",
        "ids_per_second",
    ];
}

/// Writes `records` as a JSON array or as CSV with a header row.
pub fn emit_report<R: Serialize + CsvSchema>(
    records: &[R],
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_report(records, format, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_report<R: Serialize + CsvSchema, W: Write>(
    records: &[R],
    format: ReportFormat,
    mut out: W,
) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, records)?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(&mut out);
            w.write_record(R::HEADER)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn load_report<R: DeserializeOwned>(
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<Vec<R>> {
    let file = BufReader::new(File::open(path)?);
    match format {
        ReportFormat::Json => Ok(serde_json::from_reader(file)?),
        ReportFormat::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect(),
    }
}
