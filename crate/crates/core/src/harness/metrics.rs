use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// One long-format metric. `episode` is empty for per-run summaries and
/// `density` is empty for rows not tied to a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub num_rsus: usize,
    pub num_avs: usize,
    pub algorithm: String,
    pub density: Option<f64>,
    pub episode: Option<usize>,
    pub metric: String,
    pub value: f64,
}

const HEADER: [&str; 10] = [
    "schema_version",
    "experiment",
    "seed",
    "num_rsus",
    "num_avs",
    "algorithm",
    "density",
    "episode",
    "metric",
    "value",
];

/// Writes the header even when `rows` is empty.
pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R, path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(HarnessError::Schema {
            path: path.to_path_buf(),
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: MetricsRow = row?;
        if row.schema_version != METRICS_SCHEMA_VERSION {
            return Err(HarnessError::Schema {
                path: path.to_path_buf(),
                reason: format!("schema version {} (expected {METRICS_SCHEMA_VERSION})", row.schema_version),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}
