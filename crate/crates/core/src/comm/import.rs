//! CSV ingestion of collective benchmark measurements.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{BandwidthProfile, CollectiveKind, ProfileError};
use crate::domain::DeviceMesh;

pub const CSV_HEADER: &str = "op,size_bytes,gpus_per_node,nodes,bus_bw_bytes_per_s";

#[derive(Deserialize)]
struct Row {
    op: String,
    size_bytes: u64,
    gpus_per_node: u32,
    nodes: u32,
    bus_bw_bytes_per_s: f64,
}

pub fn import_csv(path: &Path) -> Result<BandwidthProfile, ProfileError> {
    import_csv_str(&std::fs::read_to_string(path)?)
}

/// Parses measurement rows into a profile. Rows may come in any order;
/// each series is sorted by size. Duplicate `(op, size, mesh)` rows and
/// malformed rows are rejected with their line number.
pub fn import_csv_str(text: &str) -> Result<BandwidthProfile, ProfileError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(ProfileError::Header { expected: CSV_HEADER, found: header });
    }

    let mut grouped: BTreeMap<(CollectiveKind, DeviceMesh), BTreeMap<u64, (f64, u64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row =
            record.deserialize(None).map_err(|e| ProfileError::Row { line, message: csv_message(&e) })?;
        let kind: CollectiveKind =
            row.op.parse().map_err(|e: ProfileError| ProfileError::Row { line, message: e.to_string() })?;
        let mesh = DeviceMesh::try_new(row.gpus_per_node, row.nodes).ok_or_else(|| ProfileError::Row {
            line,
            message: "gpus_per_node and nodes must be >= 1".to_string(),
        })?;
        if row.size_bytes == 0 {
            return Err(ProfileError::Row { line, message: "size_bytes must be > 0".to_string() });
        }
        if !(row.bus_bw_bytes_per_s.is_finite() && row.bus_bw_bytes_per_s > 0.0) {
            return Err(ProfileError::Row { line, message: "bus_bw_bytes_per_s must be finite and > 0".to_string() });
        }
        let series = grouped.entry((kind, mesh)).or_default();
        if let Some(&(_, first_line)) = series.get(&row.size_bytes) {
            return Err(ProfileError::Duplicate { line, first_line, kind, mesh, size: row.size_bytes });
        }
        series.insert(row.size_bytes, (row.bus_bw_bytes_per_s, line));
    }

    let mut profile = BandwidthProfile::new();
    for ((kind, mesh), points) in grouped {
        profile.insert_series(kind, mesh, points.into_iter().map(|(s, (w, _))| (s, w)).collect())?;
    }
    Ok(profile)
}

fn csv_message(err: &csv::Error) -> String {
    match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(field) => format!("field {}: {}", field + 1, err.kind()),
            None => err.kind().to_string(),
        },
        other => format!("{other:?}"),
    }
}
