//! Collective communication cost: measured effective-bandwidth profiles with
//! log-size interpolation, plus the analytic alpha-beta ring model used for
//! synthetic profiles and as a test oracle.

mod import;
mod ring;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DeviceMesh;

pub use import::{import_csv, import_csv_str, CSV_HEADER};
pub use ring::{
    calibrated_profile, latency_bandwidth_profile, ring_time, standard_meshes, standard_sizes,
    synthetic_profile, AlphaBetaParams, LinkModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectiveKind {
    AllGather,
    ReduceScatter,
    AllReduce,
    Broadcast,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 4] =
        [CollectiveKind::AllGather, CollectiveKind::ReduceScatter, CollectiveKind::AllReduce, CollectiveKind::Broadcast];

    /// Lower-case name used in profile files.
    pub fn as_str(&self) -> &'static str {
        match self {
            CollectiveKind::AllGather => "allgather",
            CollectiveKind::ReduceScatter => "reducescatter",
            CollectiveKind::AllReduce => "allreduce",
            CollectiveKind::Broadcast => "broadcast",
        }
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CollectiveKind {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CollectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ProfileError::UnknownOp(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("no bandwidth series for {kind} over mesh {mesh} (and none of equal size)")]
    Missing { kind: CollectiveKind, mesh: DeviceMesh },
    #[error("unknown collective '{0}'")]
    UnknownOp(String),
    #[error("series {kind}/{mesh} is empty")]
    EmptySeries { kind: CollectiveKind, mesh: DeviceMesh },
    #[error("series {kind}/{mesh}: sizes must be strictly increasing ({prev} then {next})")]
    Unsorted { kind: CollectiveKind, mesh: DeviceMesh, prev: u64, next: u64 },
    #[error("series {kind}/{mesh}: bandwidth at size {size} must be finite and > 0, got {bandwidth}")]
    BadBandwidth { kind: CollectiveKind, mesh: DeviceMesh, size: u64, bandwidth: f64 },
    #[error("series {kind}/{mesh}: size must be > 0")]
    ZeroSize { kind: CollectiveKind, mesh: DeviceMesh },
    #[error("invalid profile key '{0}', expected 'op/<per_node>x<nodes>'")]
    BadKey(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}: duplicate measurement for {kind}/{mesh} at size {size} (first seen on line {first_line})")]
    Duplicate { line: u64, first_line: u64, kind: CollectiveKind, mesh: DeviceMesh, size: u64 },
    #[error("csv header must be '{expected}', got '{found}'")]
    Header { expected: &'static str, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Measured `(size in bytes, effective bandwidth in bytes/s)` points with
/// strictly increasing sizes.
pub type Series = Vec<(u64, f64)>;

/// Effective bandwidth table `w(kind, size, mesh)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BandwidthProfile {
    series: BTreeMap<(CollectiveKind, DeviceMesh), Series>,
}

impl BandwidthProfile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a series after checking the profile invariants.
    pub fn insert_series(&mut self, kind: CollectiveKind, mesh: DeviceMesh, points: Series) -> Result<(), ProfileError> {
        if points.is_empty() {
            return Err(ProfileError::EmptySeries { kind, mesh });
        }
        for pair in points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(ProfileError::Unsorted { kind, mesh, prev: pair[0].0, next: pair[1].0 });
            }
        }
        for &(size, bandwidth) in &points {
            if size == 0 {
                return Err(ProfileError::ZeroSize { kind, mesh });
            }
            if !(bandwidth.is_finite() && bandwidth > 0.0) {
                return Err(ProfileError::BadBandwidth { kind, mesh, size, bandwidth });
            }
        }
        self.series.insert((kind, mesh), points);
        Ok(())
    }

    /// A profile with the same bandwidth everywhere, for every kind and mesh given.
    pub fn constant(bandwidth: f64, meshes: &[DeviceMesh]) -> Self {
        let mut profile = Self::new();
        for kind in CollectiveKind::ALL {
            for &mesh in meshes {
                profile.insert_series(kind, mesh, vec![(1, bandwidth)]).expect("constant series is valid");
            }
        }
        profile
    }

    pub fn series(&self, kind: CollectiveKind, mesh: DeviceMesh) -> Option<&Series> {
        self.series.get(&(kind, mesh))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(CollectiveKind, DeviceMesh), &Series)> {
        self.series.iter()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Exact series for `(kind, mesh)`, else the first profiled mesh of the
    /// same participant count in mesh order.
    fn resolve(&self, kind: CollectiveKind, mesh: DeviceMesh) -> Result<&Series, ProfileError> {
        if let Some(series) = self.series.get(&(kind, mesh)) {
            return Ok(series);
        }
        self.series
            .range((kind, DeviceMesh::SINGLE)..)
            .take_while(|((k, _), _)| *k == kind)
            .find(|((_, m), _)| m.size() == mesh.size())
            .map(|(_, series)| series)
            .ok_or(ProfileError::Missing { kind, mesh })
    }

    /// Effective bandwidth at `size` bytes: the stored value at a profiled
    /// size, linear in `log2(size)` between points, clamped outside the range.
    pub fn effective_bandwidth(&self, kind: CollectiveKind, size: f64, mesh: DeviceMesh) -> Result<f64, ProfileError> {
        Ok(interpolate(self.resolve(kind, mesh)?, size))
    }

    /// Seconds for one collective of `size` bytes over `mesh`.
    pub fn collective_time(&self, kind: CollectiveKind, size: f64, mesh: DeviceMesh) -> Result<f64, ProfileError> {
        if size <= 0.0 || mesh.size() == 1 {
            return Ok(0.0);
        }
        Ok(size / self.effective_bandwidth(kind, size, mesh)?)
    }
}

fn interpolate(series: &Series, size: f64) -> f64 {
    let (first, last) = (series[0], series[series.len() - 1]);
    if size <= first.0 as f64 {
        return first.1;
    }
    if size >= last.0 as f64 {
        return last.1;
    }
    // First point strictly above `size`; its predecessor is at or below.
    let upper = series.partition_point(|&(s, _)| (s as f64) <= size);
    let (s0, w0) = series[upper - 1];
    if s0 as f64 == size {
        return w0;
    }
    let (s1, w1) = series[upper];
    let (x0, x1) = ((s0 as f64).log2(), (s1 as f64).log2());
    w0 + (w1 - w0) * (size.log2() - x0) / (x1 - x0)
}

/// Anything that can price a collective. Implemented by raw profiles and by
/// topology-aware wrappers.
pub trait CollectiveCost: Sync {
    fn collective_time(&self, kind: CollectiveKind, size: f64, mesh: DeviceMesh) -> Result<f64, ProfileError>;
}

impl CollectiveCost for BandwidthProfile {
    fn collective_time(&self, kind: CollectiveKind, size: f64, mesh: DeviceMesh) -> Result<f64, ProfileError> {
        BandwidthProfile::collective_time(self, kind, size, mesh)
    }
}

impl<T: CollectiveCost + ?Sized> CollectiveCost for &T {
    fn collective_time(&self, kind: CollectiveKind, size: f64, mesh: DeviceMesh) -> Result<f64, ProfileError> {
        (**self).collective_time(kind, size, mesh)
    }
}

// Canonical JSON: {"allreduce/8x1": [[size, bw], ...], ...} with keys in
// sorted string order, which makes the serialization byte-stable.

fn key_of(kind: CollectiveKind, mesh: DeviceMesh) -> String {
    format!("{}/{}x{}", kind, mesh.per_node(), mesh.nodes())
}

fn parse_key(key: &str) -> Result<(CollectiveKind, DeviceMesh), ProfileError> {
    let bad = || ProfileError::BadKey(key.to_string());
    let (op, mesh) = key.split_once('/').ok_or_else(bad)?;
    let (a, b) = mesh.split_once('x').ok_or_else(bad)?;
    let per_node: u32 = a.parse().map_err(|_| bad())?;
    let nodes: u32 = b.parse().map_err(|_| bad())?;
    let mesh = DeviceMesh::try_new(per_node, nodes).ok_or_else(bad)?;
    Ok((op.parse()?, mesh))
}

impl BandwidthProfile {
    pub fn to_canonical_map(&self) -> BTreeMap<String, Series> {
        self.series.iter().map(|(&(kind, mesh), s)| (key_of(kind, mesh), s.clone())).collect()
    }

    pub fn from_canonical_map(map: BTreeMap<String, Series>) -> Result<Self, ProfileError> {
        let mut profile = Self::new();
        for (key, points) in map {
            let (kind, mesh) = parse_key(&key)?;
            profile.insert_series(kind, mesh, points)?;
        }
        Ok(profile)
    }

    /// Canonical JSON text, newline-terminated.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.to_canonical_map()).expect("profile map serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        Self::from_canonical_map(serde_json::from_str(text)?)
    }

    /// Loads a canonical JSON profile, or imports a CSV measurement file when
    /// the path ends in `.csv`.
    pub fn load(path: &std::path::Path) -> Result<Self, ProfileError> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            return import_csv(path);
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIB: u64 = 1 << 20;

    fn two_point() -> BandwidthProfile {
        let mut p = BandwidthProfile::new();
        p.insert_series(CollectiveKind::AllReduce, DeviceMesh::new(8, 2), vec![(MIB, 50e9), (4 * MIB, 80e9)])
            .unwrap();
        p
    }

    #[test]
    fn direct_evaluation() {
        let mut p = BandwidthProfile::new();
        p.insert_series(CollectiveKind::AllReduce, DeviceMesh::new(8, 1), vec![(268_435_456, 150e9)]).unwrap();
        let t = p.collective_time(CollectiveKind::AllReduce, 268_435_456.0, DeviceMesh::new(8, 1)).unwrap();
        assert!((t - 1.789_569_706_666_666_6e-3).abs() < 1e-15);
    }

    #[test]
    fn log_interpolation() {
        let p = two_point();
        let mesh = DeviceMesh::new(8, 2);
        let w = p.effective_bandwidth(CollectiveKind::AllReduce, (2 * MIB) as f64, mesh).unwrap();
        assert_eq!(w, 65e9);
        let t = p.collective_time(CollectiveKind::AllReduce, (2 * MIB) as f64, mesh).unwrap();
        assert!((t - 2_097_152.0 / 65e9).abs() < 1e-18);
        assert!((t - 3.2263e-5).abs() < 1e-9);
    }

    #[test]
    fn exact_hits_and_clamps() {
        let p = two_point();
        let mesh = DeviceMesh::new(8, 2);
        let w = |s: f64| p.effective_bandwidth(CollectiveKind::AllReduce, s, mesh).unwrap();
        assert_eq!(w(MIB as f64), 50e9);
        assert_eq!(w((4 * MIB) as f64), 80e9);
        assert_eq!(w(10.0), 50e9);
        assert_eq!(w(1e12), 80e9);
    }

    #[test]
    fn single_participant_and_empty_messages_are_free() {
        let p = BandwidthProfile::new();
        assert_eq!(p.collective_time(CollectiveKind::AllGather, 1e9, DeviceMesh::SINGLE).unwrap(), 0.0);
        assert_eq!(p.collective_time(CollectiveKind::AllGather, 0.0, DeviceMesh::new(8, 1)).unwrap(), 0.0);
    }

    #[test]
    fn falls_back_to_equal_size_mesh() {
        let p = two_point();
        let t = p.collective_time(CollectiveKind::AllReduce, MIB as f64, DeviceMesh::new(4, 4)).unwrap();
        assert_eq!(t, MIB as f64 / 50e9);
        let err = p.collective_time(CollectiveKind::AllReduce, MIB as f64, DeviceMesh::new(8, 1)).unwrap_err();
        assert!(err.to_string().contains("allreduce over mesh 8x1"));
        assert!(p.collective_time(CollectiveKind::Broadcast, 1.0, DeviceMesh::new(8, 2)).is_err());
    }

    #[test]
    fn rejects_invalid_series() {
        let mut p = BandwidthProfile::new();
        let m = DeviceMesh::new(2, 1);
        assert!(p.insert_series(CollectiveKind::AllGather, m, vec![]).is_err());
        assert!(p.insert_series(CollectiveKind::AllGather, m, vec![(2, 1.0), (2, 2.0)]).is_err());
        assert!(p.insert_series(CollectiveKind::AllGather, m, vec![(2, 0.0)]).is_err());
        assert!(p.insert_series(CollectiveKind::AllGather, m, vec![(2, f64::NAN)]).is_err());
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let p = two_point();
        let text = p.to_json();
        assert!(text.contains("\"allreduce/8x2\""));
        let back = BandwidthProfile::from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn bad_keys_are_rejected() {
        assert!(BandwidthProfile::from_json(r#"{"allreduce-8x1": [[1, 1.0]]}"#).is_err());
        assert!(BandwidthProfile::from_json(r#"{"allsum/8x1": [[1, 1.0]]}"#).is_err());
        assert!(BandwidthProfile::from_json(r#"{"allreduce/0x1": [[1, 1.0]]}"#).is_err());
    }
}
