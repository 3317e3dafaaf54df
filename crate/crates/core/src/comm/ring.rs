//! Analytic collective models and the profiles generated from them.

use serde::{Deserialize, Serialize};

use super::{BandwidthProfile, CollectiveKind};
use crate::domain::DeviceMesh;

/// Per-transmission latency and link bandwidth of the ring model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBetaParams {
    /// Seconds per transmission step.
    pub alpha: f64,
    /// Bytes per second.
    pub link_bandwidth: f64,
}

impl AlphaBetaParams {
    pub fn new(alpha: f64, link_bandwidth: f64) -> Self {
        assert!(alpha >= 0.0 && link_bandwidth > 0.0, "alpha must be >= 0 and bandwidth > 0");
        AlphaBetaParams { alpha, link_bandwidth }
    }
}

/// Ring collective time over `p` participants.
///
/// AllGather, ReduceScatter and the pipelined Broadcast take
/// `(p-1)(alpha + v/(w p))`; AllReduce is a ReduceScatter followed by an
/// AllGather, so it takes exactly twice that.
pub fn ring_time(kind: CollectiveKind, size: f64, p: u64, ab: AlphaBetaParams) -> f64 {
    if p <= 1 {
        return 0.0;
    }
    let steps = (p - 1) as f64;
    let one_pass = steps * (ab.alpha + size / (ab.link_bandwidth * p as f64));
    match kind {
        CollectiveKind::AllReduce => one_pass + one_pass,
        CollectiveKind::AllGather | CollectiveKind::ReduceScatter | CollectiveKind::Broadcast => one_pass,
    }
}

/// Profile whose points are the ring model's effective bandwidth `v / t`,
/// using `ab_intra` for single-node meshes and `ab_inter` otherwise.
/// Single-GPU meshes are skipped since they never communicate.
pub fn synthetic_profile(
    ab_intra: AlphaBetaParams,
    ab_inter: AlphaBetaParams,
    meshes: &[DeviceMesh],
    sizes: &[u64],
) -> BandwidthProfile {
    build(meshes, sizes, |kind, size, mesh| {
        let ab = if mesh.nodes() == 1 { ab_intra } else { ab_inter };
        ring_time(kind, size, mesh.size(), ab)
    })
}

/// Latency plus serialization at a fixed per-GPU bandwidth:
/// `t = latency + latency_per_node_doubling * log2(nodes) + v / bus_bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub latency: f64,
    pub latency_per_node_doubling: f64,
    pub bus_bandwidth: f64,
}

/// Profile in the bus-bandwidth convention: every collective moves `v`
/// bytes at the link's per-direction rate, and the cost of scale shows up
/// only as start-up latency that grows with the node count.
pub fn latency_bandwidth_profile(
    intra: LinkModel,
    inter: LinkModel,
    meshes: &[DeviceMesh],
    sizes: &[u64],
) -> BandwidthProfile {
    build(meshes, sizes, |_, size, mesh| {
        let link = if mesh.nodes() == 1 { intra } else { inter };
        link.latency + link.latency_per_node_doubling * f64::from(mesh.nodes()).log2() + size / link.bus_bandwidth
    })
}

fn build(
    meshes: &[DeviceMesh],
    sizes: &[u64],
    time: impl Fn(CollectiveKind, f64, DeviceMesh) -> f64,
) -> BandwidthProfile {
    let mut sizes: Vec<u64> = sizes.iter().copied().filter(|&s| s > 0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut profile = BandwidthProfile::new();
    for kind in CollectiveKind::ALL {
        for &mesh in meshes.iter().filter(|m| m.size() > 1) {
            let points = sizes.iter().map(|&s| (s, s as f64 / time(kind, s as f64, mesh))).collect();
            profile.insert_series(kind, mesh, points).expect("generated series satisfy the profile invariants");
        }
    }
    profile
}

/// Meshes `a x b` with `a` in {1, 2, 4, 8} and `b` a power of two up to 128.
pub fn standard_meshes() -> Vec<DeviceMesh> {
    let mut meshes = Vec::new();
    for a in [1, 2, 4, 8] {
        for b in (0..=7).map(|e| 1u32 << e) {
            meshes.push(DeviceMesh::new(a, b));
        }
    }
    meshes
}

/// Powers of two from 1 KiB to 1 GiB.
pub fn standard_sizes() -> Vec<u64> {
    (10..=30).map(|e| 1u64 << e).collect()
}

/// The shipped A800 profile: 300 GB/s per direction inside a node and
/// 200 GB/s across nodes (600 vs 400 GB/s bidirectional), 5 us start-up,
/// and inter-node start-up growing by 0.05 us per doubling of the node count.
pub fn calibrated_profile() -> BandwidthProfile {
    let intra = LinkModel { latency: 5e-6, latency_per_node_doubling: 0.0, bus_bandwidth: 300e9 };
    let inter = LinkModel { latency: 5e-6, latency_per_node_doubling: 0.05e-6, bus_bandwidth: 200e9 };
    latency_bandwidth_profile(intra, inter, &standard_meshes(), &standard_sizes())
}
