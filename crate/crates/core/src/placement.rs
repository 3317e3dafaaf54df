//! Leaf-spine aware grouping of nodes for multi-node sharding meshes, and a
//! collective cost wrapper that penalizes meshes spanning leaf switches.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{CollectiveCost, CollectiveKind, ProfileError};
use crate::domain::{ClusterSpec, DeviceMesh, ShardingPlan, SpecError};

/// Two-tier switch fabric: `leaf_count` leaf switches with `nodes_per_leaf`
/// nodes each, joined by spines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub leaf_count: u32,
    pub nodes_per_leaf: u32,
    /// Multiplier on collective time when a mesh crosses leaves. 1.0 turns
    /// the penalty off.
    #[serde(default = "default_penalty")]
    pub inter_leaf_penalty: f64,
}

fn default_penalty() -> f64 {
    1.0
}

impl Default for Topology {
    fn default() -> Self {
        Topology { leaf_count: 1, nodes_per_leaf: u32::MAX, inter_leaf_penalty: 1.0 }
    }
}

impl Topology {
    /// Every node under one leaf switch.
    pub fn single_leaf(node_count: u32) -> Self {
        Topology { leaf_count: 1, nodes_per_leaf: node_count.max(1), inter_leaf_penalty: 1.0 }
    }

    pub fn new(leaf_count: u32, nodes_per_leaf: u32, inter_leaf_penalty: f64) -> Self {
        Topology { leaf_count, nodes_per_leaf, inter_leaf_penalty }
    }

    pub fn leaf_of(&self, node: u32) -> u32 {
        node / self.nodes_per_leaf
    }

    pub fn validate(&self, node_count: u32) -> Result<(), SpecError> {
        if self.leaf_count == 0 {
            return Err(SpecError::NonPositive { field: "topology.leaf_count" });
        }
        if self.nodes_per_leaf == 0 {
            return Err(SpecError::NonPositive { field: "topology.nodes_per_leaf" });
        }
        let capacity = u64::from(self.leaf_count) * u64::from(self.nodes_per_leaf);
        if capacity < u64::from(node_count) {
            return Err(SpecError::TopologyTooSmall { capacity, node_count });
        }
        if !(self.inter_leaf_penalty >= 1.0 && self.inter_leaf_penalty.is_finite()) {
            return Err(SpecError::PenaltyBelowOne(self.inter_leaf_penalty));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("group size {group_size} exceeds the {nodes} participating nodes")]
    GroupTooLarge { group_size: u32, nodes: u32 },
    #[error("group size {group_size} does not divide the {nodes} participating nodes")]
    Uneven { group_size: u32, nodes: u32 },
    #[error("node order must be a permutation of 0..{0}")]
    NotPermutation(u32),
}

/// Nodes grouped into consecutive runs of `group_size` along `order`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group_size: u32,
    /// Node indices in placement order.
    pub order: Vec<u32>,
    /// Group index of each node, indexed by node.
    pub group_of: Vec<u32>,
    /// Leaf index of each node, indexed by node.
    pub leaf_of: Vec<u32>,
    /// Groups whose nodes sit under more than one leaf.
    pub cross_leaf_groups: u32,
}

impl GroupAssignment {
    /// Groups `order` into consecutive runs of `group_size` nodes.
    pub fn from_order(topology: &Topology, order: Vec<u32>, group_size: u32) -> Result<Self, PlacementError> {
        let nodes = order.len() as u32;
        let distinct: BTreeSet<u32> = order.iter().copied().collect();
        if distinct.len() != order.len() || order.iter().any(|&n| n >= nodes) {
            return Err(PlacementError::NotPermutation(nodes));
        }
        if group_size == 0 || group_size > nodes.max(1) {
            return Err(PlacementError::GroupTooLarge { group_size, nodes });
        }
        if !nodes.is_multiple_of(group_size) {
            return Err(PlacementError::Uneven { group_size, nodes });
        }
        let mut group_of = vec![0; order.len()];
        for (position, &node) in order.iter().enumerate() {
            group_of[node as usize] = position as u32 / group_size;
        }
        let leaf_of: Vec<u32> = (0..nodes).map(|n| topology.leaf_of(n)).collect();
        let cross_leaf_groups = count_spanning(&order, &leaf_of, group_size as usize);
        Ok(GroupAssignment { group_size, order, group_of, leaf_of, cross_leaf_groups })
    }

    /// Whether any run of `nodes` consecutive entries of the placement order
    /// touches more than one leaf.
    pub fn spans_leaves(&self, nodes: u32) -> bool {
        nodes > 1 && count_spanning(&self.order, &self.leaf_of, nodes as usize) > 0
    }
}

fn count_spanning(order: &[u32], leaf_of: &[u32], chunk: usize) -> u32 {
    order
        .chunks(chunk.max(1))
        .filter(|group| group.iter().any(|&n| leaf_of[n as usize] != leaf_of[group[0] as usize]))
        .count() as u32
}

/// Node-axis group size that placement must respect: the largest `s¹`
/// among the plan's components, or 1 when nothing spans nodes.
pub fn group_size(plan: &ShardingPlan) -> u32 {
    plan.max_node_factor()
}

/// Contiguous packing: nodes in leaf order, groups filled leaf by leaf.
pub fn assign_nodes(topology: &Topology, cluster: &ClusterSpec, plan: &ShardingPlan) -> Result<GroupAssignment, PlacementError> {
    let nodes = cluster.dp_mesh.nodes();
    let size = group_size(plan);
    if size > nodes {
        return Err(PlacementError::GroupTooLarge { group_size: size, nodes });
    }
    let mut order: Vec<u32> = (0..nodes).collect();
    order.sort_by_key(|&n| (topology.leaf_of(n), n));
    GroupAssignment::from_order(topology, order, size)
}

/// Strided baseline: group `j` takes nodes `j, j + G, j + 2G, ...` where
/// `G = nodes / group_size`, scattering every group across leaves.
pub fn interleaved_assignment(topology: &Topology, nodes: u32, group_size: u32) -> Result<GroupAssignment, PlacementError> {
    if group_size == 0 || group_size > nodes {
        return Err(PlacementError::GroupTooLarge { group_size, nodes });
    }
    if !nodes.is_multiple_of(group_size) {
        return Err(PlacementError::Uneven { group_size, nodes });
    }
    let groups = nodes / group_size;
    let order = (0..groups).flat_map(|j| (0..group_size).map(move |k| j + k * groups)).collect();
    GroupAssignment::from_order(topology, order, group_size)
}

pub fn placed_collective_time(
    topology: &Topology,
    assignment: &GroupAssignment,
    cost: &dyn CollectiveCost,
    kind: CollectiveKind,
    size: f64,
    mesh: DeviceMesh,
) -> Result<f64, ProfileError> {
    let base = cost.collective_time(kind, size, mesh)?;
    if topology.inter_leaf_penalty > 1.0 && assignment.spans_leaves(mesh.nodes()) {
        return Ok(base * topology.inter_leaf_penalty);
    }
    Ok(base)
}

/// A cost source priced under a fixed node placement.
pub struct PlacedCost<'a> {
    pub inner: &'a dyn CollectiveCost,
    pub topology: Topology,
    pub assignment: GroupAssignment,
}

impl CollectiveCost for PlacedCost<'_> {
    fn collective_time(&self, kind: CollectiveKind, size: f64, mesh: DeviceMesh) -> Result<f64, ProfileError> {
        placed_collective_time(&self.topology, &self.assignment, self.inner, kind, size, mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::BandwidthProfile;

    #[test]
    fn exact_packing_has_no_crossing() {
        let topo = Topology::new(2, 2, 1.0);
        let cluster = ClusterSpec::new(8, 4, 80e9).with_topology(topo);
        let m = DeviceMesh::new(8, 2);
        let a = assign_nodes(&topo, &cluster, &ShardingPlan::new(m, m, m)).unwrap();
        assert_eq!(a.group_of, vec![0, 0, 1, 1]);
        assert_eq!(a.cross_leaf_groups, 0);
    }

    #[test]
    fn interleaved_groups_cross() {
        let topo = Topology::new(2, 2, 1.0);
        let a = interleaved_assignment(&topo, 4, 2).unwrap();
        assert_eq!(a.order, vec![0, 2, 1, 3]);
        assert_eq!(a.cross_leaf_groups, 2);
    }

    #[test]
    fn six_nodes_in_groups_of_three() {
        let topo = Topology::new(2, 4, 1.0);
        let cluster = ClusterSpec::new(8, 6, 80e9).with_topology(topo);
        let m = DeviceMesh::new(8, 3);
        let a = assign_nodes(&topo, &cluster, &ShardingPlan::new(m, m, m)).unwrap();
        assert_eq!(a.cross_leaf_groups, 1);
    }

    #[test]
    fn group_larger_than_cluster_is_an_error() {
        let topo = Topology::single_leaf(2);
        assert!(matches!(
            interleaved_assignment(&topo, 2, 4),
            Err(PlacementError::GroupTooLarge { group_size: 4, nodes: 2 })
        ));
    }

    #[test]
    fn penalty_applies_only_when_spanning() {
        let profile = BandwidthProfile::constant(1e10, &[DeviceMesh::new(8, 2), DeviceMesh::new(8, 4)]);
        let topo = Topology::new(2, 2, 1.5);
        let packed = GroupAssignment::from_order(&topo, vec![0, 1, 2, 3], 2).unwrap();
        let spread = interleaved_assignment(&topo, 4, 2).unwrap();
        let m = DeviceMesh::new(8, 2);
        let base = profile.collective_time(CollectiveKind::AllReduce, 1e6, m).unwrap();
        let t = |a: &GroupAssignment, mesh| {
            placed_collective_time(&topo, a, &profile, CollectiveKind::AllReduce, 1e6, mesh).unwrap()
        };
        assert_eq!(t(&packed, m), base);
        assert_eq!(t(&spread, m), 1.5 * base);
        // A four-node mesh spans both leaves under any order.
        let m4 = DeviceMesh::new(8, 4);
        assert_eq!(t(&packed, m4), 1.5 * profile.collective_time(CollectiveKind::AllReduce, 1e6, m4).unwrap());
        let neutral = Topology::new(2, 2, 1.0);
        assert_eq!(
            placed_collective_time(&neutral, &spread, &profile, CollectiveKind::AllReduce, 1e6, m).unwrap(),
            base
        );
    }
}
