//! Consistent-hashing ring with a fixed number of equal partitions.
//!
//! The hash space is `2^hash_space_bits` wide and split into
//! `partition_count` contiguous arcs. Every arc is owned by one virtual node,
//! and every virtual node belongs to one physical node. A physical node owns
//! `capacity_weight * vnodes_per_unit_capacity` virtual nodes.
//!
//! All operations are pure: they take a [`RingState`] snapshot and return a
//! new one, so snapshots can be shared freely between threads and actors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

/// Identifier of a physical node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RingError {
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(NodeId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("cannot remove the last node of a ring")]
    LastNode,
    #[error("invalid ring configuration: {0}")]
    InvalidConfig(String),
    #[error("shard count must be at least 1")]
    ZeroShards,
    #[error("malformed ring dump at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, RingError>;

/// Largest digest width we can draw positions from (SHA-1).
pub const MAX_HASH_SPACE_BITS: u32 = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingConfig {
    pub hash_space_bits: u32,
    pub partition_count: u32,
    pub vnodes_per_unit_capacity: u32,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            hash_space_bits: 160,
            partition_count: 64,
            vnodes_per_unit_capacity: 3,
        }
    }
}

impl RingConfig {
    pub fn with_partitions(partition_count: u32) -> Self {
        RingConfig {
            partition_count,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hash_space_bits < 16 || self.hash_space_bits > MAX_HASH_SPACE_BITS {
            return Err(RingError::InvalidConfig(format!(
                "hash_space_bits must be in 16..={MAX_HASH_SPACE_BITS}, got {}",
                self.hash_space_bits
            )));
        }
        if self.partition_count == 0 || !self.partition_count.is_power_of_two() {
            return Err(RingError::InvalidConfig(format!(
                "partition_count must be a power of two, got {}",
                self.partition_count
            )));
        }
        if self.partition_count.trailing_zeros() > self.hash_space_bits {
            return Err(RingError::InvalidConfig(
                "more partitions than hash positions".into(),
            ));
        }
        if self.vnodes_per_unit_capacity == 0 {
            return Err(RingError::InvalidConfig(
                "vnodes_per_unit_capacity must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of high-order hash bits that select the partition.
    fn partition_bits(&self) -> u32 {
        self.partition_count.trailing_zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalNode {
    pub node_id: NodeId,
    /// Abstracts cpu, memory and storage size; must be at least 1.
    pub capacity_weight: u32,
}

impl PhysicalNode {
    pub fn new(node_id: impl Into<NodeId>) -> Self {
        PhysicalNode {
            node_id: node_id.into(),
            capacity_weight: 1,
        }
    }

    pub fn weighted(node_id: impl Into<NodeId>, capacity_weight: u32) -> Self {
        PhysicalNode {
            node_id: node_id.into(),
            capacity_weight,
        }
    }

    fn vnode_count(&self, config: &RingConfig) -> u32 {
        self.capacity_weight * config.vnodes_per_unit_capacity
    }
}

/// Owner of one partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionOwner {
    pub node_id: NodeId,
    pub vnode: u32,
}

/// A position in the hash space, stored big-endian and truncated to
/// `hash_space_bits` (low bits beyond the space are zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RingHash([u8; 20]);

impl RingHash {
    /// Hash `bucket \0 key` into the ring's space.
    pub fn of(bucket: &str, key: &[u8], config: &RingConfig) -> Self {
        let mut hasher = Sha1::new();
        hasher.update(bucket.as_bytes());
        hasher.update([0u8]);
        hasher.update(key);
        let digest: [u8; 20] = hasher.finalize().into();
        Self::from_bytes(digest, config.hash_space_bits)
    }

    pub fn from_bytes(mut bytes: [u8; 20], hash_space_bits: u32) -> Self {
        let bits = hash_space_bits.min(MAX_HASH_SPACE_BITS) as usize;
        for (i, b) in bytes.iter_mut().enumerate() {
            let lo = i * 8;
            if lo >= bits {
                *b = 0;
            } else if lo + 8 > bits {
                let keep = bits - lo;
                *b &= 0xffu8 << (8 - keep);
            }
        }
        RingHash(bytes)
    }

    /// First position of `partition`.
    pub fn partition_start(partition: u32, config: &RingConfig) -> Self {
        let pbits = config.partition_bits();
        let mut bytes = [0u8; 20];
        if pbits > 0 {
            let shifted = (partition as u64) << (64 - pbits);
            bytes[..8].copy_from_slice(&shifted.to_be_bytes());
        }
        RingHash(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    fn top_bits(&self, n: u32) -> u32 {
        if n == 0 {
            return 0;
        }
        let head = u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"));
        (head >> (64 - n)) as u32
    }
}

/// Snapshot of partition ownership. Values, not handles: every membership
/// change yields a new snapshot with a higher epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingState {
    pub epoch: u64,
    pub config: RingConfig,
    nodes: BTreeMap<NodeId, PhysicalNode>,
    assignment: Vec<PartitionOwner>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceList {
    pub nodes: Vec<NodeId>,
    /// Set when fewer distinct physical nodes exist than replicas requested.
    pub shortfall: bool,
}

impl PreferenceList {
    pub fn primary(&self) -> &NodeId {
        &self.nodes[0]
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Target assignment for a node set: virtual nodes are interleaved
/// `(vnode index, node id)` so that neighbouring partitions land on different
/// physical nodes, then partitions are dealt to them round-robin.
fn target_assignment(
    nodes: &BTreeMap<NodeId, PhysicalNode>,
    config: &RingConfig,
) -> Vec<PartitionOwner> {
    let max_vnodes = nodes
        .values()
        .map(|n| n.vnode_count(config))
        .max()
        .unwrap_or(0);
    let mut vnodes = Vec::new();
    for v in 0..max_vnodes {
        for node in nodes.values() {
            if v < node.vnode_count(config) {
                vnodes.push(PartitionOwner {
                    node_id: node.node_id.clone(),
                    vnode: v,
                });
            }
        }
    }
    (0..config.partition_count as usize)
        .map(|p| vnodes[p % vnodes.len()].clone())
        .collect()
}

fn validate_node(node: &PhysicalNode) -> Result<()> {
    if node.capacity_weight == 0 {
        return Err(RingError::InvalidConfig(format!(
            "node `{}` has zero capacity weight",
            node.node_id
        )));
    }
    Ok(())
}

pub fn build_ring(nodes: &[PhysicalNode], config: RingConfig) -> Result<RingState> {
    config.validate()?;
    if nodes.is_empty() {
        return Err(RingError::EmptyNodeSet);
    }
    let mut map = BTreeMap::new();
    for node in nodes {
        validate_node(node)?;
        if map.insert(node.node_id.clone(), node.clone()).is_some() {
            return Err(RingError::DuplicateNodeId(node.node_id.clone()));
        }
    }
    let assignment = target_assignment(&map, &config);
    Ok(RingState {
        epoch: 1,
        config,
        nodes: map,
        assignment,
    })
}

pub fn lookup_partition(bucket: &str, key: &[u8], ring: &RingState) -> u32 {
    ring.partition_of(&RingHash::of(bucket, key, &ring.config))
}

pub fn preference_list(
    bucket: &str,
    key: &[u8],
    ring: &RingState,
    replicas: usize,
) -> PreferenceList {
    ring.preference_list_for_partition(lookup_partition(bucket, key, ring), replicas)
}

/// Add `node`, claiming for it exactly the partitions the balanced target
/// layout of the enlarged node set gives it. Nothing else moves.
pub fn add_node(ring: &RingState, node: PhysicalNode) -> Result<(RingState, BTreeSet<u32>)> {
    validate_node(&node)?;
    if ring.nodes.contains_key(&node.node_id) {
        return Err(RingError::DuplicateNodeId(node.node_id));
    }
    let mut nodes = ring.nodes.clone();
    nodes.insert(node.node_id.clone(), node.clone());
    let target = target_assignment(&nodes, &ring.config);
    let mut assignment = ring.assignment.clone();
    let mut moved = BTreeSet::new();
    for (p, owner) in target.into_iter().enumerate() {
        if owner.node_id == node.node_id {
            assignment[p] = owner;
            moved.insert(p as u32);
        }
    }
    Ok((
        RingState {
            epoch: ring.epoch + 1,
            config: ring.config,
            nodes,
            assignment,
        },
        moved,
    ))
}

/// Remove `node_id`; each of its partitions goes to the physical node owning
/// the next partition clockwise that is not `node_id`.
pub fn remove_node(ring: &RingState, node_id: &NodeId) -> Result<(RingState, BTreeSet<u32>)> {
    if !ring.nodes.contains_key(node_id) {
        return Err(RingError::UnknownNode(node_id.clone()));
    }
    if ring.nodes.len() == 1 {
        return Err(RingError::LastNode);
    }
    let count = ring.assignment.len();
    let mut assignment = ring.assignment.clone();
    let mut moved = BTreeSet::new();
    for (p, owner) in ring.assignment.iter().enumerate() {
        if &owner.node_id != node_id {
            continue;
        }
        let successor = (1..count)
            .map(|step| &ring.assignment[(p + step) % count])
            .find(|owner| &owner.node_id != node_id)
            .expect("another node exists");
        assignment[p] = successor.clone();
        moved.insert(p as u32);
    }
    let mut nodes = ring.nodes.clone();
    nodes.remove(node_id);
    Ok((
        RingState {
            epoch: ring.epoch + 1,
            config: ring.config,
            nodes,
            assignment,
        },
        moved,
    ))
}

pub fn modulo_shard(primary_key: u64, shard_count: u64) -> Result<u64> {
    if shard_count == 0 {
        return Err(RingError::ZeroShards);
    }
    Ok(primary_key % shard_count)
}

impl RingState {
    /// Construct a ring from an explicit owner per partition. Used to lay out
    /// hand-drawn rings; every owner must appear in `nodes`.
    pub fn from_assignment(
        config: RingConfig,
        nodes: &[PhysicalNode],
        owners: Vec<PartitionOwner>,
    ) -> Result<Self> {
        config.validate()?;
        if nodes.is_empty() {
            return Err(RingError::EmptyNodeSet);
        }
        let mut map = BTreeMap::new();
        for node in nodes {
            validate_node(node)?;
            if map.insert(node.node_id.clone(), node.clone()).is_some() {
                return Err(RingError::DuplicateNodeId(node.node_id.clone()));
            }
        }
        if owners.len() != config.partition_count as usize {
            return Err(RingError::InvalidConfig(format!(
                "expected {} owners, got {}",
                config.partition_count,
                owners.len()
            )));
        }
        if let Some(o) = owners.iter().find(|o| !map.contains_key(&o.node_id)) {
            return Err(RingError::UnknownNode(o.node_id.clone()));
        }
        Ok(RingState {
            epoch: 1,
            config,
            nodes: map,
            assignment: owners,
        })
    }

    pub fn partition_of(&self, hash: &RingHash) -> u32 {
        hash.top_bits(self.config.partition_bits())
    }

    pub fn owner(&self, partition: u32) -> &PartitionOwner {
        &self.assignment[partition as usize]
    }

    pub fn assignment(&self) -> &[PartitionOwner] {
        &self.assignment
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PhysicalNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains_key(node)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Partitions owned per physical node. Nodes owning nothing are listed with 0.
    pub fn partition_counts(&self) -> BTreeMap<NodeId, usize> {
        let mut counts: BTreeMap<NodeId, usize> =
            self.nodes.keys().map(|id| (id.clone(), 0)).collect();
        for owner in &self.assignment {
            *counts.entry(owner.node_id.clone()).or_default() += 1;
        }
        counts
    }

    /// Partitions owned per virtual node of `node`, indexed by vnode.
    pub fn vnode_counts(&self, node: &NodeId) -> Vec<usize> {
        let Some(phys) = self.nodes.get(node) else {
            return Vec::new();
        };
        let mut counts = vec![0; phys.vnode_count(&self.config) as usize];
        for owner in self.assignment.iter().filter(|o| &o.node_id == node) {
            let v = owner.vnode as usize;
            if v >= counts.len() {
                counts.resize(v + 1, 0);
            }
            counts[v] += 1;
        }
        counts
    }

    pub fn preference_list_for_partition(&self, partition: u32, replicas: usize) -> PreferenceList {
        let replicas = replicas.max(1);
        let count = self.assignment.len();
        let mut nodes: Vec<NodeId> = Vec::with_capacity(replicas);
        for step in 0..count {
            let owner = &self.assignment[(partition as usize + step) % count];
            if !nodes.contains(&owner.node_id) {
                nodes.push(owner.node_id.clone());
                if nodes.len() == replicas {
                    break;
                }
            }
        }
        PreferenceList {
            shortfall: nodes.len() < replicas,
            nodes,
        }
    }

    /// Canonical text form: `partition<TAB>vnode<TAB>node_id`, one line per partition.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (p, owner) in self.assignment.iter().enumerate() {
            out.push_str(&format!("{p}\t{}\t{}\n", owner.vnode, owner.node_id));
        }
        out
    }

    /// Parse a [`RingState::dump`] back. Node weights are inferred from the
    /// highest vnode index seen, rounded up to whole capacity units.
    pub fn parse_dump(text: &str, config: RingConfig) -> Result<Self> {
        let mut owners = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parse_err = |reason: &str| RingError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err("expected 3 tab-separated columns"));
            }
            let p: usize = cols[0].parse().map_err(|_| parse_err("bad partition index"))?;
            if p != owners.len() {
                return Err(parse_err("partitions must be listed in order"));
            }
            let vnode: u32 = cols[1].parse().map_err(|_| parse_err("bad vnode index"))?;
            owners.push(PartitionOwner {
                node_id: NodeId::new(cols[2]),
                vnode,
            });
        }
        let mut max_vnode: BTreeMap<NodeId, u32> = BTreeMap::new();
        for o in &owners {
            let e = max_vnode.entry(o.node_id.clone()).or_default();
            *e = (*e).max(o.vnode);
        }
        let per_unit = config.vnodes_per_unit_capacity.max(1);
        let nodes: Vec<PhysicalNode> = max_vnode
            .into_iter()
            .map(|(id, v)| PhysicalNode::weighted(id, (v / per_unit) + 1))
            .collect();
        Self::from_assignment(config, &nodes, owners)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(ids: &[&str]) -> Vec<PhysicalNode> {
        ids.iter().map(|id| PhysicalNode::new(*id)).collect()
    }

    #[test]
    fn three_nodes_sixty_four_partitions() {
        let ring = build_ring(&nodes(&["n1", "n2", "n3"]), RingConfig::default()).unwrap();
        let mut counts: Vec<usize> = ring.partition_counts().into_values().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(counts, vec![22, 21, 21]);
        assert_eq!(ring.partition_counts()[&NodeId::from("n1")], 22);
        assert_eq!(ring.vnode_counts(&NodeId::from("n1")), vec![8, 7, 7]);
    }

    #[test]
    fn single_node_owns_everything() {
        let ring = build_ring(&nodes(&["solo"]), RingConfig::default()).unwrap();
        assert_eq!(ring.partition_counts()[&NodeId::from("solo")], 64);
    }

    #[test]
    fn build_errors() {
        assert_eq!(
            build_ring(&[], RingConfig::default()),
            Err(RingError::EmptyNodeSet)
        );
        assert_eq!(
            build_ring(&nodes(&["a", "a"]), RingConfig::default()),
            Err(RingError::DuplicateNodeId("a".into()))
        );
        let bad = RingConfig {
            hash_space_bits: 8,
            ..Default::default()
        };
        assert!(matches!(
            build_ring(&nodes(&["a"]), bad),
            Err(RingError::InvalidConfig(_))
        ));
        assert!(matches!(
            build_ring(&nodes(&["a"]), RingConfig::with_partitions(48)),
            Err(RingError::InvalidConfig(_))
        ));
    }

    #[test]
    fn weights_scale_ownership() {
        let ring = build_ring(
            &[PhysicalNode::weighted("big", 2), PhysicalNode::new("small")],
            RingConfig::default(),
        )
        .unwrap();
        let counts = ring.partition_counts();
        // 9 vnodes: big owns 6 of them.
        assert_eq!(counts[&NodeId::from("big")], 43);
        assert_eq!(counts[&NodeId::from("small")], 21);
    }

    #[test]
    fn boundary_hash_belongs_to_its_own_partition() {
        let ring = build_ring(&nodes(&["a", "b"]), RingConfig::default()).unwrap();
        for p in [0u32, 1, 17, 63] {
            let start = RingHash::partition_start(p, &ring.config);
            assert_eq!(ring.partition_of(&start), p);
        }
        // One below the start of partition 1 is the end of partition 0.
        let mut bytes = [0xffu8; 20];
        bytes[0] = 0b0000_0011;
        let just_below = RingHash::from_bytes(bytes, 160);
        assert_eq!(ring.partition_of(&just_below), 0);
    }

    #[test]
    fn hash_truncates_to_space() {
        let cfg = RingConfig {
            hash_space_bits: 20,
            ..Default::default()
        };
        let h = RingHash::of("b", b"k", &cfg);
        assert!(h.as_bytes()[3..].iter().all(|b| *b == 0));
        assert_eq!(h.as_bytes()[2] & 0x0f, 0);
    }

    #[test]
    fn lookup_is_deterministic() {
        let ring = build_ring(&nodes(&["a", "b", "c"]), RingConfig::default()).unwrap();
        let p1 = lookup_partition("bucket", b"key", &ring);
        let p2 = lookup_partition("bucket", b"key", &ring);
        assert_eq!(p1, p2);
        assert!(p1 < 64);
    }

    #[test]
    fn preference_list_shortfall() {
        let ring = build_ring(&nodes(&["a", "b", "c"]), RingConfig::default()).unwrap();
        let pl = preference_list("b", b"k", &ring, 5);
        assert_eq!(pl.len(), 3);
        assert!(pl.shortfall);
        let one = preference_list("b", b"k", &ring, 1);
        assert_eq!(one.nodes.len(), 1);
        assert!(!one.shortfall);
        assert_eq!(one.primary(), pl.primary());
    }

    #[test]
    fn remove_errors() {
        let ring = build_ring(&nodes(&["a"]), RingConfig::default()).unwrap();
        assert_eq!(remove_node(&ring, &"a".into()), Err(RingError::LastNode));
        assert_eq!(
            remove_node(&ring, &"zz".into()),
            Err(RingError::UnknownNode("zz".into()))
        );
        assert_eq!(
            add_node(&ring, PhysicalNode::new("a")).unwrap_err(),
            RingError::DuplicateNodeId("a".into())
        );
    }

    #[test]
    fn epoch_increases_on_membership_change() {
        let ring = build_ring(&nodes(&["a", "b"]), RingConfig::default()).unwrap();
        let (added, _) = add_node(&ring, PhysicalNode::new("c")).unwrap();
        assert_eq!(added.epoch, ring.epoch + 1);
        let (removed, _) = remove_node(&added, &"a".into()).unwrap();
        assert_eq!(removed.epoch, added.epoch + 1);
    }

    #[test]
    fn modulo_examples() {
        assert_eq!(modulo_shard(23, 10), Ok(3));
        assert_eq!(modulo_shard(10, 10), Ok(0));
        assert_eq!(modulo_shard(1, 0), Err(RingError::ZeroShards));
    }

    #[test]
    fn dump_roundtrip() {
        let ring = build_ring(
            &[PhysicalNode::weighted("a", 2), PhysicalNode::new("b")],
            RingConfig::with_partitions(8),
        )
        .unwrap();
        let text = ring.dump();
        assert_eq!(text.lines().next(), Some("0\t0\ta"));
        let parsed = RingState::parse_dump(&text, ring.config).unwrap();
        assert_eq!(parsed.assignment(), ring.assignment());
    }
}
