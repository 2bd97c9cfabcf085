use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;

use crate::hashring::{NodeId, RingState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GossipConfig {
    pub fanout: usize,
    pub period: u64,
    /// Missed periods before a peer is suspected.
    pub suspect_after: u64,
    /// Missed periods before a peer is considered dead.
    pub dead_after: u64,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig {
            fanout: 2,
            period: 5,
            suspect_after: 3,
            dead_after: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Alive,
    Suspect,
    Dead,
}

impl fmt::Display for Liveness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Liveness::Alive => "alive",
            Liveness::Suspect => "suspect",
            Liveness::Dead => "dead",
        })
    }
}

/// What one gossip message carries.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipDigest {
    pub ring: RingState,
    pub heartbeats: BTreeMap<NodeId, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Beat {
    counter: u64,
    /// Local time the counter last went up.
    seen_at: u64,
}

/// One node's belief about the ring and its peers.
#[derive(Debug, Clone)]
pub struct MembershipView {
    self_id: NodeId,
    ring: RingState,
    beats: BTreeMap<NodeId, Beat>,
    pub config: GossipConfig,
}

impl MembershipView {
    pub fn new(self_id: NodeId, ring: RingState, config: GossipConfig, now: u64) -> Self {
        let mut view = MembershipView {
            self_id,
            ring,
            beats: BTreeMap::new(),
            config,
        };
        view.track_ring_members(now);
        view
    }

    fn track_ring_members(&mut self, now: u64) {
        let ids: Vec<NodeId> = self.ring.node_ids().cloned().collect();
        for id in ids {
            self.beats.entry(id).or_insert(Beat {
                counter: 0,
                seen_at: now,
            });
        }
    }

    pub fn self_id(&self) -> &NodeId {
        &self.self_id
    }

    pub fn ring(&self) -> &RingState {
        &self.ring
    }

    pub fn epoch(&self) -> u64 {
        self.ring.epoch
    }

    /// Install a ring decided locally (an operator-driven change). Returns
    /// the previous ring.
    pub fn install_ring(&mut self, ring: RingState, now: u64) -> RingState {
        let old = std::mem::replace(&mut self.ring, ring);
        self.track_ring_members(now);
        old
    }

    pub fn heartbeat(&self, node: &NodeId) -> u64 {
        self.beats.get(node).map_or(0, |b| b.counter)
    }

    /// Bump our own heartbeat; called once per gossip period.
    pub fn tick(&mut self, now: u64) {
        let me = self.beats.entry(self.self_id.clone()).or_insert(Beat {
            counter: 0,
            seen_at: now,
        });
        me.counter += 1;
        me.seen_at = now;
    }

    pub fn liveness(&self, peer: &NodeId, now: u64) -> Liveness {
        if peer == &self.self_id {
            return Liveness::Alive;
        }
        let seen_at = self.beats.get(peer).map_or(0, |b| b.seen_at);
        let missed = now.saturating_sub(seen_at) / self.config.period.max(1);
        if missed >= self.config.dead_after {
            Liveness::Dead
        } else if missed >= self.config.suspect_after {
            Liveness::Suspect
        } else {
            Liveness::Alive
        }
    }

    pub fn digest(&self) -> GossipDigest {
        GossipDigest {
            ring: self.ring.clone(),
            heartbeats: self.beats.iter().map(|(n, b)| (n.clone(), b.counter)).collect(),
        }
    }

    /// Peers to gossip with this round.
    pub fn pick_peers<R: Rng>(&self, rng: &mut R) -> Vec<NodeId> {
        let peers: Vec<&NodeId> = self.ring.node_ids().filter(|n| **n != self.self_id).collect();
        let k = self.config.fanout.min(peers.len());
        let mut picked: Vec<NodeId> = sample(rng, peers.len(), k)
            .into_iter()
            .map(|i| peers[i].clone())
            .collect();
        picked.sort();
        picked
    }

    /// Fold a peer's digest in: the higher ring epoch wins (equal epochs with
    /// different layouts break the tie on the dump text), heartbeats merge by
    /// max. Returns the replaced ring when ours changed.
    pub fn merge(&mut self, digest: &GossipDigest, now: u64) -> Option<RingState> {
        let adopt = digest.ring.epoch > self.ring.epoch
            || (digest.ring.epoch == self.ring.epoch
                && digest.ring != self.ring
                && digest.ring.dump() > self.ring.dump());
        let old = adopt.then(|| self.install_ring(digest.ring.clone(), now));
        for (node, &counter) in &digest.heartbeats {
            if node == &self.self_id {
                continue;
            }
            let beat = self.beats.entry(node.clone()).or_insert(Beat {
                counter: 0,
                seen_at: now,
            });
            if counter > beat.counter {
                beat.counter = counter;
                beat.seen_at = now;
            }
        }
        old
    }

    /// Whether `digest` would teach us nothing.
    pub fn knows(&self, digest: &GossipDigest) -> bool {
        digest.ring.epoch <= self.ring.epoch
            && digest
                .heartbeats
                .iter()
                .all(|(n, c)| n == &self.self_id || self.heartbeat(n) >= *c)
    }
}

/// One synchronous push-pull round over a set of views: every node sends its
/// digest to the peers `choose` returns and pulls theirs back. Digests are
/// taken before anyone merges, as if all messages crossed in flight.
/// Returns the number of messages exchanged.
pub fn gossip_round<F>(views: &mut [MembershipView], now: u64, mut choose: F) -> usize
where
    F: FnMut(&MembershipView) -> Vec<NodeId>,
{
    let digests: Vec<GossipDigest> = views.iter().map(MembershipView::digest).collect();
    let index: BTreeMap<NodeId, usize> = views
        .iter()
        .enumerate()
        .map(|(i, v)| (v.self_id.clone(), i))
        .collect();
    let mut exchanges = Vec::new();
    for (i, view) in views.iter().enumerate() {
        for peer in choose(view) {
            if let Some(&j) = index.get(&peer) {
                if j != i {
                    exchanges.push((i, j));
                }
            }
        }
    }
    for &(i, j) in &exchanges {
        views[j].merge(&digests[i], now);
        views[i].merge(&digests[j], now);
    }
    exchanges.len() * 2
}
