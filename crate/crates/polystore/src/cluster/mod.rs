//! Deterministic cluster simulator.
//!
//! A single-threaded event loop delivers messages between node actors over a
//! [`SimNetwork`] in `(virtual time, insertion order)` order. Nodes share no
//! mutable state; everything between them is a [`Message`]. The same seed
//! and the same sequence of calls always produce the same trace.

mod membership;
mod message;
mod network;
mod node;
pub mod scenario;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use membership::{gossip_round, GossipConfig, GossipDigest, Liveness, MembershipView};
pub use message::{ClientOp, ClientReply, KeyRecords, Message, ReqId};
pub use network::{Fault, NetworkConfig, SimNetwork};

use crate::hashring::{
    add_node, build_ring, preference_list, NodeId, PhysicalNode, RingConfig, RingError, RingState,
};
use crate::replication::{
    BucketConfig, LeaderEvent, Member, QuorumConfig, ReadOutcome, ReplicaStore, ReplicationError,
    Role, SessionState, DEFAULT_OPLOG_CAPACITY,
};
use crate::storage::{LogBackend, LogOptions, MemoryBackend, StorageError};
use crate::versioning::{VectorClock, VersionedValue};
use node::{LeaderSettings, Node, NodeSettings, Outbox, Timer};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("unknown node `{0}`")]
    UnknownTarget(NodeId),
    #[error("livelock guard tripped after {0} events")]
    LivelockGuard(u64),
    #[error("request {0} can never complete: no events left")]
    Stalled(ReqId),
    #[error("unexpected reply to request {0}")]
    UnexpectedReply(ReqId),
    #[error("invalid cluster config: {0}")]
    Config(String),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Replication(#[from] ReplicationError),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Debug, Clone)]
pub struct LeaderConfig {
    /// Members that vote but hold no data.
    pub arbiters: Vec<NodeId>,
    pub oplog_capacity: usize,
    pub heartbeat_period: u64,
    /// Primary of term 1. Defaults to the first data-bearing member.
    pub bootstrap_primary: Option<NodeId>,
}

impl Default for LeaderConfig {
    fn default() -> Self {
        LeaderConfig {
            arbiters: Vec::new(),
            oplog_capacity: DEFAULT_OPLOG_CAPACITY,
            heartbeat_period: 5,
            bootstrap_primary: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub enum ReplicationMode {
    /// Every node coordinates; keys live on their preference list.
    #[default]
    Quorum,
    /// One primary takes writes and streams them to full-copy secondaries.
    Leader(LeaderConfig),
}

#[derive(Debug, Clone, Default)]
pub enum StorageChoice {
    /// Survives simulated crashes, as if it were a disk.
    #[default]
    Memory,
    /// One log directory per node under `root`, reopened through recovery
    /// after a crash.
    Log { root: PathBuf, options: LogOptions },
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub nodes: Vec<PhysicalNode>,
    pub ring: RingConfig,
    pub seed: u64,
    pub network: NetworkConfig,
    pub gossip: GossipConfig,
    pub gossip_enabled: bool,
    pub request_timeout: u64,
    pub default_quorum: QuorumConfig,
    pub buckets: Vec<BucketConfig>,
    pub mode: ReplicationMode,
    pub storage: StorageChoice,
    /// Keep trace lines; when off only the count is kept.
    pub trace: bool,
    pub max_events: u64,
    pub retention: usize,
}

impl ClusterConfig {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        ClusterConfig {
            nodes: names.iter().map(|n| PhysicalNode::new(n.as_ref())).collect(),
            ring: RingConfig::default(),
            seed: 0,
            network: NetworkConfig::default(),
            gossip: GossipConfig::default(),
            gossip_enabled: true,
            request_timeout: 40,
            default_quorum: QuorumConfig::default(),
            buckets: Vec::new(),
            mode: ReplicationMode::Quorum,
            storage: StorageChoice::Memory,
            trace: true,
            max_events: 50_000_000,
            retention: crate::versioning::DEFAULT_RETENTION_LIMIT,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_quorum(mut self, quorum: QuorumConfig) -> Self {
        self.default_quorum = quorum;
        self
    }

    pub fn with_bucket(mut self, bucket: BucketConfig) -> Self {
        self.buckets.push(bucket);
        self
    }

    pub fn with_mode(mut self, mode: ReplicationMode) -> Self {
        self.mode = mode;
        self
    }
}

enum EventKind {
    Deliver { from: NodeId, to: NodeId, msg: Message },
    Drain { node: NodeId },
    Timer { node: NodeId, incarnation: u64, timer: Timer },
    Client { node: NodeId, req: ReqId, op: ClientOp },
}

struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn is_background(&self) -> bool {
        match &self.kind {
            EventKind::Timer { timer, .. } => timer.is_background(),
            EventKind::Deliver { msg, .. } => msg.is_background(),
            _ => false,
        }
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Slot {
    node: Option<Node>,
    /// Kept while a memory-backed node is down.
    parked: Option<ReplicaStore>,
    up: bool,
    removed: bool,
    incarnation: u64,
    dir: Option<PathBuf>,
    inbox: VecDeque<(NodeId, Message)>,
    draining: bool,
    busy_until: u64,
}

/// The simulated cluster: nodes, network, clock, and event queue.
pub struct Cluster {
    config: ClusterConfig,
    settings: NodeSettings,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Event>,
    foreground: usize,
    network: SimNetwork,
    seeds: ChaCha8Rng,
    slots: BTreeMap<NodeId, Slot>,
    next_req: ReqId,
    completed: BTreeMap<ReqId, std::result::Result<ClientReply, ReplicationError>>,
    inflight: BTreeMap<ReqId, NodeId>,
    trace: Vec<String>,
    trace_len: u64,
    processed: u64,
    primaries: BTreeMap<u64, BTreeSet<NodeId>>,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Result<Self> {
        let ring = build_ring(&config.nodes, config.ring)?;
        let leader = match &config.mode {
            ReplicationMode::Quorum => None,
            ReplicationMode::Leader(lc) => {
                let members: Vec<Member> = config
                    .nodes
                    .iter()
                    .map(|n| {
                        if lc.arbiters.contains(&n.node_id) {
                            Member::arbiter(n.node_id.clone())
                        } else {
                            Member::data(n.node_id.clone())
                        }
                    })
                    .collect();
                let bootstrap = lc
                    .bootstrap_primary
                    .clone()
                    .or_else(|| members.iter().find(|m| !m.arbiter).map(|m| m.node_id.clone()));
                Some(LeaderSettings {
                    members,
                    period: lc.heartbeat_period.max(1),
                    oplog_capacity: lc.oplog_capacity,
                    bootstrap,
                })
            }
        };
        for b in &config.buckets {
            b.quorum.validate()?;
        }
        config.default_quorum.validate()?;
        let settings = NodeSettings {
            request_timeout: config.request_timeout.max(1),
            gossip: config.gossip,
            gossip_enabled: config.gossip_enabled,
            default_quorum: config.default_quorum,
            buckets: config.buckets.iter().map(|b| (b.name.clone(), b.clone())).collect(),
            leader,
        };
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let network = SimNetwork::new(config.network, ChaCha8Rng::seed_from_u64(seeds.next_u64()));
        let mut cluster = Cluster {
            settings,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            foreground: 0,
            network,
            seeds,
            slots: BTreeMap::new(),
            next_req: 1,
            completed: BTreeMap::new(),
            inflight: BTreeMap::new(),
            trace: Vec::new(),
            trace_len: 0,
            processed: 0,
            primaries: BTreeMap::new(),
            config,
        };
        let ids: Vec<NodeId> = cluster.config.nodes.iter().map(|n| n.node_id.clone()).collect();
        for id in ids {
            cluster.spawn(id, ring.clone())?;
        }
        if let Some(ls) = &cluster.settings.leader {
            if let Some(p) = &ls.bootstrap {
                cluster.primaries.entry(1).or_default().insert(p.clone());
            }
        }
        Ok(cluster)
    }

    fn open_store(&self, id: &NodeId) -> Result<(ReplicaStore, Option<PathBuf>)> {
        let (backend, dir): (Box<dyn crate::storage::Backend>, _) = match &self.config.storage {
            StorageChoice::Memory => (Box::new(MemoryBackend::new()), None),
            StorageChoice::Log { root, options } => {
                let dir = root.join(id.as_str());
                (Box::new(LogBackend::open(&dir, *options)?), Some(dir))
            }
        };
        Ok((ReplicaStore::new(backend).with_retention(self.config.retention), dir))
    }

    fn spawn(&mut self, id: NodeId, ring: RingState) -> Result<()> {
        let (store, dir) = self.open_store(&id)?;
        let seed = self.seeds.next_u64();
        let node = Node::start(id.clone(), store, ring, self.settings.clone(), seed, self.now, false)?;
        let timers = node.initial_timers();
        self.slots.insert(
            id.clone(),
            Slot {
                node: Some(node),
                parked: None,
                up: true,
                removed: false,
                incarnation: 0,
                dir,
                inbox: VecDeque::new(),
                draining: false,
                busy_until: 0,
            },
        );
        for (delay, timer) in timers {
            self.push_timer(&id, delay, timer);
        }
        Ok(())
    }

    // ---- event plumbing ----

    fn push(&mut self, time: u64, kind: EventKind) {
        let event = Event {
            time,
            seq: self.seq,
            kind,
        };
        self.seq += 1;
        if !event.is_background() {
            self.foreground += 1;
        }
        self.queue.push(event);
    }

    fn push_timer(&mut self, node: &NodeId, delay: u64, timer: Timer) {
        let incarnation = self.slots.get(node).map_or(0, |s| s.incarnation);
        self.push(
            self.now + delay.max(1),
            EventKind::Timer {
                node: node.clone(),
                incarnation,
                timer,
            },
        );
    }

    fn note(&mut self, line: String) {
        self.trace_len += 1;
        if self.config.trace {
            self.trace.push(line);
        }
    }

    fn flush(&mut self, from: &NodeId, out: Outbox) {
        for (to, msg) in out.sends {
            if self.network.sample_drop() {
                self.note(format!("{}\t{to}\tlost\t{from}\t{}", self.now, msg.name()));
                continue;
            }
            let at = self.now + self.network.sample_delay();
            self.push(
                at,
                EventKind::Deliver {
                    from: from.clone(),
                    to,
                    msg,
                },
            );
        }
        for (delay, timer) in out.timers {
            self.push_timer(from, delay, timer);
        }
        for (req, result) in out.replies {
            self.complete(from, req, result);
        }
        for ev in out.leader_events {
            let line = match ev {
                LeaderEvent::BecamePrimary { term } => {
                    self.primaries.entry(term).or_default().insert(from.clone());
                    format!("primary\t{term}")
                }
                LeaderEvent::SteppedDown { term } => format!("step-down\t{term}"),
                LeaderEvent::StartedElection { term } => format!("election\t{term}"),
            };
            self.note(format!("{}\t{from}\tleader\t{line}", self.now));
        }
    }

    fn complete(
        &mut self,
        node: &NodeId,
        req: ReqId,
        result: std::result::Result<ClientReply, ReplicationError>,
    ) {
        let shown = match &result {
            Ok(r) => format!("ok\t{r}"),
            Err(e) => format!("err\t{e}"),
        };
        self.note(format!("{}\t{node}\treply\t{req}\t{shown}", self.now));
        self.inflight.remove(&req);
        self.completed.insert(req, result);
    }

    fn with_node<F>(&mut self, id: &NodeId, f: F) -> Result<()>
    where
        F: FnOnce(&mut Node, &mut Outbox) -> std::result::Result<(), ReplicationError>,
    {
        let mut out = Outbox::default();
        let node = self
            .slots
            .get_mut(id)
            .and_then(|s| s.node.as_mut())
            .ok_or_else(|| ClusterError::UnknownTarget(id.clone()))?;
        let result = f(node, &mut out);
        self.flush(id, out);
        if let Err(e) = result {
            self.note(format!("{}\t{id}\terror\t{e}", self.now));
        }
        Ok(())
    }

    fn is_up(&self, id: &NodeId) -> bool {
        self.slots.get(id).is_some_and(|s| s.up)
    }

    /// Process the next event. Returns false when nothing is left.
    pub fn step(&mut self) -> Result<bool> {
        let Some(event) = self.queue.pop() else {
            return Ok(false);
        };
        if !event.is_background() {
            self.foreground -= 1;
        }
        self.processed += 1;
        if self.processed > self.config.max_events {
            return Err(ClusterError::LivelockGuard(self.config.max_events));
        }
        self.now = self.now.max(event.time);
        let now = self.now;
        match event.kind {
            EventKind::Deliver { from, to, msg } => {
                if !self.network.reachable(&from, &to) || !self.is_up(&to) {
                    self.note(format!("{now}\t{to}\tdrop\t{from}\t{}", msg.name()));
                    return Ok(true);
                }
                if self.config.network.service_ticks == 0 {
                    self.deliver(from, to, msg)?;
                } else {
                    let slot = self.slots.get_mut(&to).expect("up node has a slot");
                    slot.inbox.push_back((from, msg));
                    if !slot.draining {
                        slot.draining = true;
                        let at = slot.busy_until.max(now);
                        self.push(at, EventKind::Drain { node: to });
                    }
                }
            }
            EventKind::Drain { node } => {
                let service = self.config.network.service_ticks;
                let Some(slot) = self.slots.get_mut(&node) else {
                    return Ok(true);
                };
                let Some((from, msg)) = slot.inbox.pop_front() else {
                    slot.draining = false;
                    return Ok(true);
                };
                slot.busy_until = now + service;
                let more = !slot.inbox.is_empty();
                if more {
                    let at = slot.busy_until;
                    self.push(at, EventKind::Drain { node: node.clone() });
                } else {
                    slot.draining = false;
                }
                self.deliver(from, node, msg)?;
            }
            EventKind::Timer { node, incarnation, timer } => {
                let live = self
                    .slots
                    .get(&node)
                    .is_some_and(|s| s.up && s.incarnation == incarnation);
                if live {
                    self.with_node(&node, |n, out| n.on_timer(now, timer, out))?;
                }
            }
            EventKind::Client { node, req, op } => {
                if !self.is_up(&node) {
                    self.complete(&node, req, Err(ReplicationError::Unavailable(node.clone())));
                } else {
                    self.note(format!("{now}\t{node}\tclient\t{req}\t{op}"));
                    self.with_node(&node, |n, out| {
                        n.on_client(req, op, out);
                        Ok(())
                    })?;
                }
            }
        }
        Ok(true)
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, msg: Message) -> Result<()> {
        let now = self.now;
        self.note(format!("{now}\t{to}\trecv\t{from}\t{}", msg.name()));
        self.with_node(&to, |n, out| n.on_message(now, &from, msg, out))
    }

    /// Run every event due at or before `time`, then set the clock to it.
    pub fn run_until(&mut self, time: u64) -> Result<()> {
        while self.queue.peek().is_some_and(|e| e.time <= time) {
            self.step()?;
        }
        self.now = self.now.max(time);
        Ok(())
    }

    /// Run until only periodic housekeeping (timers, gossip, heartbeats,
    /// votes) remains.
    pub fn run_until_quiescent(&mut self) -> Result<()> {
        while self.foreground > 0 {
            self.step()?;
        }
        Ok(())
    }

    pub fn is_quiescent(&self) -> bool {
        self.foreground == 0
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    /// Number of trace lines produced, kept even when tracing is off.
    pub fn trace_len(&self) -> u64 {
        self.trace_len
    }

    pub fn trace_text(&self) -> String {
        let mut s = self.trace.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }

    pub fn network(&self) -> &SimNetwork {
        &self.network
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.slots
            .iter()
            .filter(|(_, s)| !s.removed)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn up_nodes(&self) -> Vec<NodeId> {
        self.slots
            .iter()
            .filter(|(_, s)| s.up && !s.removed)
            .map(|(id, _)| id.clone())
            .collect()
    }

    // ---- faults ----

    pub fn inject_fault(&mut self, fault: Fault) -> Result<()> {
        let targets: Vec<&NodeId> = match &fault {
            Fault::Crash(n) | Fault::Recover(n) => vec![n],
            Fault::Partition(groups) => groups.iter().flatten().collect(),
            Fault::Heal => Vec::new(),
        };
        if let Some(bad) = targets.into_iter().find(|t| !self.slots.contains_key(*t)) {
            return Err(ClusterError::UnknownTarget(bad.clone()));
        }
        self.note(format!("{}\t-\tfault\t{fault}", self.now));
        match &fault {
            Fault::Crash(id) => self.crash(id),
            Fault::Recover(id) => self.recover(id)?,
            _ => {}
        }
        self.network.apply(&fault);
        Ok(())
    }

    pub fn crash_node(&mut self, id: &NodeId) -> Result<()> {
        self.inject_fault(Fault::Crash(id.clone()))
    }

    pub fn recover_node(&mut self, id: &NodeId) -> Result<()> {
        self.inject_fault(Fault::Recover(id.clone()))
    }

    pub fn partition(&mut self, groups: &[&[&str]]) -> Result<()> {
        let groups = groups
            .iter()
            .map(|g| g.iter().map(|n| NodeId::from(*n)).collect())
            .collect();
        self.inject_fault(Fault::Partition(groups))
    }

    pub fn heal(&mut self) -> Result<()> {
        self.inject_fault(Fault::Heal)
    }

    fn crash(&mut self, id: &NodeId) {
        let slot = self.slots.get_mut(id).expect("checked");
        if !slot.up {
            return;
        }
        slot.up = false;
        slot.inbox.clear();
        slot.draining = false;
        let node = slot.node.take().expect("up node is present");
        let lost = node.pending_requests();
        match slot.dir {
            // Files stay on disk; reopening them is the recovery.
            Some(_) => drop(node),
            None => slot.parked = Some(node.into_store()),
        }
        let orphaned: Vec<ReqId> = self
            .inflight
            .iter()
            .filter(|(_, n)| *n == id)
            .map(|(r, _)| *r)
            .chain(lost)
            .collect();
        for req in orphaned {
            if !self.completed.contains_key(&req) {
                self.complete(id, req, Err(ReplicationError::Unavailable(id.clone())));
            }
        }
    }

    fn recover(&mut self, id: &NodeId) -> Result<()> {
        let slot = self.slots.get_mut(id).expect("checked");
        if slot.up || slot.removed {
            return Ok(());
        }
        let store = match (&slot.dir, slot.parked.take()) {
            (_, Some(store)) => store,
            (Some(dir), None) => {
                let options = match &self.config.storage {
                    StorageChoice::Log { options, .. } => *options,
                    StorageChoice::Memory => LogOptions::default(),
                };
                ReplicaStore::new(Box::new(LogBackend::open(dir, options)?))
                    .with_retention(self.config.retention)
            }
            (None, None) => return Err(ClusterError::Config(format!("no store for `{id}`"))),
        };
        let ring = self.reference_ring();
        let seed = self.seeds.next_u64();
        let node = Node::start(id.clone(), store, ring, self.settings.clone(), seed, self.now, true)?;
        let timers = node.initial_timers();
        let slot = self.slots.get_mut(id).expect("checked");
        slot.node = Some(node);
        slot.up = true;
        slot.incarnation += 1;
        slot.busy_until = self.now;
        for (delay, timer) in timers {
            self.push_timer(id, delay, timer);
        }
        Ok(())
    }

    /// The ring a restarting node falls back to when it has none saved: the
    /// newest one any node holds.
    fn reference_ring(&self) -> RingState {
        self.slots
            .values()
            .filter_map(|s| s.node.as_ref())
            .map(|n| n.membership.ring().clone())
            .max_by_key(|r| r.epoch)
            .unwrap_or_else(|| build_ring(&self.config.nodes, self.config.ring).expect("validated"))
    }

    // ---- membership changes ----

    /// Join a new node through `via`. The new ring is installed on both and
    /// spreads by gossip; returns the partitions the new node claimed.
    pub fn add_node(&mut self, node: PhysicalNode, via: &NodeId) -> Result<BTreeSet<u32>> {
        let current = self.ring_of(via)?.clone();
        let id = node.node_id.clone();
        let (ring, moved) = add_node(&current, node)?;
        self.spawn(id.clone(), ring.clone())?;
        let now = self.now;
        let targets: Vec<NodeId> = if self.config.gossip_enabled {
            vec![via.clone()]
        } else {
            self.up_nodes()
        };
        for t in targets {
            let r = ring.clone();
            self.with_node(&t, |n, out| n.install_ring(r, now, out))?;
        }
        Ok(moved)
    }

    /// Remove `id` from the ring: the leaving node hands its data to the new
    /// owners, then stops for good once that traffic settles.
    pub fn decommission(&mut self, id: &NodeId, via: &NodeId) -> Result<BTreeSet<u32>> {
        let current = self.ring_of(via)?.clone();
        let (ring, moved) = crate::hashring::remove_node(&current, id)?;
        let now = self.now;
        let mut targets = vec![id.clone(), via.clone()];
        if !self.config.gossip_enabled {
            targets = self.up_nodes();
        }
        for t in targets {
            let r = ring.clone();
            self.with_node(&t, |n, out| n.install_ring(r, now, out))?;
        }
        self.run_until_quiescent()?;
        self.crash(id);
        self.slots.get_mut(id).expect("known").removed = true;
        self.note(format!("{}\t{id}\tremoved", self.now));
        Ok(moved)
    }

    pub fn create_bucket(&mut self, bucket: BucketConfig) -> Result<()> {
        bucket.quorum.validate()?;
        self.settings.buckets.insert(bucket.name.clone(), bucket.clone());
        for slot in self.slots.values_mut() {
            if let Some(n) = slot.node.as_mut() {
                n.set_bucket(bucket.clone());
            }
        }
        Ok(())
    }

    pub fn bucket_config(&self, name: &str) -> BucketConfig {
        self.settings
            .buckets
            .get(name)
            .cloned()
            .unwrap_or_else(|| BucketConfig::new(name, self.settings.default_quorum))
    }

    // ---- clients ----

    /// Hand a request to `via`. The request crosses the network like any
    /// message; the reply is observed as soon as the node produces it.
    pub fn submit(&mut self, via: &NodeId, op: ClientOp) -> Result<ReqId> {
        if !self.slots.contains_key(via) {
            return Err(ClusterError::UnknownTarget(via.clone()));
        }
        let req = self.next_req;
        self.next_req += 1;
        if !self.is_up(via) {
            self.complete(via, req, Err(ReplicationError::Unavailable(via.clone())));
            return Ok(req);
        }
        self.inflight.insert(req, via.clone());
        let at = self.now + self.network.sample_client_delay();
        self.push(
            at,
            EventKind::Client {
                node: via.clone(),
                req,
                op,
            },
        );
        Ok(req)
    }

    pub fn poll(&mut self, req: ReqId) -> Option<std::result::Result<ClientReply, ReplicationError>> {
        self.completed.remove(&req)
    }

    pub fn is_done(&self, req: ReqId) -> bool {
        self.completed.contains_key(&req)
    }

    /// Drive the simulation until `req` completes.
    pub fn wait(&mut self, req: ReqId) -> Result<ClientReply> {
        loop {
            if let Some(result) = self.completed.remove(&req) {
                return Ok(result?);
            }
            if !self.step()? {
                return Err(ClusterError::Stalled(req));
            }
        }
    }

    fn call(&mut self, via: &NodeId, op: ClientOp) -> Result<ClientReply> {
        let req = self.submit(via, op)?;
        self.wait(req)
    }

    pub fn put(
        &mut self,
        via: &NodeId,
        bucket: &str,
        key: &[u8],
        value: &[u8],
        expected: &VectorClock,
    ) -> Result<VectorClock> {
        let op = ClientOp::Put {
            bucket: bucket.to_string(),
            key: key.to_vec(),
            value: value.to_vec(),
            expected: expected.clone(),
        };
        match self.call(via, op)? {
            ClientReply::Written(clock) => Ok(clock),
            _ => Err(ClusterError::UnexpectedReply(self.next_req - 1)),
        }
    }

    pub fn delete(
        &mut self,
        via: &NodeId,
        bucket: &str,
        key: &[u8],
        expected: &VectorClock,
    ) -> Result<VectorClock> {
        let op = ClientOp::Delete {
            bucket: bucket.to_string(),
            key: key.to_vec(),
            expected: expected.clone(),
        };
        match self.call(via, op)? {
            ClientReply::Written(clock) => Ok(clock),
            _ => Err(ClusterError::UnexpectedReply(self.next_req - 1)),
        }
    }

    fn read_op(&mut self, via: &NodeId, op: ClientOp) -> Result<ReadOutcome> {
        match self.call(via, op)? {
            ClientReply::Read(out) => Ok(out),
            _ => Err(ClusterError::UnexpectedReply(self.next_req - 1)),
        }
    }

    pub fn get(&mut self, via: &NodeId, bucket: &str, key: &[u8]) -> Result<ReadOutcome> {
        self.read_op(
            via,
            ClientOp::Get {
                bucket: bucket.to_string(),
                key: key.to_vec(),
            },
        )
    }

    /// Read a single replica without coordination.
    pub fn get_local(&mut self, node: &NodeId, bucket: &str, key: &[u8]) -> Result<ReadOutcome> {
        self.read_op(
            node,
            ClientOp::GetLocal {
                bucket: bucket.to_string(),
                key: key.to_vec(),
            },
        )
    }

    pub fn primary_get(&mut self, via: &NodeId, bucket: &str, key: &[u8]) -> Result<ReadOutcome> {
        self.read_op(
            via,
            ClientOp::PrimaryGet {
                bucket: bucket.to_string(),
                key: key.to_vec(),
            },
        )
    }

    /// Read-modify-write helper: read the current context, then overwrite.
    pub fn update(&mut self, via: &NodeId, bucket: &str, key: &[u8], value: &[u8]) -> Result<VectorClock> {
        let current = self.get(via, bucket, key)?;
        self.put(via, bucket, key, value, &current.context)
    }

    pub fn list_keys(&mut self, via: &NodeId, bucket: &str) -> Result<Vec<Vec<u8>>> {
        match self.call(
            via,
            ClientOp::ListKeys {
                bucket: bucket.to_string(),
            },
        )? {
            ClientReply::Keys(keys) => Ok(keys),
            _ => Err(ClusterError::UnexpectedReply(self.next_req - 1)),
        }
    }

    /// Reconcile `bucket` between `a` and `b` over the network. Returns how
    /// many key records crossed.
    pub fn anti_entropy(&mut self, a: &NodeId, b: &NodeId, bucket: &str) -> Result<usize> {
        match self.call(
            a,
            ClientOp::AntiEntropy {
                peer: b.clone(),
                bucket: bucket.to_string(),
            },
        )? {
            ClientReply::Synced(n) => Ok(n),
            _ => Err(ClusterError::UnexpectedReply(self.next_req - 1)),
        }
    }

    /// Every live node syncs every bucket with its successor in id order.
    /// Unreachable pairs are skipped. Returns records exchanged.
    pub fn anti_entropy_round(&mut self) -> Result<usize> {
        let up = self.up_nodes();
        if up.len() < 2 {
            return Ok(0);
        }
        let buckets = self.all_buckets();
        let mut total = 0;
        for (i, a) in up.iter().enumerate() {
            let b = &up[(i + 1) % up.len()];
            if !self.network.connected(a, b) {
                continue;
            }
            for bucket in &buckets {
                match self.anti_entropy(a, b, bucket) {
                    Ok(n) => total += n,
                    Err(ClusterError::Replication(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(total)
    }

    /// Anti-entropy rounds until a round moves nothing, then quiescence.
    /// Returns the number of rounds run.
    pub fn converge(&mut self, max_rounds: usize) -> Result<usize> {
        self.run_until_quiescent()?;
        for round in 1..=max_rounds {
            let moved = self.anti_entropy_round()?;
            self.run_until_quiescent()?;
            if moved == 0 {
                return Ok(round);
            }
        }
        Ok(max_rounds)
    }

    /// Read through `via` until the session guarantee holds, trying each
    /// replica in turn and backing off between passes.
    pub fn session_get(
        &mut self,
        session: &mut SessionState,
        via: &NodeId,
        bucket: &str,
        key: &[u8],
        max_attempts: usize,
    ) -> Result<ReadOutcome> {
        let mut replicas = self.replicas_of(via, bucket, key)?;
        if replicas.is_empty() {
            replicas.push(via.clone());
        }
        // The attached node goes first.
        if let Some(pos) = replicas.iter().position(|r| r == via) {
            replicas.rotate_left(pos);
        }
        let backoff = self.config.network.max_delay.max(1) * 2;
        for attempt in 0..max_attempts.max(1) {
            let target = replicas[attempt % replicas.len()].clone();
            if attempt > 0 && attempt % replicas.len() == 0 {
                let t = self.now + backoff;
                self.run_until(t)?;
            }
            let outcome = match self.get_local(&target, bucket, key) {
                Ok(o) => o,
                Err(ClusterError::Replication(_)) => continue,
                Err(e) => return Err(e),
            };
            if session.satisfied(bucket, key, via, &outcome.context) {
                session.record_read(bucket, key, &outcome.context);
                return Ok(outcome);
            }
        }
        Err(ReplicationError::GuaranteeTimeout {
            attempts: max_attempts.max(1),
        }
        .into())
    }

    /// Write within a session, remembering the new clock.
    pub fn session_put(
        &mut self,
        session: &mut SessionState,
        via: &NodeId,
        bucket: &str,
        key: &[u8],
        value: &[u8],
        expected: &VectorClock,
    ) -> Result<VectorClock> {
        let clock = self.put(via, bucket, key, value, expected)?;
        session.record_write(bucket, key, &clock);
        Ok(clock)
    }

    // ---- inspection (the harness looking at nodes from outside) ----

    fn node(&self, id: &NodeId) -> Result<&Node> {
        self.slots
            .get(id)
            .and_then(|s| s.node.as_ref())
            .ok_or_else(|| ClusterError::UnknownTarget(id.clone()))
    }

    pub fn ring_of(&self, id: &NodeId) -> Result<&RingState> {
        Ok(self.node(id)?.membership.ring())
    }

    pub fn membership_of(&self, id: &NodeId) -> Result<&MembershipView> {
        Ok(&self.node(id)?.membership)
    }

    pub fn liveness(&self, observer: &NodeId, peer: &NodeId) -> Result<Liveness> {
        Ok(self.node(observer)?.membership.liveness(peer, self.now))
    }

    pub fn store_of(&self, id: &NodeId) -> Result<&ReplicaStore> {
        match self.slots.get(id) {
            Some(Slot { node: Some(n), .. }) => Ok(&n.store),
            Some(Slot { parked: Some(s), .. }) => Ok(s),
            _ => Err(ClusterError::UnknownTarget(id.clone())),
        }
    }

    pub fn siblings_at(&self, id: &NodeId, bucket: &str, key: &[u8]) -> Result<Vec<VersionedValue>> {
        Ok(self.store_of(id)?.siblings(bucket, key)?)
    }

    pub fn replicas_of(&self, via: &NodeId, bucket: &str, key: &[u8]) -> Result<Vec<NodeId>> {
        if let Some(ls) = &self.settings.leader {
            return Ok(ls
                .members
                .iter()
                .filter(|m| !m.arbiter)
                .map(|m| m.node_id.clone())
                .collect());
        }
        let n = self.bucket_config(bucket).quorum.n;
        Ok(preference_list(bucket, key, self.ring_of(via)?, n).nodes)
    }

    pub fn role_of(&self, id: &NodeId) -> Option<Role> {
        self.node(id).ok()?.leader.as_ref().map(|l| l.role())
    }

    pub fn term_of(&self, id: &NodeId) -> Option<u64> {
        self.node(id).ok()?.leader.as_ref().map(|l| l.term())
    }

    /// Live nodes currently acting as primary.
    pub fn primaries(&self) -> Vec<NodeId> {
        self.slots
            .iter()
            .filter(|(_, s)| s.up)
            .filter_map(|(id, s)| {
                let l = s.node.as_ref()?.leader.as_ref()?;
                l.is_primary().then(|| id.clone())
            })
            .collect()
    }

    /// Every node that became primary, by term.
    pub fn primary_history(&self) -> &BTreeMap<u64, BTreeSet<NodeId>> {
        &self.primaries
    }

    /// Terms in which more than one node became primary.
    pub fn split_brain_terms(&self) -> Vec<u64> {
        self.primaries
            .iter()
            .filter(|(_, ids)| ids.len() > 1)
            .map(|(t, _)| *t)
            .collect()
    }

    fn all_buckets(&self) -> Vec<String> {
        let mut set = BTreeSet::new();
        for slot in self.slots.values() {
            if let Some(n) = &slot.node {
                set.extend(n.store.data_buckets());
            }
        }
        set.into_iter().collect()
    }

    /// Keys whose replicas disagree on the sibling set. In quorum mode the
    /// replicas are the preference list under the newest ring; in leader
    /// mode every data-bearing member.
    pub fn divergent_keys(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let ring = self.reference_ring();
        let mut bad = Vec::new();
        for bucket in self.all_buckets() {
            let mut keys = BTreeSet::new();
            for slot in self.slots.values().filter(|s| !s.removed) {
                if let Some(n) = &slot.node {
                    keys.extend(n.store.keys(&bucket)?);
                }
            }
            let n = self.bucket_config(&bucket).quorum.n;
            for key in keys {
                let replicas = match &self.settings.leader {
                    Some(_) => self.replicas_of(&NodeId::from(""), &bucket, &key)?,
                    None => preference_list(&bucket, &key, &ring, n).nodes,
                };
                let mut first: Option<Vec<String>> = None;
                for r in &replicas {
                    let mut clocks: Vec<String> = self
                        .siblings_at(r, &bucket, &key)?
                        .iter()
                        .map(|v| format!("{}{}", v.clock, if v.tombstone { "~" } else { "" }))
                        .collect();
                    clocks.sort();
                    match &first {
                        None => first = Some(clocks),
                        Some(f) if *f != clocks => {
                            bad.push((bucket.clone(), key.clone()));
                            break;
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        Ok(bad)
    }

    /// How many (key, replica) pairs have not yet seen the given
    /// acknowledged writes.
    pub fn pending_replication(&self, writes: &[(String, Vec<u8>, VectorClock)]) -> Result<usize> {
        let ring = self.reference_ring();
        let mut pending = 0;
        for (bucket, key, clock) in writes {
            let replicas = match &self.settings.leader {
                Some(_) => self.replicas_of(&NodeId::from(""), bucket, key)?,
                None => preference_list(bucket, key, &ring, self.bucket_config(bucket).quorum.n).nodes,
            };
            for r in replicas {
                let seen = self
                    .siblings_at(&r, bucket, key)?
                    .iter()
                    .any(|v| v.clock.descends(clock));
                if !seen {
                    pending += 1;
                }
            }
        }
        Ok(pending)
    }
}
