use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hashring::{preference_list, NodeId, RingState};
use crate::replication::{
    digest_of, plan_exchange, BucketConfig, LeaderEvent, LeaderState, Member,
    QuorumConfig, ReadOutcome, ReadTracker, ReplicaStore, ReplicationError, WriteMode,
    WriteTracker,
};
use crate::versioning::{VectorClock, VersionedValue};

use super::membership::{GossipConfig, MembershipView};
use super::message::{ClientOp, ClientReply, KeyRecords, Message, ReqId};

const COUNTER_KEY: &str = "counter";
const RING_KEY: &str = "ring";

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Timer {
    Gossip,
    LeaderTick,
    Timeout(ReqId),
}

impl Timer {
    /// Periodic housekeeping that never counts as pending work.
    pub(crate) fn is_background(&self) -> bool {
        matches!(self, Timer::Gossip | Timer::LeaderTick)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LeaderSettings {
    pub members: Vec<Member>,
    pub period: u64,
    pub oplog_capacity: usize,
    pub bootstrap: Option<NodeId>,
}

/// Static configuration every node is started with.
#[derive(Debug, Clone)]
pub(crate) struct NodeSettings {
    pub request_timeout: u64,
    pub gossip: GossipConfig,
    pub gossip_enabled: bool,
    pub default_quorum: QuorumConfig,
    pub buckets: BTreeMap<String, BucketConfig>,
    pub leader: Option<LeaderSettings>,
}

/// Side effects of handling one event.
#[derive(Default)]
pub(crate) struct Outbox {
    pub sends: Vec<(NodeId, Message)>,
    pub timers: Vec<(u64, Timer)>,
    pub replies: Vec<(ReqId, Result<ClientReply, ReplicationError>)>,
    pub leader_events: Vec<LeaderEvent>,
}

impl Outbox {
    fn send(&mut self, to: &NodeId, msg: Message) {
        self.sends.push((to.clone(), msg));
    }

    fn reply(&mut self, req: ReqId, result: Result<ClientReply, ReplicationError>) {
        self.replies.push((req, result));
    }
}

enum Pending {
    Write(WriteTracker, VectorClock),
    Read(ReadTracker, String, Vec<u8>),
    Keys(BTreeSet<NodeId>, BTreeSet<Vec<u8>>),
    Sync(usize),
}

/// A node actor. It only touches its own state; everything else goes out
/// through the [`Outbox`].
pub(crate) struct Node {
    pub id: NodeId,
    pub store: ReplicaStore,
    pub membership: MembershipView,
    settings: NodeSettings,
    counter: u64,
    pending: BTreeMap<ReqId, Pending>,
    pub leader: Option<LeaderState>,
    rng: ChaCha8Rng,
}

impl Node {
    /// Start (or restart) a node over `store`. Durable metadata in the store
    /// wins over the supplied ring when it is newer.
    pub fn start(
        id: NodeId,
        store: ReplicaStore,
        ring: RingState,
        settings: NodeSettings,
        seed: u64,
        now: u64,
        restarted: bool,
    ) -> Result<Self, ReplicationError> {
        let counter = store.get_meta::<u64>(COUNTER_KEY)?.unwrap_or(0);
        let ring = match store.get_meta::<RingState>(RING_KEY)? {
            Some(saved) if saved.epoch >= ring.epoch => saved,
            _ => ring,
        };
        let membership = MembershipView::new(id.clone(), ring, settings.gossip, now);
        let leader = match &settings.leader {
            None => None,
            Some(ls) if restarted => Some(LeaderState::recover(
                id.clone(),
                ls.members.clone(),
                ls.period,
                ls.oplog_capacity,
                &store,
                now,
            )?),
            Some(ls) => Some(LeaderState::new(
                id.clone(),
                ls.members.clone(),
                ls.period,
                ls.oplog_capacity,
                ls.bootstrap.as_ref(),
            )),
        };
        Ok(Node {
            id,
            store,
            membership,
            settings,
            counter,
            pending: BTreeMap::new(),
            leader,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn into_store(self) -> ReplicaStore {
        self.store
    }

    /// Timers a freshly started node needs.
    pub fn initial_timers(&self) -> Vec<(u64, Timer)> {
        let mut timers = Vec::new();
        if self.settings.gossip_enabled {
            timers.push((self.settings.gossip.period, Timer::Gossip));
        }
        if let Some(ls) = &self.settings.leader {
            timers.push((ls.period, Timer::LeaderTick));
        }
        timers
    }

    pub fn pending_requests(&self) -> Vec<ReqId> {
        self.pending.keys().copied().collect()
    }

    pub fn set_bucket(&mut self, cfg: BucketConfig) {
        self.settings.buckets.insert(cfg.name.clone(), cfg);
    }

    pub fn bucket(&self, name: &str) -> BucketConfig {
        self.settings
            .buckets
            .get(name)
            .cloned()
            .unwrap_or_else(|| BucketConfig::new(name, self.settings.default_quorum))
    }

    fn replicas(&self, bucket: &str, key: &[u8]) -> Vec<NodeId> {
        let n = self.bucket(bucket).quorum.n;
        preference_list(bucket, key, self.membership.ring(), n).nodes
    }

    /// Clocks minted here are unique: the node's entry comes from a
    /// persisted counter that only grows.
    fn mint(&mut self, expected: &VectorClock) -> Result<VectorClock, ReplicationError> {
        let next = self.counter.max(expected.get(&self.id)) + 1;
        self.store.put_meta(COUNTER_KEY, &next)?;
        self.counter = next;
        let mut clock = expected.clone();
        clock.observe(&self.id, next);
        Ok(clock)
    }

    fn arm_timeout(&self, req: ReqId, out: &mut Outbox) {
        out.timers.push((self.settings.request_timeout, Timer::Timeout(req)));
    }

    pub fn on_client(&mut self, req: ReqId, op: ClientOp, out: &mut Outbox) {
        let result = match op {
            ClientOp::Put { bucket, key, value, expected } => {
                self.client_write(req, bucket, key, expected, Some(value), out)
            }
            ClientOp::Delete { bucket, key, expected } => {
                self.client_write(req, bucket, key, expected, None, out)
            }
            ClientOp::Get { bucket, key } if self.leader.is_none() => {
                self.client_read(req, bucket, key, out)
            }
            ClientOp::Get { bucket, key } | ClientOp::GetLocal { bucket, key } => self
                .store
                .siblings(&bucket, &key)
                .map(|v| Some(ClientReply::Read(ReadOutcome::from_versions(&v, 1)))),
            ClientOp::PrimaryGet { bucket, key } => self.require_primary().and_then(|_| {
                self.store
                    .siblings(&bucket, &key)
                    .map(|v| Some(ClientReply::Read(ReadOutcome::from_versions(&v, 1))))
            }),
            ClientOp::ListKeys { bucket } => self.client_keys(req, bucket, out),
            ClientOp::AntiEntropy { peer, bucket } => self.client_sync(req, peer, bucket, out),
        };
        match result {
            Ok(Some(reply)) => out.reply(req, Ok(reply)),
            Ok(None) => {}
            Err(e) => out.reply(req, Err(e)),
        }
    }

    fn require_primary(&self) -> Result<(), ReplicationError> {
        match &self.leader {
            Some(l) if l.is_primary() => Ok(()),
            Some(l) => match l.primary_hint() {
                Some(hint) => Err(ReplicationError::NotPrimary {
                    hint: Some(hint.clone()),
                }),
                None => Err(ReplicationError::NoPrimary),
            },
            None => Ok(()),
        }
    }

    fn client_write(
        &mut self,
        req: ReqId,
        bucket: String,
        key: Vec<u8>,
        expected: VectorClock,
        value: Option<Vec<u8>>,
        out: &mut Outbox,
    ) -> Result<Option<ClientReply>, ReplicationError> {
        if self.leader.is_some() {
            self.require_primary()?;
        }
        let clock = self.mint(&expected)?;
        let version = match value {
            Some(v) => VersionedValue::new(v, clock.clone()),
            None => VersionedValue::tombstone(clock.clone()),
        };
        if let Some(leader) = self.leader.as_mut() {
            self.store.apply_write(&bucket, &key, &expected, version.clone())?;
            let mut msgs = Vec::new();
            leader.append(&bucket, &key, version, &mut msgs);
            for (to, m) in msgs {
                out.send(&to, Message::Leader(m));
            }
            return Ok(Some(ClientReply::Written(clock)));
        }

        let cfg = self.bucket(&bucket);
        let targets = self.replicas(&bucket, &key);
        let needed = match cfg.write_mode {
            WriteMode::Sync => cfg.quorum.w,
            WriteMode::Async => 1,
        };
        let mut tracker = WriteTracker::new(targets.clone(), needed);
        let mut decided = None;
        for target in &targets {
            if target == &self.id {
                let accepted = match self.store.apply_write(&bucket, &key, &expected, version.clone()) {
                    Ok(()) => true,
                    Err(ReplicationError::StaleWrite(_)) => false,
                    Err(e) => return Err(e),
                };
                if let Some(d) = tracker.on_reply(&self.id, accepted) {
                    decided = Some(d);
                }
            } else {
                out.send(
                    target,
                    Message::ReplicaWrite {
                        req,
                        bucket: bucket.clone(),
                        key: key.clone(),
                        expected: expected.clone(),
                        version: version.clone(),
                    },
                );
            }
        }
        match decided {
            Some(result) => result.map(|_| Some(ClientReply::Written(clock))),
            None => {
                self.pending.insert(req, Pending::Write(tracker, clock));
                self.arm_timeout(req, out);
                Ok(None)
            }
        }
    }

    fn client_read(
        &mut self,
        req: ReqId,
        bucket: String,
        key: Vec<u8>,
        out: &mut Outbox,
    ) -> Result<Option<ClientReply>, ReplicationError> {
        let cfg = self.bucket(&bucket);
        let targets = self.replicas(&bucket, &key);
        let mut tracker = ReadTracker::new(targets.clone(), cfg.quorum.r);
        let mut answer = None;
        for target in &targets {
            if target == &self.id {
                let local = self.store.siblings(&bucket, &key)?;
                answer = tracker.on_reply(&self.id, local);
            } else {
                out.send(
                    target,
                    Message::ReplicaRead {
                        req,
                        bucket: bucket.clone(),
                        key: key.clone(),
                    },
                );
            }
        }
        if tracker.is_complete() {
            self.repair(&bucket, &key, &tracker, out)?;
        } else {
            self.pending.insert(req, Pending::Read(tracker, bucket, key));
            self.arm_timeout(req, out);
        }
        Ok(answer.map(ClientReply::Read))
    }

    fn repair(
        &mut self,
        bucket: &str,
        key: &[u8],
        tracker: &ReadTracker,
        out: &mut Outbox,
    ) -> Result<(), ReplicationError> {
        for (node, versions) in tracker.repairs() {
            if node == self.id {
                self.store.merge(bucket, key, &versions)?;
            } else {
                out.send(
                    &node,
                    Message::Repair {
                        bucket: bucket.to_string(),
                        key: key.to_vec(),
                        versions,
                    },
                );
            }
        }
        Ok(())
    }

    fn client_keys(
        &mut self,
        req: ReqId,
        bucket: String,
        out: &mut Outbox,
    ) -> Result<Option<ClientReply>, ReplicationError> {
        let keys: BTreeSet<Vec<u8>> = self.store.live_keys(&bucket)?.into_iter().collect();
        let waiting: BTreeSet<NodeId> = if self.leader.is_some() {
            BTreeSet::new()
        } else {
            self.membership
                .ring()
                .node_ids()
                .filter(|n| **n != self.id)
                .cloned()
                .collect()
        };
        if waiting.is_empty() {
            return Ok(Some(ClientReply::Keys(keys.into_iter().collect())));
        }
        for peer in &waiting {
            out.send(
                peer,
                Message::ListKeys {
                    req,
                    bucket: bucket.clone(),
                },
            );
        }
        self.pending.insert(req, Pending::Keys(waiting, keys));
        self.arm_timeout(req, out);
        Ok(None)
    }

    /// Keys of `bucket` whose replica set holds both this node and `peer`.
    fn shared_entries(
        &self,
        bucket: &str,
        peer: &NodeId,
    ) -> Result<BTreeMap<Vec<u8>, Vec<VersionedValue>>, ReplicationError> {
        let mut out = BTreeMap::new();
        for key in self.store.keys(bucket)? {
            let replicas = self.replicas(bucket, &key);
            if replicas.contains(&self.id) && replicas.contains(peer) {
                let sibs = self.store.siblings(bucket, &key)?;
                out.insert(key, sibs);
            }
        }
        Ok(out)
    }

    fn client_sync(
        &mut self,
        req: ReqId,
        peer: NodeId,
        bucket: String,
        out: &mut Outbox,
    ) -> Result<Option<ClientReply>, ReplicationError> {
        if peer == self.id {
            return Ok(Some(ClientReply::Synced(0)));
        }
        let entries = self.shared_entries(&bucket, &peer)?;
        out.send(
            &peer,
            Message::AeDigest {
                req,
                bucket,
                digest: digest_of(entries.iter()),
            },
        );
        self.pending.insert(req, Pending::Sync(0));
        self.arm_timeout(req, out);
        Ok(None)
    }

    pub fn on_timer(&mut self, now: u64, timer: Timer, out: &mut Outbox) -> Result<(), ReplicationError> {
        match timer {
            Timer::Gossip => {
                self.membership.tick(now);
                let digest = self.membership.digest();
                for peer in self.membership.pick_peers(&mut self.rng) {
                    out.send(
                        &peer,
                        Message::Gossip {
                            digest: digest.clone(),
                            reply: true,
                        },
                    );
                }
                out.timers.push((self.settings.gossip.period, Timer::Gossip));
            }
            Timer::LeaderTick => {
                if let Some(leader) = self.leader.as_mut() {
                    let mut msgs = Vec::new();
                    leader.tick(now, &mut self.store, &mut self.rng, &mut msgs, &mut out.leader_events)?;
                    for (to, m) in msgs {
                        out.send(&to, Message::Leader(m));
                    }
                    out.timers.push((leader_period(&self.settings), Timer::LeaderTick));
                }
            }
            Timer::Timeout(req) => match self.pending.remove(&req) {
                Some(Pending::Write(mut tracker, _)) => {
                    if let Some(Err(e)) = tracker.on_timeout() {
                        out.reply(req, Err(e));
                    }
                }
                Some(Pending::Read(mut tracker, bucket, key)) => {
                    if let Some(e) = tracker.on_timeout() {
                        out.reply(req, Err(e));
                    }
                    self.repair(&bucket, &key, &tracker, out)?;
                }
                Some(Pending::Keys(_, keys)) => {
                    out.reply(req, Ok(ClientReply::Keys(keys.into_iter().collect())));
                }
                Some(Pending::Sync(_)) => {
                    out.reply(req, Err(ReplicationError::QuorumUnreachable { needed: 1, got: 0 }));
                }
                None => {}
            },
        }
        Ok(())
    }

    pub fn on_message(
        &mut self,
        now: u64,
        from: &NodeId,
        msg: Message,
        out: &mut Outbox,
    ) -> Result<(), ReplicationError> {
        match msg {
            Message::Gossip { digest, reply } => {
                if reply {
                    out.send(
                        from,
                        Message::Gossip {
                            digest: self.membership.digest(),
                            reply: false,
                        },
                    );
                }
                if let Some(old) = self.membership.merge(&digest, now) {
                    self.on_ring_change(&old, out)?;
                }
            }
            Message::ReplicaWrite { req, bucket, key, expected, version } => {
                let accepted = self.store.apply_write(&bucket, &key, &expected, version).is_ok();
                out.send(from, Message::ReplicaWriteAck { req, accepted });
            }
            Message::ReplicaWriteAck { req, accepted } => {
                if let Some(Pending::Write(tracker, clock)) = self.pending.get_mut(&req) {
                    if let Some(result) = tracker.on_reply(from, accepted) {
                        let clock = clock.clone();
                        out.reply(req, result.map(|_| ClientReply::Written(clock)));
                        self.pending.remove(&req);
                    }
                }
            }
            Message::ReplicaRead { req, bucket, key } => {
                let versions = self.store.siblings(&bucket, &key)?;
                out.send(from, Message::ReplicaReadReply { req, versions });
            }
            Message::ReplicaReadReply { req, versions } => {
                if let Some(Pending::Read(tracker, _, _)) = self.pending.get_mut(&req) {
                    if let Some(outcome) = tracker.on_reply(from, versions) {
                        out.reply(req, Ok(ClientReply::Read(outcome)));
                    }
                    if tracker.is_complete() {
                        if let Some(Pending::Read(tracker, bucket, key)) = self.pending.remove(&req) {
                            self.repair(&bucket, &key, &tracker, out)?;
                        }
                    }
                }
            }
            Message::Repair { bucket, key, versions } => {
                self.store.merge(&bucket, &key, &versions)?;
            }
            Message::ListKeys { req, bucket } => {
                let keys = self.store.live_keys(&bucket)?;
                out.send(from, Message::ListKeysReply { req, keys });
            }
            Message::ListKeysReply { req, keys } => {
                if let Some(Pending::Keys(waiting, all)) = self.pending.get_mut(&req) {
                    waiting.remove(from);
                    all.extend(keys);
                    if waiting.is_empty() {
                        if let Some(Pending::Keys(_, all)) = self.pending.remove(&req) {
                            out.reply(req, Ok(ClientReply::Keys(all.into_iter().collect())));
                        }
                    }
                }
            }
            Message::AeDigest { req, bucket, digest } => {
                let local = self.shared_entries(&bucket, from)?;
                let plan = plan_exchange(&digest, &local);
                out.send(
                    from,
                    Message::AeReply {
                        req,
                        bucket,
                        send: plan.send,
                        want: plan.want,
                    },
                );
            }
            Message::AeReply { req, bucket, send, want } => {
                if !self.pending.contains_key(&req) {
                    return Ok(());
                }
                for (key, versions) in &send {
                    self.store.merge(&bucket, key, versions)?;
                }
                let mut records: KeyRecords = Vec::new();
                for key in want {
                    let sibs = self.store.siblings(&bucket, &key)?;
                    if !sibs.is_empty() {
                        records.push((key, sibs));
                    }
                }
                let exchanged = send.len() + records.len();
                if records.is_empty() {
                    self.pending.remove(&req);
                    out.reply(req, Ok(ClientReply::Synced(exchanged)));
                } else {
                    self.pending.insert(req, Pending::Sync(exchanged));
                    out.send(from, Message::AeRecords { req, bucket, records });
                }
            }
            Message::AeRecords { req, bucket, records } => {
                for (key, versions) in &records {
                    self.store.merge(&bucket, key, versions)?;
                }
                out.send(from, Message::AeDone { req });
            }
            Message::AeDone { req } => {
                if let Some(Pending::Sync(exchanged)) = self.pending.remove(&req) {
                    out.reply(req, Ok(ClientReply::Synced(exchanged)));
                }
            }
            Message::Handoff { bucket, records } => {
                for (key, versions) in &records {
                    self.store.merge(&bucket, key, versions)?;
                }
            }
            Message::Leader(m) => {
                if let Some(leader) = self.leader.as_mut() {
                    let mut msgs = Vec::new();
                    leader.handle(
                        now,
                        from,
                        m,
                        &mut self.store,
                        &mut self.rng,
                        &mut msgs,
                        &mut out.leader_events,
                    )?;
                    for (to, m) in msgs {
                        out.send(&to, Message::Leader(m));
                    }
                }
            }
        }
        Ok(())
    }

    /// Install an operator-decided ring and hand data to new replicas.
    pub fn install_ring(&mut self, ring: RingState, now: u64, out: &mut Outbox) -> Result<(), ReplicationError> {
        let old = self.membership.install_ring(ring, now);
        self.on_ring_change(&old, out)
    }

    /// Push every key this node held a replica of to nodes that became
    /// replicas under the new ring.
    fn on_ring_change(&mut self, old: &RingState, out: &mut Outbox) -> Result<(), ReplicationError> {
        self.store.put_meta(RING_KEY, self.membership.ring())?;
        for bucket in self.store.data_buckets() {
            let n = self.bucket(&bucket).quorum.n;
            let mut batches: BTreeMap<NodeId, KeyRecords> = BTreeMap::new();
            for key in self.store.keys(&bucket)? {
                let before = preference_list(&bucket, &key, old, n).nodes;
                if !before.contains(&self.id) {
                    continue;
                }
                let after = self.replicas(&bucket, &key);
                let fresh: Vec<&NodeId> = after
                    .iter()
                    .filter(|t| **t != self.id && !before.contains(t))
                    .collect();
                if fresh.is_empty() {
                    continue;
                }
                let sibs = self.store.siblings(&bucket, &key)?;
                for t in fresh {
                    batches.entry(t.clone()).or_default().push((key.clone(), sibs.clone()));
                }
            }
            for (to, records) in batches {
                out.send(
                    &to,
                    Message::Handoff {
                        bucket: bucket.clone(),
                        records,
                    },
                );
            }
        }
        Ok(())
    }
}

fn leader_period(settings: &NodeSettings) -> u64 {
    settings.leader.as_ref().map_or(5, |l| l.period)
}
