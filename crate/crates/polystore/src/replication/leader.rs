use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ReplicaStore, ReplicationError};
use crate::hashring::NodeId;
use crate::versioning::VersionedValue;

/// Groups larger than this need an operator to pick a primary.
pub const MAX_AUTO_FAILOVER_MEMBERS: usize = 12;
pub const DEFAULT_OPLOG_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("no voter majority reachable")]
    NoQuorum,
    #[error("{members} members exceed the automatic failover limit")]
    ManualFailoverRequired { members: usize },
}

/// Position in the operation log. Ordered by term, then index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpId {
    pub term: u64,
    pub index: u64,
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.term, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub node_id: NodeId,
    pub voter: bool,
    /// Votes but holds no data and never becomes primary.
    pub arbiter: bool,
}

impl Member {
    pub fn data(node_id: impl Into<NodeId>) -> Self {
        Member {
            node_id: node_id.into(),
            voter: true,
            arbiter: false,
        }
    }

    pub fn arbiter(node_id: impl Into<NodeId>) -> Self {
        Member {
            node_id: node_id.into(),
            voter: true,
            arbiter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaderGroup {
    pub members: Vec<Member>,
    pub primary: Option<NodeId>,
    pub term: u64,
}

impl LeaderGroup {
    pub fn new(members: Vec<Member>) -> Self {
        LeaderGroup {
            members,
            primary: None,
            term: 0,
        }
    }

    pub fn voter_count(&self) -> usize {
        self.members.iter().filter(|m| m.voter).count()
    }

    pub fn member(&self, id: &NodeId) -> Option<&Member> {
        self.members.iter().find(|m| &m.node_id == id)
    }
}

/// Pick a primary for the partition of the group that holds a strict voter
/// majority. A live primary inside that majority keeps its seat. Otherwise
/// the data-bearing member with the most recent operation wins, ties broken
/// by the larger node id, and the term advances.
pub fn elect_primary(
    group: &LeaderGroup,
    alive: &BTreeSet<NodeId>,
    connected: impl Fn(&NodeId, &NodeId) -> bool,
    last_ops: &BTreeMap<NodeId, OpId>,
) -> Result<LeaderGroup, ElectionError> {
    if group.members.len() > MAX_AUTO_FAILOVER_MEMBERS {
        return Err(ElectionError::ManualFailoverRequired {
            members: group.members.len(),
        });
    }
    let live: Vec<&Member> = group
        .members
        .iter()
        .filter(|m| alive.contains(&m.node_id))
        .collect();
    // Connected components by flood fill.
    let mut component = vec![usize::MAX; live.len()];
    let mut next = 0;
    for start in 0..live.len() {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..live.len() {
                if component[j] == usize::MAX && connected(&live[i].node_id, &live[j].node_id) {
                    component[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let voters = group.voter_count();
    let majority = (0..next).find(|&c| {
        let votes = live
            .iter()
            .zip(&component)
            .filter(|(m, &cc)| cc == c && m.voter)
            .count();
        votes * 2 > voters
    });
    let Some(c) = majority else {
        return Err(ElectionError::NoQuorum);
    };
    let side: Vec<&Member> = live
        .iter()
        .zip(&component)
        .filter(|(_, &cc)| cc == c)
        .map(|(m, _)| *m)
        .collect();
    if let Some(p) = &group.primary {
        if side.iter().any(|m| &m.node_id == p) {
            return Ok(group.clone());
        }
    }
    let winner = side
        .iter()
        .filter(|m| !m.arbiter)
        .max_by_key(|m| (last_ops.get(&m.node_id).copied().unwrap_or_default(), &m.node_id))
        .ok_or(ElectionError::NoQuorum)?;
    Ok(LeaderGroup {
        members: group.members.clone(),
        primary: Some(winner.node_id.clone()),
        term: group.term + 1,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OplogEntry {
    pub op: OpId,
    pub bucket: String,
    pub key: Vec<u8>,
    pub version: VersionedValue,
}

pub type Snapshot = BTreeMap<String, BTreeMap<Vec<u8>, Vec<VersionedValue>>>;

#[derive(Debug, Clone, PartialEq)]
pub enum LeaderMsg {
    Heartbeat { term: u64, last_op: OpId },
    HeartbeatAck { term: u64, synced: bool, applied: OpId },
    Append { term: u64, entries: Vec<OplogEntry> },
    SyncRequest { term: u64 },
    FullSync { term: u64, through: OpId, snapshot: Snapshot },
    RequestVote { term: u64, last_op: OpId },
    Vote { term: u64, granted: bool },
}

impl LeaderMsg {
    pub fn name(&self) -> &'static str {
        match self {
            LeaderMsg::Heartbeat { .. } => "Heartbeat",
            LeaderMsg::HeartbeatAck { .. } => "HeartbeatAck",
            LeaderMsg::Append { .. } => "Append",
            LeaderMsg::SyncRequest { .. } => "SyncRequest",
            LeaderMsg::FullSync { .. } => "FullSync",
            LeaderMsg::RequestVote { .. } => "RequestVote",
            LeaderMsg::Vote { .. } => "Vote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Primary,
    Secondary,
    Candidate,
    Arbiter,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Primary => "primary",
            Role::Secondary => "secondary",
            Role::Candidate => "candidate",
            Role::Arbiter => "arbiter",
        })
    }
}

/// Role changes worth recording in a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeaderEvent {
    BecamePrimary { term: u64 },
    SteppedDown { term: u64 },
    StartedElection { term: u64 },
}

#[derive(Serialize, Deserialize, Default)]
struct Durable {
    term: u64,
    voted_for: Option<NodeId>,
}

const DURABLE_KEY: &str = "election";

/// One member's view of the leader group, driven by messages and periodic
/// ticks. Term and vote survive restarts; everything else is volatile.
pub struct LeaderState {
    id: NodeId,
    members: Vec<Member>,
    period: u64,
    capacity: usize,
    term: u64,
    voted_for: Option<NodeId>,
    role: Role,
    primary_hint: Option<NodeId>,
    last_heard: u64,
    election_deadline: u64,
    votes: BTreeSet<NodeId>,
    last_op: OpId,
    /// Term of the primary whose state this secondary has copied.
    synced_term: u64,
    oplog: VecDeque<OplogEntry>,
    peer_acks: BTreeMap<NodeId, u64>,
}

impl LeaderState {
    /// A fresh member. `bootstrap_primary` starts out as primary of term 1 so a
    /// new group is writable without an election.
    pub fn new(
        id: NodeId,
        members: Vec<Member>,
        period: u64,
        capacity: usize,
        bootstrap_primary: Option<&NodeId>,
    ) -> Self {
        let arbiter = members.iter().any(|m| m.node_id == id && m.arbiter);
        let role = if arbiter {
            Role::Arbiter
        } else if bootstrap_primary == Some(&id) {
            Role::Primary
        } else {
            Role::Secondary
        };
        let mut state = LeaderState {
            id,
            members,
            period: period.max(1),
            capacity: capacity.max(1),
            term: 1,
            voted_for: None,
            role,
            primary_hint: bootstrap_primary.cloned(),
            last_heard: 0,
            election_deadline: 0,
            votes: BTreeSet::new(),
            last_op: OpId { term: 1, index: 0 },
            synced_term: 1,
            oplog: VecDeque::new(),
            peer_acks: BTreeMap::new(),
        };
        state.election_deadline = 3 * state.period;
        if state.role == Role::Primary {
            state.peer_acks = state.others().map(|m| (m.node_id.clone(), 0)).collect();
        }
        state
    }

    /// Rebuild after a crash: durable term and vote, everything else reset.
    /// The node rejoins as a secondary that must resync before voting for
    /// itself with any weight.
    pub fn recover(
        id: NodeId,
        members: Vec<Member>,
        period: u64,
        capacity: usize,
        store: &ReplicaStore,
        now: u64,
    ) -> Result<Self, ReplicationError> {
        let durable: Durable = store.get_meta(DURABLE_KEY)?.unwrap_or_default();
        let mut state = LeaderState::new(id, members, period, capacity, None);
        state.term = durable.term.max(1);
        state.voted_for = durable.voted_for;
        state.primary_hint = None;
        state.last_op = OpId::default();
        state.synced_term = 0;
        state.last_heard = now;
        state.election_deadline = now + 3 * state.period;
        Ok(state)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn term(&self) -> u64 {
        self.term
    }

    pub fn last_op(&self) -> OpId {
        self.last_op
    }

    pub fn primary_hint(&self) -> Option<&NodeId> {
        self.primary_hint.as_ref()
    }

    pub fn is_primary(&self) -> bool {
        self.role == Role::Primary
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    fn automatic_failover(&self) -> bool {
        self.members.len() <= MAX_AUTO_FAILOVER_MEMBERS
    }

    fn voter_count(&self) -> usize {
        self.members.iter().filter(|m| m.voter).count()
    }

    fn is_voter(&self, id: &NodeId) -> bool {
        self.members.iter().any(|m| &m.node_id == id && m.voter)
    }

    fn others(&self) -> impl Iterator<Item = &Member> {
        self.members.iter().filter(move |m| m.node_id != self.id)
    }

    fn persist(&self, store: &mut ReplicaStore) -> Result<(), ReplicationError> {
        store.put_meta(
            DURABLE_KEY,
            &Durable {
                term: self.term,
                voted_for: self.voted_for.clone(),
            },
        )
    }

    fn reset_deadline<R: Rng>(&mut self, now: u64, rng: &mut R) {
        let base = 3 * self.period;
        self.election_deadline = now + base + rng.gen_range(0..base);
    }

    fn step_down(&mut self, events: &mut Vec<LeaderEvent>) {
        if self.role == Role::Primary {
            events.push(LeaderEvent::SteppedDown { term: self.term });
        }
        if self.role != Role::Arbiter {
            self.role = Role::Secondary;
        }
        self.primary_hint = None;
        self.votes.clear();
    }

    fn adopt_term(&mut self, term: u64, events: &mut Vec<LeaderEvent>) {
        if term > self.term {
            self.term = term;
            self.voted_for = None;
            self.step_down(events);
        }
    }

    /// Periodic work: heartbeats and lease checks on the primary, election
    /// timeouts elsewhere.
    pub fn tick<R: Rng>(
        &mut self,
        now: u64,
        store: &mut ReplicaStore,
        rng: &mut R,
        out: &mut Vec<(NodeId, LeaderMsg)>,
        events: &mut Vec<LeaderEvent>,
    ) -> Result<(), ReplicationError> {
        match self.role {
            Role::Primary => {
                let lease = 3 * self.period;
                let fresh = self
                    .others()
                    .filter(|m| m.voter)
                    .filter(|m| {
                        self.peer_acks
                            .get(&m.node_id)
                            .is_some_and(|&t| t + lease >= now)
                    })
                    .count()
                    + usize::from(self.is_voter(&self.id));
                if fresh * 2 <= self.voter_count() {
                    self.step_down(events);
                    self.reset_deadline(now, rng);
                    return Ok(());
                }
                for m in self.others() {
                    out.push((
                        m.node_id.clone(),
                        LeaderMsg::Heartbeat {
                            term: self.term,
                            last_op: self.last_op,
                        },
                    ));
                }
            }
            Role::Secondary | Role::Candidate => {
                if self.automatic_failover() && now >= self.election_deadline {
                    self.term += 1;
                    self.voted_for = Some(self.id.clone());
                    self.role = Role::Candidate;
                    self.primary_hint = None;
                    self.votes = BTreeSet::from([self.id.clone()]);
                    self.persist(store)?;
                    events.push(LeaderEvent::StartedElection { term: self.term });
                    self.reset_deadline(now, rng);
                    for m in self.others().filter(|m| m.voter) {
                        out.push((
                            m.node_id.clone(),
                            LeaderMsg::RequestVote {
                                term: self.term,
                                last_op: self.last_op,
                            },
                        ));
                    }
                    self.maybe_win(now, out, events);
                }
            }
            Role::Arbiter => {}
        }
        Ok(())
    }

    fn maybe_win(&mut self, now: u64, out: &mut Vec<(NodeId, LeaderMsg)>, events: &mut Vec<LeaderEvent>) {
        if self.role != Role::Candidate || self.votes.len() * 2 <= self.voter_count() {
            return;
        }
        self.role = Role::Primary;
        self.primary_hint = Some(self.id.clone());
        self.synced_term = self.term;
        self.oplog.clear();
        self.peer_acks = self.others().map(|m| (m.node_id.clone(), now)).collect();
        events.push(LeaderEvent::BecamePrimary { term: self.term });
        for m in self.others() {
            out.push((
                m.node_id.clone(),
                LeaderMsg::Heartbeat {
                    term: self.term,
                    last_op: self.last_op,
                },
            ));
        }
    }

    /// Record a write the primary just applied locally and stream it to the
    /// data-bearing secondaries.
    pub fn append(
        &mut self,
        bucket: &str,
        key: &[u8],
        version: VersionedValue,
        out: &mut Vec<(NodeId, LeaderMsg)>,
    ) -> OpId {
        let op = OpId {
            term: self.term,
            index: self.last_op.index + 1,
        };
        self.last_op = op;
        let entry = OplogEntry {
            op,
            bucket: bucket.to_string(),
            key: key.to_vec(),
            version,
        };
        self.oplog.push_back(entry.clone());
        while self.oplog.len() > self.capacity {
            self.oplog.pop_front();
        }
        for m in self.others().filter(|m| !m.arbiter) {
            out.push((
                m.node_id.clone(),
                LeaderMsg::Append {
                    term: self.term,
                    entries: vec![entry.clone()],
                },
            ));
        }
        op
    }

    #[allow(clippy::too_many_arguments)]
    pub fn handle<R: Rng>(
        &mut self,
        now: u64,
        from: &NodeId,
        msg: LeaderMsg,
        store: &mut ReplicaStore,
        rng: &mut R,
        out: &mut Vec<(NodeId, LeaderMsg)>,
        events: &mut Vec<LeaderEvent>,
    ) -> Result<(), ReplicationError> {
        let before = (self.term, self.voted_for.clone());
        match msg {
            LeaderMsg::Heartbeat { term, .. } => {
                if term < self.term {
                    out.push((
                        from.clone(),
                        LeaderMsg::HeartbeatAck {
                            term: self.term,
                            synced: false,
                            applied: self.last_op,
                        },
                    ));
                } else {
                    self.adopt_term(term, events);
                    if self.role == Role::Candidate || self.role == Role::Primary {
                        self.step_down(events);
                    }
                    self.primary_hint = Some(from.clone());
                    self.last_heard = now;
                    self.reset_deadline(now, rng);
                    let is_data = self.role != Role::Arbiter;
                    if is_data && self.synced_term != term {
                        out.push((from.clone(), LeaderMsg::SyncRequest { term }));
                    } else {
                        out.push((
                            from.clone(),
                            LeaderMsg::HeartbeatAck {
                                term,
                                synced: true,
                                applied: self.last_op,
                            },
                        ));
                    }
                }
            }
            LeaderMsg::HeartbeatAck { term, synced, applied } => {
                if term > self.term {
                    self.adopt_term(term, events);
                    self.reset_deadline(now, rng);
                } else if self.role == Role::Primary && term == self.term {
                    self.peer_acks.insert(from.clone(), now);
                    let data = self.others().any(|m| &m.node_id == from && !m.arbiter);
                    if data && synced && applied < self.last_op {
                        let first = self.oplog.front().map(|e| e.op.index);
                        if first.is_some_and(|f| f <= applied.index + 1) {
                            let entries: Vec<OplogEntry> = self
                                .oplog
                                .iter()
                                .filter(|e| e.op.index > applied.index)
                                .cloned()
                                .collect();
                            out.push((from.clone(), LeaderMsg::Append { term, entries }));
                        } else {
                            self.send_full_sync(from, store, out)?;
                        }
                    }
                }
            }
            LeaderMsg::Append { term, entries } => {
                if term == self.term && self.synced_term == term && self.role == Role::Secondary {
                    for e in entries {
                        if e.op.index == self.last_op.index + 1 {
                            store.merge(&e.bucket, &e.key, std::slice::from_ref(&e.version))?;
                            self.last_op = e.op;
                        }
                    }
                }
            }
            LeaderMsg::SyncRequest { term } => {
                if self.role == Role::Primary && term == self.term {
                    self.send_full_sync(from, store, out)?;
                }
            }
            LeaderMsg::FullSync { term, through, snapshot } => {
                if term == self.term && self.role == Role::Secondary {
                    store.replace_all(&snapshot)?;
                    self.last_op = through;
                    self.synced_term = term;
                }
            }
            LeaderMsg::RequestVote { term, last_op } => {
                // A member still hearing from a live primary ignores
                // candidates instead of deposing it.
                let leader_alive = self.primary_hint.is_some()
                    && self.role != Role::Primary
                    && now < self.last_heard + 3 * self.period;
                if term > self.term && !leader_alive {
                    self.adopt_term(term, events);
                }
                let granted = term == self.term
                    && !leader_alive
                    && self.is_voter(&self.id)
                    && self.voted_for.as_ref().is_none_or(|v| v == from)
                    && last_op >= self.last_op;
                if granted {
                    self.voted_for = Some(from.clone());
                    self.reset_deadline(now, rng);
                }
                out.push((
                    from.clone(),
                    LeaderMsg::Vote {
                        term: self.term,
                        granted,
                    },
                ));
            }
            LeaderMsg::Vote { term, granted } => {
                if term > self.term {
                    self.adopt_term(term, events);
                    self.reset_deadline(now, rng);
                } else if term == self.term && granted && self.role == Role::Candidate {
                    self.votes.insert(from.clone());
                    self.maybe_win(now, out, events);
                }
            }
        }
        if (self.term, self.voted_for.clone()) != before {
            self.persist(store)?;
        }
        Ok(())
    }

    fn send_full_sync(
        &self,
        to: &NodeId,
        store: &ReplicaStore,
        out: &mut Vec<(NodeId, LeaderMsg)>,
    ) -> Result<(), ReplicationError> {
        out.push((
            to.clone(),
            LeaderMsg::FullSync {
                term: self.term,
                through: self.last_op,
                snapshot: store.snapshot()?,
            },
        ));
        Ok(())
    }
}
