//! Plain-text scenario scripts for the simulator.
//!
//! ```text
//! # comments start with '#'
//! @nodes a b c
//! @seed 7
//! @mode quorum                 # or: leader
//! @bucket users 3 2 2 sync     # name n r w sync|async
//! @delay 1 5                   # min and max network delay
//! 0   put users alice v1 via=a
//! 10  crash b
//! 20  partition a,b|c
//! 30  !put users alice v2 via=c
//! 40  heal
//! 50  recover b
//! 60  sync
//! 70  expect users alice v1 via=a
//! 80  converged
//! ```
//!
//! The first token of a step is the virtual time it runs at. If the
//! simulation is already past that time (a blocking call ran long), the step
//! runs immediately. A leading `!` means the operation must fail.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::{Cluster, ClusterConfig, ClusterError, Fault, LeaderConfig, ReplicationMode};
use crate::hashring::NodeId;
use crate::replication::{BucketConfig, QuorumConfig, WriteMode};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Crash(NodeId),
    Recover(NodeId),
    Partition(Vec<BTreeSet<NodeId>>),
    Heal,
    /// Read-modify-write through `via`.
    Put { bucket: String, key: String, value: String, via: Option<NodeId> },
    Delete { bucket: String, key: String, via: Option<NodeId> },
    Get { bucket: String, key: String, via: Option<NodeId> },
    /// `value == None` expects the key to be absent.
    Expect { bucket: String, key: String, value: Option<String>, via: Option<NodeId> },
    /// Anti-entropy rounds until nothing moves.
    Sync,
    Quiesce,
    /// Every replica of every key holds the same sibling set.
    Converged,
    /// At most one primary per term so far.
    SinglePrimary,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let via = |v: &Option<NodeId>| v.as_ref().map(|n| format!(" via={n}")).unwrap_or_default();
        match self {
            Command::Crash(n) => write!(f, "crash {n}"),
            Command::Recover(n) => write!(f, "recover {n}"),
            Command::Partition(groups) => {
                let parts: Vec<String> = groups
                    .iter()
                    .map(|g| g.iter().map(NodeId::as_str).collect::<Vec<_>>().join(","))
                    .collect();
                write!(f, "partition {}", parts.join("|"))
            }
            Command::Heal => f.write_str("heal"),
            Command::Put { bucket, key, value, via: v } => write!(f, "put {bucket} {key} {value}{}", via(v)),
            Command::Delete { bucket, key, via: v } => write!(f, "delete {bucket} {key}{}", via(v)),
            Command::Get { bucket, key, via: v } => write!(f, "get {bucket} {key}{}", via(v)),
            Command::Expect { bucket, key, value, via: v } => write!(
                f,
                "expect {bucket} {key} {}{}",
                value.as_deref().unwrap_or("absent"),
                via(v)
            ),
            Command::Sync => f.write_str("sync"),
            Command::Quiesce => f.write_str("quiesce"),
            Command::Converged => f.write_str("converged"),
            Command::SinglePrimary => f.write_str("single-primary"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub at: u64,
    pub must_fail: bool,
    pub command: Command,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub nodes: Vec<String>,
    pub seed: u64,
    pub leader: bool,
    pub buckets: Vec<BucketConfig>,
    pub delay: (u64, u64),
    pub steps: Vec<Step>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            nodes: vec!["a".into(), "b".into(), "c".into()],
            seed: 0,
            leader: false,
            buckets: Vec::new(),
            delay: (1, 5),
            steps: Vec::new(),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T, ScenarioError> {
    tok.parse().map_err(|_| parse_err(line, format!("expected a number, got `{tok}`")))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut sc = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            if let Some(directive) = toks[0].strip_prefix('@') {
                sc.directive(line, directive, &toks[1..])?;
            } else {
                sc.steps.push(parse_step(line, &toks)?);
            }
        }
        Ok(sc)
    }

    fn directive(&mut self, line: usize, name: &str, args: &[&str]) -> Result<(), ScenarioError> {
        match (name, args) {
            ("nodes", names) if !names.is_empty() => {
                self.nodes = names.iter().map(|s| s.to_string()).collect();
            }
            ("seed", [s]) => self.seed = num(line, s)?,
            ("mode", ["quorum"]) => self.leader = false,
            ("mode", ["leader"]) => self.leader = true,
            ("bucket", [name, n, r, w, rest @ ..]) if rest.len() <= 1 => {
                let quorum = QuorumConfig::new(num(line, n)?, num(line, r)?, num(line, w)?)
                    .map_err(|e| parse_err(line, e.to_string()))?;
                let mode: WriteMode = match rest.first() {
                    Some(m) => m.parse().map_err(|e: crate::replication::ReplicationError| parse_err(line, e.to_string()))?,
                    None => WriteMode::Sync,
                };
                self.buckets.push(BucketConfig::new(*name, quorum).with_mode(mode));
            }
            ("delay", [lo, hi]) => {
                let (lo, hi) = (num(line, lo)?, num(line, hi)?);
                if lo == 0 || hi < lo {
                    return Err(parse_err(line, "delay needs 1 <= min <= max"));
                }
                self.delay = (lo, hi);
            }
            _ => return Err(parse_err(line, format!("bad directive `@{name}`"))),
        }
        Ok(())
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        let mut cfg = ClusterConfig::new(&self.nodes).with_seed(self.seed);
        cfg.network.min_delay = self.delay.0;
        cfg.network.max_delay = self.delay.1;
        cfg.network.client_max_delay = self.delay.1;
        for b in &self.buckets {
            cfg = cfg.with_bucket(b.clone());
        }
        if self.leader {
            cfg = cfg.with_mode(ReplicationMode::Leader(LeaderConfig::default()));
        }
        cfg
    }

    pub fn run(&self) -> Result<ScenarioReport, ScenarioError> {
        let mut cluster = Cluster::new(self.cluster_config())?;
        let mut report = ScenarioReport::default();
        let default_via = NodeId::from(self.nodes[0].as_str());
        for step in &self.steps {
            if step.at > cluster.now() {
                cluster.run_until(step.at)?;
            }
            let result = execute(&mut cluster, &step.command, &default_via)?;
            let line = match (result, step.must_fail) {
                (Outcome::Done(msg), false) => msg,
                (Outcome::Failed(msg), true) => format!("failed as expected: {msg}"),
                (Outcome::Done(msg), true) => {
                    report.failures.push(format!("line {}: `{}` should have failed", step.line, step.command));
                    format!("FAIL unexpected success: {msg}")
                }
                (Outcome::Failed(msg), false) => {
                    report.failures.push(format!("line {}: `{}`: {msg}", step.line, step.command));
                    format!("FAIL {msg}")
                }
                (Outcome::Error(msg), _) => format!("error: {msg}"),
            };
            report.steps.push(format!("{}\t{}\t{}", cluster.now(), step.command, line));
        }
        cluster.run_until_quiescent()?;
        report.trace = cluster.trace().to_vec();
        Ok(report)
    }
}

fn parse_step(line: usize, toks: &[&str]) -> Result<Step, ScenarioError> {
    if toks.len() < 2 {
        return Err(parse_err(line, "expected `<time> <command> ...`"));
    }
    let at = num(line, toks[0])?;
    let (must_fail, name) = match toks[1].strip_prefix('!') {
        Some(rest) => (true, rest),
        None => (false, toks[1]),
    };
    let mut args: Vec<&str> = Vec::new();
    let mut via = None;
    for t in &toks[2..] {
        match t.strip_prefix("via=") {
            Some(v) => via = Some(NodeId::from(v)),
            None => args.push(t),
        }
    }
    let s = |x: &str| x.to_string();
    let command = match (name, args.as_slice()) {
        ("crash", [n]) => Command::Crash(NodeId::from(*n)),
        ("recover", [n]) => Command::Recover(NodeId::from(*n)),
        ("partition", [groups]) => Command::Partition(
            groups
                .split('|')
                .map(|g| g.split(',').filter(|x| !x.is_empty()).map(NodeId::from).collect())
                .collect(),
        ),
        ("heal", []) => Command::Heal,
        ("put", [b, k, v]) => Command::Put { bucket: s(b), key: s(k), value: s(v), via },
        ("delete", [b, k]) => Command::Delete { bucket: s(b), key: s(k), via },
        ("get", [b, k]) => Command::Get { bucket: s(b), key: s(k), via },
        ("expect", [b, k, v]) => Command::Expect {
            bucket: s(b),
            key: s(k),
            value: (*v != "absent").then(|| s(v)),
            via,
        },
        ("sync", []) => Command::Sync,
        ("quiesce", []) => Command::Quiesce,
        ("converged", []) => Command::Converged,
        ("single-primary", []) => Command::SinglePrimary,
        _ => return Err(parse_err(line, format!("bad command `{}`", toks[1..].join(" ")))),
    };
    Ok(Step { at, must_fail, command, line })
}

enum Outcome {
    Done(String),
    /// The operation or assertion did not hold.
    Failed(String),
    /// A fault command could not be applied; reported but not an assertion.
    Error(String),
}

fn show(values: Vec<&[u8]>) -> String {
    if values.is_empty() {
        return "absent".into();
    }
    values
        .iter()
        .map(|v| String::from_utf8_lossy(v).into_owned())
        .collect::<Vec<_>>()
        .join(",")
}

fn execute(cluster: &mut Cluster, command: &Command, default_via: &NodeId) -> Result<Outcome, ScenarioError> {
    // Client-visible failures become outcomes; harness failures abort the run.
    fn client<T>(r: Result<T, ClusterError>, ok: impl FnOnce(T) -> Outcome) -> Result<Outcome, ScenarioError> {
        match r {
            Ok(v) => Ok(ok(v)),
            Err(ClusterError::Replication(e)) => Ok(Outcome::Failed(e.to_string())),
            Err(e @ ClusterError::UnknownTarget(_)) => Ok(Outcome::Error(e.to_string())),
            Err(e) => Err(e.into()),
        }
    }
    let via_or = |v: &Option<NodeId>| v.clone().unwrap_or_else(|| default_via.clone());
    match command {
        Command::Crash(n) => client(cluster.inject_fault(Fault::Crash(n.clone())), |_| Outcome::Done("ok".into())),
        Command::Recover(n) => client(cluster.inject_fault(Fault::Recover(n.clone())), |_| Outcome::Done("ok".into())),
        Command::Partition(g) => client(cluster.inject_fault(Fault::Partition(g.clone())), |_| Outcome::Done("ok".into())),
        Command::Heal => client(cluster.heal(), |_| Outcome::Done("ok".into())),
        Command::Put { bucket, key, value, via } => client(
            cluster.update(&via_or(via), bucket, key.as_bytes(), value.as_bytes()),
            |clock| Outcome::Done(format!("written {clock}")),
        ),
        Command::Delete { bucket, key, via } => {
            let via = via_or(via);
            let ctx = match cluster.get(&via, bucket, key.as_bytes()) {
                Ok(r) => r.context,
                Err(e) => return client(Err::<(), _>(e), |_| unreachable!()),
            };
            client(cluster.delete(&via, bucket, key.as_bytes(), &ctx), |clock| {
                Outcome::Done(format!("deleted {clock}"))
            })
        }
        Command::Get { bucket, key, via } => client(cluster.get(&via_or(via), bucket, key.as_bytes()), |r| {
            Outcome::Done(format!("read {} {}", show(r.values()), r.context))
        }),
        Command::Expect { bucket, key, value, via } => {
            client(cluster.get(&via_or(via), bucket, key.as_bytes()), |r| {
                let got = show(r.values());
                let want = value.clone().unwrap_or_else(|| "absent".into());
                if got == want {
                    Outcome::Done(format!("read {got}"))
                } else {
                    Outcome::Failed(format!("expected {want}, read {got}"))
                }
            })
        }
        Command::Sync => {
            let rounds = cluster.converge(cluster.node_ids().len().max(2) * 2)?;
            Ok(Outcome::Done(format!("{rounds} rounds")))
        }
        Command::Quiesce => {
            cluster.run_until_quiescent()?;
            Ok(Outcome::Done("ok".into()))
        }
        Command::Converged => {
            let divergent = cluster.divergent_keys()?;
            if divergent.is_empty() {
                Ok(Outcome::Done("converged".into()))
            } else {
                let keys: Vec<String> = divergent
                    .iter()
                    .map(|(b, k)| format!("{b}/{}", String::from_utf8_lossy(k)))
                    .collect();
                Ok(Outcome::Failed(format!("divergent: {}", keys.join(" "))))
            }
        }
        Command::SinglePrimary => {
            let bad = cluster.split_brain_terms();
            if bad.is_empty() {
                Ok(Outcome::Done(format!(
                    "primaries {}",
                    cluster.primaries().iter().map(NodeId::as_str).collect::<Vec<_>>().join(",")
                )))
            } else {
                Ok(Outcome::Failed(format!("several primaries in terms {bad:?}")))
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioReport {
    /// One line per step: time, command, outcome.
    pub steps: Vec<String>,
    pub failures: Vec<String>,
    pub trace: Vec<String>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}
