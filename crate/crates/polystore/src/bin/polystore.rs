use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polystore::bench::{bench_cluster, read_back, run_bench, write_csv, Layer, Policy, WorkloadSpec};
use polystore::cluster::scenario::{Scenario, ScenarioError};
use polystore::cluster::{Cluster, ClusterConfig, ClusterError, LeaderConfig, ReplicationMode, StorageChoice};
use polystore::hashring::{build_ring, NodeId, PhysicalNode, RingConfig};
use polystore::replication::{BucketConfig, QuorumConfig, ReplicaStore, SessionGuarantee, SessionState};
use polystore::storage::{dump_records, LogBackend, LogOptions};

#[derive(Parser)]
#[command(name = "polystore", version, about = "Multi-model store on a simulated cluster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bulk-insert workloads.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Scripted fault scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Partition ownership of a ring.
    Ring {
        #[command(subcommand)]
        action: RingAction,
    },
    /// Contents of a data directory written by `put`.
    Store {
        #[command(subcommand)]
        action: StoreAction,
    },
    /// Write a value through a log-backed cluster in `--dir`.
    Put(PutArgs),
    /// Read a value through a log-backed cluster in `--dir`.
    Get(GetArgs),
}

#[derive(Subcommand)]
enum BenchAction {
    Run {
        #[arg(long, value_parser = ["doc", "kv", "cf", "graph"])]
        layer: String,
        #[arg(long, default_value_t = 10_000)]
        records: usize,
        #[arg(long, default_value_t = 1)]
        writers: usize,
        #[arg(long, default_value = "single", value_parser = ["single", "balanced"])]
        policy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    Run {
        file: PathBuf,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RingAction {
    Dump {
        /// Comma-separated node ids, each optionally `id:weight`.
        #[arg(long, default_value = "node1,node2,node3")]
        nodes: String,
        #[arg(long, default_value_t = 64)]
        partitions: u32,
        #[arg(long, default_value_t = 3)]
        vnodes: u32,
    },
}

#[derive(Subcommand)]
enum StoreAction {
    Dump {
        #[arg(long, default_value = "polystore-data")]
        dir: PathBuf,
        /// Print raw log records instead of decoded versions.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Args, Clone)]
struct Target {
    #[arg(long, default_value = "polystore-data")]
    dir: PathBuf,
    #[arg(long, default_value = "node1,node2,node3")]
    nodes: String,
    /// Node the client talks to. Defaults to the first node.
    #[arg(long)]
    via: Option<String>,
    #[arg(long)]
    bucket: String,
    #[arg(long)]
    key: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    r: usize,
    #[arg(long, default_value_t = 2)]
    w: usize,
    #[arg(long, default_value = "quorum", value_parser = ["quorum", "leader"])]
    mode: String,
    /// none, ryow, causal, monotonic or session:<node>. Session state is
    /// kept in the data directory between invocations.
    #[arg(long, default_value = "none")]
    session_guarantee: String,
}

#[derive(Args)]
struct PutArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long)]
    value: String,
}

#[derive(Args)]
struct GetArgs {
    #[command(flatten)]
    target: Target,
    /// Exit with status 1 unless the read returns exactly this value
    /// (`absent` for a missing key).
    #[arg(long)]
    expect: Option<String>,
}

enum Failure {
    Assertion(String),
    Usage(String),
}

impl From<ClusterError> for Failure {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Config(_) | ClusterError::UnknownTarget(_) => Failure::Usage(e.to_string()),
            e => Failure::Assertion(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn parse_nodes(spec: &str) -> Result<Vec<PhysicalNode>, Failure> {
    spec.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| match s.split_once(':') {
            Some((id, w)) => w
                .parse()
                .map(|w| PhysicalNode::weighted(id, w))
                .map_err(|_| usage(format!("bad weight in `{s}`"))),
            None => Ok(PhysicalNode::new(s)),
        })
        .collect()
}

fn bench(layer: &str, records: usize, writers: usize, policy: &str, seed: u64, out: Option<&Path>) -> Outcome {
    let layer: Layer = layer.parse().map_err(usage)?;
    let policy: Policy = policy.parse().map_err(usage)?;
    let spec = WorkloadSpec::new(layer, records, writers, policy, seed);
    spec.validate().map_err(usage)?;
    let mut cluster = bench_cluster(seed).map_err(|e| Failure::Assertion(e.to_string()))?;
    let result = run_bench(&spec, &mut cluster).map_err(|e| Failure::Assertion(e.to_string()))?;
    let via = cluster.node_ids()[0].clone();
    let found = read_back(&mut cluster, &result, &via).map_err(|e| Failure::Assertion(e.to_string()))?;
    println!("{}", polystore::bench::CSV_HEADER);
    println!("{}", result.csv_row());
    if let Some(path) = out {
        write_csv(std::slice::from_ref(&result), path).map_err(|e| Failure::Assertion(e.to_string()))?;
    }
    let split: Vec<String> = result.writers_per_node.iter().map(|(n, w)| format!("{n}={w}")).collect();
    eprintln!(
        "read back {found}/{} acknowledged records; writers per node {}",
        result.acked.len(),
        split.join(" ")
    );
    if found != result.acked.len() {
        return Err(Failure::Assertion("read-back incomplete".into()));
    }
    Ok(())
}

fn scenario(file: &Path, trace: Option<&Path>) -> Outcome {
    let sc = Scenario::load(file).map_err(|e| match e {
        ScenarioError::Parse { .. } | ScenarioError::Io(_) => usage(e),
        e => Failure::Assertion(e.to_string()),
    })?;
    let report = sc.run().map_err(|e| Failure::Assertion(e.to_string()))?;
    for line in &report.steps {
        println!("{line}");
    }
    if let Some(path) = trace {
        let mut text = report.trace.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Failure::Assertion(e.to_string()))?;
    }
    if report.passed() {
        println!("ok: {} steps", report.steps.len());
        Ok(())
    } else {
        Err(Failure::Assertion(report.failures.join("\n")))
    }
}

fn ring_dump(nodes: &str, partitions: u32, vnodes: u32) -> Outcome {
    let config = RingConfig {
        partition_count: partitions,
        vnodes_per_unit_capacity: vnodes,
        ..RingConfig::default()
    };
    let ring = build_ring(&parse_nodes(nodes)?, config).map_err(usage)?;
    let mut out = String::from("partition\tnode\tvnode\n");
    for (p, owner) in ring.assignment().iter().enumerate() {
        out += &format!("{p}\t{}\t{}\n", owner.node_id, owner.vnode);
    }
    for (node, count) in ring.partition_counts() {
        let per_vnode: Vec<String> = ring.vnode_counts(&node).iter().map(usize::to_string).collect();
        out += &format!("# {node}: {count} partitions, vnodes {}\n", per_vnode.join(" "));
    }
    emit(&out);
    Ok(())
}

fn store_dump(dir: &Path, raw: bool) -> Outcome {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut out = String::new();
    for node_dir in entries {
        let node = node_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let backend = LogBackend::open(&node_dir, LogOptions::default()).map_err(|e| Failure::Assertion(e.to_string()))?;
        if raw {
            let records = backend.records().map_err(|e| Failure::Assertion(e.to_string()))?;
            for line in dump_records(&records).lines() {
                out += &format!("{node}\t{line}\n");
            }
            continue;
        }
        let store = ReplicaStore::new(Box::new(backend));
        let snapshot = store.snapshot().map_err(|e| Failure::Assertion(e.to_string()))?;
        for (bucket, keys) in snapshot {
            for (key, siblings) in keys {
                for v in siblings {
                    let value = if v.tombstone {
                        "<deleted>".to_string()
                    } else {
                        String::from_utf8_lossy(&v.value).into_owned()
                    };
                    out += &format!("{node}\t{bucket}\t{}\t{value}\t{}\n", key.escape_ascii(), v.clock);
                }
            }
        }
    }
    emit(&out);
    Ok(())
}

/// Print without panicking when the reader goes away (`| head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

struct Opened {
    cluster: Cluster,
    via: NodeId,
    session: SessionState,
    session_path: PathBuf,
}

fn open(t: &Target) -> Result<Opened, Failure> {
    let nodes = parse_nodes(&t.nodes)?;
    if nodes.is_empty() {
        return Err(usage("no nodes"));
    }
    let quorum = QuorumConfig::new(t.n, t.r, t.w).map_err(usage)?;
    let guarantee: SessionGuarantee = t.session_guarantee.parse().map_err(usage)?;
    let mut cfg = ClusterConfig::new(&[] as &[&str]).with_bucket(BucketConfig::new(t.bucket.clone(), quorum));
    cfg.nodes = nodes;
    cfg.gossip_enabled = false;
    cfg.storage = StorageChoice::Log {
        root: t.dir.clone(),
        options: LogOptions::default(),
    };
    if t.mode == "leader" {
        cfg = cfg.with_mode(ReplicationMode::Leader(LeaderConfig::default()));
    }
    std::fs::create_dir_all(&t.dir).map_err(|e| usage(format!("{}: {e}", t.dir.display())))?;
    let cluster = Cluster::new(cfg)?;
    let via = t
        .via
        .as_deref()
        .map(NodeId::from)
        .unwrap_or_else(|| cluster.node_ids()[0].clone());
    let session_path = t.dir.join("session.bin");
    let mut session: SessionState = std::fs::read(&session_path)
        .ok()
        .and_then(|b| bincode::deserialize(&b).ok())
        .unwrap_or_default();
    session.guarantee = guarantee;
    Ok(Opened {
        cluster,
        via,
        session,
        session_path,
    })
}

fn save_session(o: &Opened) -> Outcome {
    let bytes = bincode::serialize(&o.session).map_err(|e| Failure::Assertion(e.to_string()))?;
    std::fs::write(&o.session_path, bytes).map_err(|e| Failure::Assertion(e.to_string()))
}

const SESSION_ATTEMPTS: usize = 12;

fn put(args: &PutArgs) -> Outcome {
    let t = &args.target;
    let mut o = open(t)?;
    let key = t.key.as_bytes();
    let current = o.cluster.session_get(&mut o.session, &o.via, &t.bucket, key, SESSION_ATTEMPTS)?;
    let clock = o
        .cluster
        .session_put(&mut o.session, &o.via, &t.bucket, key, args.value.as_bytes(), &current.context)?;
    o.cluster.run_until_quiescent()?;
    save_session(&o)?;
    println!("written {clock}");
    Ok(())
}

fn get(args: &GetArgs) -> Outcome {
    let t = &args.target;
    let mut o = open(t)?;
    let key = t.key.as_bytes();
    let read = if o.session.guarantee == SessionGuarantee::None {
        o.cluster.get(&o.via, &t.bucket, key)?
    } else {
        o.cluster.session_get(&mut o.session, &o.via, &t.bucket, key, SESSION_ATTEMPTS)?
    };
    o.cluster.run_until_quiescent()?;
    save_session(&o)?;
    let values: Vec<String> = read.values().iter().map(|v| String::from_utf8_lossy(v).into_owned()).collect();
    if values.is_empty() {
        println!("absent");
    }
    for v in &values {
        println!("{v}");
    }
    println!("context {}", read.context);
    if let Some(want) = &args.expect {
        let got = if values.is_empty() { "absent".to_string() } else { values.join(",") };
        if &got != want {
            return Err(Failure::Assertion(format!("expected {want}, read {got}")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Bench {
            action: BenchAction::Run {
                layer,
                records,
                writers,
                policy,
                seed,
                out,
            },
        } => bench(layer, *records, *writers, policy, *seed, out.as_deref()),
        Command::Scenario {
            action: ScenarioAction::Run { file, trace },
        } => scenario(file, trace.as_deref()),
        Command::Ring {
            action: RingAction::Dump {
                nodes,
                partitions,
                vnodes,
            },
        } => ring_dump(nodes, *partitions, *vnodes),
        Command::Store {
            action: StoreAction::Dump { dir, raw },
        } => store_dump(dir, *raw),
        Command::Put(args) => put(args),
        Command::Get(args) => get(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
