//! Bulk-insert workloads against the simulated cluster.
//!
//! Each writer is a closed-loop client with one request in flight. Records
//! are dealt round-robin to writers, writers round-robin to target nodes
//! under the balanced policy. Wall-clock figures are informational only;
//! the simulated cluster has no real hardware behind it.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::distributions::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::cluster::{ClientOp, Cluster, ClusterConfig, ClusterError, ReqId};
use crate::datamodels::{
    encode_document, encode_node, encode_row, CellValue, ColumnFamilies, ColumnType, DataModelError, Documents,
    Graph, Properties, TableSchema,
};
use crate::hashring::NodeId;
use crate::replication::{BucketConfig, ReplicationError, WriteMode};
use crate::versioning::VectorClock;

pub const CSV_HEADER: &str = "layer,records,writers,policy,wall_ms,ops_per_sec,errors,lag";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    DataModel(#[from] DataModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Layer {
    Doc,
    Kv,
    Cf,
    Graph,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Doc, Layer::Kv, Layer::Cf, Layer::Graph];
}

impl FromStr for Layer {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "doc" => Ok(Layer::Doc),
            "kv" => Ok(Layer::Kv),
            "cf" => Ok(Layer::Cf),
            "graph" => Ok(Layer::Graph),
            other => Err(BenchError::InvalidSpec(format!("unknown layer `{other}`"))),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Doc => "doc",
            Layer::Kv => "kv",
            Layer::Cf => "cf",
            Layer::Graph => "graph",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Every writer talks to the first node.
    Single,
    /// Writer `i` talks to node `i mod nodes`.
    Balanced,
}

impl FromStr for Policy {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Policy::Single),
            "balanced" => Ok(Policy::Balanced),
            other => Err(BenchError::InvalidSpec(format!("unknown policy `{other}`"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Single => "single",
            Policy::Balanced => "balanced",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub layer: Layer,
    pub records: usize,
    pub writers: usize,
    pub policy: Policy,
    pub value_size: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(layer: Layer, records: usize, writers: usize, policy: Policy, seed: u64) -> Self {
        WorkloadSpec {
            layer,
            records,
            writers,
            policy,
            value_size: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.records == 0 || self.writers == 0 {
            return Err(BenchError::InvalidSpec("records and writers must be at least 1".into()));
        }
        Ok(())
    }
}

/// One acknowledged insert, kept for read-back.
#[derive(Debug, Clone)]
pub struct Acked {
    pub bucket: String,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub clock: VectorClock,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub spec: WorkloadSpec,
    pub wall_ms: u128,
    /// Simulated ticks from the first submit to the last acknowledgment.
    pub sim_ticks: u64,
    pub per_writer: Vec<u64>,
    /// How many writers each node served.
    pub writers_per_node: BTreeMap<NodeId, usize>,
    pub errors: u64,
    /// (replica, key) pairs still missing an acknowledged write when the
    /// last writer finished.
    pub lag: usize,
    pub acked: Vec<Acked>,
}

impl BenchResult {
    pub fn ops_per_sec(&self) -> f64 {
        let secs = (self.wall_ms as f64 / 1000.0).max(1e-3);
        self.acked.len() as f64 / secs
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.1},{},{}",
            self.spec.layer,
            self.spec.records,
            self.spec.writers,
            self.spec.policy,
            self.wall_ms,
            self.ops_per_sec(),
            self.errors,
            self.lag
        )
    }
}

/// The cluster the bench runs against by default: three nodes whose
/// replica traffic queues at the receiver.
pub fn bench_cluster(seed: u64) -> Result<Cluster, BenchError> {
    let mut cfg = ClusterConfig::new(&["node1", "node2", "node3"]).with_seed(seed);
    cfg.gossip_enabled = false;
    cfg.trace = false;
    cfg.network.service_ticks = 4;
    cfg.request_timeout = 1_000_000;
    Ok(Cluster::new(cfg)?)
}

/// Target node of every writer.
pub fn assign_writers(nodes: &[NodeId], writers: usize, policy: Policy) -> Vec<NodeId> {
    (0..writers)
        .map(|i| match policy {
            Policy::Single => nodes[0].clone(),
            Policy::Balanced => nodes[i % nodes.len()].clone(),
        })
        .collect()
}

fn text(rng: &mut ChaCha8Rng, len: usize) -> String {
    rng.sample_iter(&Alphanumeric).take(len).map(char::from).collect()
}

/// Bucket, key and bytes of synthetic record `i`, as the layer stores it.
pub fn encode_record(layer: Layer, seed: u64, i: usize, value_size: usize) -> (String, Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let name = text(&mut rng, 8);
    let payload = text(&mut rng, value_size);
    let amount: i64 = rng.gen_range(1_000..100_000);
    match layer {
        Layer::Kv => (KV_BUCKET.to_string(), format!("k{i}").into_bytes(), payload.into_bytes()),
        Layer::Doc => {
            let doc = json!({"_id": i, "nome": name, "dati": payload, "prezzo": amount});
            let (id, bytes) = encode_document(&doc).expect("document has an id");
            (Documents::new(BENCH_DB, "").bucket(BENCH_TABLE), id.into_bytes(), bytes)
        }
        Layer::Cf => {
            let families = BTreeMap::from([(
                "default".to_string(),
                BTreeMap::from([
                    ("nome".to_string(), CellValue::Text(name)),
                    ("dati".to_string(), CellValue::Text(payload)),
                    ("prezzo".to_string(), CellValue::Int(amount)),
                ]),
            )]);
            (
                ColumnFamilies::table_bucket(BENCH_DB, BENCH_TABLE),
                i.to_string().into_bytes(),
                encode_row(&families),
            )
        }
        Layer::Graph => {
            let props: Properties = [
                ("nome".to_string(), json!(name)),
                ("dati".to_string(), json!(payload)),
                ("prezzo".to_string(), json!(amount)),
            ]
            .into_iter()
            .collect();
            let (key, bytes) = encode_node(&format!("{BENCH_TABLE}/{i}"), &props);
            (Graph::BUCKET.to_string(), key.into_bytes(), bytes)
        }
    }
}

const KV_BUCKET: &str = "bench";
const BENCH_DB: &str = "bench";
const BENCH_TABLE: &str = "records";

/// Create whatever the layer needs before inserts (collection, keyspace,
/// table) and switch its bucket to asynchronous replication.
fn prepare(cluster: &mut Cluster, layer: Layer, via: &NodeId) -> Result<String, BenchError> {
    let bucket = encode_record(layer, 0, 0, 1).0;
    match layer {
        Layer::Doc => Documents::new(BENCH_DB, via.clone()).create_collection(cluster, BENCH_TABLE)?,
        Layer::Cf => {
            let cf = ColumnFamilies::new(via.clone());
            if cf.keyspace(cluster, BENCH_DB).is_err() {
                cf.create_keyspace(cluster, BENCH_DB, 3)?;
            }
            if !cf.keyspace(cluster, BENCH_DB)?.tables.contains_key(BENCH_TABLE) {
                let table = TableSchema::new(BENCH_TABLE, "id", ColumnType::Int)
                    .column("nome", ColumnType::Text)
                    .column("dati", ColumnType::Text)
                    .column("prezzo", ColumnType::Int);
                cf.create_table(cluster, BENCH_DB, table)?;
            }
        }
        Layer::Kv | Layer::Graph => {}
    }
    let cfg = cluster.bucket_config(&bucket);
    cluster.create_bucket(BucketConfig::new(bucket.clone(), cfg.quorum).with_mode(WriteMode::Async))?;
    Ok(bucket)
}

struct Writer {
    target: NodeId,
    queue: std::vec::IntoIter<usize>,
    inflight: Option<(ReqId, usize)>,
    done: u64,
}

pub fn run_bench(spec: &WorkloadSpec, cluster: &mut Cluster) -> Result<BenchResult, BenchError> {
    spec.validate()?;
    let nodes = cluster.up_nodes();
    if nodes.is_empty() {
        return Err(BenchError::InvalidSpec("no live nodes".into()));
    }
    prepare(cluster, spec.layer, &nodes[0])?;
    cluster.run_until_quiescent()?;

    let targets = assign_writers(&nodes, spec.writers, spec.policy);
    let mut writers: Vec<Writer> = targets
        .iter()
        .enumerate()
        .map(|(w, target)| Writer {
            target: target.clone(),
            queue: (w..spec.records).step_by(spec.writers).collect::<Vec<_>>().into_iter(),
            inflight: None,
            done: 0,
        })
        .collect();
    let mut writers_per_node = BTreeMap::new();
    for t in &targets {
        *writers_per_node.entry(t.clone()).or_insert(0) += 1;
    }

    let started = Instant::now();
    let sim_start = cluster.now();
    let mut records: BTreeMap<usize, (String, Vec<u8>, Vec<u8>)> = BTreeMap::new();
    let mut acked = Vec::with_capacity(spec.records);
    let mut errors = 0;
    loop {
        let mut busy = false;
        for w in &mut writers {
            if let Some((req, i)) = w.inflight {
                match cluster.poll(req) {
                    None => {
                        busy = true;
                        continue;
                    }
                    Some(Ok(crate::cluster::ClientReply::Written(clock))) => {
                        let (bucket, key, value) = records.remove(&i).expect("in flight");
                        acked.push(Acked { bucket, key, value, clock });
                        w.done += 1;
                    }
                    Some(_) => {
                        records.remove(&i);
                        errors += 1;
                    }
                }
                w.inflight = None;
            }
            if let Some(i) = w.queue.next() {
                let (bucket, key, value) = encode_record(spec.layer, spec.seed, i, spec.value_size);
                let op = ClientOp::Put {
                    bucket: bucket.clone(),
                    key: key.clone(),
                    value: value.clone(),
                    expected: VectorClock::new(),
                };
                records.insert(i, (bucket, key, value));
                w.inflight = Some((cluster.submit(&w.target, op)?, i));
                busy = true;
            }
        }
        if !busy {
            break;
        }
        if !cluster.step()? {
            return Err(ClusterError::Stalled(0).into());
        }
    }
    let sim_ticks = cluster.now() - sim_start;
    let pending: Vec<(String, Vec<u8>, VectorClock)> =
        acked.iter().map(|a| (a.bucket.clone(), a.key.clone(), a.clock.clone())).collect();
    let lag = cluster.pending_replication(&pending)?;
    let wall_ms = started.elapsed().as_millis();
    Ok(BenchResult {
        spec: spec.clone(),
        wall_ms,
        sim_ticks,
        per_writer: writers.iter().map(|w| w.done).collect(),
        writers_per_node,
        errors,
        lag,
        acked,
    })
}

/// Let replication finish, then read every acknowledged record back through
/// `via`. Returns how many came back with the written bytes.
pub fn read_back(cluster: &mut Cluster, result: &BenchResult, via: &NodeId) -> Result<usize, BenchError> {
    cluster.run_until_quiescent()?;
    let mut found = 0;
    for a in &result.acked {
        match cluster.get(via, &a.bucket, &a.key) {
            Ok(r) if r.values().contains(&a.value.as_slice()) => found += 1,
            Ok(_) | Err(ClusterError::Replication(ReplicationError::QuorumUnreachable { .. })) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(found)
}

pub fn emit_csv<W: Write>(results: &[BenchResult], mut out: W) -> Result<(), BenchError> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_csv(results: &[BenchResult], path: &Path) -> Result<(), BenchError> {
    let file = std::fs::File::create(path)?;
    emit_csv(results, std::io::BufWriter::new(file))
}
