//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Every check here compares the engine against an oracle written in this
//! file (pointwise clock arithmetic, brute-force ownership, prefix replay of
//! the operations actually issued), never against the engine's own helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use polystore::bench::{bench_cluster, emit_csv, read_back, run_bench, Layer, Policy, WorkloadSpec, CSV_HEADER};
use polystore::cluster::scenario::Scenario;
use polystore::cluster::{ClientOp, ClientReply, Cluster, ClusterConfig, ClusterError, LeaderConfig, ReplicationMode};
use polystore::datamodels::{CellValue, ColumnFamilies, Documents, Fixture, Graph, Predicate};
use polystore::hashring::{
    build_ring, lookup_partition, modulo_shard, preference_list, remove_node, NodeId, PhysicalNode, RingConfig,
    RingState,
};
use polystore::replication::{
    elect_primary, BucketConfig, ElectionError, LeaderGroup, Member, OpId, QuorumConfig, ReplicationError,
    SessionGuarantee, SessionState,
};
use polystore::storage::{Backend, LogBackend, LogOptions};
use polystore::versioning::{resolve_siblings, Causality, VectorClock, VersionedValue};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn id(s: &str) -> NodeId {
    NodeId::from(s)
}

fn dominates_or_equal(a: &VectorClock, b: &VectorClock) -> bool {
    matches!(a.compare(b), Causality::After | Causality::Equal)
}

// ---------------------------------------------------------------- 1

fn ring_arithmetic() -> Outcome {
    let nodes: Vec<PhysicalNode> = ["node1", "node2", "node3"].into_iter().map(PhysicalNode::new).collect();
    let ring = build_ring(&nodes, RingConfig::with_partitions(64)).map_err(|e| e.to_string())?;
    let per_node = ring.partition_counts();
    let mut counts: Vec<usize> = per_node.values().copied().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    ensure(counts == [22, 21, 21], || format!("partitions per node {counts:?}"))?;
    let (heavy, _) = per_node.iter().max_by_key(|(n, c)| (**c, std::cmp::Reverse(*n))).unwrap();
    let mut vnodes = ring.vnode_counts(heavy);
    vnodes.sort_unstable_by(|a, b| b.cmp(a));
    ensure(vnodes == [8, 7, 7], || format!("vnodes of {heavy}: {vnodes:?}"))?;
    Ok(format!("{counts:?}, {heavy} vnodes {vnodes:?}"))
}

// ---------------------------------------------------------------- 2

fn owners(ring: &RingState, keys: &[Vec<u8>]) -> Vec<NodeId> {
    keys.iter()
        .map(|k| ring.owner(lookup_partition("b", k, ring)).node_id.clone())
        .collect()
}

fn minimal_movement() -> Outcome {
    let ids: Vec<u64> = (0..1000).collect();
    let keys: Vec<Vec<u8>> = ids.iter().map(|i| i.to_string().into_bytes()).collect();
    let (mut events, mut ring_moved, mut mod_moved, mut samples) = (0, 0usize, 0usize, 0usize);
    for n in 2..=8u64 {
        let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let nodes: Vec<PhysicalNode> = names.iter().map(|s| PhysicalNode::new(s.as_str())).collect();
        let ring = build_ring(&nodes, RingConfig::default()).map_err(|e| e.to_string())?;
        let before = owners(&ring, &keys);
        let parts: Vec<u32> = keys.iter().map(|k| lookup_partition("b", k, &ring)).collect();

        let mut churn = vec![(format!("join n{n}"), n + 1)];
        churn.extend(names.iter().map(|s| (format!("leave {s}"), n - 1)));
        for (label, shards_after) in churn {
            let (after_ring, moved) = match label.split_once(' ').unwrap() {
                ("join", name) => polystore::hashring::add_node(&ring, PhysicalNode::new(name)),
                (_, name) => remove_node(&ring, &id(name)),
            }
            .map_err(|e| e.to_string())?;
            let after = owners(&after_ring, &keys);
            let changed: BTreeSet<usize> = (0..keys.len()).filter(|&i| before[i] != after[i]).collect();
            let in_moved: BTreeSet<usize> = (0..keys.len()).filter(|&i| moved.contains(&parts[i])).collect();
            ensure(changed == in_moved, || {
                format!(
                    "{n} nodes, {label}: {} keys changed owner, {} keys sit in moved partitions",
                    changed.len(),
                    in_moved.len()
                )
            })?;
            ring_moved += changed.len();
            for &k in &ids {
                if modulo_shard(k, n).unwrap() != modulo_shard(k, shards_after).unwrap() {
                    mod_moved += 1;
                }
            }
            samples += keys.len();
            events += 1;
        }
    }
    let ring_frac = ring_moved as f64 / samples as f64;
    let mod_frac = mod_moved as f64 / samples as f64;
    ensure(mod_frac > 0.5, || format!("modulo baseline moved only {:.1}%", mod_frac * 100.0))?;
    Ok(format!(
        "{events} churn events exact; ring moved {:.1}% of keys, modulo {:.1}%",
        ring_frac * 100.0,
        mod_frac * 100.0
    ))
}

// ---------------------------------------------------------------- 3

type Counters = [u64; 3];
const CLOCK_NODES: [&str; 3] = ["x", "y", "z"];

fn to_clock(c: &Counters) -> VectorClock {
    VectorClock::from_entries(CLOCK_NODES.iter().zip(c).map(|(n, v)| (*n, *v)))
}

fn leq(a: &Counters, b: &Counters) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

fn expected_order(a: &Counters, b: &Counters) -> Causality {
    match (leq(a, b), leq(b, a)) {
        (true, true) => Causality::Equal,
        (true, false) => Causality::Before,
        (false, true) => Causality::After,
        (false, false) => Causality::Concurrent,
    }
}

fn clock_algebra() -> Outcome {
    let all: Vec<Counters> = (0..64u64).map(|m| [m & 3, (m >> 2) & 3, (m >> 4) & 3]).collect();
    let clocks: Vec<VectorClock> = all.iter().map(to_clock).collect();
    let mut checks = 0u64;
    for (i, a) in all.iter().enumerate() {
        for (n, node) in CLOCK_NODES.iter().enumerate() {
            let up = clocks[i].increment(&id(node));
            ensure(up.get(&id(node)) == a[n] + 1 && up.compare(&clocks[i]) == Causality::After, || {
                format!("increment of {a:?} at {node}")
            })?;
        }
        for (j, b) in all.iter().enumerate() {
            let got = clocks[i].compare(&clocks[j]);
            ensure(got == expected_order(a, b), || format!("compare {a:?} {b:?} gave {got:?}"))?;
            ensure(clocks[j].compare(&clocks[i]) == got.reverse(), || format!("asymmetric {a:?} {b:?}"))?;
            let m = clocks[i].merge(&clocks[j]);
            let lub: Counters = [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])];
            ensure(m == to_clock(&lub), || format!("merge {a:?} {b:?}"))?;
            ensure(m == clocks[j].merge(&clocks[i]), || format!("merge not commutative at {a:?} {b:?}"))?;
            for (k, c) in all.iter().enumerate() {
                // Least upper bound: c is above both exactly when it is above the merge.
                let above_both =
                    dominates_or_equal(&clocks[k], &clocks[i]) && dominates_or_equal(&clocks[k], &clocks[j]);
                ensure(above_both == dominates_or_equal(&clocks[k], &m) && above_both == leq(&lub, c), || {
                    format!("least upper bound of {a:?} {b:?} against {c:?}")
                })?;
                ensure(m.merge(&clocks[k]) == clocks[i].merge(&clocks[j].merge(&clocks[k])), || {
                    format!("merge not associative at {a:?} {b:?} {c:?}")
                })?;
                checks += 1;
            }
        }
        ensure(clocks[i].merge(&clocks[i]) == clocks[i], || format!("merge not idempotent at {a:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sibling_total = 0;
    for history in 0..500 {
        let mut local: Counters = [0; 3];
        let mut seen: Vec<(Counters, Vec<u8>)> = Vec::new();
        for step in 0..rng.gen_range(1..14) {
            if !seen.is_empty() && rng.gen_bool(0.15) {
                // The same version arriving again from another replica.
                let dup = seen[rng.gen_range(0..seen.len())].clone();
                seen.push(dup);
                continue;
            }
            let writer = rng.gen_range(0..3);
            let mut ctx: Counters = [0; 3];
            for (c, _) in seen.iter().filter(|_| rng.gen_bool(0.4)) {
                for n in 0..3 {
                    ctx[n] = ctx[n].max(c[n]);
                }
            }
            local[writer] = local[writer].max(ctx[writer]) + 1;
            ctx[writer] = local[writer];
            seen.push((ctx, format!("h{history}s{step}").into_bytes()));
        }
        let versions: Vec<VersionedValue> =
            seen.iter().map(|(c, v)| VersionedValue::new(v.clone(), to_clock(c))).collect();
        let resolved = resolve_siblings(&versions).map_err(|e| e.to_string())?;
        let got: BTreeSet<Counters> = resolved
            .iter()
            .map(|v| [0, 1, 2].map(|n| v.clock.get(&id(CLOCK_NODES[n]))))
            .collect();
        let want: BTreeSet<Counters> = seen
            .iter()
            .map(|(c, _)| *c)
            .filter(|c| !seen.iter().any(|(o, _)| o != c && leq(c, o)))
            .collect();
        ensure(got == want && resolved.len() == want.len(), || {
            format!("history {history}: resolved {got:?}, antichain {want:?}")
        })?;
        sibling_total += want.len();
    }
    Ok(format!(
        "{checks} clock triples lawful; 500 histories matched the maximal antichain ({sibling_total} siblings)"
    ))
}

// ---------------------------------------------------------------- 4

struct QuorumTally {
    reads_checked: usize,
    stale: usize,
}

/// Clients submit overlapping reads and read-modify-writes at random times.
/// A read submitted after a write was acknowledged must dominate that write.
fn quorum_schedule(seed: u64, quorum: QuorumConfig, max_delay: u64) -> Result<QuorumTally, String> {
    let mut cfg = ClusterConfig::new(&["a", "b", "c", "d"])
        .with_seed(seed)
        .with_bucket(BucketConfig::new("q", quorum));
    cfg.gossip_enabled = false;
    cfg.trace = false;
    cfg.network.max_delay = max_delay;
    cfg.network.client_max_delay = max_delay;
    let mut c = Cluster::new(cfg).map_err(|e| e.to_string())?;
    let nodes = c.node_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let keys = [b"k0".to_vec(), b"k1".to_vec()];

    // Per key: the merged clock of every acknowledged write so far, and the
    // last context any read returned (used as the next write's context).
    let mut acked: BTreeMap<Vec<u8>, VectorClock> = BTreeMap::new();
    let mut last_ctx: BTreeMap<Vec<u8>, VectorClock> = BTreeMap::new();
    // Outstanding reads carry the floor that held when they were submitted.
    let mut pending: Vec<(u64, Vec<u8>, Option<VectorClock>)> = Vec::new();
    let mut tally = QuorumTally { reads_checked: 0, stale: 0 };
    let mut t = 0;

    let settle = |c: &mut Cluster,
                      pending: &mut Vec<(u64, Vec<u8>, Option<VectorClock>)>,
                      acked: &mut BTreeMap<Vec<u8>, VectorClock>,
                      last_ctx: &mut BTreeMap<Vec<u8>, VectorClock>,
                      tally: &mut QuorumTally| {
        pending.retain(|(req, key, floor)| match c.poll(*req) {
            None => true,
            Some(Ok(ClientReply::Written(clock))) => {
                acked.entry(key.clone()).or_default().merge_in(&clock);
                false
            }
            Some(Ok(ClientReply::Read(out))) => {
                if let Some(floor) = floor {
                    tally.reads_checked += 1;
                    if !dominates_or_equal(&out.context, floor) {
                        tally.stale += 1;
                    }
                }
                last_ctx.insert(key.clone(), out.context);
                false
            }
            Some(_) => false,
        });
    };

    for _ in 0..16 {
        t += rng.gen_range(0..=max_delay);
        c.run_until(t).map_err(|e| e.to_string())?;
        settle(&mut c, &mut pending, &mut acked, &mut last_ctx, &mut tally);
        let key = keys.choose(&mut rng).unwrap().clone();
        let via = nodes.choose(&mut rng).unwrap().clone();
        let op = if rng.gen_bool(0.5) {
            ClientOp::Put {
                bucket: "q".into(),
                key: key.clone(),
                value: format!("v{t}").into_bytes(),
                expected: last_ctx.get(&key).cloned().unwrap_or_default(),
            }
        } else {
            ClientOp::Get { bucket: "q".into(), key: key.clone() }
        };
        let is_read = matches!(op, ClientOp::Get { .. });
        let req = c.submit(&via, op).map_err(|e| e.to_string())?;
        let floor = if is_read { acked.get(&key).cloned() } else { None };
        pending.push((req, key, floor));
    }
    while !pending.is_empty() {
        if !c.step().map_err(|e| e.to_string())? {
            break;
        }
        settle(&mut c, &mut pending, &mut acked, &mut last_ctx, &mut tally);
    }
    Ok(tally)
}

fn quorum_consistency() -> Outcome {
    let strict = QuorumConfig::new(3, 2, 2).unwrap();
    let (mut checked, mut violations) = (0, 0);
    for seed in 0..1000 {
        let t = quorum_schedule(seed, strict, 5)?;
        checked += t.reads_checked;
        violations += t.stale;
    }
    ensure(violations == 0, || format!("{violations} stale reads out of {checked} with r=w=2"))?;
    let sloppy = QuorumConfig::new(3, 1, 1).unwrap();
    let (mut weak_checked, mut witnesses) = (0, 0);
    for seed in 0..200 {
        let t = quorum_schedule(seed, sloppy, 30)?;
        weak_checked += t.reads_checked;
        witnesses += t.stale;
    }
    ensure(witnesses > 0, || format!("no stale read among {weak_checked} r=w=1 reads"))?;
    Ok(format!(
        "0 of {checked} strict reads stale; r=w=1 served {witnesses} stale of {weak_checked}"
    ))
}

// ---------------------------------------------------------------- 5

/// Sibling sets compared replica by replica over the preference list each
/// key has on the final ring.
fn replicas_disagree(c: &Cluster, bucket: &str, n: usize) -> Result<Vec<Vec<u8>>, String> {
    let ids = c.node_ids();
    let ring = c.ring_of(&ids[0]).map_err(|e| e.to_string())?.clone();
    let mut keys = BTreeSet::new();
    for node in &ids {
        keys.extend(c.store_of(node).map_err(|e| e.to_string())?.keys(bucket).map_err(|e| e.to_string())?);
    }
    let mut bad = Vec::new();
    for key in keys {
        let mut sets = BTreeSet::new();
        for r in preference_list(bucket, &key, &ring, n).nodes {
            let mut s: Vec<(String, Vec<u8>, bool)> = c
                .siblings_at(&r, bucket, &key)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|v| (v.clock.canonical(), v.value, v.tombstone))
                .collect();
            s.sort();
            sets.insert(s);
        }
        if sets.len() > 1 {
            bad.push(key);
        }
    }
    Ok(bad)
}

fn convergence_run(seed: u64) -> Result<usize, String> {
    let mut cfg = ClusterConfig::new(&["a", "b", "c", "d"]).with_seed(seed);
    cfg.trace = false;
    let mut c = Cluster::new(cfg).map_err(|e| e.to_string())?;
    let nodes = c.node_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let err = |e: ClusterError| e.to_string();
    for step in 0..24 {
        let up = c.up_nodes();
        match rng.gen_range(0..10) {
            0 if up.len() > 1 => c.crash_node(up.choose(&mut rng).unwrap()).map_err(err)?,
            1 => {
                if let Some(down) = nodes.iter().find(|n| !up.contains(n)) {
                    c.recover_node(down).map_err(err)?;
                }
            }
            2 => {
                let mut shuffled: Vec<&str> = nodes.iter().map(NodeId::as_str).collect();
                shuffled.shuffle(&mut rng);
                let cut = rng.gen_range(1..shuffled.len());
                c.partition(&[&shuffled[..cut], &shuffled[cut..]]).map_err(err)?;
            }
            3 => c.heal().map_err(err)?,
            _ => {
                // Two clients race on a small key space from different nodes.
                let key = format!("k{}", rng.gen_range(0..4));
                let mut reqs = Vec::new();
                for writer in 0..rng.gen_range(1..=2) {
                    let via = up.choose(&mut rng).unwrap().clone();
                    let ctx = c.get_local(&via, "data", key.as_bytes()).map(|r| r.context).unwrap_or_default();
                    let op = ClientOp::Put {
                        bucket: "data".into(),
                        key: key.clone().into_bytes(),
                        value: format!("s{seed}w{step}.{writer}").into_bytes(),
                        expected: ctx,
                    };
                    reqs.push(c.submit(&via, op).map_err(err)?);
                }
                for r in reqs {
                    match c.wait(r) {
                        Ok(_) | Err(ClusterError::Replication(_)) => {}
                        Err(e) => return Err(e.to_string()),
                    }
                }
            }
        }
        let t = c.now() + rng.gen_range(1..40);
        c.run_until(t).map_err(err)?;
    }
    c.heal().map_err(err)?;
    for n in &nodes {
        if !c.up_nodes().contains(n) {
            c.recover_node(n).map_err(err)?;
        }
    }
    c.converge(nodes.len() * 4).map_err(err)?;
    let bad = replicas_disagree(&c, "data", 3)?;
    ensure(bad.is_empty(), || {
        format!("seed {seed}: {} keys diverge, e.g. {}", bad.len(), String::from_utf8_lossy(&bad[0]))
    })?;
    ensure(c.divergent_keys().map_err(err)?.is_empty(), || format!("seed {seed}: cluster reports divergence"))?;
    Ok(c.store_of(&nodes[0]).map_err(|e| e.to_string())?.keys("data").map_err(|e| e.to_string())?.len())
}

fn convergence() -> Outcome {
    let mut keys = 0;
    for seed in 0..200 {
        keys += convergence_run(seed)?;
    }
    Ok(format!("200 scenarios converged ({keys} keys on the first node in total)"))
}

// ---------------------------------------------------------------- 6

fn leader_run(seed: u64, nodes: &[&str]) -> Result<(usize, u64), String> {
    let mut cfg = ClusterConfig::new(nodes)
        .with_seed(seed)
        .with_mode(ReplicationMode::Leader(LeaderConfig::default()));
    cfg.trace = false;
    cfg.network.max_delay = 1 + seed % 6;
    let mut c = Cluster::new(cfg).map_err(|e| e.to_string())?;
    let ids = c.node_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let err = |e: ClusterError| e.to_string();
    for step in 0..20 {
        let up = c.up_nodes();
        match rng.gen_range(0..8) {
            0 if up.len() > 1 => c.crash_node(up.choose(&mut rng).unwrap()).map_err(err)?,
            1 => {
                if let Some(down) = ids.iter().find(|n| !up.contains(n)) {
                    c.recover_node(down).map_err(err)?;
                }
            }
            2 => {
                let mut shuffled: Vec<&str> = ids.iter().map(NodeId::as_str).collect();
                shuffled.shuffle(&mut rng);
                let cut = rng.gen_range(1..shuffled.len());
                c.partition(&[&shuffled[..cut], &shuffled[cut..]]).map_err(err)?;
            }
            3 => c.heal().map_err(err)?,
            _ => {
                let via = c.primaries().first().cloned().unwrap_or_else(|| up[0].clone());
                match c.update(&via, "x", b"k", format!("v{step}").as_bytes()) {
                    Ok(_) | Err(ClusterError::Replication(_)) => {}
                    Err(e) => return Err(e.to_string()),
                }
            }
        }
        let t = c.now() + rng.gen_range(5..120);
        c.run_until(t).map_err(err)?;
    }
    c.heal().map_err(err)?;
    for n in &ids {
        if !c.up_nodes().contains(n) {
            c.recover_node(n).map_err(err)?;
        }
    }
    c.run_until(c.now() + 400).map_err(err)?;
    let split = c.split_brain_terms();
    ensure(split.is_empty(), || format!("seed {seed}: several primaries in terms {split:?}"))?;
    let terms = c.primary_history().len() as u64;
    Ok((c.primaries().len(), terms))
}

fn election_safety() -> Outcome {
    let (mut runs, mut terms, mut settled) = (0, 0, 0);
    for seed in 0..60 {
        let nodes: &[&str] = if seed % 2 == 0 { &["a", "b", "c"] } else { &["a", "b", "c", "d", "e"] };
        let (primaries, t) = leader_run(seed, nodes)?;
        runs += 1;
        terms += t;
        settled += usize::from(primaries == 1);
    }
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut scripts = 0;
    for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let report = Scenario::load(&path).and_then(|s| s.run()).map_err(|e| e.to_string())?;
        ensure(report.passed(), || format!("{}: {:?}", path.display(), report.failures))?;
        scripts += 1;
    }

    // Group size limit, on the pure election function and on a live cluster.
    let names: Vec<String> = (0..13).map(|i| format!("m{i:02}")).collect();
    let group = |n: usize| LeaderGroup {
        members: names[..n].iter().map(|s| Member::data(s.as_str())).collect(),
        primary: None,
        term: 1,
    };
    let everyone = |n: usize| names[..n].iter().map(|s| id(s)).collect::<BTreeSet<_>>();
    let ops: BTreeMap<NodeId, OpId> = BTreeMap::new();
    let big = elect_primary(&group(13), &everyone(13), |_, _| true, &ops);
    ensure(big == Err(ElectionError::ManualFailoverRequired { members: 13 }), || {
        format!("13 members: {big:?}")
    })?;
    ensure(elect_primary(&group(12), &everyone(12), |_, _| true, &ops).is_ok(), || {
        "12 members could not elect".into()
    })?;
    let mut cfg = ClusterConfig::new(&names).with_mode(ReplicationMode::Leader(LeaderConfig::default()));
    cfg.trace = false;
    let mut c = Cluster::new(cfg).map_err(|e| e.to_string())?;
    let first = c.primaries();
    ensure(first.len() == 1, || format!("13-node bootstrap primaries {first:?}"))?;
    c.crash_node(&first[0]).map_err(|e| e.to_string())?;
    c.run_until(c.now() + 500).map_err(|e| e.to_string())?;
    ensure(c.primaries().is_empty(), || format!("13-node group failed over to {:?}", c.primaries()))?;
    let write = c.put(&c.node_ids()[1], "x", b"k", b"v", &VectorClock::new());
    ensure(
        matches!(
            write,
            Err(ClusterError::Replication(
                ReplicationError::NotPrimary { .. } | ReplicationError::NoPrimary | ReplicationError::ManualFailoverRequired { .. }
            ))
        ),
        || format!("write with no primary: {write:?}"),
    )?;
    Ok(format!(
        "{runs} fault runs ({terms} terms, {settled} settled on one primary) and {scripts} scripts without split brain; 13 members refuse failover"
    ))
}

// ---------------------------------------------------------------- 7

#[derive(Default)]
struct SessionTally {
    reads: usize,
    timeouts: usize,
    violations: Vec<String>,
}

fn session_run(seed: u64, guarantee: SessionGuarantee, tally: &mut SessionTally) -> Result<(), String> {
    let mut cfg = ClusterConfig::new(&["a", "b", "c"])
        .with_seed(seed)
        .with_bucket(BucketConfig::new("s", QuorumConfig::new(3, 1, 1).unwrap()));
    cfg.trace = false;
    cfg.gossip_enabled = false;
    cfg.network.max_delay = 25;
    cfg.network.client_max_delay = 3;
    let mut c = Cluster::new(cfg).map_err(|e| e.to_string())?;
    let nodes = c.node_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31));
    let mut session = SessionState::new(seed, guarantee.clone());
    // The oracle's own memory of the session, per key.
    let mut wrote: BTreeMap<Vec<u8>, VectorClock> = BTreeMap::new();
    let mut read: BTreeMap<Vec<u8>, VectorClock> = BTreeMap::new();
    for step in 0..20 {
        let key = format!("k{}", rng.gen_range(0..2)).into_bytes();
        let via = nodes.choose(&mut rng).unwrap().clone();
        match rng.gen_range(0..3) {
            0 => {
                let ctx = read.get(&key).cloned().unwrap_or_default();
                let ctx = ctx.merge(&wrote.get(&key).cloned().unwrap_or_default());
                match c.session_put(&mut session, &via, "s", &key, format!("s{step}").as_bytes(), &ctx) {
                    Ok(clock) => wrote.entry(key).or_default().merge_in(&clock),
                    Err(ClusterError::Replication(_)) => {}
                    Err(e) => return Err(e.to_string()),
                }
            }
            1 => {
                // Someone else writes through a random node, unseen by the session.
                let other = nodes.choose(&mut rng).unwrap().clone();
                let ctx = c.get_local(&other, "s", &key).map(|r| r.context).unwrap_or_default();
                let _ = c.put(&other, "s", &key, format!("o{step}").as_bytes(), &ctx);
            }
            _ => match c.session_get(&mut session, &via, "s", &key, 12) {
                Ok(out) => {
                    tally.reads += 1;
                    let empty = VectorClock::new();
                    let need_write = wrote.get(&key).unwrap_or(&empty);
                    let need_read = read.get(&key).unwrap_or(&empty);
                    let ok = match &guarantee {
                        SessionGuarantee::ReadYourWrites => dominates_or_equal(&out.context, need_write),
                        SessionGuarantee::MonotonicRead => dominates_or_equal(&out.context, need_read),
                        SessionGuarantee::Causal => {
                            dominates_or_equal(&out.context, need_write) && dominates_or_equal(&out.context, need_read)
                        }
                        _ => true,
                    };
                    if !ok {
                        tally.violations.push(format!("seed {seed} {guarantee} step {step}"));
                    }
                    read.entry(key).or_default().merge_in(&out.context);
                }
                Err(ClusterError::Replication(ReplicationError::GuaranteeTimeout { .. })) => tally.timeouts += 1,
                Err(ClusterError::Replication(_)) => {}
                Err(e) => return Err(e.to_string()),
            },
        }
        let t = c.now() + rng.gen_range(0..10);
        c.run_until(t).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn session_guarantees() -> Outcome {
    let mut tally = SessionTally::default();
    for seed in 0..100 {
        for g in [SessionGuarantee::ReadYourWrites, SessionGuarantee::MonotonicRead, SessionGuarantee::Causal] {
            session_run(seed, g, &mut tally)?;
        }
    }
    ensure(tally.violations.is_empty(), || {
        format!("{} violations, first {}", tally.violations.len(), tally.violations[0])
    })?;
    Ok(format!("{} session reads checked, {} gave up waiting", tally.reads, tally.timeouts))
}

// ---------------------------------------------------------------- 8

fn cluster3(seed: u64) -> Result<Cluster, String> {
    let mut cfg = ClusterConfig::new(&["n1", "n2", "n3"]).with_seed(seed);
    cfg.gossip_enabled = false;
    cfg.trace = false;
    Cluster::new(cfg).map_err(|e| e.to_string())
}

fn golden_queries() -> Outcome {
    let fixture = Fixture::automobili();
    let s = |e: polystore::datamodels::DataModelError| e.to_string();
    let mut failures = Vec::new();
    let mut expect = |what: &str, got: String, want: String| {
        if got != want {
            failures.push(format!("{what}: got {got}, want {want}"));
        }
    };

    let mut c = cluster3(1)?;
    let docs = Documents::new("automobili", "n1");
    docs.load(&mut c, &fixture).map_err(s)?;
    let punto = docs.find(&mut c, "autovetture", &[("modello", json!("Punto"))], None).map_err(s)?;
    expect("doc_find(modello=Punto)", punto.len().to_string(), "2".into());
    let groups = docs.group(&mut c, "autovetture", "alimentazione").map_err(s)?;
    let groups: Vec<String> = groups.iter().map(|(k, n)| format!("{}:{n}", k.as_str().unwrap_or("?"))).collect();
    expect("doc_group(alimentazione)", groups.join(","), "Benzina:3,GPL:1,Diesel:4".into());

    let mut c = cluster3(2)?;
    let cf = ColumnFamilies::new("n1");
    cf.load(&mut c, &fixture, "automobili", 3).map_err(s)?;
    cf.create_index(&mut c, "automobili", "autovetture", "tipologia").map_err(s)?;
    cf.create_index(&mut c, "automobili", "autovetture", "marca").map_err(s)?;
    let utilitaria = ("tipologia", CellValue::from("Utilitaria"));
    let fiat = ("marca", CellValue::from("Fiat"));
    let rows = cf.select(&mut c, "automobili", "autovetture", std::slice::from_ref(&utilitaria), false).map_err(s)?;
    expect("cf_select(tipologia=Utilitaria)", rows.len().to_string(), "4".into());
    let combined = [utilitaria, fiat];
    let rejected = cf.count(&mut c, "automobili", "autovetture", &combined, false).is_err();
    expect("combined filter without allow_filtering rejected", rejected.to_string(), "true".into());
    let n = cf.count(&mut c, "automobili", "autovetture", &combined, true).map_err(s)?;
    expect("count with allow_filtering", n.to_string(), "3".into());

    let mut c = cluster3(3)?;
    let g = Graph::new("n2");
    g.load(&mut c, &fixture).map_err(s)?;
    let cheap = g.filter(&mut c, &Predicate::has("modello").and(Predicate::lt("prezzo", 20000.0))).map_err(s)?;
    expect("graph_filter(prezzo<20000)", cheap.len().to_string(), "5".into());
    let fiat = g.match_neighbors(&mut c, "produttori/1").map_err(s)?;
    expect("graph_match(Fiat)", fiat.len().to_string(), "2".into());
    let cars = g.filter(&mut c, &Predicate::has("modello")).map_err(s)?;
    expect("autovetture listing", cars.len().to_string(), "8".into());
    let producers = g.filter(&mut c, &Predicate::has("email")).map_err(s)?;
    expect("produttori listing", producers.len().to_string(), "4".into());

    if failures.is_empty() {
        Ok("8 golden queries exact".into())
    } else {
        Err(failures.join("; "))
    }
}

// ---------------------------------------------------------------- 9

#[derive(Clone, Debug)]
enum StoreOp {
    Put(String, Vec<u8>, Vec<u8>),
    Delete(String, Vec<u8>),
}

type Model = BTreeMap<String, BTreeMap<Vec<u8>, Vec<u8>>>;

fn replay(ops: &[StoreOp]) -> Model {
    let mut m = Model::new();
    for op in ops {
        match op {
            StoreOp::Put(b, k, v) => {
                m.entry(b.clone()).or_default().insert(k.clone(), v.clone());
            }
            StoreOp::Delete(b, k) => {
                if let Some(keys) = m.get_mut(b) {
                    keys.remove(k);
                    if keys.is_empty() {
                        m.remove(b);
                    }
                }
            }
        }
    }
    m
}

fn read_all(store: &dyn Backend, probe: &BTreeSet<(String, Vec<u8>)>) -> Result<Model, String> {
    let mut m = Model::new();
    for bucket in store.buckets() {
        for key in store.keys(&bucket).map_err(|e| e.to_string())? {
            let v = store.get(&bucket, &key).map_err(|e| e.to_string())?.ok_or("listed key has no value")?;
            m.entry(bucket.clone()).or_default().insert(key, v);
        }
    }
    // Keys the model says are gone must read as absent too.
    for (b, k) in probe {
        let listed = m.get(b).and_then(|keys| keys.get(k));
        let direct = store.get(b, k).map_err(|e| e.to_string())?;
        if listed.cloned() != direct {
            return Err(format!("get and keys disagree on {b}/{}", k.escape_ascii()));
        }
    }
    Ok(m)
}

/// Copy the log directory as it would look after a crash at byte `cut` of
/// the concatenated log: files past the cut vanish, the cut file is torn.
fn crash_copy(src: &Path, dst: &Path, cut: u64) -> Result<(), String> {
    let mut files: Vec<_> = fs::read_dir(src)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    files.sort();
    let mut start = 0;
    for f in files {
        let bytes = fs::read(&f).map_err(|e| e.to_string())?;
        if start >= cut && start > 0 {
            break;
        }
        let keep = (cut - start).min(bytes.len() as u64) as usize;
        fs::write(dst.join(f.file_name().unwrap()), &bytes[..keep]).map_err(|e| e.to_string())?;
        start += bytes.len() as u64;
    }
    Ok(())
}

fn crash_recovery() -> Outcome {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = work.path().join("log");
    let options = LogOptions { rotate_bytes: 2048 };
    let mut store = LogBackend::open(&dir, options).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ops = Vec::new();
    let mut ends = vec![0u64];
    let mut probe = BTreeSet::new();
    for i in 0..400 {
        let bucket = ["cars", "people"][rng.gen_range(0..2)].to_string();
        let key = format!("k{}", rng.gen_range(0..25)).into_bytes();
        probe.insert((bucket.clone(), key.clone()));
        let op = if rng.gen_bool(0.75) {
            let len = rng.gen_range(0..60);
            let value: Vec<u8> = (0..len).map(|j| (i + j) as u8).collect();
            store.put(&bucket, &key, &value).map_err(|e| e.to_string())?;
            StoreOp::Put(bucket, key, value)
        } else {
            store.delete(&bucket, &key).map_err(|e| e.to_string())?;
            StoreOp::Delete(bucket, key)
        };
        ops.push(op);
        ends.push(store.disk_size().map_err(|e| e.to_string())?);
    }
    let total = *ends.last().unwrap();
    ensure(store.file_ids().len() > 3, || "the history should span several log files".into())?;
    ensure(read_all(&store, &probe)? == replay(&ops), || "live store differs from replay".into())?;

    let mut cuts: Vec<u64> = (0..100).map(|_| rng.gen_range(0..=total)).collect();
    cuts[0] = 0;
    cuts[1] = total;
    for (n, &cut) in cuts.iter().enumerate() {
        let crashed = work.path().join(format!("crash{n}"));
        fs::create_dir_all(&crashed).map_err(|e| e.to_string())?;
        crash_copy(&dir, &crashed, cut)?;
        let recovered = LogBackend::open(&crashed, options).map_err(|e| format!("cut {cut}: {e}"))?;
        let durable = ends.iter().filter(|&&e| e > 0 && e <= cut).count();
        let want = replay(&ops[..durable]);
        ensure(read_all(&recovered, &probe)? == want, || {
            format!("cut at byte {cut} of {total}: recovered state differs from replay of {durable} ops")
        })?;
    }

    let before = read_all(&store, &probe)?;
    let size = store.disk_size().map_err(|e| e.to_string())?;
    store.compact_log().map_err(|e| e.to_string())?;
    ensure(read_all(&store, &probe)? == before, || "compaction changed a read".into())?;
    let compacted = store.disk_size().map_err(|e| e.to_string())?;
    drop(store);
    let reopened = LogBackend::open(&dir, options).map_err(|e| e.to_string())?;
    ensure(read_all(&reopened, &probe)? == before, || "compacted log reopened differently".into())?;
    Ok(format!(
        "100 cuts over {total} bytes matched prefix replay; compaction {size} -> {compacted} bytes, reads unchanged"
    ))
}

// ---------------------------------------------------------------- 10

fn bench_harness() -> Outcome {
    let mut results = Vec::new();
    let mut lag: BTreeMap<(Layer, usize), [usize; 2]> = BTreeMap::new();
    for layer in Layer::ALL {
        for writers in [1, 10, 20] {
            for (slot, policy) in [Policy::Single, Policy::Balanced].into_iter().enumerate() {
                let spec = WorkloadSpec::new(layer, 10_000, writers, policy, 42);
                let mut cluster = bench_cluster(42).map_err(|e| e.to_string())?;
                let result = run_bench(&spec, &mut cluster).map_err(|e| e.to_string())?;
                let done: u64 = result.per_writer.iter().sum();
                ensure(done == 10_000 - result.errors, || {
                    format!("{layer}/{writers}/{policy}: per-writer sum {done}, errors {}", result.errors)
                })?;
                let found = read_back(&mut cluster, &result, &id("node1")).map_err(|e| e.to_string())?;
                ensure(found == result.acked.len(), || {
                    format!("{layer}/{writers}/{policy}: read back {found} of {}", result.acked.len())
                })?;
                lag.entry((layer, writers)).or_default()[slot] = result.lag;
                results.push(result);
            }
        }
    }
    let mut csv = Vec::new();
    emit_csv(&results, &mut csv).map_err(|e| e.to_string())?;
    let csv = String::from_utf8(csv).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    ensure(lines[0] == CSV_HEADER && CSV_HEADER == "layer,records,writers,policy,wall_ms,ops_per_sec,errors,lag", || {
        format!("csv header `{}`", lines[0])
    })?;
    ensure(lines.len() == results.len() + 1, || format!("{} csv lines", lines.len()))?;
    for ((layer, writers), [single, balanced]) in &lag {
        ensure(balanced <= single, || {
            format!("{layer} with {writers} writers: balanced lag {balanced} > single {single}")
        })?;
    }
    let at20: Vec<String> = lag
        .iter()
        .filter(|((_, w), _)| *w == 20)
        .map(|((l, _), [s, b])| format!("{l} {s}/{b}"))
        .collect();
    Ok(format!(
        "{} runs, 100% read back; lag single/balanced at 20 writers: {}",
        results.len(),
        at20.join(", ")
    ))
}

// ----------------------------------------------------------------

struct Criterion {
    number: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { number: 1, name: "ring arithmetic", budget: Some(Duration::from_secs(1)), run: ring_arithmetic },
    Criterion { number: 2, name: "minimal movement", budget: Some(Duration::from_secs(10)), run: minimal_movement },
    Criterion { number: 3, name: "vector clock algebra", budget: Some(Duration::from_secs(30)), run: clock_algebra },
    Criterion { number: 4, name: "quorum consistency", budget: None, run: quorum_consistency },
    Criterion { number: 5, name: "convergence", budget: Some(Duration::from_secs(120)), run: convergence },
    Criterion { number: 6, name: "election safety", budget: None, run: election_safety },
    Criterion { number: 7, name: "session guarantees", budget: None, run: session_guarantees },
    Criterion { number: 8, name: "golden queries", budget: Some(Duration::from_secs(5)), run: golden_queries },
    Criterion { number: 9, name: "storage crash recovery", budget: Some(Duration::from_secs(30)), run: crash_recovery },
    Criterion { number: 10, name: "bench harness", budget: None, run: bench_harness },
];

fn main() -> ExitCode {
    // Honour `cargo test <filter>` the way the default harness would.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for c in CRITERIA {
        let label = format!("criterion {:>2} {}", c.number, c.name);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let mut result = (c.run)();
        let took = start.elapsed();
        if let (Ok(_), Some(budget)) = (&result, c.budget) {
            if took > budget {
                result = Err(format!("took {took:.2?}, budget {budget:?}"));
            }
        }
        let line = match &result {
            Ok(detail) => format!("PASS {label} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                format!("FAIL {label} ({took:.2?}): {why}")
            }
        };
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "{} criteria failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
