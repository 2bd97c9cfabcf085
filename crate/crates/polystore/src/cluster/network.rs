use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::hashring::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub min_delay: u64,
    pub max_delay: u64,
    /// Probability that a message is lost when sent.
    pub drop_rate: f64,
    /// Ticks a node spends on each incoming message. 0 means messages are
    /// handled the moment they arrive.
    pub service_ticks: u64,
    /// Upper bound on the delay between a client and the node it calls.
    pub client_max_delay: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            min_delay: 1,
            max_delay: 5,
            drop_rate: 0.0,
            service_ticks: 0,
            client_max_delay: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    Crash(NodeId),
    Recover(NodeId),
    /// Nodes in different groups cannot talk. Unlisted nodes form one more
    /// group together.
    Partition(Vec<BTreeSet<NodeId>>),
    Heal,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Crash(n) => write!(f, "crash\t{n}"),
            Fault::Recover(n) => write!(f, "recover\t{n}"),
            Fault::Partition(groups) => {
                f.write_str("partition")?;
                for g in groups {
                    let names: Vec<&str> = g.iter().map(NodeId::as_str).collect();
                    write!(f, "\t{}", names.join(","))?;
                }
                Ok(())
            }
            Fault::Heal => f.write_str("heal"),
        }
    }
}

/// Link model: seeded delays and drops, partitions, crashed nodes.
pub struct SimNetwork {
    pub config: NetworkConfig,
    rng: ChaCha8Rng,
    partition: Vec<BTreeSet<NodeId>>,
    crashed: BTreeSet<NodeId>,
}

impl SimNetwork {
    pub fn new(config: NetworkConfig, rng: ChaCha8Rng) -> Self {
        SimNetwork {
            config,
            rng,
            partition: Vec::new(),
            crashed: BTreeSet::new(),
        }
    }

    fn group_of(&self, node: &NodeId) -> Option<usize> {
        self.partition.iter().position(|g| g.contains(node))
    }

    pub fn connected(&self, a: &NodeId, b: &NodeId) -> bool {
        a == b || self.group_of(a) == self.group_of(b)
    }

    /// Both ends up and on the same side.
    pub fn reachable(&self, a: &NodeId, b: &NodeId) -> bool {
        !self.crashed.contains(a) && !self.crashed.contains(b) && self.connected(a, b)
    }

    pub fn is_crashed(&self, node: &NodeId) -> bool {
        self.crashed.contains(node)
    }

    pub fn crashed(&self) -> &BTreeSet<NodeId> {
        &self.crashed
    }

    pub fn is_partitioned(&self) -> bool {
        !self.partition.is_empty()
    }

    pub(crate) fn apply(&mut self, fault: &Fault) {
        match fault {
            Fault::Crash(n) => {
                self.crashed.insert(n.clone());
            }
            Fault::Recover(n) => {
                self.crashed.remove(n);
            }
            Fault::Partition(groups) => self.partition = groups.clone(),
            Fault::Heal => self.partition.clear(),
        }
    }

    pub(crate) fn sample_delay(&mut self) -> u64 {
        let lo = self.config.min_delay.max(1);
        let hi = self.config.max_delay.max(lo);
        self.rng.gen_range(lo..=hi)
    }

    pub(crate) fn sample_client_delay(&mut self) -> u64 {
        let lo = self.config.min_delay.max(1);
        let hi = self.config.client_max_delay.max(lo);
        self.rng.gen_range(lo..=hi)
    }

    pub(crate) fn sample_drop(&mut self) -> bool {
        self.config.drop_rate > 0.0 && self.rng.gen_bool(self.config.drop_rate.min(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn partitions_split_links() {
        let mut net = SimNetwork::new(NetworkConfig::default(), ChaCha8Rng::seed_from_u64(1));
        let (a, b, c) = (NodeId::from("a"), NodeId::from("b"), NodeId::from("c"));
        net.apply(&Fault::Partition(vec![BTreeSet::from([a.clone()])]));
        assert!(!net.connected(&a, &b));
        assert!(!net.connected(&c, &a));
        assert!(net.connected(&b, &c));
        net.apply(&Fault::Heal);
        assert!(net.connected(&a, &b));
        net.apply(&Fault::Crash(b.clone()));
        assert!(!net.reachable(&a, &b));
    }

    #[test]
    fn delays_stay_in_bounds() {
        let mut net = SimNetwork::new(NetworkConfig::default(), ChaCha8Rng::seed_from_u64(7));
        for _ in 0..1000 {
            let d = net.sample_delay();
            assert!((1..=5).contains(&d));
        }
    }
}
