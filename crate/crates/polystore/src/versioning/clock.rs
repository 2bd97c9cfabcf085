use std::cmp::Ordering as CmpOrdering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::hashring::NodeId;

/// Outcome of comparing two clocks under the pointwise partial order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Causality {
    Equal,
    Before,
    After,
    Concurrent,
}

impl Causality {
    pub fn reverse(self) -> Self {
        match self {
            Causality::Before => Causality::After,
            Causality::After => Causality::Before,
            other => other,
        }
    }
}

/// Map from node id to a strictly positive counter. Absent entries read as 0
/// and zero entries are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorClock {
    entries: BTreeMap<NodeId, u64>,
}

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I, N>(entries: I) -> Self
    where
        I: IntoIterator<Item = (N, u64)>,
        N: Into<NodeId>,
    {
        let entries = entries
            .into_iter()
            .map(|(n, c)| (n.into(), c))
            .filter(|(_, c)| *c > 0)
            .collect();
        VectorClock { entries }
    }

    pub fn get(&self, node: &NodeId) -> u64 {
        self.entries.get(node).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&NodeId, u64)> {
        self.entries.iter().map(|(n, c)| (n, *c))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Raise `node`'s entry to at least `counter`.
    pub fn observe(&mut self, node: &NodeId, counter: u64) {
        if counter == 0 {
            return;
        }
        let slot = self.entries.entry(node.clone()).or_insert(0);
        *slot = (*slot).max(counter);
    }

    pub fn increment(&self, node: &NodeId) -> VectorClock {
        let mut next = self.clone();
        *next.entries.entry(node.clone()).or_insert(0) += 1;
        next
    }

    pub fn compare(&self, other: &VectorClock) -> Causality {
        let mut less = false;
        let mut greater = false;
        // Walk the union of keys once, in order.
        let mut a = self.entries.iter().peekable();
        let mut b = other.entries.iter().peekable();
        loop {
            let (x, y) = match (a.peek(), b.peek()) {
                (None, None) => break,
                (Some((_, &x)), None) => {
                    a.next();
                    (x, 0)
                }
                (None, Some((_, &y))) => {
                    b.next();
                    (0, y)
                }
                (Some((ka, &x)), Some((kb, &y))) => match ka.cmp(kb) {
                    CmpOrdering::Less => {
                        a.next();
                        (x, 0)
                    }
                    CmpOrdering::Greater => {
                        b.next();
                        (0, y)
                    }
                    CmpOrdering::Equal => {
                        a.next();
                        b.next();
                        (x, y)
                    }
                },
            };
            match x.cmp(&y) {
                CmpOrdering::Less => less = true,
                CmpOrdering::Greater => greater = true,
                CmpOrdering::Equal => {}
            }
            if less && greater {
                return Causality::Concurrent;
            }
        }
        match (less, greater) {
            (false, false) => Causality::Equal,
            (true, false) => Causality::Before,
            (false, true) => Causality::After,
            (true, true) => Causality::Concurrent,
        }
    }

    /// True when `self` is After or Equal to `other`.
    pub fn descends(&self, other: &VectorClock) -> bool {
        matches!(self.compare(other), Causality::After | Causality::Equal)
    }

    pub fn merge(&self, other: &VectorClock) -> VectorClock {
        let mut merged = self.clone();
        merged.merge_in(other);
        merged
    }

    pub fn merge_in(&mut self, other: &VectorClock) {
        for (node, counter) in &other.entries {
            self.observe(node, *counter);
        }
    }

    /// `node:counter` pairs sorted by node id, joined with commas.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (node, counter) in &self.entries {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "{node}:{counter}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed clock entry `{0}`")]
pub struct ClockParseError(pub String);

impl FromStr for VectorClock {
    type Err = ClockParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut clock = VectorClock::new();
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (node, counter) = part
                .rsplit_once(':')
                .ok_or_else(|| ClockParseError(part.to_string()))?;
            let counter: u64 = counter
                .parse()
                .map_err(|_| ClockParseError(part.to_string()))?;
            if node.is_empty() || counter == 0 {
                return Err(ClockParseError(part.to_string()));
            }
            clock.observe(&NodeId::new(node), counter);
        }
        Ok(clock)
    }
}

pub fn vc_increment(clock: &VectorClock, node: &NodeId) -> VectorClock {
    clock.increment(node)
}

pub fn vc_compare(a: &VectorClock, b: &VectorClock) -> Causality {
    a.compare(b)
}

pub fn vc_merge(a: &VectorClock, b: &VectorClock) -> VectorClock {
    a.merge(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vc(entries: &[(&str, u64)]) -> VectorClock {
        VectorClock::from_entries(entries.iter().map(|(n, c)| (*n, *c)))
    }

    #[test]
    fn increment_examples() {
        let a = NodeId::from("A");
        assert_eq!(vc_increment(&vc(&[]), &a), vc(&[("A", 1)]));
        assert_eq!(
            vc_increment(&vc(&[("A", 1), ("B", 2)]), &a),
            vc(&[("A", 2), ("B", 2)])
        );
        let mut c = VectorClock::new();
        for _ in 0..17 {
            c = vc_increment(&c, &a);
        }
        assert_eq!(c, vc(&[("A", 17)]));
    }

    #[test]
    fn compare_examples() {
        assert_eq!(vc_compare(&vc(&[]), &vc(&[])), Causality::Equal);
        assert_eq!(
            vc_compare(&vc(&[("A", 1)]), &vc(&[("A", 1), ("B", 1)])),
            Causality::Before
        );
        assert_eq!(
            vc_compare(&vc(&[("A", 1), ("B", 1)]), &vc(&[("A", 1)])),
            Causality::After
        );
        assert_eq!(
            vc_compare(&vc(&[("A", 2), ("B", 1)]), &vc(&[("A", 1), ("B", 2)])),
            Causality::Concurrent
        );
    }

    #[test]
    fn merge_examples() {
        assert_eq!(
            vc_merge(&vc(&[("A", 1)]), &vc(&[("B", 2)])),
            vc(&[("A", 1), ("B", 2)])
        );
        let a = vc(&[("A", 3), ("C", 1)]);
        assert_eq!(vc_merge(&a, &a), a);
    }

    #[test]
    fn zero_entries_are_not_stored() {
        let c = vc(&[("A", 0), ("B", 2)]);
        assert_eq!(c.len(), 1);
        assert_eq!(c, vc(&[("B", 2)]));
    }

    #[test]
    fn canonical_encoding() {
        let c = vc(&[("b", 2), ("a", 1)]);
        assert_eq!(c.canonical(), "a:1,b:2");
        assert_eq!("a:1,b:2".parse::<VectorClock>().unwrap(), c);
        assert_eq!("".parse::<VectorClock>().unwrap(), VectorClock::new());
        assert!("a".parse::<VectorClock>().is_err());
        assert!("a:0".parse::<VectorClock>().is_err());
    }
}
