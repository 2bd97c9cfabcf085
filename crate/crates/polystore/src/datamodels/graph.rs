use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{read, read_set, sorted_keys, write, DataModelError, Fixture, Result};
use crate::cluster::Cluster;
use crate::hashring::NodeId;
use crate::versioning::VectorClock;

/// One global graph; there are no separate databases.
const ELEMENTS: &str = "graph";
/// Node id to the ids of its incident relations.
const ADJACENCY: &str = "graph/adj";

pub type Properties = BTreeMap<String, Value>;

/// An element is a node or a relation, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphElement {
    Node {
        id: String,
        properties: Properties,
    },
    Relation {
        id: String,
        from: String,
        to: String,
        label: String,
        properties: Properties,
    },
}

/// Node filters: `has`, equality and numeric comparisons. A node lacking a
/// compared property never matches.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Has(String),
    Eq(String, Value),
    Lt(String, f64),
    Gt(String, f64),
    And(Vec<Predicate>),
}

impl Predicate {
    pub fn has(field: &str) -> Self {
        Predicate::Has(field.to_string())
    }

    pub fn eq(field: &str, value: impl Into<Value>) -> Self {
        Predicate::Eq(field.to_string(), value.into())
    }

    pub fn lt(field: &str, bound: f64) -> Self {
        Predicate::Lt(field.to_string(), bound)
    }

    pub fn gt(field: &str, bound: f64) -> Self {
        Predicate::Gt(field.to_string(), bound)
    }

    pub fn and(self, other: Predicate) -> Self {
        match self {
            Predicate::And(mut all) => {
                all.push(other);
                Predicate::And(all)
            }
            p => Predicate::And(vec![p, other]),
        }
    }

    pub fn eval(&self, props: &Properties) -> bool {
        let num = |f: &str| props.get(f).and_then(Value::as_f64);
        match self {
            Predicate::Has(f) => props.contains_key(f),
            Predicate::Eq(f, v) => props.get(f) == Some(v),
            Predicate::Lt(f, b) => num(f).is_some_and(|x| x < *b),
            Predicate::Gt(f, b) => num(f).is_some_and(|x| x > *b),
            Predicate::And(all) => all.iter().all(|p| p.eval(props)),
        }
    }
}

fn node_key(id: &str) -> String {
    format!("n/{id}")
}

fn relation_key(id: &str) -> String {
    format!("r/{id}")
}

/// Key and bytes of a fresh node, for bulk loaders.
pub fn encode_node(id: &str, properties: &Properties) -> (String, Vec<u8>) {
    let element = GraphElement::Node {
        id: id.to_string(),
        properties: properties.clone(),
    };
    (node_key(id), serde_json::to_vec(&element).expect("json values serialize"))
}

#[derive(Debug, Clone)]
pub struct Graph {
    pub via: NodeId,
}

impl Graph {
    pub fn new(via: impl Into<NodeId>) -> Self {
        Graph { via: via.into() }
    }

    fn element(&self, cluster: &mut Cluster, key: &str) -> Result<Option<GraphElement>> {
        match read(cluster, &self.via, ELEMENTS, key)?.bytes {
            Some(b) => Ok(Some(serde_json::from_slice(&b)?)),
            None => Ok(None),
        }
    }

    pub fn node(&self, cluster: &mut Cluster, id: &str) -> Result<Option<Properties>> {
        Ok(match self.element(cluster, &node_key(id))? {
            Some(GraphElement::Node { properties, .. }) => Some(properties),
            _ => None,
        })
    }

    pub fn relation(&self, cluster: &mut Cluster, id: &str) -> Result<Option<GraphElement>> {
        self.element(cluster, &relation_key(id))
    }

    pub fn add_node(&self, cluster: &mut Cluster, id: &str, properties: Properties) -> Result<String> {
        let key = node_key(id);
        let current = read(cluster, &self.via, ELEMENTS, &key)?;
        if current.bytes.is_some() {
            return Err(DataModelError::DuplicateId(id.to_string()));
        }
        let (_, bytes) = encode_node(id, &properties);
        write(cluster, &self.via, ELEMENTS, &key, &bytes, &current.context)?;
        Ok(id.to_string())
    }

    /// Relation ids are `from-label->to`; both endpoints must exist.
    pub fn add_relation(
        &self,
        cluster: &mut Cluster,
        from: &str,
        to: &str,
        label: &str,
        properties: Properties,
    ) -> Result<String> {
        for end in [from, to] {
            if self.node(cluster, end)?.is_none() {
                return Err(DataModelError::DanglingEndpoint(end.to_string()));
            }
        }
        let id = format!("{from}-{label}->{to}");
        let key = relation_key(&id);
        let current = read(cluster, &self.via, ELEMENTS, &key)?;
        if current.bytes.is_some() {
            return Err(DataModelError::DuplicateId(id));
        }
        let element = GraphElement::Relation {
            id: id.clone(),
            from: from.to_string(),
            to: to.to_string(),
            label: label.to_string(),
            properties,
        };
        write(cluster, &self.via, ELEMENTS, &key, &serde_json::to_vec(&element)?, &current.context)?;
        for end in [from, to] {
            let (mut set, ctx) = read_set(cluster, &self.via, ADJACENCY, end)?;
            if set.insert(id.clone()) {
                write(cluster, &self.via, ADJACENCY, end, &serde_json::to_vec(&set)?, &ctx)?;
            }
        }
        Ok(id)
    }

    /// All nodes in id order.
    pub fn nodes(&self, cluster: &mut Cluster) -> Result<Vec<(String, Properties)>> {
        let mut out = Vec::new();
        for key in sorted_keys(cluster, &self.via, ELEMENTS)? {
            if let Some(id) = key.strip_prefix("n/") {
                if let Some(props) = self.node(cluster, id)? {
                    out.push((id.to_string(), props));
                }
            }
        }
        Ok(out)
    }

    pub fn relations(&self, cluster: &mut Cluster) -> Result<Vec<GraphElement>> {
        let mut out = Vec::new();
        for key in sorted_keys(cluster, &self.via, ELEMENTS)? {
            if key.starts_with("r/") {
                out.extend(self.element(cluster, &key)?);
            }
        }
        Ok(out)
    }

    pub fn filter(&self, cluster: &mut Cluster, predicate: &Predicate) -> Result<Vec<(String, Properties)>> {
        Ok(self
            .nodes(cluster)?
            .into_iter()
            .filter(|(_, p)| predicate.eval(p))
            .collect())
    }

    /// Ids of nodes adjacent to `id` through any relation, either direction,
    /// one entry per relation.
    pub fn neighbors(&self, cluster: &mut Cluster, id: &str) -> Result<Vec<String>> {
        let (rels, _) = read_set(cluster, &self.via, ADJACENCY, id)?;
        let mut out = Vec::new();
        for rel in rels {
            if let Some(GraphElement::Relation { from, to, .. }) = self.relation(cluster, &rel)? {
                out.push(if from == id { to } else { from });
            }
        }
        out.sort_by(|a, b| super::natural_cmp(a, b));
        Ok(out)
    }

    /// One-hop match from `start`: a (start, neighbor) property pair per
    /// incident relation.
    pub fn match_neighbors(&self, cluster: &mut Cluster, start: &str) -> Result<Vec<(Properties, Properties)>> {
        let origin = self
            .node(cluster, start)?
            .ok_or_else(|| DataModelError::UnknownNode(start.to_string()))?;
        let mut out = Vec::new();
        for n in self.neighbors(cluster, start)? {
            if let Some(p) = self.node(cluster, &n)? {
                out.push((origin.clone(), p));
            }
        }
        Ok(out)
    }

    /// Nodes keyed `<collection>/<id>` with every other field as a
    /// property, then the fixture's relations.
    pub fn load(&self, cluster: &mut Cluster, fixture: &Fixture) -> Result<usize> {
        let mut n = 0;
        for r in fixture.records.iter().filter(|r| r.model == "*") {
            let id = r
                .id()
                .ok_or_else(|| DataModelError::Encoding("graph node needs an `id`".into()))?;
            let props: Properties = r
                .fields
                .iter()
                .filter(|(k, _)| k != "id")
                .map(|(k, v)| (k.clone(), v.to_json()))
                .collect();
            self.add_node(cluster, &format!("{}/{id}", r.collection), props)?;
            n += 1;
        }
        for r in fixture.records.iter().filter(|r| r.model == "graph") {
            let end = |name: &str| {
                r.get(name)
                    .map(|f| f.as_key())
                    .ok_or_else(|| DataModelError::Encoding(format!("relation needs `{name}`")))
            };
            let props: Properties = r
                .fields
                .iter()
                .filter(|(k, _)| k != "from" && k != "to")
                .map(|(k, v)| (k.clone(), v.to_json()))
                .collect();
            self.add_relation(cluster, &end("from")?, &end("to")?, &r.collection, props)?;
            n += 1;
        }
        Ok(n)
    }

    /// Raw node write used by bulk loaders that know the id is fresh.
    pub fn put_encoded(&self, cluster: &mut Cluster, key: &str, bytes: &[u8]) -> Result<VectorClock> {
        write(cluster, &self.via, ELEMENTS, key, bytes, &VectorClock::new())
    }

    pub const BUCKET: &'static str = ELEMENTS;
}
