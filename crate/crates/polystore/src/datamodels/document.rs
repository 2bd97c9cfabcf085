use serde_json::{Map, Value};

use super::{read, sorted_keys, write, DataModelError, Fixture, Result};
use crate::cluster::Cluster;
use crate::hashring::NodeId;
use crate::versioning::VectorClock;

/// JSON documents grouped in collections of one database. A document is
/// written with a single replicated put, so it is never half-stored.
#[derive(Debug, Clone)]
pub struct Documents {
    pub database: String,
    pub via: NodeId,
}

/// Canonical id and bytes of a document. The `_id` field is required.
pub fn encode_document(doc: &Value) -> Result<(String, Vec<u8>)> {
    let id = match doc.get("_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(DataModelError::Encoding("document needs a string or number `_id`".into())),
    };
    Ok((id, serde_json::to_vec(doc)?))
}

fn matches(doc: &Value, filter: &[(&str, Value)]) -> bool {
    filter.iter().all(|(field, want)| doc.get(*field) == Some(want))
}

fn project(doc: Value, fields: &[&str]) -> Value {
    let Value::Object(map) = doc else { return doc };
    let kept: Map<String, Value> = map
        .into_iter()
        .filter(|(k, _)| k == "_id" || fields.contains(&k.as_str()))
        .collect();
    Value::Object(kept)
}

impl Documents {
    pub fn new(database: impl Into<String>, via: impl Into<NodeId>) -> Self {
        Documents {
            database: database.into(),
            via: via.into(),
        }
    }

    fn registry(&self) -> String {
        format!("doc/{}", self.database)
    }

    pub fn bucket(&self, collection: &str) -> String {
        format!("doc/{}/{}", self.database, collection)
    }

    pub fn collections(&self, cluster: &mut Cluster) -> Result<Vec<String>> {
        sorted_keys(cluster, &self.via, &self.registry())
    }

    fn exists(&self, cluster: &mut Cluster, collection: &str) -> Result<bool> {
        Ok(read(cluster, &self.via, &self.registry(), collection)?.bytes.is_some())
    }

    fn require(&self, cluster: &mut Cluster, collection: &str) -> Result<()> {
        if self.exists(cluster, collection)? {
            Ok(())
        } else {
            Err(DataModelError::UnknownCollection(collection.to_string()))
        }
    }

    /// Creates the collection on first use.
    pub fn create_collection(&self, cluster: &mut Cluster, collection: &str) -> Result<()> {
        let current = read(cluster, &self.via, &self.registry(), collection)?;
        if current.bytes.is_none() {
            write(cluster, &self.via, &self.registry(), collection, b"{}", &current.context)?;
        }
        Ok(())
    }

    pub fn insert(&self, cluster: &mut Cluster, collection: &str, doc: &Value) -> Result<String> {
        let (id, bytes) = encode_document(doc)?;
        self.create_collection(cluster, collection)?;
        let bucket = self.bucket(collection);
        let current = read(cluster, &self.via, &bucket, &id)?;
        if current.bytes.is_some() {
            return Err(DataModelError::DuplicateId(id));
        }
        write(cluster, &self.via, &bucket, &id, &bytes, &current.context)?;
        Ok(id)
    }

    pub fn get(&self, cluster: &mut Cluster, collection: &str, id: &str) -> Result<Option<Value>> {
        match read(cluster, &self.via, &self.bucket(collection), id)?.bytes {
            Some(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            None => Ok(None),
        }
    }

    /// Every document, in id order.
    pub fn all(&self, cluster: &mut Cluster, collection: &str) -> Result<Vec<Value>> {
        self.require(cluster, collection)?;
        let bucket = self.bucket(collection);
        let mut out = Vec::new();
        for id in sorted_keys(cluster, &self.via, &bucket)? {
            if let Some(doc) = self.get(cluster, collection, &id)? {
                out.push(doc);
            }
        }
        Ok(out)
    }

    /// Documents whose top-level fields equal every filter value. With a
    /// projection only `_id` and the listed fields are kept.
    pub fn find(
        &self,
        cluster: &mut Cluster,
        collection: &str,
        filter: &[(&str, Value)],
        projection: Option<&[&str]>,
    ) -> Result<Vec<Value>> {
        let docs = self.all(cluster, collection)?;
        Ok(docs
            .into_iter()
            .filter(|d| matches(d, filter))
            .map(|d| match projection {
                Some(fields) => project(d, fields),
                None => d,
            })
            .collect())
    }

    /// Map each document to its `field` value, reduce by counting. Groups
    /// come out in the order their first document appears; documents
    /// without the field are skipped.
    pub fn group(&self, cluster: &mut Cluster, collection: &str, field: &str) -> Result<Vec<(Value, u64)>> {
        let mut groups: Vec<(Value, u64)> = Vec::new();
        for doc in self.all(cluster, collection)? {
            let Some(key) = doc.get(field) else { continue };
            match groups.iter_mut().find(|(k, _)| k == key) {
                Some((_, total)) => *total += 1,
                None => groups.push((key.clone(), 1)),
            }
        }
        Ok(groups)
    }

    /// Delete matching documents (all of them for an empty filter). The
    /// collection stays. Returns how many were removed.
    pub fn remove(&self, cluster: &mut Cluster, collection: &str, filter: &[(&str, Value)]) -> Result<usize> {
        let bucket = self.bucket(collection);
        let mut removed = 0;
        for doc in self.find(cluster, collection, filter, None)? {
            let (id, _) = encode_document(&doc)?;
            let current = read(cluster, &self.via, &bucket, &id)?;
            cluster.delete(&self.via, &bucket, id.as_bytes(), &current.context)?;
            removed += 1;
        }
        Ok(removed)
    }

    /// Delete the content and the collection itself.
    pub fn drop(&self, cluster: &mut Cluster, collection: &str) -> Result<()> {
        self.remove(cluster, collection, &[])?;
        let current = read(cluster, &self.via, &self.registry(), collection)?;
        cluster.delete(&self.via, &self.registry(), collection.as_bytes(), &current.context)?;
        Ok(())
    }

    /// Load the fixture's document records; `id` becomes `_id`.
    pub fn load(&self, cluster: &mut Cluster, fixture: &Fixture) -> Result<usize> {
        let mut n = 0;
        for record in fixture.for_model("doc") {
            let mut map = Map::new();
            for (name, value) in &record.fields {
                let name = if name == "id" { "_id" } else { name.as_str() };
                map.insert(name.to_string(), value.to_json());
            }
            self.insert(cluster, &record.collection, &Value::Object(map))?;
            n += 1;
        }
        Ok(n)
    }

    /// Raw write used by bulk loaders that have already created the
    /// collection and know the id is fresh.
    pub fn put_encoded(
        &self,
        cluster: &mut Cluster,
        collection: &str,
        id: &str,
        bytes: &[u8],
    ) -> Result<VectorClock> {
        write(cluster, &self.via, &self.bucket(collection), id, bytes, &VectorClock::new())
    }
}
