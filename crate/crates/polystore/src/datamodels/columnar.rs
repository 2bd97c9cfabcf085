use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{natural_cmp, read, read_set, sorted_keys, write, DataModelError, Field, Fixture, Result};
use crate::cluster::Cluster;
use crate::hashring::NodeId;
use crate::replication::{BucketConfig, QuorumConfig};
use crate::versioning::VectorClock;

const SCHEMA_BUCKET: &str = "cf/schema";
pub const DEFAULT_FAMILY: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnType {
    Text,
    Int,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Text => f.write_str("text"),
            ColumnType::Int => f.write_str("int"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Int(i64),
    Text(String),
}

impl CellValue {
    pub fn column_type(&self) -> ColumnType {
        match self {
            CellValue::Text(_) => ColumnType::Text,
            CellValue::Int(_) => ColumnType::Int,
        }
    }

    fn as_key(&self) -> String {
        match self {
            CellValue::Text(s) => s.clone(),
            CellValue::Int(i) => i.to_string(),
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Text(s) => f.write_str(s),
            CellValue::Int(i) => write!(f, "{i}"),
        }
    }
}

impl From<&str> for CellValue {
    fn from(s: &str) -> Self {
        CellValue::Text(s.to_string())
    }
}

impl From<i64> for CellValue {
    fn from(i: i64) -> Self {
        CellValue::Int(i)
    }
}

/// A query result row: column name to value, primary key included, unset
/// columns absent.
pub type Row = BTreeMap<String, CellValue>;

/// Stored layout: family name to its set columns.
type Families = BTreeMap<String, BTreeMap<String, CellValue>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub primary_key: String,
    pub key_type: ColumnType,
    /// Column name to (family, type).
    pub columns: BTreeMap<String, (String, ColumnType)>,
    /// Columns with a secondary index.
    pub indexes: BTreeSet<String>,
}

impl TableSchema {
    pub fn new(name: impl Into<String>, primary_key: impl Into<String>, key_type: ColumnType) -> Self {
        TableSchema {
            name: name.into(),
            primary_key: primary_key.into(),
            key_type,
            columns: BTreeMap::new(),
            indexes: BTreeSet::new(),
        }
    }

    pub fn column(self, name: &str, ty: ColumnType) -> Self {
        self.column_in(DEFAULT_FAMILY, name, ty)
    }

    pub fn column_in(mut self, family: &str, name: &str, ty: ColumnType) -> Self {
        self.columns.insert(name.to_string(), (family.to_string(), ty));
        self
    }

    fn check(&self, column: &str, value: &CellValue) -> Result<()> {
        let expected = if column == self.primary_key {
            self.key_type
        } else {
            self.columns
                .get(column)
                .ok_or_else(|| DataModelError::UnknownColumn(column.to_string()))?
                .1
        };
        if value.column_type() != expected {
            return Err(DataModelError::TypeMismatch {
                column: column.to_string(),
                expected,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyspaceSchema {
    pub name: String,
    pub replication_factor: usize,
    pub tables: BTreeMap<String, TableSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnMutation {
    Set(String, CellValue),
    Delete(String),
}

/// Bytes stored for a row. Only set columns are written.
pub fn encode_row(families: &BTreeMap<String, BTreeMap<String, CellValue>>) -> Vec<u8> {
    serde_json::to_vec(families).expect("cell values serialize")
}

/// Where a row's family lives. Every family of a row shares the row's
/// bucket and key, so all of them land on the same replicas.
pub fn cf_placement_key(keyspace: &str, table: &str, row_key: &CellValue, _family: &str) -> (String, Vec<u8>) {
    (table_bucket(keyspace, table), row_key.as_key().into_bytes())
}

fn table_bucket(keyspace: &str, table: &str) -> String {
    format!("cf/{keyspace}/{table}")
}

fn index_bucket(keyspace: &str, table: &str, column: &str) -> String {
    format!("cf/{keyspace}/{table}/idx/{column}")
}

fn flatten(schema: &TableSchema, key: &str, families: &Families) -> Row {
    let mut row = Row::new();
    let key_value = match schema.key_type {
        ColumnType::Int => key.parse().map(CellValue::Int).unwrap_or_else(|_| CellValue::Text(key.to_string())),
        ColumnType::Text => CellValue::Text(key.to_string()),
    };
    row.insert(schema.primary_key.clone(), key_value);
    for cols in families.values() {
        row.extend(cols.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    row
}

/// Keyspaces with static schemas, sparse rows and equality secondary indexes.
#[derive(Debug, Clone)]
pub struct ColumnFamilies {
    pub via: NodeId,
}

impl ColumnFamilies {
    pub fn new(via: impl Into<NodeId>) -> Self {
        ColumnFamilies { via: via.into() }
    }

    pub fn keyspace(&self, cluster: &mut Cluster, name: &str) -> Result<KeyspaceSchema> {
        match read(cluster, &self.via, SCHEMA_BUCKET, name)?.bytes {
            Some(b) => Ok(serde_json::from_slice(&b)?),
            None => Err(DataModelError::UnknownKeyspace(name.to_string())),
        }
    }

    pub fn keyspaces(&self, cluster: &mut Cluster) -> Result<Vec<String>> {
        sorted_keys(cluster, &self.via, SCHEMA_BUCKET)
    }

    fn save(&self, cluster: &mut Cluster, schema: &KeyspaceSchema) -> Result<()> {
        let current = read(cluster, &self.via, SCHEMA_BUCKET, &schema.name)?;
        write(cluster, &self.via, SCHEMA_BUCKET, &schema.name, &serde_json::to_vec(schema)?, &current.context)?;
        Ok(())
    }

    fn table(&self, cluster: &mut Cluster, keyspace: &str, table: &str) -> Result<TableSchema> {
        self.keyspace(cluster, keyspace)?
            .tables
            .remove(table)
            .ok_or_else(|| DataModelError::UnknownTable(table.to_string()))
    }

    /// The keyspace exists from now on, with or without data.
    pub fn create_keyspace(&self, cluster: &mut Cluster, name: &str, replication_factor: usize) -> Result<KeyspaceSchema> {
        if read(cluster, &self.via, SCHEMA_BUCKET, name)?.bytes.is_some() {
            return Err(DataModelError::DuplicateName(name.to_string()));
        }
        let schema = KeyspaceSchema {
            name: name.to_string(),
            replication_factor: replication_factor.max(1),
            tables: BTreeMap::new(),
        };
        self.save(cluster, &schema)?;
        Ok(schema)
    }

    pub fn create_table(&self, cluster: &mut Cluster, keyspace: &str, table: TableSchema) -> Result<KeyspaceSchema> {
        let mut ks = self.keyspace(cluster, keyspace)?;
        if ks.tables.contains_key(&table.name) {
            return Err(DataModelError::DuplicateName(table.name));
        }
        let n = ks.replication_factor.min(cluster.node_ids().len()).max(1);
        let majority = n / 2 + 1;
        let quorum = QuorumConfig::new(n, majority, majority)?;
        cluster.create_bucket(BucketConfig::new(table_bucket(keyspace, &table.name), quorum))?;
        for col in &table.indexes {
            cluster.create_bucket(BucketConfig::new(index_bucket(keyspace, &table.name, col), quorum))?;
        }
        ks.tables.insert(table.name.clone(), table);
        self.save(cluster, &ks)?;
        Ok(ks)
    }

    /// Declare a column. Existing rows are untouched.
    pub fn add_column(
        &self,
        cluster: &mut Cluster,
        keyspace: &str,
        table: &str,
        family: &str,
        column: &str,
        ty: ColumnType,
    ) -> Result<KeyspaceSchema> {
        let mut ks = self.keyspace(cluster, keyspace)?;
        let t = ks
            .tables
            .get_mut(table)
            .ok_or_else(|| DataModelError::UnknownTable(table.to_string()))?;
        if t.columns.contains_key(column) || t.primary_key == column {
            return Err(DataModelError::DuplicateName(column.to_string()));
        }
        t.columns.insert(column.to_string(), (family.to_string(), ty));
        self.save(cluster, &ks)?;
        Ok(ks)
    }

    /// Index `column` and backfill it from the rows already stored.
    pub fn create_index(&self, cluster: &mut Cluster, keyspace: &str, table: &str, column: &str) -> Result<KeyspaceSchema> {
        let mut ks = self.keyspace(cluster, keyspace)?;
        let rf = ks.replication_factor;
        let t = ks
            .tables
            .get_mut(table)
            .ok_or_else(|| DataModelError::UnknownTable(table.to_string()))?;
        if !t.columns.contains_key(column) {
            return Err(DataModelError::UnknownColumn(column.to_string()));
        }
        if !t.indexes.insert(column.to_string()) {
            return Err(DataModelError::DuplicateName(column.to_string()));
        }
        let n = rf.min(cluster.node_ids().len()).max(1);
        let quorum = QuorumConfig::new(n, n / 2 + 1, n / 2 + 1)?;
        cluster.create_bucket(BucketConfig::new(index_bucket(keyspace, table, column), quorum))?;
        self.save(cluster, &ks)?;
        let bucket = table_bucket(keyspace, table);
        for key in sorted_keys(cluster, &self.via, &bucket)? {
            let families = self.families(cluster, &bucket, &key)?.0;
            if let Some(v) = families.values().find_map(|cols| cols.get(column)) {
                self.index_add(cluster, keyspace, table, column, v, &key)?;
            }
        }
        Ok(ks)
    }

    fn families(&self, cluster: &mut Cluster, bucket: &str, key: &str) -> Result<(Families, VectorClock, bool)> {
        let current = read(cluster, &self.via, bucket, key)?;
        let exists = current.bytes.is_some();
        let families = match current.bytes {
            Some(b) => serde_json::from_slice(&b)?,
            None => Families::new(),
        };
        Ok((families, current.context, exists))
    }

    fn index_add(&self, cluster: &mut Cluster, ks: &str, table: &str, column: &str, value: &CellValue, key: &str) -> Result<()> {
        let bucket = index_bucket(ks, table, column);
        let (mut set, ctx) = read_set(cluster, &self.via, &bucket, &value.as_key())?;
        if set.insert(key.to_string()) {
            write(cluster, &self.via, &bucket, &value.as_key(), &serde_json::to_vec(&set)?, &ctx)?;
        }
        Ok(())
    }

    fn index_remove(&self, cluster: &mut Cluster, ks: &str, table: &str, column: &str, value: &CellValue, key: &str) -> Result<()> {
        let bucket = index_bucket(ks, table, column);
        let (mut set, ctx) = read_set(cluster, &self.via, &bucket, &value.as_key())?;
        if set.remove(key) {
            write(cluster, &self.via, &bucket, &value.as_key(), &serde_json::to_vec(&set)?, &ctx)?;
        }
        Ok(())
    }

    /// Set and delete columns of one row, creating it if needed. Other rows
    /// are never touched. A row left with no columns is removed.
    pub fn upsert(
        &self,
        cluster: &mut Cluster,
        keyspace: &str,
        table: &str,
        row_key: &CellValue,
        mutations: &[ColumnMutation],
    ) -> Result<()> {
        let schema = self.table(cluster, keyspace, table)?;
        schema.check(&schema.primary_key, row_key)?;
        for m in mutations {
            match m {
                ColumnMutation::Set(c, v) if *c != schema.primary_key => schema.check(c, v)?,
                ColumnMutation::Delete(c) if schema.columns.contains_key(c) => {}
                ColumnMutation::Set(c, _) | ColumnMutation::Delete(c) => {
                    return Err(DataModelError::UnknownColumn(c.clone()))
                }
            }
        }
        let (bucket, key) = cf_placement_key(keyspace, table, row_key, DEFAULT_FAMILY);
        let key = String::from_utf8(key).expect("utf8 key");
        let (mut families, ctx, existed) = self.families(cluster, &bucket, &key)?;
        let before = flatten(&schema, &key, &families);
        for m in mutations {
            match m {
                ColumnMutation::Set(c, v) => {
                    let family = &schema.columns[c].0;
                    families.entry(family.clone()).or_default().insert(c.clone(), v.clone());
                }
                ColumnMutation::Delete(c) => {
                    let family = &schema.columns[c].0;
                    if let Some(cols) = families.get_mut(family) {
                        cols.remove(c);
                        if cols.is_empty() {
                            families.remove(family);
                        }
                    }
                }
            }
        }
        let after = flatten(&schema, &key, &families);
        if families.is_empty() {
            if existed {
                cluster.delete(&self.via, &bucket, key.as_bytes(), &ctx)?;
            }
        } else if after != before || !existed {
            write(cluster, &self.via, &bucket, &key, &encode_row(&families), &ctx)?;
        }
        for col in &schema.indexes {
            let (old, new) = (before.get(col), after.get(col));
            if old == new {
                continue;
            }
            if let Some(v) = old {
                self.index_remove(cluster, keyspace, table, col, v, &key)?;
            }
            if let Some(v) = new {
                self.index_add(cluster, keyspace, table, col, v, &key)?;
            }
        }
        Ok(())
    }

    pub fn delete_row(&self, cluster: &mut Cluster, keyspace: &str, table: &str, row_key: &CellValue) -> Result<()> {
        let schema = self.table(cluster, keyspace, table)?;
        let deletes: Vec<ColumnMutation> = schema.columns.keys().map(|c| ColumnMutation::Delete(c.clone())).collect();
        self.upsert(cluster, keyspace, table, row_key, &deletes)
    }

    pub fn get_row(&self, cluster: &mut Cluster, keyspace: &str, table: &str, row_key: &CellValue) -> Result<Option<Row>> {
        let schema = self.table(cluster, keyspace, table)?;
        let key = row_key.as_key();
        let (families, _, exists) = self.families(cluster, &table_bucket(keyspace, table), &key)?;
        Ok(exists.then(|| flatten(&schema, &key, &families)))
    }

    /// Stored bytes of a row, as the storage layer sees them.
    pub fn raw_row(&self, cluster: &mut Cluster, keyspace: &str, table: &str, row_key: &CellValue) -> Result<Option<Vec<u8>>> {
        Ok(read(cluster, &self.via, &table_bucket(keyspace, table), &row_key.as_key())?.bytes)
    }

    /// Every row in key order.
    pub fn scan(&self, cluster: &mut Cluster, keyspace: &str, table: &str) -> Result<Vec<Row>> {
        let schema = self.table(cluster, keyspace, table)?;
        let bucket = table_bucket(keyspace, table);
        let mut rows = Vec::new();
        for key in sorted_keys(cluster, &self.via, &bucket)? {
            let (families, _, exists) = self.families(cluster, &bucket, &key)?;
            if exists {
                rows.push(flatten(&schema, &key, &families));
            }
        }
        Ok(rows)
    }

    /// Rows matching every equality predicate. A single predicate must be on
    /// the primary key or an indexed column; anything that would need a
    /// filtering pass (unindexed columns, several predicates) needs
    /// `allow_filtering`.
    pub fn select(
        &self,
        cluster: &mut Cluster,
        keyspace: &str,
        table: &str,
        filter: &[(&str, CellValue)],
        allow_filtering: bool,
    ) -> Result<Vec<Row>> {
        let schema = self.table(cluster, keyspace, table)?;
        for (c, v) in filter {
            schema.check(c, v)?;
        }
        let keyed = |c: &str| c == schema.primary_key || schema.indexes.contains(c);
        let needs_filtering = match filter {
            [] => false,
            [(c, _)] => !keyed(c),
            _ => true,
        };
        if needs_filtering && !allow_filtering {
            return Err(DataModelError::IndexRequired);
        }
        let candidates: Vec<Row> = match filter.iter().find(|(c, _)| keyed(c)) {
            Some((c, v)) if *c == schema.primary_key => self.get_row(cluster, keyspace, table, v)?.into_iter().collect(),
            Some((c, v)) => {
                let (keys, _) = read_set(cluster, &self.via, &index_bucket(keyspace, table, c), &v.as_key())?;
                let mut keys: Vec<String> = keys.into_iter().collect();
                keys.sort_by(|a, b| natural_cmp(a, b));
                let bucket = table_bucket(keyspace, table);
                let mut rows = Vec::new();
                for key in keys {
                    let (families, _, exists) = self.families(cluster, &bucket, &key)?;
                    if exists {
                        rows.push(flatten(&schema, &key, &families));
                    }
                }
                rows
            }
            None => self.scan(cluster, keyspace, table)?,
        };
        Ok(candidates
            .into_iter()
            .filter(|row| filter.iter().all(|(c, v)| row.get(*c) == Some(v)))
            .collect())
    }

    pub fn count(
        &self,
        cluster: &mut Cluster,
        keyspace: &str,
        table: &str,
        filter: &[(&str, CellValue)],
        allow_filtering: bool,
    ) -> Result<usize> {
        Ok(self.select(cluster, keyspace, table, filter, allow_filtering)?.len())
    }

    /// Create `keyspace` with one table per fixture collection, keyed by
    /// `id`, and load the rows. Column types come from the first record
    /// that sets the column.
    pub fn load(&self, cluster: &mut Cluster, fixture: &Fixture, keyspace: &str, replication_factor: usize) -> Result<usize> {
        self.create_keyspace(cluster, keyspace, replication_factor)?;
        for collection in fixture.collections("cf") {
            let mut table = TableSchema::new(collection.as_str(), "id", ColumnType::Int);
            for r in fixture.for_model("cf").filter(|r| r.collection == collection) {
                for (name, value) in &r.fields {
                    if name != "id" && !table.columns.contains_key(name) {
                        let ty = match value {
                            Field::Text(_) => ColumnType::Text,
                            Field::Int(_) => ColumnType::Int,
                        };
                        table = table.column(name, ty);
                    }
                }
            }
            self.create_table(cluster, keyspace, table)?;
        }
        let mut n = 0;
        for r in fixture.for_model("cf") {
            let key = r
                .get("id")
                .ok_or_else(|| DataModelError::Encoding("cf record needs an `id`".into()))?
                .to_cell();
            let sets: Vec<ColumnMutation> = r
                .fields
                .iter()
                .filter(|(name, _)| name != "id")
                .map(|(name, v)| ColumnMutation::Set(name.clone(), v.to_cell()))
                .collect();
            self.upsert(cluster, keyspace, &r.collection, &key, &sets)?;
            n += 1;
        }
        Ok(n)
    }

    /// Raw row write used by bulk loaders on tables without indexes.
    pub fn put_encoded(
        &self,
        cluster: &mut Cluster,
        keyspace: &str,
        table: &str,
        row_key: &CellValue,
        bytes: &[u8],
    ) -> Result<VectorClock> {
        write(cluster, &self.via, &table_bucket(keyspace, table), &row_key.as_key(), bytes, &VectorClock::new())
    }

    pub fn table_bucket(keyspace: &str, table: &str) -> String {
        table_bucket(keyspace, table)
    }
}
