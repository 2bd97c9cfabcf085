//! Line-oriented fixture files: `model<TAB>collection<TAB>field<TAB>...`.

use serde_json::Value;

use super::{CellValue, DataModelError, Result};

/// The automobile dataset used by the worked queries.
pub const AUTOMOBILI: &str = include_str!("../../fixtures/automobili.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Field {
    Text(String),
    Int(i64),
}

impl Field {
    pub fn to_json(&self) -> Value {
        match self {
            Field::Text(s) => Value::from(s.as_str()),
            Field::Int(i) => Value::from(*i),
        }
    }

    pub fn to_cell(&self) -> CellValue {
        match self {
            Field::Text(s) => CellValue::Text(s.clone()),
            Field::Int(i) => CellValue::Int(*i),
        }
    }

    pub fn as_key(&self) -> String {
        match self {
            Field::Text(s) => s.clone(),
            Field::Int(i) => i.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureRecord {
    /// `*` for every layer, or one of `doc`, `kv`, `cf`, `graph`.
    pub model: String,
    pub collection: String,
    pub fields: Vec<(String, Field)>,
}

impl FixtureRecord {
    pub fn applies_to(&self, model: &str) -> bool {
        self.model == "*" || self.model == model
    }

    pub fn get(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn id(&self) -> Option<String> {
        self.get("id").map(Field::as_key)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Fixture {
    pub records: Vec<FixtureRecord>,
}

impl Fixture {
    pub fn automobili() -> Self {
        Fixture::parse(AUTOMOBILI).expect("bundled fixture parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let err = |msg: String| DataModelError::Fixture { line, msg };
            let mut cols = raw.split('\t');
            let model = cols.next().unwrap_or_default().to_string();
            let collection = cols
                .next()
                .filter(|c| !c.is_empty())
                .ok_or_else(|| err("missing collection".into()))?
                .to_string();
            if !matches!(model.as_str(), "*" | "doc" | "kv" | "cf" | "graph") {
                return Err(err(format!("unknown model `{model}`")));
            }
            let mut fields = Vec::new();
            for col in cols {
                let (name, value) = col.split_once('=').ok_or_else(|| err(format!("expected name=value, got `{col}`")))?;
                let field = match name.strip_suffix(":int") {
                    Some(name) => {
                        let n = value.parse().map_err(|_| err(format!("`{value}` is not an integer")))?;
                        (name.to_string(), Field::Int(n))
                    }
                    None => (name.to_string(), Field::Text(value.to_string())),
                };
                fields.push(field);
            }
            records.push(FixtureRecord { model, collection, fields });
        }
        Ok(Fixture { records })
    }

    pub fn for_model<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a FixtureRecord> + 'a {
        self.records.iter().filter(move |r| r.applies_to(model))
    }

    /// Distinct collections in first-seen order.
    pub fn collections(&self, model: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in self.for_model(model) {
            if !out.contains(&r.collection) {
                out.push(r.collection.clone());
            }
        }
        out
    }
}
