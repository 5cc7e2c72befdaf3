use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub categories: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

/// Ordered categorical attributes; fixes the one-hot layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    #[serde(skip)]
    offsets: Vec<usize>,
}

#[derive(Deserialize)]
struct SchemaFile {
    attributes: Vec<Attribute>,
}

impl<'de> Deserialize<'de> for AttributeSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = SchemaFile::deserialize(d)?;
        AttributeSchema::new(file.attributes).map_err(serde::de::Error::custom)
    }
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        let mut names = HashSet::new();
        for attr in &attributes {
            if !names.insert(attr.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate attribute name {:?}",
                    attr.name
                )));
            }
            if attr.categories.len() < 2 {
                return Err(Error::Schema(format!(
                    "attribute {:?} needs at least 2 categories",
                    attr.name
                )));
            }
            let mut labels = HashSet::new();
            for c in &attr.categories {
                if !labels.insert(c.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate category {c:?} in attribute {:?}",
                        attr.name
                    )));
                }
            }
        }
        let mut offsets = Vec::with_capacity(attributes.len());
        let mut acc = 0;
        for a in &attributes {
            offsets.push(acc);
            acc += a.cardinality();
        }
        Ok(Self {
            attributes,
            offsets,
        })
    }

    /// Schema with generated names (`a0`, `a1`, ...) and labels (`c0`, ...).
    pub fn from_cardinalities(cards: &[usize]) -> Result<Self> {
        Self::new(
            cards
                .iter()
                .enumerate()
                .map(|(k, &n)| Attribute {
                    name: format!("a{k}"),
                    categories: (0..n).map(|c| format!("c{c}")).collect(),
                })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, k: usize) -> &Attribute {
        &self.attributes[k]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Number of attributes, K.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::cardinality).collect()
    }

    /// One-hot width, W = Σ K_k.
    pub fn width(&self) -> usize {
        self.attributes.iter().map(Attribute::cardinality).sum()
    }

    /// First column of attribute `k`'s block.
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Number of distinct combinations, or `None` if it overflows `u128`.
    pub fn combination_count(&self) -> Option<u128> {
        self.attributes
            .iter()
            .try_fold(1u128, |acc, a| acc.checked_mul(a.cardinality() as u128))
    }

    pub fn validate_record(&self, record: &Record) -> Result<()> {
        if record.values.len() != self.len() {
            return Err(Error::Record(format!(
                "record has {} values, schema has {} attributes",
                record.values.len(),
                self.len()
            )));
        }
        for (k, (&v, a)) in record.values.iter().zip(&self.attributes).enumerate() {
            if v as usize >= a.cardinality() {
                return Err(Error::Record(format!(
                    "value {v} out of range for attribute {k} ({:?}, {} categories)",
                    a.name,
                    a.cardinality()
                )));
            }
        }
        Ok(())
    }

    pub fn validate_records(&self, records: &[Record]) -> Result<()> {
        records.iter().try_for_each(|r| self.validate_record(r))
    }
}

/// One category index per attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Record {
    pub values: Vec<u16>,
}

impl Record {
    pub fn new(values: Vec<u16>) -> Self {
        Self { values }
    }

    pub fn get(&self, k: usize) -> usize {
        self.values[k] as usize
    }
}

impl From<Vec<u16>> for Record {
    fn from(values: Vec<u16>) -> Self {
        Self { values }
    }
}
