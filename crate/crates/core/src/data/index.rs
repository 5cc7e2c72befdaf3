use std::collections::BTreeMap;

use super::schema::{AttributeSchema, Record};
use crate::error::{Error, Result};

/// Packed combination key: mixed-radix digits, attribute 0 most significant.
///
/// Keys are `u128`, which holds every schema whose combination count fits
/// in 128 bits; larger schemas are rejected when the index is built.
pub type ComboKey = u128;

/// Multiset of attribute combinations with instance counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinationIndex {
    radices: Vec<usize>,
    counts: BTreeMap<ComboKey, u64>,
    total: u64,
}

impl CombinationIndex {
    pub fn empty(schema: &AttributeSchema) -> Result<Self> {
        if schema.combination_count().is_none() {
            return Err(Error::Schema(
                "combination count overflows the 128-bit key".into(),
            ));
        }
        Ok(Self {
            radices: schema.cardinalities(),
            counts: BTreeMap::new(),
            total: 0,
        })
    }

    pub fn build(records: &[Record], schema: &AttributeSchema) -> Result<Self> {
        schema.validate_records(records)?;
        let mut index = Self::empty(schema)?;
        for r in records {
            index.insert(r);
        }
        Ok(index)
    }

    fn insert(&mut self, record: &Record) {
        *self.counts.entry(self.key(record)).or_insert(0) += 1;
        self.total += 1;
    }

    /// Adds records to the multiset (used for nested growth).
    pub fn extend(&mut self, records: &[Record]) {
        for r in records {
            self.insert(r);
        }
    }

    pub fn key(&self, record: &Record) -> ComboKey {
        record
            .values
            .iter()
            .zip(&self.radices)
            .fold(0u128, |acc, (&v, &radix)| acc * radix as u128 + v as u128)
    }

    /// [`CombinationIndex::key`] after checking the record fits the layout.
    pub fn checked_key(&self, record: &Record) -> Result<ComboKey> {
        if record.values.len() != self.radices.len()
            || record
                .values
                .iter()
                .zip(&self.radices)
                .any(|(&v, &r)| v as usize >= r)
        {
            return Err(Error::Record(format!(
                "record {:?} does not fit the index layout {:?}",
                record.values, self.radices
            )));
        }
        Ok(self.key(record))
    }

    pub fn decode(&self, mut key: ComboKey) -> Record {
        let mut values = vec![0u16; self.radices.len()];
        for (slot, &radix) in values.iter_mut().zip(&self.radices).rev() {
            *slot = (key % radix as u128) as u16;
            key /= radix as u128;
        }
        Record::new(values)
    }

    /// Total instance count, N.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn unique_count(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn count(&self, key: ComboKey) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn contains_key(&self, key: ComboKey) -> bool {
        self.counts.contains_key(&key)
    }

    pub fn contains(&self, record: &Record) -> bool {
        self.contains_key(self.key(record))
    }

    /// `(key, count)` pairs in ascending key order.
    pub fn iter(&self) -> impl Iterator<Item = (ComboKey, u64)> + '_ {
        self.counts.iter().map(|(&k, &c)| (k, c))
    }

    /// Distinct combinations with their counts, in key order.
    pub fn unique_records(&self) -> Vec<(Record, u64)> {
        self.iter().map(|(k, c)| (self.decode(k), c)).collect()
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn same_layout(&self, other: &CombinationIndex) -> bool {
        self.radices == other.radices
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_duplicates() {
        let schema = AttributeSchema::from_cardinalities(&[3]).unwrap();
        let a = Record::new(vec![0]);
        let b = Record::new(vec![1]);
        let idx = CombinationIndex::build(&[a.clone(), a.clone(), b.clone()], &schema).unwrap();
        assert_eq!(idx.total(), 3);
        assert_eq!(idx.count(idx.key(&a)), 2);
        assert_eq!(idx.count(idx.key(&b)), 1);
        assert_eq!(idx.unique_count(), 2);
    }

    #[test]
    fn empty_index() {
        let schema = AttributeSchema::from_cardinalities(&[2, 2]).unwrap();
        let idx = CombinationIndex::build(&[], &schema).unwrap();
        assert_eq!(idx.total(), 0);
        assert!(idx.is_empty());
    }

    #[test]
    fn attribute_zero_is_most_significant() {
        let schema = AttributeSchema::from_cardinalities(&[2, 3]).unwrap();
        let idx = CombinationIndex::empty(&schema).unwrap();
        assert_eq!(idx.key(&Record::new(vec![1, 0])), 3);
        assert_eq!(idx.key(&Record::new(vec![0, 2])), 2);
    }

    #[test]
    fn wide_schemas_use_the_wider_key() {
        // 40 attributes of 16 categories: 2^160 combinations, too many even for u128.
        let huge = AttributeSchema::from_cardinalities(&[16; 40]).unwrap();
        assert!(CombinationIndex::empty(&huge).is_err());
        // 24 attributes of 16 categories: 2^96, beyond u64 but within u128.
        let wide = AttributeSchema::from_cardinalities(&[16; 24]).unwrap();
        let idx = CombinationIndex::empty(&wide).unwrap();
        let r = Record::new(vec![15; 24]);
        assert_eq!(idx.key(&r), (1u128 << 96) - 1);
        assert_eq!(idx.decode(idx.key(&r)), r);
    }

    fn records_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<u16>>)> {
        prop::collection::vec(2usize..6, 1..5).prop_flat_map(|cards| {
            let row = cards
                .iter()
                .map(|&c| (0..c as u16).boxed())
                .collect::<Vec<_>>();
            (Just(cards), prop::collection::vec(row, 0..200))
        })
    }

    proptest! {
        #[test]
        fn matches_linear_scan_tally((cards, rows) in records_strategy()) {
            let schema = AttributeSchema::from_cardinalities(&cards).unwrap();
            let records: Vec<Record> = rows.into_iter().map(Record::new).collect();
            let idx = CombinationIndex::build(&records, &schema).unwrap();
            prop_assert_eq!(idx.total() as usize, records.len());
            for (key, count) in idx.iter() {
                let decoded = idx.decode(key);
                schema.validate_record(&decoded).unwrap();
                let tally = records.iter().filter(|r| **r == decoded).count();
                prop_assert_eq!(count as usize, tally);
            }
            let sum: u64 = idx.iter().map(|(_, c)| c).sum();
            prop_assert_eq!(sum, idx.total());
        }
    }
}
