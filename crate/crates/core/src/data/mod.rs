//! Schemas, record encoding, combination indexing, and ground-truth
//! populations.

pub mod dataset;
mod encoding;
mod index;
mod population;
pub mod preset;
mod schema;

pub use encoding::{discretize, encode, DiscretizeMode, EncodedMatrix};
pub use index::{CombinationIndex, ComboKey};
pub use population::{
    coverage_curve, draw_sample, synth_population, topological_order, CoveragePoint, ForbiddenRule,
    PopulationSpec, MAX_ATTEMPTS_PER_RECORD,
};
pub use schema::{Attribute, AttributeSchema, Record};

use std::path::Path;

use crate::error::Result;

/// Reads and validates a schema file.
pub fn load_schema(path: impl AsRef<Path>) -> Result<AttributeSchema> {
    AttributeSchema::load(path)
}

pub fn build_index(records: &[Record], schema: &AttributeSchema) -> Result<CombinationIndex> {
    CombinationIndex::build(records, schema)
}
