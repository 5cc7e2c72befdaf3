use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schema::{AttributeSchema, Record};
use crate::diffcore::{rng_from_seed, Matrix};
use crate::error::{Error, Result};

/// Rows partitioned into per-attribute simplex blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    values: Matrix,
    hard: bool,
}

impl EncodedMatrix {
    /// Wraps generator output after checking the simplex invariant.
    pub fn relaxed(values: Matrix, schema: &AttributeSchema) -> Result<Self> {
        if values.ncols() != schema.width() {
            return Err(Error::Shape(format!(
                "matrix width {} does not match schema width {}",
                values.ncols(),
                schema.width()
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            for k in 0..schema.len() {
                let start = schema.offset(k);
                let block = row.slice(ndarray::s![
                    start..start + schema.attribute(k).cardinality()
                ]);
                if block.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
                    return Err(Error::InvalidArgument(format!(
                        "row {i} block {k} has entries outside [0, 1]"
                    )));
                }
                if (block.sum() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "row {i} block {k} sums to {}",
                        block.sum()
                    )));
                }
            }
        }
        Ok(Self {
            values,
            hard: false,
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn is_hard(&self) -> bool {
        self.hard
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }
}

/// One-hot encoding of records.
pub fn encode(records: &[Record], schema: &AttributeSchema) -> Result<EncodedMatrix> {
    schema.validate_records(records)?;
    let mut values = Matrix::zeros((records.len(), schema.width()));
    for (i, r) in records.iter().enumerate() {
        for k in 0..schema.len() {
            values[[i, schema.offset(k) + r.get(k)]] = 1.0;
        }
    }
    Ok(EncodedMatrix { values, hard: true })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizeMode {
    /// Highest-probability category; ties go to the lowest index.
    #[default]
    Argmax,
    /// Independent draw per attribute from its block.
    Sample,
}

/// Converts (relaxed) rows into records.
pub fn discretize(
    matrix: &Matrix,
    schema: &AttributeSchema,
    mode: DiscretizeMode,
    seed: u64,
) -> Result<Vec<Record>> {
    if matrix.ncols() != schema.width() {
        return Err(Error::Shape(format!(
            "matrix width {} does not match schema width {}",
            matrix.ncols(),
            schema.width()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(matrix.nrows());
    for (i, row) in matrix.rows().into_iter().enumerate() {
        let mut values = Vec::with_capacity(schema.len());
        for k in 0..schema.len() {
            let start = schema.offset(k);
            let block = row.slice(ndarray::s![
                start..start + schema.attribute(k).cardinality()
            ]);
            let mass: f64 = block.iter().map(|v| v.max(0.0)).sum();
            if !(mass > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} block {k} has no probability mass"
                )));
            }
            let c = match mode {
                DiscretizeMode::Argmax => {
                    let mut best = 0;
                    for (c, &v) in block.iter().enumerate() {
                        if v > block[best] {
                            best = c;
                        }
                    }
                    best
                }
                DiscretizeMode::Sample => {
                    let u: f64 = rng.random::<f64>() * mass;
                    let mut acc = 0.0;
                    let mut pick = block.len() - 1;
                    for (c, &v) in block.iter().enumerate() {
                        acc += v.max(0.0);
                        if u < acc {
                            pick = c;
                            break;
                        }
                    }
                    pick
                }
            };
            values.push(c as u16);
        }
        out.push(Record::new(values));
    }
    Ok(out)
}
