//! Euclidean distances between generated rows and a reference sample, and
//! the two distance regularizers built on them.
//!
//! `R_BD` is the mean distance from each generated row to its nearest
//! reference row. `R_AD` is minus the mean distance over all
//! (generated, reference) pairs. Reference rows carry integer weights so a
//! sample can be stored once per unique combination.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{encode, AttributeSchema, CombinationIndex, Record};
use crate::diffcore::{Graph, Matrix, Var};
use crate::error::{Error, Result};

/// Distance floor inside differentiable square roots.
pub const SQRT_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    #[default]
    Discrete,
    Embedded,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::Discrete => "discrete",
            Space::Embedded => "embedded",
        })
    }
}

/// Reference rows with cached squared norms and per-row multiplicities.
#[derive(Clone, Debug)]
pub struct ReferenceSet {
    rows: Matrix,
    sq_norms: Matrix,
    weights: Matrix,
    total_weight: f64,
    space: Space,
}

impl ReferenceSet {
    /// Every row counted once.
    pub fn new(rows: Matrix, space: Space) -> Result<Self> {
        let n = rows.nrows();
        Self::weighted(rows, vec![1.0; n], space)
    }

    pub fn weighted(rows: Matrix, weights: Vec<f64>, space: Space) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::InvalidArgument("reference set is empty".into()));
        }
        if weights.len() != rows.nrows() {
            return Err(Error::Shape(format!(
                "{} weights for {} reference rows",
                weights.len(),
                rows.nrows()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(
                "reference weights must be positive".into(),
            ));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference rows".into()));
        }
        let sq_norms = row_sq_norms(&rows).insert_axis(Axis(0));
        let total_weight = weights.iter().sum();
        let weights = Array2::from_shape_vec((rows.nrows(), 1), weights).expect("column shape");
        Ok(Self {
            rows,
            sq_norms,
            weights,
            total_weight,
            space,
        })
    }

    /// One-hot reference built from records, one row per unique combination
    /// (in key order) weighted by its count.
    pub fn from_records(records: &[Record], schema: &AttributeSchema) -> Result<Self> {
        Self::from_index(&CombinationIndex::build(records, schema)?, schema)
    }

    pub fn from_index(index: &CombinationIndex, schema: &AttributeSchema) -> Result<Self> {
        let (records, counts): (Vec<Record>, Vec<u64>) = index.unique_records().into_iter().unzip();
        let rows = encode(&records, schema)?.into_values();
        Self::weighted(
            rows,
            counts.into_iter().map(|c| c as f64).collect(),
            Space::Discrete,
        )
    }

    /// Same weights, rows replaced by `map(rows)` (e.g. an embedding).
    pub fn mapped<F>(&self, space: Space, map: F) -> Result<Self>
    where
        F: FnOnce(&Matrix) -> Result<Matrix>,
    {
        let rows = map(&self.rows)?;
        if rows.nrows() != self.rows.nrows() {
            return Err(Error::Shape("mapped reference changed row count".into()));
        }
        Self::weighted(rows, self.weights.column(0).to_vec(), space)
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// Number of stored (unique) rows.
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.column(0).to_vec()
    }

    /// Sum of weights: the sample size `N` the regularizers average over.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn sq_norms(&self) -> Vec<f64> {
        self.sq_norms.row(0).to_vec()
    }

    pub fn space(&self) -> Space {
        self.space
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.width() {
            return Err(Error::Shape(format!(
                "batch width {width} does not match reference width {}",
                self.width()
            )));
        }
        Ok(())
    }
}

fn row_sq_norms(m: &Matrix) -> ndarray::Array1<f64> {
    m.map_axis(Axis(1), |r| r.dot(&r))
}

/// Squared distances, `m × N`, via `‖a‖² + ‖b‖² − 2a·b`, clamped at zero.
pub fn pairwise_sq_dist(batch: &Matrix, reference: &ReferenceSet) -> Result<Matrix> {
    reference.check_width(batch.ncols())?;
    let a_sq = row_sq_norms(batch).insert_axis(Axis(1));
    let mut d = batch.dot(&reference.rows.t());
    d.zip_mut_with(&a_sq, |x, a| *x = a - 2.0 * *x);
    d += &reference.sq_norms;
    d.mapv_inplace(|x| x.max(0.0));
    Ok(d)
}

/// Index and squared distance of the nearest reference row for each batch
/// row; ties go to the lowest reference index.
pub fn nearest(batch: &Matrix, reference: &ReferenceSet) -> Result<Vec<(usize, f64)>> {
    let d = pairwise_sq_dist(batch, reference)?;
    Ok(d.rows()
        .into_iter()
        .map(|row| {
            row.iter().enumerate().fold(
                (0, f64::INFINITY),
                |best, (i, &v)| {
                    if v < best.1 {
                        (i, v)
                    } else {
                        best
                    }
                },
            )
        })
        .collect())
}

/// Distance from each row to its nearest reference row.
pub fn boundary_distance(batch: &Matrix, reference: &ReferenceSet) -> Result<Vec<f64>> {
    Ok(nearest(batch, reference)?
        .into_iter()
        .map(|(_, sq)| sq.sqrt())
        .collect())
}

fn check_batch(rows: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// `R_BD` value without a graph.
pub fn r_bd_value(batch: &Matrix, reference: &ReferenceSet) -> Result<f64> {
    check_batch(batch.nrows())?;
    let d = boundary_distance(batch, reference)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// `R_AD` value without a graph.
pub fn r_ad_value(batch: &Matrix, reference: &ReferenceSet) -> Result<f64> {
    check_batch(batch.nrows())?;
    let d = pairwise_sq_dist(batch, reference)?.mapv(f64::sqrt);
    let total = d.dot(&reference.weights).sum();
    Ok(-total / (reference.total_weight * batch.nrows() as f64))
}

/// Differentiable `R_BD`. The nearest reference row of each batch row is
/// chosen from the current values and held constant, so the gradient flows
/// to each row through its nearest neighbour only.
pub fn r_bd(g: &mut Graph, batch: Var, reference: &ReferenceSet) -> Result<Var> {
    let (m, _) = g.shape(batch);
    check_batch(m)?;
    let picks = nearest(g.value(batch), reference)?;
    let mut targets = Matrix::zeros((m, reference.width()));
    for (j, (i, _)) in picks.into_iter().enumerate() {
        targets.row_mut(j).assign(&reference.rows.row(i));
    }
    let targets = g.constant(targets);
    let diff = g.sub(batch, targets);
    let sq = g.square(diff);
    let sq = g.sum_cols(sq);
    let dist = g.sqrt(sq, SQRT_EPS * SQRT_EPS);
    Ok(g.mean_all(dist))
}

/// Differentiable `R_AD` over all reference rows.
pub fn r_ad(g: &mut Graph, batch: Var, reference: &ReferenceSet) -> Result<Var> {
    let (m, width) = g.shape(batch);
    check_batch(m)?;
    reference.check_width(width)?;
    let refs = g.constant(reference.rows.clone());
    let cross = g.matmul_t(batch, refs, false, true);
    let cross = g.scale(cross, -2.0);
    let sq = g.square(batch);
    let a_sq = g.sum_cols(sq);
    let b_sq = g.constant(reference.sq_norms.clone());
    let d = g.add_col(cross, a_sq);
    let d = g.add_row(d, b_sq);
    let dist = g.sqrt(d, SQRT_EPS * SQRT_EPS);
    let w = g.constant(reference.weights.clone());
    let per_row = g.matmul(dist, w);
    let total = g.sum_all(per_row);
    Ok(g.scale(total, -1.0 / (reference.total_weight * m as f64)))
}
