//! Self-supervised embedding of one-hot records.
//!
//! A linear embedding table maps a (possibly masked) one-hot row to a
//! `d_e`-dimensional vector; a small head network predicts every attribute
//! from it. Training masks a fixed number of attribute blocks per row and
//! scores the head on the masked blocks only. After training only the table
//! is used, as a frozen continuous geometry for the regularizers.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeSchema, EncodedMatrix};
use crate::diffcore::serial::matrix_serde;
use crate::diffcore::{
    rng_from_seed, Activation, AdamConfig, AdamState, DenseNet, DenseNetSpec, Graph, Matrix,
    OutputHead, SeededRng, Var,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSpec {
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub mask_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of rows held out to measure masked accuracy.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            hidden: vec![64],
            mask_fraction: 0.25,
            epochs: 100,
            lr: 1e-3,
            batch_size: 128,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be ≥ 1".into(),
            ));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask fraction {} outside (0, 1)",
                self.mask_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidArgument(
                "holdout fraction outside [0, 1)".into(),
            ));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "bad embedder hyperparameters".into(),
            ));
        }
        Ok(())
    }

    /// Attributes masked per row: `round(ρ·K)`, at least one.
    pub fn masked_per_row(&self, attributes: usize) -> usize {
        ((self.mask_fraction * attributes as f64).round() as usize).clamp(1, attributes)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Embedder {
    pub spec: EmbedderSpec,
    /// `W × d_e`; row `c` is the embedding of one-hot column `c`.
    #[serde(with = "matrix_serde")]
    pub table: Matrix,
    pub head: DenseNet,
    pub blocks: Vec<usize>,
    pub trained: bool,
}

/// Per-epoch training trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedderReport {
    /// Masked cross-entropy on the training rows under a fixed evaluation mask.
    pub train_loss: Vec<f64>,
    /// Masked accuracy on held-out rows (training rows when none are held out).
    pub accuracy: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

impl EmbedderReport {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy.last().copied().unwrap_or(0.0)
    }
}

impl Embedder {
    /// Untrained embedder with seeded initial weights.
    pub fn new(schema: &AttributeSchema, spec: EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        let width = schema.width();
        let mut rng = rng_from_seed(spec.seed);
        let bound = 1.0 / (width as f64).sqrt();
        let table =
            Array2::from_shape_simple_fn((width, spec.dim), || rng.random_range(-bound..bound));
        let blocks = schema.cardinalities();
        let mut widths = vec![spec.dim];
        widths.extend(&spec.hidden);
        widths.push(width);
        let head = DenseNet::new(
            DenseNetSpec::new(
                widths,
                Activation::Relu,
                OutputHead::BlockSoftmax(blocks.clone()),
            )?,
            spec.seed.wrapping_add(1),
        )?;
        Ok(Self {
            spec,
            table,
            head,
            blocks,
            trained: false,
        })
    }

    pub fn width(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.width() {
            return Err(Error::Shape(format!(
                "embedder expects width {}, got {width}",
                self.width()
            )));
        }
        Ok(())
    }

    /// `batch · table`.
    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_width(batch.ncols())?;
        Ok(batch.dot(&self.table))
    }

    /// Embedding on a graph with the table frozen; gradients flow to `batch`.
    pub fn embed_var(&self, g: &mut Graph, batch: Var) -> Result<Var> {
        self.check_width(g.shape(batch).1)?;
        let table = g.constant(self.table.clone());
        Ok(g.matmul(batch, table))
    }

    /// Head predictions (per-block probabilities) for masked inputs.
    pub fn reconstruct(&self, masked: &Matrix) -> Result<Matrix> {
        self.head.predict(&self.embed(masked)?)
    }

    /// Share of masked attributes whose argmax prediction is correct.
    pub fn masked_accuracy(&self, x: &Matrix, mask: &Matrix) -> Result<f64> {
        let pred = self.reconstruct(&(x * &(1.0 - mask)))?;
        let (mut hit, mut total) = (0usize, 0usize);
        for ((xr, pr), mr) in x.rows().into_iter().zip(pred.rows()).zip(mask.rows()) {
            let mut start = 0;
            for &b in &self.blocks {
                if mr[start] > 0.0 {
                    let argmax = |row: ndarray::ArrayView1<f64>| {
                        (start..start + b)
                            .fold(start, |best, c| if row[c] > row[best] { c } else { best })
                    };
                    total += 1;
                    hit += usize::from(argmax(xr) == argmax(pr));
                }
                start += b;
            }
        }
        Ok(if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let e: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        e.check_width(e.blocks.iter().sum())?;
        Ok(e)
    }
}

/// 0/1 matrix marking `per_row` randomly chosen attribute blocks of each row.
pub fn random_block_mask(
    rows: usize,
    blocks: &[usize],
    per_row: usize,
    rng: &mut SeededRng,
) -> Matrix {
    let width: usize = blocks.iter().sum();
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut acc = 0;
    for &b in blocks {
        offsets.push(acc);
        acc += b;
    }
    let mut mask = Matrix::zeros((rows, width));
    for r in 0..rows {
        for k in rand::seq::index::sample(rng, blocks.len(), per_row) {
            for c in offsets[k]..offsets[k] + blocks[k] {
                mask[[r, c]] = 1.0;
            }
        }
    }
    mask
}

/// Mean over masked attributes of `−log p(true category)`.
fn masked_cross_entropy(
    g: &mut Graph,
    embedder: &Embedder,
    table: Var,
    head: &crate::diffcore::BoundParams,
    x: &Matrix,
    mask: &Matrix,
) -> Result<Var> {
    let inputs = g.constant(x * &(1.0 - mask));
    let e = g.matmul(inputs, table);
    let p = embedder.head.forward(g, head, e)?;
    let logp = g.log(p, 1e-12);
    // one-hot target restricted to masked blocks: one 1 per masked attribute
    let target = x * mask;
    let count = target.sum();
    let target = g.constant(target);
    let picked = g.mul(logp, target);
    let total = g.sum_all(picked);
    Ok(g.scale(total, -1.0 / count.max(1.0)))
}

fn eval_loss(embedder: &Embedder, x: &Matrix, mask: &Matrix) -> Result<f64> {
    let mut g = Graph::new();
    let table = g.constant(embedder.table.clone());
    let head = embedder.head.params.bind_frozen(&mut g);
    let loss = masked_cross_entropy(&mut g, embedder, table, &head, x, mask)?;
    Ok(g.scalar(loss))
}

/// Trains an embedder on a hard sample matrix.
pub fn train_embedder(
    sample: &EncodedMatrix,
    schema: &AttributeSchema,
    spec: &EmbedderSpec,
) -> Result<(Embedder, EmbedderReport)> {
    if !sample.is_hard() {
        return Err(Error::InvalidArgument(
            "embedder needs a one-hot sample".into(),
        ));
    }
    let x = sample.values();
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "embedder needs at least 2 rows".into(),
        ));
    }
    if x.ncols() != schema.width() {
        return Err(Error::Shape("sample width does not match schema".into()));
    }
    let mut embedder = Embedder::new(schema, spec.clone())?;
    let mut report = EmbedderReport::default();
    let first = x.row(0);
    if x.rows().into_iter().all(|r| r == first) {
        let msg = "sample has a single unique row; the embedding carries no structure".to_string();
        log::warn!("{msg}");
        report.warnings.push(msg);
    }

    let mut rng = rng_from_seed(spec.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(&mut rng);
    let n_hold = (spec.holdout_fraction * x.nrows() as f64).round() as usize;
    let n_hold = if x.nrows() - n_hold < 1 { 0 } else { n_hold };
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train = x.select(Axis(0), train_idx);
    let per_row = spec.masked_per_row(embedder.blocks.len());
    let blocks = embedder.blocks.clone();
    let train_eval_mask = random_block_mask(train.nrows(), &blocks, per_row, &mut rng);
    let (hold, hold_mask) = if n_hold > 0 {
        let h = x.select(Axis(0), hold_idx);
        let m = random_block_mask(h.nrows(), &blocks, per_row, &mut rng);
        (h, m)
    } else {
        (train.clone(), train_eval_mask.clone())
    };

    let mut adam = AdamState::new(
        AdamConfig::standard(spec.lr),
        std::iter::once(&embedder.table).chain(embedder.head.params.tensors()),
    );
    let mut rows: Vec<usize> = (0..train.nrows()).collect();
    let mut best = Vec::new();
    for epoch in 0..spec.epochs {
        rows.shuffle(&mut rng);
        for chunk in rows.chunks(spec.batch_size) {
            let xb = train.select(Axis(0), chunk);
            let mask = random_block_mask(xb.nrows(), &blocks, per_row, &mut rng);
            let mut g = Graph::new();
            let table = g.leaf(embedder.table.clone());
            let head = embedder.head.params.bind(&mut g);
            let loss = masked_cross_entropy(&mut g, &embedder, table, &head, &xb, &mask)?;
            let mut wrt = vec![table];
            wrt.extend(head.vars());
            let grads = g.grad_values(loss, &wrt)?;
            adam.update(
                std::iter::once(&mut embedder.table).chain(embedder.head.params.tensors_mut()),
                &grads,
            )?;
        }
        let loss = eval_loss(&embedder, &train, &train_eval_mask)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "embedder loss is not finite".into(),
            });
        }
        report.train_loss.push(loss);
        let acc = embedder.masked_accuracy(&hold, &hold_mask)?;
        report.accuracy.push(acc);
        let prev_best = best.last().copied().unwrap_or(0.0f64);
        best.push(prev_best.max(acc));
        report.epochs_run = epoch + 1;
        const WINDOW: usize = 5;
        if best.len() > WINDOW {
            let then = best[best.len() - 1 - WINDOW];
            let now = best[best.len() - 1];
            if then > 0.0 && (now - then) / then < 1e-3 {
                report.stopped_early = true;
                break;
            }
        }
    }
    embedder.trained = true;
    Ok((embedder, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, Record};
    use ndarray::array;

    fn quick_spec(seed: u64) -> EmbedderSpec {
        EmbedderSpec {
            dim: 6,
            hidden: vec![24],
            epochs: 40,
            lr: 5e-3,
            batch_size: 64,
            seed,
            ..EmbedderSpec::default()
        }
    }

    #[test]
    fn embedding_is_linear() {
        let schema = AttributeSchema::from_cardinalities(&[2, 3]).unwrap();
        let e = Embedder::new(&schema, quick_spec(1)).unwrap();
        let x = array![[1.0, 0.0, 0.0, 1.0, 0.0]];
        let y = array![[0.0, 1.0, 0.0, 0.0, 1.0]];
        let ex = e.embed(&x).unwrap();
        let expected = &e.table.row(0) + &e.table.row(3);
        for (a, b) in ex.row(0).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for alpha in [0.0, 0.3, 0.5, 1.0] {
            let mix = e.embed(&(alpha * &x + (1.0 - alpha) * &y)).unwrap();
            let lin = alpha * &ex + (1.0 - alpha) * &e.embed(&y).unwrap();
            for (a, b) in mix.iter().zip(lin.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let mid = e.embed(&array![[0.5, 0.5, 0.0, 0.0, 0.0]]).unwrap();
        let half = 0.5 * (&e.table.row(0) + &e.table.row(1));
        for (a, b) in mid.row(0).iter().zip(half.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masks_have_the_requested_number_of_blocks() {
        let mut rng = rng_from_seed(3);
        let blocks = [2, 3, 4, 2];
        let m = random_block_mask(50, &blocks, 2, &mut rng);
        for row in m.rows() {
            let masked = [0, 2, 5, 9].iter().filter(|&&o| row[o] == 1.0).count();
            assert_eq!(masked, 2);
        }
        assert_eq!(quick_spec(0).masked_per_row(8), 2);
        assert_eq!(quick_spec(0).masked_per_row(2), 1);
    }

    #[test]
    fn deterministic_per_seed_and_warns_on_degenerate_sample() {
        let schema = AttributeSchema::from_cardinalities(&[2, 2, 3]).unwrap();
        let recs: Vec<Record> = (0..40u16)
            .map(|i| Record::new(vec![i % 2, (i / 2) % 2, i % 3]))
            .collect();
        let x = encode(&recs, &schema).unwrap();
        let spec = EmbedderSpec {
            epochs: 3,
            ..quick_spec(9)
        };
        let (a, _) = train_embedder(&x, &schema, &spec).unwrap();
        let (b, _) = train_embedder(&x, &schema, &spec).unwrap();
        assert_eq!(a.table, b.table);

        let same = encode(&vec![Record::new(vec![0, 1, 2]); 5], &schema).unwrap();
        let (e, report) = train_embedder(&same, &schema, &spec).unwrap();
        assert!(e.trained);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn round_trips_through_json() {
        let schema = AttributeSchema::from_cardinalities(&[3, 2]).unwrap();
        let e = Embedder::new(&schema, quick_spec(4)).unwrap();
        let back: Embedder = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        for (a, b) in e.table.iter().zip(back.table.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}
