//! Define-by-run computation graph over dense `f64` matrices.
//!
//! Every operation is evaluated eagerly when it is recorded. Reverse-mode
//! gradients are produced by [`Graph::grad`], which expresses each
//! vector-Jacobian product with ordinary graph operations. The gradients are
//! therefore nodes of the same graph and can be differentiated again, which
//! is what the gradient penalty needs (a norm of an input gradient,
//! differentiated with respect to parameters).
//!
//! Piecewise-linear activations record their derivative mask as a constant,
//! so their second derivative is zero almost everywhere.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    BroadcastAll(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var, f64),
    Sqrt(Var, f64),
    Square(Var),
    Recip(Var),
    ClampMin(Var, f64),
    BlockSoftmax(Var, Vec<usize>),
    BlockSum(Var, Vec<usize>),
    SliceCols(Var, usize),
    PadCols(Var, usize),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            MatMul { a, b, .. } => vec![*a, *b],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | AddCol(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddScalar(a)
            | SumRows(a)
            | SumCols(a)
            | SumAll(a)
            | BroadcastRows(a)
            | BroadcastCols(a)
            | BroadcastAll(a)
            | LeakyRelu(a, _)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a, _)
            | Sqrt(a, _)
            | Square(a)
            | Recip(a)
            | ClampMin(a, _)
            | BlockSoftmax(a, _)
            | BlockSum(a, _)
            | SliceCols(a, _)
            | PadCols(a, _) => vec![*a],
        }
    }
}

struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// A tape of eagerly evaluated matrix operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameter or data that gradients are taken against).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // --- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let value = {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            let av = if ta { av.t() } else { av.view() };
            let bv = if tb { bv.t() } else { bv.view() };
            assert_eq!(
                av.ncols(),
                bv.nrows(),
                "matmul inner dimensions {:?} x {:?}",
                av.dim(),
                bv.dim()
            );
            av.dot(&bv)
        };
        self.push(Op::MatMul { a, b, ta, tb }, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(Op::Mul(a, b), value)
    }

    /// `a + row` with `row` (1×n) broadcast over the rows of `a` (m×n).
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row shape");
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(Op::AddRow(a, row), value)
    }

    /// `a + col` with `col` (m×1) broadcast over the columns of `a` (m×n).
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (m, _) = self.shape(a);
        assert_eq!(self.shape(col), (m, 1), "add_col shape");
        let value = &self.nodes[a.0].value + &self.nodes[col.0].value;
        self.push(Op::AddCol(a, col), value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = &self.nodes[a.0].value * factor;
        self.push(Op::Scale(a, factor), value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value + c;
        self.push(Op::AddScalar(a), value)
    }

    /// Column sums, m×n → 1×n.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(Op::SumRows(a), value)
    }

    /// Row sums, m×n → m×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::SumCols(a), value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.sum();
        self.push(Op::SumAll(a), Array2::from_elem((1, 1), total))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let count = self.nodes[a.0].value.len() as f64;
        let total = self.sum_all(a);
        self.scale(total, 1.0 / count)
    }

    /// Repeats a 1×n row `m` times.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Var {
        let value = {
            let row = &self.nodes[a.0].value;
            assert_eq!(row.nrows(), 1, "broadcast_rows expects a row");
            row.broadcast((m, row.ncols())).unwrap().to_owned()
        };
        self.push(Op::BroadcastRows(a), value)
    }

    /// Repeats an m×1 column `n` times.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Var {
        let value = {
            let col = &self.nodes[a.0].value;
            assert_eq!(col.ncols(), 1, "broadcast_cols expects a column");
            col.broadcast((col.nrows(), n)).unwrap().to_owned()
        };
        self.push(Op::BroadcastCols(a), value)
    }

    pub fn broadcast_all(&mut self, a: Var, shape: (usize, usize)) -> Var {
        let c = self.scalar(a);
        self.push(Op::BroadcastAll(a), Array2::from_elem(shape, c))
    }

    // --- elementwise nonlinearities -------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.nodes[a.0]
            .value
            .mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::exp);
        self.push(Op::Exp(a), value)
    }

    /// `ln(max(a, floor))`.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(floor).ln());
        self.push(Op::Log(a, floor), value)
    }

    /// `sqrt(max(a, floor))`; the derivative is zero below the floor.
    pub fn sqrt(&mut self, a: Var, floor: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(floor).sqrt());
        self.push(Op::Sqrt(a, floor), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x * x);
        self.push(Op::Square(a), value)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / x);
        self.push(Op::Recip(a), value)
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(floor));
        self.push(Op::ClampMin(a, floor), value)
    }

    // --- block structure -------------------------------------------------

    /// Softmax applied independently to consecutive column blocks.
    pub fn block_softmax(&mut self, a: Var, blocks: &[usize]) -> Var {
        let value = block_softmax(&self.nodes[a.0].value, blocks);
        self.push(Op::BlockSoftmax(a, blocks.to_vec()), value)
    }

    /// Sum within each column block, broadcast back over the block.
    pub fn block_sum(&mut self, a: Var, blocks: &[usize]) -> Var {
        let value = block_sum(&self.nodes[a.0].value, blocks);
        self.push(Op::BlockSum(a, blocks.to_vec()), value)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = {
            let src = &self.nodes[a.0].value;
            assert!(start <= end && end <= src.ncols(), "slice_cols bounds");
            src.slice(ndarray::s![.., start..end]).to_owned()
        };
        self.push(Op::SliceCols(a, start), value)
    }

    /// Embeds `a` into a zero matrix with `total` columns starting at `start`.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        let value = {
            let src = &self.nodes[a.0].value;
            assert!(start + src.ncols() <= total, "pad_cols bounds");
            let mut out = Array2::zeros((src.nrows(), total));
            out.slice_mut(ndarray::s![.., start..start + src.ncols()])
                .assign(src);
            out
        };
        self.push(Op::PadCols(a, start), value)
    }

    fn assert_same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    // --- reverse mode ---------------------------------------------------

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// The returned handles are graph nodes, so they may be fed into further
    /// differentiable expressions and differentiated again. Targets that do
    /// not influence `loss` get a zero gradient.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(
                "loss node is not part of this graph".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "loss must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut reach = vec![false; n];
        for w in wrt {
            if w.0 < n {
                reach[w.0] = true;
            }
        }
        for i in 0..n {
            if !reach[i] && self.nodes[i].requires_grad {
                reach[i] = self.nodes[i].op.inputs().iter().any(|v| reach[v.0]);
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; n];
        if reach[loss.0] {
            adjoint[loss.0] = Some(self.scalar_constant(1.0));
        }
        for i in (0..n).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            for (input, contribution) in self.vjp(i, g, &reach) {
                adjoint[input] = Some(match adjoint[input] {
                    Some(acc) => self.add(acc, contribution),
                    None => contribution,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(*w);
                    self.constant(Array2::zeros(shape))
                }
            })
            .collect())
    }

    /// Gradient values, for callers that do not differentiate further.
    pub fn grad_values(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Matrix>> {
        let grads = self.grad(loss, wrt)?;
        Ok(grads.into_iter().map(|g| self.value(g).clone()).collect())
    }

    fn vjp(&mut self, i: usize, g: Var, reach: &[bool]) -> Vec<(usize, Var)> {
        let op = self.nodes[i].op.clone();
        let me = Var(i);
        let wants = |v: &Var| reach[v.0];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, ta, tb } => {
                if wants(&a) {
                    let da = if ta {
                        self.matmul_t(b, g, tb, true)
                    } else {
                        self.matmul_t(g, b, false, !tb)
                    };
                    out.push((a.0, da));
                }
                if wants(&b) {
                    let db = if tb {
                        self.matmul_t(g, a, true, ta)
                    } else {
                        self.matmul_t(a, g, !ta, false)
                    };
                    out.push((b.0, db));
                }
            }
            Op::Add(a, b) => {
                if wants(&a) {
                    out.push((a.0, g));
                }
                if wants(&b) {
                    out.push((b.0, g));
                }
            }
            Op::Sub(a, b) => {
                if wants(&a) {
                    out.push((a.0, g));
                }
                if wants(&b) {
                    let nb = self.neg(g);
                    out.push((b.0, nb));
                }
            }
            Op::Mul(a, b) => {
                if wants(&a) {
                    let da = self.mul(g, b);
                    out.push((a.0, da));
                }
                if wants(&b) {
                    let db = self.mul(g, a);
                    out.push((b.0, db));
                }
            }
            Op::AddRow(a, row) => {
                if wants(&a) {
                    out.push((a.0, g));
                }
                if wants(&row) {
                    let dr = self.sum_rows(g);
                    out.push((row.0, dr));
                }
            }
            Op::AddCol(a, col) => {
                if wants(&a) {
                    out.push((a.0, g));
                }
                if wants(&col) {
                    let dc = self.sum_cols(g);
                    out.push((col.0, dc));
                }
            }
            Op::Scale(a, factor) => {
                let da = self.scale(g, factor);
                out.push((a.0, da));
            }
            Op::AddScalar(a) => out.push((a.0, g)),
            Op::SumRows(a) => {
                let m = self.shape(a).0;
                let da = self.broadcast_rows(g, m);
                out.push((a.0, da));
            }
            Op::SumCols(a) => {
                let n = self.shape(a).1;
                let da = self.broadcast_cols(g, n);
                out.push((a.0, da));
            }
            Op::SumAll(a) => {
                let shape = self.shape(a);
                let da = self.broadcast_all(g, shape);
                out.push((a.0, da));
            }
            Op::BroadcastRows(a) => {
                let da = self.sum_rows(g);
                out.push((a.0, da));
            }
            Op::BroadcastCols(a) => {
                let da = self.sum_cols(g);
                out.push((a.0, da));
            }
            Op::BroadcastAll(a) => {
                let da = self.sum_all(g);
                out.push((a.0, da));
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.nodes[a.0]
                    .value
                    .mapv(|x| if x > 0.0 { 1.0 } else { slope });
                let mask = self.constant(mask);
                let da = self.mul(g, mask);
                out.push((a.0, da));
            }
            Op::Tanh(a) => {
                let y2 = self.square(me);
                let neg = self.neg(y2);
                let d = self.add_scalar(neg, 1.0);
                let da = self.mul(g, d);
                out.push((a.0, da));
            }
            Op::Sigmoid(a) => {
                let negy = self.neg(me);
                let one_minus = self.add_scalar(negy, 1.0);
                let d = self.mul(me, one_minus);
                let da = self.mul(g, d);
                out.push((a.0, da));
            }
            Op::Exp(a) => {
                let da = self.mul(g, me);
                out.push((a.0, da));
            }
            Op::Log(a, floor) => {
                let clamped = self.clamp_min(a, floor);
                let r = self.recip(clamped);
                let da = self.mul(g, r);
                out.push((a.0, da));
            }
            Op::Sqrt(a, floor) => {
                let r = self.recip(me);
                let half = self.scale(r, 0.5);
                let mut da = self.mul(g, half);
                let below = self.nodes[a.0].value.iter().any(|&x| x <= floor);
                if below {
                    let mask = self.nodes[a.0]
                        .value
                        .mapv(|x| if x > floor { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    da = self.mul(da, mask);
                }
                out.push((a.0, da));
            }
            Op::Square(a) => {
                let two_a = self.scale(a, 2.0);
                let da = self.mul(g, two_a);
                out.push((a.0, da));
            }
            Op::Recip(a) => {
                let r2 = self.square(me);
                let nr2 = self.neg(r2);
                let da = self.mul(g, nr2);
                out.push((a.0, da));
            }
            Op::ClampMin(a, floor) => {
                let below = self.nodes[a.0].value.iter().any(|&x| x <= floor);
                let da = if below {
                    let mask = self.nodes[a.0]
                        .value
                        .mapv(|x| if x > floor { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    self.mul(g, mask)
                } else {
                    g
                };
                out.push((a.0, da));
            }
            Op::BlockSoftmax(a, blocks) => {
                // y ⊙ (g − blocksum(g ⊙ y))
                let gy = self.mul(g, me);
                let s = self.block_sum(gy, &blocks);
                let diff = self.sub(g, s);
                let da = self.mul(me, diff);
                out.push((a.0, da));
            }
            Op::BlockSum(a, blocks) => {
                let da = self.block_sum(g, &blocks);
                out.push((a.0, da));
            }
            Op::SliceCols(a, start) => {
                let total = self.shape(a).1;
                let da = self.pad_cols(g, start, total);
                out.push((a.0, da));
            }
            Op::PadCols(a, start) => {
                let width = self.shape(a).1;
                let da = self.slice_cols(g, start, start + width);
                out.push((a.0, da));
            }
        }
        out
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax over consecutive column blocks of the given widths.
pub fn block_softmax(x: &Matrix, blocks: &[usize]) -> Matrix {
    assert_eq!(
        blocks.iter().sum::<usize>(),
        x.ncols(),
        "block widths must cover every column"
    );
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mut start = 0;
        for &w in blocks {
            let mut block = row.slice_mut(ndarray::s![start..start + w]);
            let max = block.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            block.mapv_inplace(|v| (v - max).exp());
            let total = block.sum();
            block.mapv_inplace(|v| v / total);
            start += w;
        }
    }
    out
}

fn block_sum(x: &Matrix, blocks: &[usize]) -> Matrix {
    assert_eq!(blocks.iter().sum::<usize>(), x.ncols());
    let mut out = Array2::zeros(x.dim());
    Zip::from(out.rows_mut())
        .and(x.rows())
        .for_each(|mut dst, src| {
            let mut start = 0;
            for &w in blocks {
                let s = src.slice(ndarray::s![start..start + w]).sum();
                dst.slice_mut(ndarray::s![start..start + w]).fill(s);
                start += w;
            }
        });
    out
}
