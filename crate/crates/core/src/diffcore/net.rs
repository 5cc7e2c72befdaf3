//! Fully connected networks bound onto a [`Graph`].

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{block_softmax, sigmoid, Graph, Matrix, Var};
use super::serial::MatrixData;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    /// Leaky ReLU with slope 0.2, the critic default.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);

    fn apply_graph(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu(s) => g.leaky_relu(x, s),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    /// Softmax over consecutive blocks of the given widths.
    BlockSoftmax(Vec<usize>),
    /// Output split in half: mean, then log-variance.
    MeanLogVar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    /// Input width followed by each layer's output width.
    pub widths: Vec<usize>,
    /// One activation per hidden layer (`widths.len() - 2` entries).
    pub activations: Vec<Activation>,
    pub head: OutputHead,
}

impl DenseNetSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, head: OutputHead) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        let spec = Self {
            widths,
            activations: vec![activation; hidden],
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(Error::InvalidArgument(format!(
                "expected {} hidden activations, got {}",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        let out = self.output_width();
        match &self.head {
            OutputHead::Linear => {}
            OutputHead::BlockSoftmax(blocks) => {
                if blocks.iter().sum::<usize>() != out || blocks.iter().any(|&b| b == 0) {
                    return Err(Error::InvalidArgument(format!(
                        "softmax blocks {blocks:?} do not tile output width {out}"
                    )));
                }
            }
            OutputHead::MeanLogVar => {
                if out % 2 != 0 {
                    return Err(Error::InvalidArgument(
                        "mean/log-variance head needs an even output width".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Weight matrix (fan-in × fan-out) and bias row of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl Parameters {
    /// Uniform initialization in ±1/√fan_in, seeded.
    pub fn init(spec: &DenseNetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight =
                    Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound));
                let bias =
                    Array2::from_shape_simple_fn((1, w[1]), || rng.random_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        Self { layers, seed }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn tensor_count(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn check_shapes(&self, spec: &DenseNetSpec) -> Result<()> {
        if self.layers.len() != spec.layer_count() {
            return Err(Error::Shape(format!(
                "{} parameter layers for a {}-layer network",
                self.layers.len(),
                spec.layer_count()
            )));
        }
        for (i, (layer, w)) in self.layers.iter().zip(spec.widths.windows(2)).enumerate() {
            if layer.weight.dim() != (w[0], w[1]) || layer.bias.dim() != (1, w[1]) {
                return Err(Error::Shape(format!("layer {i} does not match {w:?}")));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Places every tensor on the graph as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            layers: self
                .layers
                .iter()
                .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
                .collect(),
        }
    }

    /// Places every tensor on the graph as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            layers: self
                .layers
                .iter()
                .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
                .collect(),
        }
    }
}

/// Graph handles of a parameter set, in [`Parameters::tensors`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: Vec<(Var, Var)>,
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// A network description paired with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub spec: DenseNetSpec,
    pub params: Parameters,
}

impl DenseNet {
    pub fn new(spec: DenseNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = Parameters::init(&spec, seed);
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: DenseNetSpec, params: Parameters) -> Result<Self> {
        spec.validate()?;
        params.check_shapes(&spec)?;
        Ok(Self { spec, params })
    }

    /// Pre-head output (logits) on the graph.
    pub fn forward_logits(&self, g: &mut Graph, bound: &BoundParams, input: Var) -> Result<Var> {
        let (_, width) = g.shape(input);
        if width != self.spec.input_width() {
            return Err(Error::Shape(format!(
                "network expects input width {}, got {width}",
                self.spec.input_width()
            )));
        }
        let last = bound.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in bound.layers.iter().enumerate() {
            let z = g.matmul(h, w);
            h = g.add_row(z, b);
            if i < last {
                h = self.spec.activations[i].apply_graph(g, h);
            }
        }
        Ok(h)
    }

    /// Full forward pass on the graph, head included. For
    /// [`OutputHead::MeanLogVar`] this returns the raw concatenation; use
    /// [`DenseNet::split_mean_logvar`] to separate it.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, input: Var) -> Result<Var> {
        let logits = self.forward_logits(g, bound, input)?;
        let out = match &self.spec.head {
            OutputHead::BlockSoftmax(blocks) => g.block_softmax(logits, blocks),
            OutputHead::Linear | OutputHead::MeanLogVar => logits,
        };
        if g.value(out).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(out)
    }

    pub fn split_mean_logvar(&self, g: &mut Graph, out: Var) -> (Var, Var) {
        let half = self.spec.output_width() / 2;
        (
            g.slice_cols(out, 0, half),
            g.slice_cols(out, half, 2 * half),
        )
    }

    /// Graph-free evaluation, used for generation and analysis.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        let mut h = self.predict_logits(input)?;
        if let OutputHead::BlockSoftmax(blocks) = &self.spec.head {
            h = block_softmax(&h, blocks);
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(h)
    }

    /// Graph-free evaluation without the output head.
    pub fn predict_logits(&self, input: &Matrix) -> Result<Matrix> {
        if input.ncols() != self.spec.input_width() {
            return Err(Error::Shape(format!(
                "network expects input width {}, got {}",
                self.spec.input_width(),
                input.ncols()
            )));
        }
        let last = self.params.layers.len() - 1;
        let mut h = input.clone();
        for (i, layer) in self.params.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i < last {
                let act = self.spec.activations[i];
                h.mapv_inplace(|x| act.apply(x));
            }
        }
        Ok(h)
    }
}

/// One forward pass recorded on a fresh graph.
pub struct ForwardPass {
    pub graph: Graph,
    pub params: BoundParams,
    pub input: Var,
    pub output: Var,
}

impl ForwardPass {
    pub fn output_value(&self) -> &Matrix {
        self.graph.value(self.output)
    }

    /// Gradient of `loss` (built on `self.graph`) with respect to every
    /// parameter tensor, in [`Parameters::tensors`] order.
    pub fn param_grads(&mut self, loss: Var) -> Result<Vec<Matrix>> {
        let vars = self.params.vars();
        self.graph.grad_values(loss, &vars)
    }
}

/// Runs `net` on `input`, keeping the graph for a later backward pass.
pub fn forward(net: &DenseNet, input: &Matrix) -> Result<ForwardPass> {
    let mut graph = Graph::new();
    let params = net.params.bind(&mut graph);
    let input_var = graph.leaf(input.clone());
    let output = net.forward(&mut graph, &params, input_var)?;
    Ok(ForwardPass {
        graph,
        params,
        input: input_var,
        output,
    })
}

/// Per-row `‖∇ₓ D(x)‖₂` for a critic with scalar output per row, as graph
/// nodes that remain differentiable with respect to the critic parameters.
///
/// `x` must be a leaf on `g`. Rows whose gradient vanishes have an undefined
/// norm derivative; they are reported as an error when `require_nonzero` is
/// set, otherwise the norm is floored at 1e-12 with a zero derivative.
pub fn input_gradient_norm(
    g: &mut Graph,
    critic: &DenseNet,
    bound: &BoundParams,
    x: Var,
    require_nonzero: bool,
) -> Result<Var> {
    if critic.spec.output_width() != 1 {
        return Err(Error::Shape("critic must output one scalar per row".into()));
    }
    let out = critic.forward(g, bound, x)?;
    let total = g.sum_all(out);
    let grad_x = g.grad(total, &[x])?[0];
    let sq = g.square(grad_x);
    let sq_norm = g.sum_cols(sq);
    const FLOOR: f64 = 1e-24;
    if require_nonzero && g.value(sq_norm).iter().any(|&v| v <= FLOOR) {
        return Err(Error::NonFinite(
            "input gradient norm is zero; its derivative is undefined".into(),
        ));
    }
    Ok(g.sqrt(sq_norm, FLOOR))
}

// Parameter container serialization: layer shapes plus row-major arrays.

#[derive(Serialize, Deserialize)]
struct LayerData {
    weight: MatrixData,
    bias: MatrixData,
}

#[derive(Serialize, Deserialize)]
struct ParametersData {
    seed: u64,
    layers: Vec<LayerData>,
}

impl Serialize for Parameters {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParametersData {
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| LayerData {
                    weight: MatrixData::from(&l.weight),
                    bias: MatrixData::from(&l.bias),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Parameters {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = ParametersData::deserialize(d)?;
        let layers = data
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weight: l.weight.into_matrix().map_err(serde::de::Error::custom)?,
                    bias: l.bias.into_matrix().map_err(serde::de::Error::custom)?,
                })
            })
            .collect::<std::result::Result<_, D::Error>>()?;
        Ok(Parameters {
            layers,
            seed: data.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DenseNetData {
    spec: DenseNetSpec,
    params: Parameters,
}

impl Serialize for DenseNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DenseNetData {
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DenseNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = DenseNetData::deserialize(d)?;
        DenseNet::from_parts(data.spec, data.params).map_err(serde::de::Error::custom)
    }
}
