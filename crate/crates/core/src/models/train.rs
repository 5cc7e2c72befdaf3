use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::Rng;

use super::losses::{
    add_regularizers, gradient_penalty, vae_losses, wgan_critic_loss, wgan_generator_loss,
};
use super::{EpochLog, LatentSpec, ModelArtifact, ModelKind, TrainConfig, GUMBEL_TEMPERATURE};
use crate::data::{encode, AttributeSchema, Record};
use crate::diffcore::{
    block_softmax, rng_from_seed, standard_normal_with, Activation, AdamState, BoundParams,
    DenseNet, DenseNetSpec, Graph, Matrix, OutputHead, SeededRng, Var,
};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::geometry::{r_ad, r_ad_value, r_bd, r_bd_value, ReferenceSet, Space};

// Independent random streams derived from the training seed.
const SHUFFLE: u64 = 1;
const LATENT: u64 = 2;
const PENALTY: u64 = 3;
const SUBSAMPLE: u64 = 4;
const MONITOR: u64 = 5;
const GUMBEL: u64 = 6;

const MONITOR_ROWS: usize = 256;

fn stream(seed: u64, id: u64) -> SeededRng {
    rng_from_seed(seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(id))
}

/// Trains the model of the given kind.
pub fn train(
    kind: ModelKind,
    sample: &[Record],
    schema: &AttributeSchema,
    config: &TrainConfig,
    embedder: Option<&Embedder>,
) -> Result<ModelArtifact> {
    match kind {
        ModelKind::Wgan => train_wgan(sample, schema, config, embedder),
        ModelKind::Vae => train_vae(sample, schema, config, embedder),
    }
}

/// Reference rows for the regularizers, in the configured space.
struct Regularizers<'a> {
    reference: ReferenceSet,
    embedder: Option<&'a Embedder>,
    gamma_bd: f64,
    gamma_ad: f64,
}

impl<'a> Regularizers<'a> {
    fn new(
        sample: &[Record],
        schema: &AttributeSchema,
        config: &TrainConfig,
        embedder: Option<&'a Embedder>,
    ) -> Result<Self> {
        let rows: Vec<Record> = match config.ref_subsample {
            Some(k) if k < sample.len() => {
                let mut rng = stream(config.seed, SUBSAMPLE);
                rand::seq::index::sample(&mut rng, sample.len(), k)
                    .into_iter()
                    .map(|i| sample[i].clone())
                    .collect()
            }
            _ => sample.to_vec(),
        };
        let discrete = ReferenceSet::from_records(&rows, schema)?;
        let (reference, embedder) = match config.space {
            Space::Discrete => (discrete, None),
            Space::Embedded => {
                let e = embedder.ok_or_else(|| {
                    Error::InvalidArgument("embedded space needs a trained embedder".into())
                })?;
                (discrete.mapped(Space::Embedded, |r| e.embed(r))?, Some(e))
            }
        };
        Ok(Self {
            reference,
            embedder,
            gamma_bd: config.gamma_bd,
            gamma_ad: config.gamma_ad,
        })
    }

    fn project(&self, g: &mut Graph, out: Var) -> Result<Var> {
        match self.embedder {
            Some(e) => e.embed_var(g, out),
            None => Ok(out),
        }
    }

    /// Regularized loss; the terms are only built when their weight is positive.
    fn apply(&self, g: &mut Graph, base: Var, out: Var) -> Result<Var> {
        if self.gamma_bd == 0.0 && self.gamma_ad == 0.0 {
            return Ok(base);
        }
        let x = self.project(g, out)?;
        let bd = if self.gamma_bd > 0.0 {
            Some((self.gamma_bd, r_bd(g, x, &self.reference)?))
        } else {
            None
        };
        let ad = if self.gamma_ad > 0.0 {
            Some((self.gamma_ad, r_ad(g, x, &self.reference)?))
        } else {
            None
        };
        Ok(add_regularizers(g, base, bd, ad))
    }

    /// `(R_BD, R_AD)` of a relaxed batch, for the history log.
    fn values(&self, batch: &Matrix) -> Result<(f64, f64)> {
        let x = match self.embedder {
            Some(e) => e.embed(batch)?,
            None => batch.clone(),
        };
        Ok((
            r_bd_value(&x, &self.reference)?,
            r_ad_value(&x, &self.reference)?,
        ))
    }
}

fn check_inputs(
    sample: &[Record],
    schema: &AttributeSchema,
    config: &TrainConfig,
) -> Result<Matrix> {
    config.validate()?;
    if sample.len() < 2 {
        return Err(Error::InvalidArgument(
            "training needs at least 2 records".into(),
        ));
    }
    Ok(encode(sample, schema)?.into_values())
}

fn net(
    widths: Vec<usize>,
    activation: Activation,
    head: OutputHead,
    seed: u64,
) -> Result<DenseNet> {
    DenseNet::new(DenseNetSpec::new(widths, activation, head)?, seed)
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn gumbel_noise(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        -(-u.ln()).ln()
    })
}

/// Generator output on the graph: block softmax of the logits, perturbed by
/// Gumbel noise when `noise` is given.
fn generator_graph(
    g: &mut Graph,
    generator: &DenseNet,
    bound: &BoundParams,
    z: Var,
    blocks: &[usize],
    noise: Option<Matrix>,
) -> Result<Var> {
    match noise {
        None => generator.forward(g, bound, z),
        Some(n) => {
            let logits = generator.forward_logits(g, bound, z)?;
            let n = g.constant(n);
            let noisy = g.add(logits, n);
            let scaled = g.scale(noisy, 1.0 / GUMBEL_TEMPERATURE);
            Ok(g.block_softmax(scaled, blocks))
        }
    }
}

fn generator_value(
    generator: &DenseNet,
    z: &Matrix,
    blocks: &[usize],
    noise: Option<Matrix>,
) -> Result<Matrix> {
    match noise {
        None => generator.predict(z),
        Some(n) => {
            let logits = (generator.predict_logits(z)? + n) / GUMBEL_TEMPERATURE;
            Ok(block_softmax(&logits, blocks))
        }
    }
}

fn diverged(epoch: usize, what: &str, history: &[EpochLog]) -> Error {
    let last = history
        .last()
        .map(|h| format!("; last epoch {h:?}"))
        .unwrap_or_default();
    Error::Diverged {
        epoch,
        reason: format!("{what} is not finite{last}"),
    }
}

fn finite(g: &Graph, v: Var) -> bool {
    g.scalar(v).is_finite()
}

fn step(
    adam: &mut AdamState,
    params: &mut crate::diffcore::Parameters,
    grads: &[Matrix],
    epoch: usize,
    history: &[EpochLog],
) -> Result<()> {
    adam.step_params(params, grads).map_err(|e| match e {
        Error::NonFinite(_) => diverged(epoch, "gradient", history),
        other => other,
    })
}

/// Mini-batches of a shuffled pass; a trailing batch of fewer than two rows
/// is dropped.
fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size).filter(|c| c.len() >= 2)
}

/// Consecutive mini-batches of a shuffled index order; reshuffles when fewer
/// than `size` unseen rows remain (or at the start when the sample is
/// smaller than a batch).
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    size: usize,
}

impl BatchStream {
    fn new(rows: usize, size: usize) -> Self {
        Self {
            order: (0..rows).collect(),
            pos: rows,
            size: size.min(rows),
        }
    }

    fn next(&mut self, rng: &mut SeededRng) -> &[usize] {
        if self.pos + self.size > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos += self.size;
        &self.order[start..self.pos]
    }
}

struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn new() -> Self {
        Self { sum: 0.0, count: 0 }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// WGAN-GP. An epoch is `ceil(N / m)` generator updates, each preceded by
/// `n_critic` critic updates on consecutive batches of a reshuffled sample.
pub fn train_wgan(
    sample: &[Record],
    schema: &AttributeSchema,
    config: &TrainConfig,
    embedder: Option<&Embedder>,
) -> Result<ModelArtifact> {
    let x = check_inputs(sample, schema, config)?;
    let regs = Regularizers::new(sample, schema, config, embedder)?;
    let blocks = schema.cardinalities();
    let width = schema.width();
    let dz = config.latent_dim;
    let mut generator = net(
        widths(dz, &config.hidden, width),
        Activation::Relu,
        OutputHead::BlockSoftmax(blocks.clone()),
        config.seed,
    )?;
    let mut critic = net(
        widths(width, &config.hidden, 1),
        Activation::LEAKY,
        OutputHead::Linear,
        config.seed.wrapping_add(1),
    )?;
    let mut adam_g = AdamState::for_params(config.adam(ModelKind::Wgan), &generator.params);
    let mut adam_d = AdamState::for_params(config.adam(ModelKind::Wgan), &critic.params);

    let mut shuffle = stream(config.seed, SHUFFLE);
    let mut latent = stream(config.seed, LATENT);
    let mut penalty = stream(config.seed, PENALTY);
    let mut gumbel = stream(config.seed, GUMBEL);
    let monitor_z = standard_normal_with(MONITOR_ROWS, dz, &mut stream(config.seed, MONITOR));
    let mut noise = |rows: usize| {
        config
            .gumbel
            .then(|| gumbel_noise(rows, width, &mut gumbel))
    };

    let mut real_batches = BatchStream::new(x.nrows(), config.batch_size);
    let steps_per_epoch = x.nrows().div_ceil(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut l_d, mut l_g, mut l_gp) = (Mean::new(), Mean::new(), Mean::new());
        for _ in 0..steps_per_epoch {
            for _ in 0..config.n_critic {
                let batch = real_batches.next(&mut shuffle);
                let m = batch.len();
                let real = x.select(Axis(0), batch);
                let z = standard_normal_with(m, dz, &mut latent);
                let fake = generator_value(&generator, &z, &blocks, noise(m))?;

                let mut g = Graph::new();
                let bound = critic.params.bind(&mut g);
                let real_v = g.constant(real.clone());
                let fake_v = g.constant(fake.clone());
                let d_real = critic.forward(&mut g, &bound, real_v)?;
                let d_fake = critic.forward(&mut g, &bound, fake_v)?;
                let ld = wgan_critic_loss(&mut g, d_real, d_fake)?;
                let gp = gradient_penalty(
                    &mut g,
                    &critic,
                    &bound,
                    &real,
                    &fake,
                    config.lambda,
                    &mut penalty,
                )?;
                if !finite(&g, ld) || !finite(&g, gp) {
                    return Err(diverged(epoch, "critic loss", &history));
                }
                l_d.push(g.scalar(ld));
                l_gp.push(g.scalar(gp));
                let loss = g.add(ld, gp);
                let grads = g.grad_values(loss, &bound.vars())?;
                step(&mut adam_d, &mut critic.params, &grads, epoch, &history)?;
            }

            let m = config.batch_size;
            let z = standard_normal_with(m, dz, &mut latent);
            let mut g = Graph::new();
            let bound = generator.params.bind(&mut g);
            let frozen = critic.params.bind_frozen(&mut g);
            let z = g.constant(z);
            let out = generator_graph(&mut g, &generator, &bound, z, &blocks, noise(m))?;
            let d_fake = critic.forward(&mut g, &frozen, out)?;
            let lg = wgan_generator_loss(&mut g, d_fake)?;
            let total = regs.apply(&mut g, lg, out)?;
            if !finite(&g, total) {
                return Err(diverged(epoch, "generator loss", &history));
            }
            l_g.push(g.scalar(lg));
            let grads = g.grad_values(total, &bound.vars())?;
            step(&mut adam_g, &mut generator.params, &grads, epoch, &history)?;
        }
        let (r_bd, r_ad) = regs.values(&generator.predict(&monitor_z)?)?;
        let log = EpochLog {
            epoch: epoch + 1,
            l_d: l_d.get(),
            l_g: l_g.get(),
            l_gp: l_gp.get(),
            l_r: None,
            l_kl: None,
            r_bd,
            r_ad,
        };
        if !log.is_finite() {
            return Err(diverged(epoch, "epoch summary", &history));
        }
        history.push(log);
    }

    Ok(ModelArtifact {
        kind: ModelKind::Wgan,
        schema: schema.clone(),
        latent: LatentSpec { dim: dz },
        config: config.clone(),
        generator,
        companion: critic,
        embedder: None,
        history,
    })
}

/// VAE. One update per mini-batch on the reparameterized reconstruction.
pub fn train_vae(
    sample: &[Record],
    schema: &AttributeSchema,
    config: &TrainConfig,
    embedder: Option<&Embedder>,
) -> Result<ModelArtifact> {
    let x = check_inputs(sample, schema, config)?;
    let regs = Regularizers::new(sample, schema, config, embedder)?;
    let blocks = schema.cardinalities();
    let width = schema.width();
    let dz = config.latent_dim;
    let mut encoder = net(
        widths(width, &config.hidden, 2 * dz),
        Activation::Relu,
        OutputHead::MeanLogVar,
        config.seed.wrapping_add(1),
    )?;
    let mut hidden = config.hidden.clone();
    hidden.reverse();
    let mut decoder = net(
        widths(dz, &hidden, width),
        Activation::Relu,
        OutputHead::BlockSoftmax(blocks),
        config.seed,
    )?;
    let mut adam_e = AdamState::for_params(config.adam(ModelKind::Vae), &encoder.params);
    let mut adam_d = AdamState::for_params(config.adam(ModelKind::Vae), &decoder.params);

    let mut shuffle = stream(config.seed, SHUFFLE);
    let mut latent = stream(config.seed, LATENT);
    let monitor_z = standard_normal_with(MONITOR_ROWS, dz, &mut stream(config.seed, MONITOR));

    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let (mut l_r, mut l_kl) = (Mean::new(), Mean::new());
        for batch in batches(&order, config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let eps = standard_normal_with(batch.len(), dz, &mut latent);
            let mut g = Graph::new();
            let enc = encoder.params.bind(&mut g);
            let dec = decoder.params.bind(&mut g);
            let input = g.constant(xb.clone());
            let stats = encoder.forward(&mut g, &enc, input)?;
            let (mu, logvar) = encoder.split_mean_logvar(&mut g, stats);
            let half = g.scale(logvar, 0.5);
            let sigma = g.exp(half);
            let eps = g.constant(eps);
            let noise = g.mul(sigma, eps);
            let z = g.add(mu, noise);
            let x_hat = decoder.forward(&mut g, &dec, z)?;
            let (recon, kl) = vae_losses(&mut g, &xb, x_hat, mu, logvar, config.beta)
                .map_err(|_| diverged(epoch, "VAE loss", &history))?;
            l_r.push(g.scalar(recon));
            l_kl.push(g.scalar(kl));
            let base = g.add(recon, kl);
            let total = regs.apply(&mut g, base, x_hat)?;
            if !finite(&g, total) {
                return Err(diverged(epoch, "VAE loss", &history));
            }
            let mut wrt = enc.vars();
            wrt.extend(dec.vars());
            let mut grads = g.grad_values(total, &wrt)?;
            let dec_grads = grads.split_off(encoder.params.tensor_count());
            step(&mut adam_e, &mut encoder.params, &grads, epoch, &history)?;
            step(
                &mut adam_d,
                &mut decoder.params,
                &dec_grads,
                epoch,
                &history,
            )?;
        }
        let (r_bd, r_ad) = regs.values(&decoder.predict(&monitor_z)?)?;
        let log = EpochLog {
            epoch: epoch + 1,
            l_d: None,
            l_g: None,
            l_gp: None,
            l_r: l_r.get(),
            l_kl: l_kl.get(),
            r_bd,
            r_ad,
        };
        if !log.is_finite() {
            return Err(diverged(epoch, "epoch summary", &history));
        }
        history.push(log);
    }

    Ok(ModelArtifact {
        kind: ModelKind::Vae,
        schema: schema.clone(),
        latent: LatentSpec { dim: dz },
        config: config.clone(),
        generator: decoder,
        companion: encoder,
        embedder: None,
        history,
    })
}
