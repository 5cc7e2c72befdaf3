//! WGAN-GP and VAE generators for multi-categorical records.

pub mod losses;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{discretize, AttributeSchema, DiscretizeMode, Record};
use crate::diffcore::{rng_from_seed, standard_normal_with, AdamConfig, DenseNet};
use crate::error::{Error, Result};
use crate::geometry::Space;

pub use losses::{
    gradient_penalty, total_loss_vae, total_loss_wgan, vae_losses, wgan_critic_loss,
    wgan_generator_loss, LossComponents,
};
pub use train::{train, train_vae, train_wgan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Wgan,
    Vae,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Wgan => "wgan",
            ModelKind::Vae => "vae",
        })
    }
}

/// Standard normal prior of dimension `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Adam moment decay rates; `None` picks the per-model default.
    pub adam_betas: Option<(f64, f64)>,
    pub n_critic: usize,
    pub lambda: f64,
    pub beta: f64,
    pub gamma_bd: f64,
    pub gamma_ad: f64,
    pub space: Space,
    /// Use a seeded random subset of this many sample rows as the
    /// regularizer reference.
    pub ref_subsample: Option<usize>,
    /// How relaxed outputs become records; `None` picks the model default.
    pub discretize_mode: Option<DiscretizeMode>,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Gumbel-softmax generator outputs (temperature 0.5) during training.
    pub gumbel: bool,
    pub seed: u64,
}

pub const GUMBEL_TEMPERATURE: f64 = 0.5;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 200,
            lr: 1e-4,
            adam_betas: None,
            n_critic: 5,
            lambda: 10.0,
            beta: 1.0,
            gamma_bd: 0.0,
            gamma_ad: 0.0,
            space: Space::Discrete,
            ref_subsample: None,
            discretize_mode: None,
            latent_dim: 16,
            hidden: vec![64, 64],
            gumbel: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.batch_size < 2 {
            return bad("batch size must be ≥ 2");
        }
        if self.n_critic < 1 {
            return bad("n_critic must be ≥ 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("gamma_bd", self.gamma_bd),
            ("gamma_ad", self.gamma_ad),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be ≥ 0, got {v}"
                )));
            }
        }
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.ref_subsample == Some(0) {
            return bad("ref_subsample must be ≥ 1");
        }
        if let Some((b1, b2)) = self.adam_betas {
            if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
                return bad("Adam betas must lie in [0, 1)");
            }
        }
        Ok(())
    }

    /// Argmax for the WGAN, whose outputs are close to one-hot; sampling for
    /// the VAE, whose decoder outputs are per-attribute likelihoods.
    pub fn discretize_mode_for(&self, kind: ModelKind) -> DiscretizeMode {
        self.discretize_mode.unwrap_or(match kind {
            ModelKind::Wgan => DiscretizeMode::Argmax,
            ModelKind::Vae => DiscretizeMode::Sample,
        })
    }

    pub fn uses_regularizers(&self) -> bool {
        self.gamma_bd > 0.0 || self.gamma_ad > 0.0
    }

    fn adam(&self, kind: ModelKind) -> AdamConfig {
        let mut c = match kind {
            ModelKind::Wgan => AdamConfig::adversarial(self.lr),
            ModelKind::Vae => AdamConfig::standard(self.lr),
        };
        if let Some((b1, b2)) = self.adam_betas {
            c.beta1 = b1;
            c.beta2 = b2;
        }
        c
    }
}

/// One row of the training history. Terms that do not apply to the model
/// are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_d")]
    pub l_d: Option<f64>,
    #[serde(rename = "L_g")]
    pub l_g: Option<f64>,
    #[serde(rename = "L_GP")]
    pub l_gp: Option<f64>,
    #[serde(rename = "L_R")]
    pub l_r: Option<f64>,
    #[serde(rename = "L_KL")]
    pub l_kl: Option<f64>,
    #[serde(rename = "R_BD")]
    pub r_bd: f64,
    #[serde(rename = "R_AD")]
    pub r_ad: f64,
}

impl EpochLog {
    pub fn is_finite(&self) -> bool {
        [self.l_d, self.l_g, self.l_gp, self.l_r, self.l_kl]
            .into_iter()
            .flatten()
            .chain([self.r_bd, self.r_ad])
            .all(f64::is_finite)
    }
}

/// A trained model: generator (WGAN) or decoder (VAE), the critic or
/// encoder it was trained with, and everything needed to regenerate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    pub schema: AttributeSchema,
    pub latent: LatentSpec,
    pub config: TrainConfig,
    pub generator: DenseNet,
    /// Critic for a WGAN, encoder for a VAE.
    pub companion: DenseNet,
    /// Where the frozen embedder used by the regularizers is stored.
    pub embedder: Option<String>,
    pub history: Vec<EpochLog>,
}

impl ModelArtifact {
    pub fn validate(&self) -> Result<()> {
        let g = &self.generator.spec;
        if g.input_width() != self.latent.dim || g.output_width() != self.schema.width() {
            return Err(Error::Shape(
                "generator does not map the latent space onto the schema layout".into(),
            ));
        }
        match &g.head {
            crate::diffcore::OutputHead::BlockSoftmax(b) if *b == self.schema.cardinalities() => {}
            _ => {
                return Err(Error::Shape(
                    "generator head does not match the schema blocks".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let a: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        a.validate()?;
        Ok(a)
    }

    /// Training history as CSV: `epoch,L_d,L_g,L_GP,L_R,L_KL,R_BD,R_AD`.
    pub fn write_history_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        if self.history.is_empty() {
            csv.write_record(["epoch", "L_d", "L_g", "L_GP", "L_R", "L_KL", "R_BD", "R_AD"])?;
        }
        for row in &self.history {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Stream offset separating the discretization draws from the latent draws.
const DISCRETIZE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Relaxed generator outputs for `n` prior draws. Rows are produced in
/// order from one seeded stream, so a smaller `n` yields a prefix.
pub fn generate_relaxed(
    artifact: &ModelArtifact,
    n: usize,
    seed: u64,
) -> Result<crate::diffcore::Matrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot generate 0 records".into()));
    }
    artifact.validate()?;
    let mut rng = rng_from_seed(seed);
    let z = standard_normal_with(n, artifact.latent.dim, &mut rng);
    artifact.generator.predict(&z)
}

/// Draws `n` records: prior sample, generator, then discretization.
pub fn generate(artifact: &ModelArtifact, n: usize, seed: u64) -> Result<Vec<Record>> {
    let relaxed = generate_relaxed(artifact, n, seed)?;
    discretize(
        &relaxed,
        &artifact.schema,
        artifact.config.discretize_mode_for(artifact.kind),
        seed ^ DISCRETIZE_STREAM,
    )
}
