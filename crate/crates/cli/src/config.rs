use std::path::{Path, PathBuf};

use popsynth::baselines::BnConfig;
use popsynth::embedder::EmbedderSpec;
use popsynth::geometry::Space;
use popsynth::models::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// What a grid cell trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Wgan,
    Vae,
    Reweight,
    Bn,
}

impl CellKind {
    pub fn label(self) -> &'static str {
        match self {
            CellKind::Wgan => "WGAN",
            CellKind::Vae => "VAE",
            CellKind::Reweight => "Re-weighting",
            CellKind::Bn => "BN",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, CellKind::Wgan | CellKind::Vae)
    }
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub kind: CellKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub space: Space,
    #[serde(default)]
    pub gamma_bd: f64,
    #[serde(default)]
    pub gamma_ad: f64,
    /// Train seed; falls back to `train.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Cell {
    pub fn new(kind: CellKind) -> Self {
        Self {
            kind,
            name: None,
            space: Space::Discrete,
            gamma_bd: 0.0,
            gamma_ad: 0.0,
            seed: None,
        }
    }

    pub fn id(&self, default_seed: u64) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match self.kind {
            CellKind::Reweight | CellKind::Bn => format!("{:?}", self.kind).to_lowercase(),
            _ => format!(
                "{:?}-{}-bd{}-ad{}-s{}",
                self.kind,
                self.space,
                self.gamma_bd,
                self.gamma_ad,
                self.seed.unwrap_or(default_seed)
            )
            .to_lowercase(),
        }
    }

    pub fn regularization(&self) -> &'static str {
        match (self.gamma_bd > 0.0, self.gamma_ad > 0.0) {
            (false, false) => "none",
            (true, false) => "BD",
            (false, true) => "AD",
            (true, true) => "BD+AD",
        }
    }

    pub fn space_label(&self) -> String {
        if self.kind.is_neural() {
            self.space.to_string()
        } else {
            "-".into()
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            space: self.space,
            gamma_bd: self.gamma_bd,
            gamma_ad: self.gamma_ad,
            seed: self.seed.unwrap_or(base.seed),
            ..base.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    GammaBd,
    GammaAd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: CellKind,
    pub space: Space,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: CellKind::Wgan,
            space: Space::Discrete,
            param: SweepParam::GammaBd,
            values: vec![0.0, 0.1, 0.2, 0.3, 0.5, 1.0],
            seeds: vec![7],
        }
    }
}

impl SweepConfig {
    pub fn cell(&self, value: f64, seed: u64) -> Cell {
        let mut c = Cell::new(self.kind);
        c.space = self.space;
        c.seed = Some(seed);
        match self.param {
            SweepParam::GammaBd => c.gamma_bd = value,
            SweepParam::GammaAd => c.gamma_ad = value,
        }
        c
    }
}

/// Everything one experiment needs. Relative paths resolve against the
/// output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Population spec file; `None` uses the built-in desk preset.
    pub population_spec: Option<PathBuf>,
    /// Existing population CSV plus its schema, used instead of synthesizing.
    pub population: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub population_size: Option<usize>,
    pub data_seed: u64,
    pub sample_rate: f64,
    pub sample_seed: u64,
    pub generation_seed: u64,
    /// Records generated per cell; `None` matches the population size.
    pub generation_size: Option<usize>,
    pub train: TrainConfig,
    pub embedder: EmbedderSpec,
    pub bn: BnConfig,
    pub grid: Vec<Cell>,
    pub sweep: SweepConfig,
    pub coverage_rates: Vec<f64>,
    pub recall_sizes: Vec<usize>,
    pub histogram_bins: usize,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut grid = vec![Cell::new(CellKind::Reweight), Cell::new(CellKind::Bn)];
        for (kind, gamma_ad) in [(CellKind::Wgan, 0.01), (CellKind::Vae, 0.1)] {
            grid.push(Cell::new(kind));
            grid.push(Cell {
                gamma_bd: 0.3,
                ..Cell::new(kind)
            });
            grid.push(Cell {
                gamma_ad,
                ..Cell::new(kind)
            });
        }
        Self {
            output_dir: PathBuf::from("out"),
            population_spec: None,
            population: None,
            schema: None,
            population_size: None,
            data_seed: 1,
            sample_rate: 0.05,
            sample_seed: 2,
            generation_seed: 11,
            generation_size: None,
            train: TrainConfig {
                seed: 7,
                ..TrainConfig::default()
            },
            embedder: EmbedderSpec::default(),
            bn: BnConfig::default(),
            grid,
            sweep: SweepConfig::default(),
            coverage_rates: vec![0.01, 0.02, 0.05, 0.1, 0.5, 1.0],
            recall_sizes: vec![10_000, 25_000, 50_000, 100_000],
            histogram_bins: 30,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (or defaults), applies `key=value` overrides, then
    /// environment overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
            None => serde_json::to_value(Self::default()).expect("default config serializes"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut config: Self =
            serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        if let Ok(dir) = std::env::var(crate::ENV_OUTPUT_DIR) {
            config.output_dir = PathBuf::from(dir);
        }
        if let Ok(w) = std::env::var(crate::ENV_WORKERS) {
            config.workers = w.parse().map_err(|_| {
                CliError::Config(format!("{} must be an integer", crate::ENV_WORKERS))
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return bad("sample_rate must lie in (0, 1]");
        }
        if self.grid.is_empty() {
            return bad("grid must not be empty");
        }
        if self.sweep.values.is_empty() || self.sweep.seeds.is_empty() {
            return bad("sweep values and seeds must not be empty");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be at least 1");
        }
        if self.population.is_some() != self.schema.is_some() {
            return bad("population and schema must be given together");
        }
        let mut ids: Vec<String> = self.grid.iter().map(|c| c.id(self.train.seed)).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("grid cell names must be unique");
        }
        self.train.validate().map_err(CliError::Core)?;
        self.embedder.validate().map_err(CliError::Core)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_dir.join(p)
        }
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_or_string() {
        let mut v = serde_json::json!({"train": {"epochs": 3}});
        apply_override(&mut v, "train.epochs=5").unwrap();
        apply_override(&mut v, "output_dir=/tmp/x").unwrap();
        apply_override(&mut v, "train.hidden=[8,8]").unwrap();
        assert_eq!(v["train"]["epochs"], 5);
        assert_eq!(v["output_dir"], "/tmp/x");
        assert_eq!(v["train"]["hidden"], serde_json::json!([8, 8]));
        assert!(apply_override(&mut v, "nokey").is_err());
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig =
            serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn cell_ids_are_descriptive() {
        let c = Cell {
            gamma_bd: 0.3,
            ..Cell::new(CellKind::Wgan)
        };
        assert_eq!(c.id(7), "wgan-discrete-bd0.3-ad0-s7");
        assert_eq!(c.regularization(), "BD");
        assert_eq!(Cell::new(CellKind::Bn).id(7), "bn");
    }
}
