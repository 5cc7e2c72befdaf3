use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use popsynth::baselines::{bn_learn, bn_sample, reweight_generate, BayesNet};
use popsynth::data::dataset::{load_records, save_records, write_records};
use popsynth::data::{
    build_index, coverage_curve, draw_sample, encode, preset, synth_population, AttributeSchema,
    CombinationIndex, CoveragePoint, PopulationSpec, Record,
};
use popsynth::embedder::{train_embedder, Embedder};
use popsynth::evaluate::{
    distance_histograms, evaluate_records, recall_curve, EvalReport, ReportLabels,
};
use popsynth::geometry::{ReferenceSet, Space};
use popsynth::models::{generate, train, ModelArtifact, ModelKind};
use serde::Serialize;

use crate::config::{Cell, CellKind, ExperimentConfig, SweepParam};
use crate::fsutil::{atomic_with, run_parallel, write_atomic, write_json};
use crate::{CliError, Result};

/// File layout under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            root: config.output_dir.clone(),
        }
    }

    pub fn population(&self) -> PathBuf {
        self.root.join("population.csv")
    }
    pub fn schema(&self) -> PathBuf {
        self.root.join("schema.json")
    }
    pub fn population_spec(&self) -> PathBuf {
        self.root.join("population_spec.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn sample(&self) -> PathBuf {
        self.root.join("sample.csv")
    }
    pub fn split_summary(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn embedder(&self) -> PathBuf {
        self.root.join("embedder.json")
    }
    pub fn embedder_report(&self) -> PathBuf {
        self.root.join("embedder_report.json")
    }
    pub fn model(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.json"))
    }
    pub fn history(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.history.csv"))
    }
    pub fn table(&self) -> PathBuf {
        self.root.join("eval").join("table.csv")
    }
    pub fn report(&self, id: &str) -> PathBuf {
        self.root.join("eval").join(format!("{id}.json"))
    }
    pub fn histograms(&self, id: &str, space: Space) -> PathBuf {
        self.root
            .join("eval")
            .join(format!("{id}.{space}.histograms.csv"))
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }
    pub fn coverage(&self) -> PathBuf {
        self.root.join("curves").join("coverage.csv")
    }
    pub fn recall_vs_size(&self) -> PathBuf {
        self.root.join("curves").join("recall_vs_size.csv")
    }
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            path: path.display().to_string(),
            hint: hint.into(),
        })
    }
}

fn population_spec(config: &ExperimentConfig) -> Result<PopulationSpec> {
    let mut spec = match &config.population_spec {
        Some(p) => PopulationSpec::load(p)?,
        None => preset::desk_preset(config.data_seed),
    };
    spec.seed = config.data_seed;
    if let Some(n) = config.population_size {
        spec.size = n;
    }
    spec.validate()?;
    Ok(spec)
}

/// Schema and population: either the configured dataset or the output of
/// `synth-data`.
pub fn load_population(config: &ExperimentConfig) -> Result<(AttributeSchema, Vec<Record>)> {
    let layout = Layout::new(config);
    let (schema_path, pop_path) = match (&config.schema, &config.population) {
        (Some(s), Some(p)) => (s.clone(), p.clone()),
        _ => (layout.schema(), layout.population()),
    };
    require(
        &schema_path,
        "run synth-data first or set schema/population",
    )?;
    require(&pop_path, "run synth-data first or set schema/population")?;
    let schema = AttributeSchema::load(&schema_path)?;
    let pop = load_records(&pop_path, &schema)?;
    Ok((schema, pop))
}

pub fn load_sample(config: &ExperimentConfig, schema: &AttributeSchema) -> Result<Vec<Record>> {
    let path = Layout::new(config).sample();
    require(&path, "run split first")?;
    Ok(load_records(&path, schema)?)
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    rows: usize,
    unique_combinations: usize,
    attributes: Vec<String>,
    forbidden_rules: Vec<BTreeMap<String, String>>,
    population: String,
    schema: String,
    population_spec: String,
}

pub fn cmd_synth_data(config: &ExperimentConfig) -> Result<PathBuf> {
    let layout = Layout::new(config);
    let spec = population_spec(config)?;
    let pop = synth_population(&spec)?;
    let schema = &spec.schema;
    atomic_with(&layout.population(), |tmp| {
        Ok(save_records(tmp, schema, &pop)?)
    })?;
    atomic_with(&layout.schema(), |tmp| Ok(schema.save(tmp)?))?;
    atomic_with(&layout.population_spec(), |tmp| Ok(spec.save(tmp)?))?;
    let forbidden_rules = spec
        .forbidden
        .iter()
        .map(|r| {
            r.literals
                .iter()
                .map(|&(k, c)| {
                    let a = schema.attribute(k);
                    (a.name.clone(), a.categories[c as usize].clone())
                })
                .collect()
        })
        .collect();
    let manifest = Manifest {
        seed: spec.seed,
        rows: pop.len(),
        unique_combinations: build_index(&pop, schema)?.unique_count(),
        attributes: schema.attributes().iter().map(|a| a.name.clone()).collect(),
        forbidden_rules,
        population: "population.csv".into(),
        schema: "schema.json".into(),
        population_spec: "population_spec.json".into(),
    };
    write_json(&layout.manifest(), &manifest)?;
    info!(
        "wrote {} records to {}",
        pop.len(),
        layout.population().display()
    );
    Ok(layout.population())
}

#[derive(Debug, Serialize)]
pub struct SplitSummary {
    pub rate: f64,
    pub seed: u64,
    pub rows: usize,
    pub combination_coverage: f64,
    pub instance_coverage: f64,
}

pub fn cmd_split(config: &ExperimentConfig) -> Result<SplitSummary> {
    let layout = Layout::new(config);
    let (schema, pop) = load_population(config)?;
    let sample = draw_sample(&pop, config.sample_rate, config.sample_seed)?;
    atomic_with(&layout.sample(), |tmp| {
        Ok(save_records(tmp, &schema, &sample)?)
    })?;
    let point: CoveragePoint =
        coverage_curve(&pop, &schema, &[config.sample_rate], config.sample_seed)?[0];
    let summary = SplitSummary {
        rate: config.sample_rate,
        seed: config.sample_seed,
        rows: sample.len(),
        combination_coverage: point.combination_coverage,
        instance_coverage: point.instance_coverage,
    };
    write_json(&layout.split_summary(), &summary)?;
    Ok(summary)
}

pub fn cmd_train_embedder(config: &ExperimentConfig) -> Result<Embedder> {
    let layout = Layout::new(config);
    let (schema, _) = load_population(config)?;
    let sample = load_sample(config, &schema)?;
    let (embedder, report) = train_embedder(&encode(&sample, &schema)?, &schema, &config.embedder)?;
    atomic_with(&layout.embedder(), |tmp| Ok(embedder.save(tmp)?))?;
    write_json(&layout.embedder_report(), &report)?;
    info!(
        "embedder: {} epochs, held-out masked accuracy {:.4}",
        report.epochs_run,
        report.accuracy.last().copied().unwrap_or(f64::NAN)
    );
    Ok(embedder)
}

fn ensure_embedder(config: &ExperimentConfig) -> Result<Embedder> {
    let path = Layout::new(config).embedder();
    if path.exists() {
        Ok(Embedder::load(&path)?)
    } else {
        cmd_train_embedder(config)
    }
}

/// A trained cell, ready to generate from.
pub enum Trained {
    Neural(Box<ModelArtifact>),
    Bn(Box<BayesNet>),
    Reweight,
}

fn model_kind(kind: CellKind) -> ModelKind {
    match kind {
        CellKind::Vae => ModelKind::Vae,
        _ => ModelKind::Wgan,
    }
}

fn train_cell(
    config: &ExperimentConfig,
    cell: &Cell,
    schema: &AttributeSchema,
    sample: &[Record],
    embedder: Option<&Embedder>,
) -> Result<Trained> {
    Ok(match cell.kind {
        CellKind::Reweight => Trained::Reweight,
        CellKind::Bn => Trained::Bn(Box::new(bn_learn(sample, schema, &config.bn)?)),
        kind => {
            let tc = cell.train_config(&config.train);
            let mut art = train(model_kind(kind), sample, schema, &tc, embedder)?;
            if embedder.is_some() {
                art.embedder = Some("embedder.json".into());
            }
            Trained::Neural(Box::new(art))
        }
    })
}

fn save_trained(layout: &Layout, id: &str, trained: &Trained) -> Result<()> {
    match trained {
        Trained::Reweight => Ok(()),
        Trained::Bn(net) => atomic_with(&layout.model(id), |tmp| Ok(net.save(tmp)?)),
        Trained::Neural(art) => {
            atomic_with(&layout.model(id), |tmp| Ok(art.save(tmp)?))?;
            let mut buf = Vec::new();
            art.write_history_csv(&mut buf)?;
            write_atomic(&layout.history(id), &buf)
        }
    }
}

fn load_trained(config: &ExperimentConfig, cell: &Cell) -> Result<Trained> {
    let path = Layout::new(config).model(&cell.id(config.train.seed));
    match cell.kind {
        CellKind::Reweight => return Ok(Trained::Reweight),
        _ => require(&path, "run train first")?,
    }
    Ok(match cell.kind {
        CellKind::Bn => Trained::Bn(Box::new(BayesNet::load(&path)?)),
        _ => Trained::Neural(Box::new(ModelArtifact::load(&path)?)),
    })
}

fn needs_embedder(cells: &[Cell]) -> bool {
    cells
        .iter()
        .any(|c| c.kind.is_neural() && c.space == Space::Embedded)
}

fn select<'a>(config: &'a ExperimentConfig, only: Option<&str>) -> Result<Vec<&'a Cell>> {
    let cells: Vec<&Cell> = config
        .grid
        .iter()
        .filter(|c| only.is_none_or(|o| c.id(config.train.seed) == o))
        .collect();
    if cells.is_empty() {
        return Err(CliError::Config(format!(
            "no grid cell named {:?}",
            only.unwrap_or("")
        )));
    }
    Ok(cells)
}

fn summarize_failures(ids: &[String], results: &[Result<()>]) -> Result<()> {
    let failed: Vec<String> = ids
        .iter()
        .zip(results)
        .filter_map(|(id, r)| r.as_ref().err().map(|e| format!("{id}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Cells {
            failed: failed.len(),
            total: ids.len(),
            details: failed.join("; "),
        })
    }
}

/// Trains the selected cells (all when `only` is `None`). Failed cells are
/// reported after the others finish.
pub fn cmd_train(config: &ExperimentConfig, only: Option<&str>) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(config);
    let cells = select(config, only)?;
    let (schema, _) = load_population(config)?;
    let sample = load_sample(config, &schema)?;
    let owned: Vec<Cell> = cells.iter().map(|c| (*c).clone()).collect();
    let embedder = if needs_embedder(&owned) {
        Some(ensure_embedder(config)?)
    } else {
        None
    };
    let ids: Vec<String> = cells.iter().map(|c| c.id(config.train.seed)).collect();
    let results = run_parallel(cells.len(), config.workers, |i| {
        let cell = cells[i];
        let emb = (cell.space == Space::Embedded)
            .then_some(())
            .and(embedder.as_ref());
        info!("training {}", ids[i]);
        let trained = train_cell(config, cell, &schema, &sample, emb)?;
        save_trained(&layout, &ids[i], &trained)
    });
    summarize_failures(&ids, &results)?;
    Ok(cells
        .iter()
        .zip(&ids)
        .filter(|(c, _)| c.kind != CellKind::Reweight)
        .map(|(_, id)| layout.model(id))
        .collect())
}

fn generate_from(trained: &Trained, sample: &[Record], n: usize, seed: u64) -> Result<Vec<Record>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok(match trained {
        Trained::Reweight => reweight_generate(sample, n, seed)?,
        Trained::Bn(net) => bn_sample(net, n, seed)?,
        Trained::Neural(art) => generate(art, n, seed)?,
    })
}

/// Writes `n` generated records of one cell as CSV.
pub fn cmd_generate(
    config: &ExperimentConfig,
    cell_id: &str,
    n: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<usize> {
    let cell = select(config, Some(cell_id))?[0];
    let (schema, _) = load_population(config)?;
    let sample = load_sample(config, &schema)?;
    let trained = load_trained(config, cell)?;
    let records = generate_from(&trained, &sample, n, seed.unwrap_or(config.generation_seed))?;
    let mut buf = Vec::new();
    write_records(&mut buf, &schema, &records)?;
    write_atomic(out, &buf)?;
    Ok(records.len())
}

struct EvalInputs {
    schema: AttributeSchema,
    sample: Vec<Record>,
    sample_idx: CombinationIndex,
    pop_idx: CombinationIndex,
    pop_len: usize,
}

fn eval_inputs(config: &ExperimentConfig) -> Result<EvalInputs> {
    let (schema, pop) = load_population(config)?;
    let sample = load_sample(config, &schema)?;
    Ok(EvalInputs {
        sample_idx: build_index(&sample, &schema)?,
        pop_idx: build_index(&pop, &schema)?,
        pop_len: pop.len(),
        schema,
        sample,
    })
}

fn evaluate_cell(
    config: &ExperimentConfig,
    inputs: &EvalInputs,
    cell: &Cell,
    trained: &Trained,
) -> Result<(EvalReport, Vec<Record>)> {
    let n = config.generation_size.unwrap_or(inputs.pop_len);
    let generated = generate_from(trained, &inputs.sample, n, config.generation_seed)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("cell".into(), cell.id(config.train.seed));
    metadata.insert("generation_seed".into(), config.generation_seed.to_string());
    if cell.kind.is_neural() {
        metadata.insert(
            "train_seed".into(),
            cell.train_config(&config.train).seed.to_string(),
        );
        metadata.insert("gamma_bd".into(), cell.gamma_bd.to_string());
        metadata.insert("gamma_ad".into(), cell.gamma_ad.to_string());
    }
    let labels = ReportLabels {
        model: cell.kind.label().into(),
        space: cell.space_label(),
        regularization: cell.regularization().into(),
        metadata,
    };
    let report = evaluate_records(
        &generated,
        &inputs.schema,
        &inputs.sample_idx,
        &inputs.pop_idx,
        labels,
    )?;
    Ok((report, generated))
}

fn write_histograms(
    config: &ExperimentConfig,
    inputs: &EvalInputs,
    id: &str,
    generated: &[Record],
    embedder: Option<&Embedder>,
) -> Result<()> {
    let layout = Layout::new(config);
    let mut spaces = vec![(Space::Discrete, None)];
    if let Some(e) = embedder {
        spaces.push((Space::Embedded, Some(e)));
    }
    for (space, emb) in spaces {
        let mut reference = ReferenceSet::from_index(&inputs.sample_idx, &inputs.schema)?;
        if let Some(e) = emb {
            reference = reference.mapped(Space::Embedded, |x| e.embed(x))?;
        }
        let h = distance_histograms(
            generated,
            &inputs.schema,
            &reference,
            emb,
            &inputs.sample_idx,
            &inputs.pop_idx,
            config.histogram_bins,
        )?;
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        write_atomic(&layout.histograms(id, space), &buf)?;
    }
    Ok(())
}

fn table_csv(reports: &[&EvalReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EvalReport::CSV_HEADER)
        .map_err(popsynth::Error::from)?;
    for r in reports {
        w.write_record(r.csv_record())
            .map_err(popsynth::Error::from)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Core(popsynth::Error::Io(e.into_error())))
}

/// Evaluates every grid cell against the population, writing the table,
/// per-cell JSON reports and boundary-distance histograms.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    let layout = Layout::new(config);
    let inputs = eval_inputs(config)?;
    let cells = &config.grid;
    let embedder_path = layout.embedder();
    let ids: Vec<String> = cells.iter().map(|c| c.id(config.train.seed)).collect();
    let results: Vec<Result<EvalReport>> = run_parallel(cells.len(), config.workers, |i| {
        let trained = load_trained(config, &cells[i])?;
        let (report, generated) = evaluate_cell(config, &inputs, &cells[i], &trained)?;
        write_json(&layout.report(&ids[i]), &report)?;
        let embedder = match &trained {
            Trained::Neural(a) if a.embedder.is_some() => Some(Embedder::load(&embedder_path)?),
            _ => None,
        };
        write_histograms(config, &inputs, &ids[i], &generated, embedder.as_ref())?;
        Ok(report)
    });
    let ok: Vec<&EvalReport> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    write_atomic(&layout.table(), &table_csv(&ok)?)?;
    let statuses: Vec<Result<()>> = results
        .iter()
        .map(|r| match r {
            Ok(_) => Ok(()),
            Err(e) => Err(CliError::Config(e.to_string())),
        })
        .collect();
    summarize_failures(&ids, &statuses)?;
    Ok(results
        .into_iter()
        .map(|r| r.expect("checked above"))
        .collect())
}

/// One row of the sensitivity table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub model: String,
    pub space: String,
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub status: String,
}

/// Trains and evaluates every (value, seed) pair of the sweep grid. Failed
/// points are recorded and the sweep continues.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let layout = Layout::new(config);
    let inputs = eval_inputs(config)?;
    let sweep = &config.sweep;
    let points: Vec<(f64, u64)> = sweep
        .values
        .iter()
        .flat_map(|&v| sweep.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let embedder = if sweep.kind.is_neural() && sweep.space == Space::Embedded {
        Some(ensure_embedder(config)?)
    } else {
        None
    };
    let param = match sweep.param {
        SweepParam::GammaBd => "gamma_bd",
        SweepParam::GammaAd => "gamma_ad",
    };
    let rows = run_parallel(points.len(), config.workers, |i| {
        let (value, seed) = points[i];
        let cell = sweep.cell(value, seed);
        info!("sweep {param}={value} seed={seed}");
        let outcome = train_cell(
            config,
            &cell,
            &inputs.schema,
            &inputs.sample,
            embedder.as_ref(),
        )
        .and_then(|t| evaluate_cell(config, &inputs, &cell, &t));
        let mut row = SweepRow {
            model: cell.kind.label().into(),
            space: cell.space_label(),
            param: param.into(),
            value,
            seed,
            precision: None,
            recall: None,
            f1: None,
            status: "ok".into(),
        };
        match outcome {
            Ok((r, _)) => {
                row.precision = Some(r.precision);
                row.recall = Some(r.recall);
                row.f1 = Some(r.f1);
            }
            Err(e) => {
                warn!("sweep point {param}={value} seed={seed} failed: {e}");
                row.status = e.to_string();
            }
        }
        row
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(popsynth::Error::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Core(popsynth::Error::Io(e.into_error())))?;
    write_atomic(&layout.sweep(), &bytes)?;
    Ok(rows)
}

#[derive(Serialize)]
struct RecallRow<'a> {
    cell: &'a str,
    size: usize,
    recall: f64,
}

/// Coverage-vs-rate table for the population and recall-vs-size tables for
/// every trained grid cell.
pub fn cmd_curves(config: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(config);
    let (schema, pop) = load_population(config)?;
    let points = coverage_curve(&pop, &schema, &config.coverage_rates, config.sample_seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &points {
        w.serialize(p).map_err(popsynth::Error::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Core(popsynth::Error::Io(e.into_error())))?;
    write_atomic(&layout.coverage(), &bytes)?;

    if config.recall_sizes.is_empty() {
        return Ok(());
    }
    let sample = load_sample(config, &schema)?;
    let pop_idx = build_index(&pop, &schema)?;
    let max = *config.recall_sizes.iter().max().expect("nonempty");
    let mut w = csv::Writer::from_writer(Vec::new());
    for cell in &config.grid {
        let id = cell.id(config.train.seed);
        let trained = match load_trained(config, cell) {
            Ok(t) => t,
            Err(e) => {
                warn!("skipping {id}: {e}");
                continue;
            }
        };
        let generated = generate_from(&trained, &sample, max, config.generation_seed)?;
        for (size, recall) in recall_curve(&generated, &pop_idx, &config.recall_sizes)? {
            w.serialize(RecallRow {
                cell: &id,
                size,
                recall,
            })
            .map_err(popsynth::Error::from)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Core(popsynth::Error::Io(e.into_error())))?;
    write_atomic(&layout.recall_vs_size(), &bytes)?;
    Ok(())
}
