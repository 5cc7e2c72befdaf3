use std::path::Path;
use std::process::Command;

use popsynth::data::build_index;
use popsynth::evaluate::{evaluate_records, ReportLabels};
use popsynth_cli::commands::{self, load_population, load_sample, Layout};
use popsynth_cli::{Cell, CellKind, ExperimentConfig};

fn config(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.output_dir = dir.to_path_buf();
    c.population_size = Some(4_000);
    c.train.epochs = 2;
    c.train.hidden = vec![16];
    c.embedder.epochs = 2;
    c.generation_size = Some(2_000);
    c.recall_sizes = vec![500, 2_000];
    c.grid = vec![
        Cell::new(CellKind::Reweight),
        Cell::new(CellKind::Bn),
        Cell::new(CellKind::Wgan),
        Cell {
            space: popsynth::geometry::Space::Embedded,
            gamma_bd: 0.3,
            ..Cell::new(CellKind::Vae)
        },
    ];
    c.sweep.values = vec![0.0, 0.5];
    c
}

fn run_all(c: &ExperimentConfig) {
    commands::cmd_synth_data(c).unwrap();
    commands::cmd_split(c).unwrap();
    commands::cmd_train(c, None).unwrap();
    commands::cmd_evaluate(c).unwrap();
    commands::cmd_curves(c).unwrap();
    commands::cmd_sweep(c).unwrap();
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(&config(a.path()));
    run_all(&config(b.path()));
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 20);
    assert_eq!(
        fa.iter().map(|f| &f.0).collect::<Vec<_>>(),
        fb.iter().map(|f| &f.0).collect::<Vec<_>>()
    );
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{name} differs between runs");
    }
    assert!(fa.iter().all(|(n, _)| !n.ends_with(".tmp")));
}

#[test]
fn data_commands_keep_their_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    commands::cmd_synth_data(&c).unwrap();
    let layout = Layout::new(&c);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(layout.manifest()).unwrap()).unwrap();
    let lines = std::fs::read_to_string(layout.population())
        .unwrap()
        .lines()
        .count();
    assert_eq!(manifest["rows"], 4_000);
    assert_eq!(manifest["rows"].as_u64().unwrap() as usize, lines - 1);
    assert_eq!(manifest["seed"], c.data_seed);

    let summary = commands::cmd_split(&c).unwrap();
    assert_eq!(summary.rows, 200);
    let (schema, pop) = load_population(&c).unwrap();
    let sample = load_sample(&c, &schema).unwrap();
    let pop_idx = build_index(&pop, &schema).unwrap();
    assert!(sample.iter().all(|r| pop_idx.contains(r)));
    let oracle = popsynth::data::coverage_curve(&pop, &schema, &[0.05], c.sample_seed).unwrap()[0];
    assert_eq!(summary.instance_coverage, oracle.instance_coverage);
    assert_eq!(summary.combination_coverage, oracle.combination_coverage);
}

#[test]
fn evaluation_matches_standalone_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.grid = vec![Cell::new(CellKind::Reweight), Cell::new(CellKind::Bn)];
    commands::cmd_synth_data(&c).unwrap();
    commands::cmd_split(&c).unwrap();
    commands::cmd_train(&c, None).unwrap();
    let reports = commands::cmd_evaluate(&c).unwrap();
    assert_eq!(reports[0].precision, 1.0);

    let (schema, pop) = load_population(&c).unwrap();
    let sample = load_sample(&c, &schema).unwrap();
    let (s_idx, p_idx) = (
        build_index(&sample, &schema).unwrap(),
        build_index(&pop, &schema).unwrap(),
    );
    let generated =
        popsynth::baselines::reweight_generate(&sample, 2_000, c.generation_seed).unwrap();
    let direct =
        evaluate_records(&generated, &schema, &s_idx, &p_idx, ReportLabels::default()).unwrap();
    assert_eq!(direct.recall, reports[0].recall);
    assert_eq!(direct.marginal_srmse, reports[0].marginal_srmse);

    let replay = evaluate_records(&pop, &schema, &s_idx, &p_idx, ReportLabels::default()).unwrap();
    assert_eq!((replay.precision, replay.recall), (1.0, 1.0));
    assert_eq!(replay.marginal_srmse, 0.0);
    assert_eq!(replay.bivariate_srmse, 0.0);

    let table = std::fs::read_to_string(Layout::new(&c).table()).unwrap();
    assert_eq!(
        table.lines().next().unwrap(),
        "model,space,regularization,marg_srmse,bivar_srmse,n_combinations,recall,precision,f1"
    );
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn single_point_sweep_equals_train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.sweep.values = vec![0.2];
    c.grid = vec![Cell {
        gamma_bd: 0.2,
        ..Cell::new(CellKind::Wgan)
    }];
    commands::cmd_synth_data(&c).unwrap();
    commands::cmd_split(&c).unwrap();
    let rows = commands::cmd_sweep(&c).unwrap();
    commands::cmd_train(&c, None).unwrap();
    let report = &commands::cmd_evaluate(&c).unwrap()[0];
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].precision, Some(report.precision));
    assert_eq!(rows[0].recall, Some(report.recall));
}

#[test]
fn embedded_cells_write_and_reference_the_embedder() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.grid = vec![Cell {
        space: popsynth::geometry::Space::Embedded,
        ..Cell::new(CellKind::Wgan)
    }];
    commands::cmd_synth_data(&c).unwrap();
    commands::cmd_split(&c).unwrap();
    let paths = commands::cmd_train(&c, None).unwrap();
    assert!(Layout::new(&c).embedder().exists());
    let art = popsynth::models::ModelArtifact::load(&paths[0]).unwrap();
    assert_eq!(art.embedder.as_deref(), Some("embedder.json"));
    assert_eq!(art.history.len(), c.train.epochs);
}

#[test]
fn failures_exit_nonzero_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_popsynth"))
        .args(["train", "--set"])
        .arg(format!("output_dir={}", dir.path().display()))
        .env_remove(popsynth_cli::ENV_OUTPUT_DIR)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "missing_input");

    let out = Command::new(env!("CARGO_BIN_EXE_popsynth"))
        .args(["split", "--set", "sample_rate=2"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn environment_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_popsynth"))
        .args(["synth-data", "--set", "population_size=500"])
        .env(popsynth_cli::ENV_OUTPUT_DIR, dir.path())
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("population.csv").exists());
}
