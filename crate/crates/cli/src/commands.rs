use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tnc_core::classifier::{self, EvalReport, Mode, Model, NetworkKind, SweepOptions, SWEEP_CSV_HEADER};
use tnc_core::dataset::{load_idx, Dataset};
use tnc_core::exec::Execution;
use tnc_core::mps::{self, Batching, BuildPlan};
use tnc_core::persist::{self, StackArtifact};
use tnc_core::stacking::{self, LabelState, PermutedConfusion};
use tnc_core::{circuit, DenseTensor, CLASS_COUNT};

use crate::manifest::{FileDigest, RunManifest, SplitInfo};
use crate::{CliError, CliResult, RunConfig, StackSpec};

fn execution(cfg: &RunConfig) -> Execution {
    if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn prepare(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))
}

/// Default classifier location inside the output directory.
pub fn classifier_path(cfg: &RunConfig) -> PathBuf {
    let ext = match cfg.kind {
        NetworkKind::Mps => "tnc",
        NetworkKind::Ttn => "tnt",
    };
    cfg.output_dir.join(format!("classifier.{ext}"))
}

fn load_split(images: &Path, labels: &Path, limit: Option<usize>, cfg: &RunConfig) -> CliResult<(Dataset, SplitInfo)> {
    let mut raw = load_idx(images, labels)?;
    if let Some(n) = limit {
        raw.truncate(n);
    }
    let data = Dataset::from_raw(&raw, cfg.target_side, cfg.pad, CLASS_COUNT)?;
    let per_class = (0..CLASS_COUNT).map(|c| data.class_items(c).len()).collect();
    let info = SplitInfo {
        images: FileDigest::of(images)?,
        labels: FileDigest::of(labels)?,
        count: data.len(),
        per_class,
        ordering_digest: data.ordering_digest(),
    };
    log::info!("loaded {} images from {}", data.len(), images.display());
    Ok((data, info))
}

fn load_train(cfg: &RunConfig, m: &mut RunManifest) -> CliResult<Dataset> {
    let (data, info) = m.timed("load train", || {
        load_split(&cfg.train_images, &cfg.train_labels, cfg.train_limit, cfg)
    })?;
    m.train = Some(info);
    Ok(data)
}

fn load_test(cfg: &RunConfig, m: &mut RunManifest) -> CliResult<Dataset> {
    let (data, info) = m.timed("load test", || {
        load_split(&cfg.test_images, &cfg.test_labels, cfg.test_limit, cfg)
    })?;
    m.test = Some(info);
    Ok(data)
}

fn load_classifier(path: &Path, m: &mut RunManifest) -> CliResult<Model> {
    if !path.exists() {
        return Err(CliError::dependency(format!(
            "classifier {} not found; run `tnc train` first",
            path.display()
        )));
    }
    m.input(path)?;
    Ok(persist::load_model(path)?)
}

/// Builds the classifier and writes it with a manifest.
pub fn train(cfg: &RunConfig) -> CliResult<RunManifest> {
    prepare(cfg)?;
    let mut m = RunManifest::new("train", cfg);
    let data = load_train(cfg, &mut m)?;
    let exec = execution(cfg);
    let plan = cfg.plan();
    let model = m.timed("build", || {
        Ok(match (cfg.kind, cfg.batching) {
            (NetworkKind::Mps, Batching::Mixed) => Model::Mps(mps::train_classifier_mixed(&data, &plan, exec)?),
            (kind, _) => Model::train(kind, &data, &plan, exec)?,
        })
    })?;
    if cfg.orthogonalise && !model.is_orthogonalised() {
        log::warn!("classifier could not be orthogonalised");
    }
    m.emit(&classifier_path(cfg), &persist::encode_model(&model))?;
    m.write(&cfg.output_dir)?;
    Ok(m)
}

/// Evaluates a stored classifier on both splits in every configured mode.
pub fn eval(cfg: &RunConfig, classifier: Option<&Path>) -> CliResult<EvalReport> {
    prepare(cfg)?;
    let mut m = RunManifest::new("eval", cfg);
    let path = classifier.map_or_else(|| classifier_path(cfg), Path::to_path_buf);
    let model = load_classifier(&path, &mut m)?;
    let train = load_train(cfg, &mut m)?;
    let test = load_test(cfg, &mut m)?;
    let readout = model.readout()?;
    let exec = execution(cfg);
    let (d_encode, d_batch, d_final) = (cfg.d_encode, cfg.d_batch, cfg.d_final);
    let mut report = EvalReport {
        kind: model.kind(),
        d_encode,
        d_batch,
        d_final,
        orthogonalised: model.is_orthogonalised(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for &mode in &cfg.modes {
        if mode == Mode::Traceout && !readout.is_isometric() {
            log::warn!("classifier not orthogonalised, skipping traceout");
            continue;
        }
        report.train.push(m.timed(&format!("eval train {}", mode.as_str()), || {
            Ok(classifier::evaluate(&readout, &train, mode, exec)?)
        })?);
        report.test.push(m.timed(&format!("eval test {}", mode.as_str()), || {
            Ok(classifier::evaluate(&readout, &test, mode, exec)?)
        })?);
    }
    for e in &report.test {
        log::info!("test {}: {:.2}%", e.mode.as_str(), e.accuracy);
    }
    m.emit(
        &cfg.output_dir.join("eval.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    m.emit(&cfg.output_dir.join("eval.csv"), csv(&[report.clone()]).as_bytes())?;
    m.write(&cfg.output_dir)?;
    Ok(report)
}

fn csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in reports {
        for row in r.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

/// Accuracy over the configured bond-order grid, written as CSV.
pub fn sweep(cfg: &RunConfig) -> CliResult<Vec<EvalReport>> {
    prepare(cfg)?;
    let mut m = RunManifest::new("sweep", cfg);
    let train = load_train(cfg, &mut m)?;
    let test = load_test(cfg, &mut m)?;
    let options = SweepOptions {
        kind: cfg.kind,
        batch_size: cfg.batch_size,
        orthogonalise: cfg.orthogonalise,
        modes: cfg.modes.clone(),
        with_train: true,
    };
    let reports = m.timed("sweep", || {
        Ok(classifier::sweep(&train, &test, &cfg.grid(), &options, execution(cfg))?)
    })?;
    m.emit(&cfg.output_dir.join("sweep.csv"), csv(&reports).as_bytes())?;
    m.write(&cfg.output_dir)?;
    Ok(reports)
}

/// Accuracies of one stacking run. `layers` holds per-layer test accuracy
/// for hierarchical stacks, starting from the unstacked value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackReport {
    pub spec: StackSpec,
    pub raw_train_accuracy: f64,
    pub raw_test_accuracy: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub parameters: Option<usize>,
    pub train_layers: Vec<f64>,
    pub test_layers: Vec<f64>,
}

/// Builds the configured stacking refinement on a stored classifier.
pub fn stack(cfg: &RunConfig, classifier: Option<&Path>) -> CliResult<StackReport> {
    prepare(cfg)?;
    let mut m = RunManifest::new("stack", cfg);
    let path = classifier.map_or_else(|| classifier_path(cfg), Path::to_path_buf);
    let model = load_classifier(&path, &mut m)?;
    let train = load_train(cfg, &mut m)?;
    let test = load_test(cfg, &mut m)?;
    let readout = model.readout()?;
    let exec = execution(cfg);
    let (tr, te) = m.timed("project", || {
        Ok((
            stacking::project_dataset(&readout, &train, exec)?,
            stacking::project_dataset(&readout, &test, exec)?,
        ))
    })?;
    let k = CLASS_COUNT;
    let mut report = StackReport {
        spec: cfg.stack,
        raw_train_accuracy: stacking::raw_accuracy(&tr, k),
        raw_test_accuracy: stacking::raw_accuracy(&te, k),
        train_accuracy: 0.0,
        test_accuracy: 0.0,
        parameters: None,
        train_layers: Vec::new(),
        test_layers: Vec::new(),
    };
    let artifact = m.timed("stack", || build_stack(cfg, &tr, &te, &mut report, exec))?;
    log::info!(
        "{}: raw {:.2}% -> stacked {:.2}%",
        cfg.stack,
        report.raw_test_accuracy,
        report.test_accuracy
    );
    if let Some(a) = artifact {
        m.emit(&cfg.output_dir.join("stack.tns"), &persist::encode_stack(&a))?;
    }
    m.emit(
        &cfg.output_dir.join("stack.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    m.write(&cfg.output_dir)?;
    Ok(report)
}

fn build_stack(
    cfg: &RunConfig,
    tr: &[LabelState],
    te: &[LabelState],
    report: &mut StackReport,
    exec: Execution,
) -> CliResult<Option<StackArtifact>> {
    let k = CLASS_COUNT;
    Ok(match cfg.stack {
        StackSpec::None => {
            report.train_accuracy = report.raw_train_accuracy;
            report.test_accuracy = report.raw_test_accuracy;
            None
        }
        StackSpec::Classical => {
            let training = stacking::DenseTraining {
                learning_rate: cfg.dense_learning_rate,
                epochs: cfg.dense_epochs,
                ..Default::default()
            };
            let layer = stacking::train_dense(&stacking::dense_samples(tr), k, &training)?;
            report.train_accuracy = stacking::dense_accuracy(&layer, tr);
            report.test_accuracy = stacking::dense_accuracy(&layer, te);
            report.parameters = Some(layer.parameter_count());
            Some(StackArtifact::Classical(layer))
        }
        StackSpec::Dense { copies } => {
            let v = stacking::init_stack_unitary(tr, copies, k)?;
            report.train_accuracy = v.accuracy(tr, k, exec);
            report.test_accuracy = v.accuracy(te, k, exec);
            Some(StackArtifact::Dense(v))
        }
        StackSpec::Hierarchical { copies, layers } => {
            let h = stacking::hierarchical_stack(tr, copies, layers, k, exec)?;
            report.train_layers = h.layer_accuracies(tr, k, exec)?;
            report.test_layers = h.layer_accuracies(te, k, exec)?;
            report.train_accuracy = *report.train_layers.last().unwrap_or(&report.raw_train_accuracy);
            report.test_accuracy = *report.test_layers.last().unwrap_or(&report.raw_test_accuracy);
            Some(StackArtifact::Hierarchical(h))
        }
        StackSpec::Mpo { copies, bond } => {
            let plan = BuildPlan {
                d_encode: bond,
                d_batch: bond,
                d_final: bond,
                batch_size: cfg.batch_size,
                orthogonalise: true,
            };
            let c = stacking::tn_stack(tr, copies, &plan, k, exec)?;
            let r = c.readout()?;
            report.train_accuracy = stacking::tn_stack_accuracy(&r, tr, copies, exec)?;
            report.test_accuracy = stacking::tn_stack_accuracy(&r, te, copies, exec)?;
            Some(StackArtifact::Mpo { copies, classifier: c })
        }
    })
}

/// Writes the quantum-circuit form of a stored classifier.
pub fn export(cfg: &RunConfig, classifier: Option<&Path>) -> CliResult<circuit::CircuitDescription> {
    prepare(cfg)?;
    let mut m = RunManifest::new("export", cfg);
    let path = classifier.map_or_else(|| classifier_path(cfg), Path::to_path_buf);
    let model = load_classifier(&path, &mut m)?;
    let c = m.timed("export", || {
        Ok(match &model {
            Model::Mps(c) => circuit::export_mpo(c)?,
            Model::Ttn(t) => circuit::export_tto(t)?,
        })
    })?;
    log::info!(
        "{} blocks on {} qubits, largest {} qubits",
        c.unitaries.len(),
        c.qubits,
        c.largest_block()
    );
    m.emit(
        &cfg.output_dir.join("circuit.json"),
        serde_json::to_string(&c)?.as_bytes(),
    )?;
    m.write(&cfg.output_dir)?;
    Ok(c)
}

/// Confusion matrix of one probability source, before and after row
/// permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub source: String,
    pub matrix: DenseTensor,
    pub cost: f64,
    pub diagonal_mass: f64,
    pub permuted: PermutedConfusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifests: Vec<RunManifest>,
    pub confusion: Vec<ConfusionReport>,
}

/// Gathers every manifest in `run_dir` and, when a classifier is present,
/// writes confusion matrices for the raw classifier and any stored stack.
pub fn report(run_dir: &Path) -> CliResult<Report> {
    let mut names: Vec<PathBuf> = fs::read_dir(run_dir)
        .map_err(|e| CliError::io(run_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    names.sort();
    let manifests = names
        .iter()
        .map(|p| RunManifest::read(p))
        .collect::<CliResult<Vec<_>>>()?;
    let base = manifests
        .iter()
        .find(|m| m.command == "train")
        .map(|m| m.config.clone())
        .unwrap_or_else(|| RunConfig {
            output_dir: run_dir.to_path_buf(),
            ..RunConfig::default()
        });
    let cfg = RunConfig {
        output_dir: run_dir.to_path_buf(),
        ..base
    };
    let mut m = RunManifest::new("report", &cfg);
    let mut confusion = Vec::new();
    let path = classifier_path(&cfg);
    if path.exists() {
        let model = load_classifier(&path, &mut m)?;
        let readout = model.readout()?;
        let train = load_train(&cfg, &mut m)?;
        let proxies = stacking::class_proxies(&readout, &train)?;
        confusion.push(confusion_report(&cfg, "raw", &proxies, |s| {
            Ok(s.iter().map(|a| a * a).collect())
        })?);
        let stack_path = run_dir.join("stack.tns");
        if stack_path.exists() {
            m.input(&stack_path)?;
            let artifact = persist::load_stack(&stack_path)?;
            let tag = artifact.tag();
            confusion.push(confusion_report(&cfg, tag, &proxies, |s| {
                stacked_probabilities(&artifact, s)
            })?);
        }
    } else {
        log::warn!("no classifier in {}; skipping confusion matrices", run_dir.display());
    }
    for c in &confusion {
        let stem = format!("confusion_{}", c.source);
        m.emit(&run_dir.join(format!("{stem}.csv")), matrix_csv(&c.matrix).as_bytes())?;
        m.emit(&run_dir.join(format!("{stem}.pgm")), &pgm(&c.matrix))?;
        m.emit(
            &run_dir.join(format!("{stem}_permuted.csv")),
            matrix_csv(&c.permuted.matrix).as_bytes(),
        )?;
        m.emit(&run_dir.join(format!("{stem}_permuted.pgm")), &pgm(&c.permuted.matrix))?;
    }
    let report = Report { manifests, confusion };
    m.emit(
        &run_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    m.write(run_dir)?;
    Ok(report)
}

fn stacked_probabilities(a: &StackArtifact, phi: &[f64]) -> CliResult<Vec<f64>> {
    let p = match a {
        StackArtifact::Dense(v) => v.class_probabilities(phi),
        StackArtifact::Hierarchical(h) => h.class_probabilities(phi)?,
        StackArtifact::Mpo { copies, classifier } => classifier
            .readout()?
            .project(&stacking::tensor_power(phi, *copies))?
            .iter()
            .map(|a| a * a)
            .collect(),
        StackArtifact::Classical(layer) => layer.forward(&phi.iter().map(|a| a * a).collect::<Vec<_>>()),
    };
    let total: f64 = p.iter().sum();
    Ok(if total > 0.0 {
        p.iter().map(|x| x / total).collect()
    } else {
        p
    })
}

fn confusion_report(
    cfg: &RunConfig,
    source: &str,
    proxies: &[Vec<f64>],
    probabilities: impl Fn(&[f64]) -> CliResult<Vec<f64>>,
) -> CliResult<ConfusionReport> {
    let rows = proxies
        .iter()
        .map(|s| probabilities(s))
        .collect::<CliResult<Vec<_>>>()?;
    let matrix = DenseTensor::from_fn(vec![rows.len(), CLASS_COUNT], |ix| rows[ix[0]][ix[1]]);
    let identity: Vec<usize> = (0..CLASS_COUNT).collect();
    let cost = stacking::permutation_cost(&matrix, &identity);
    let diagonal_mass = (0..CLASS_COUNT).map(|i| matrix.get(&[i, i])).sum::<f64>() / CLASS_COUNT as f64;
    let permuted = stacking::permute_confusion(&matrix, cfg.permutation_restarts, cfg.seed)?;
    log::info!(
        "{source}: diagonal mass {diagonal_mass:.3}, cost {cost:.4} -> {:.4}",
        permuted.cost
    );
    Ok(ConfusionReport {
        source: source.to_owned(),
        matrix,
        cost,
        diagonal_mass,
        permuted,
    })
}

fn matrix_csv(c: &DenseTensor) -> String {
    let mut out = String::new();
    for i in 0..c.rows() {
        let row: Vec<String> = (0..c.cols()).map(|j| format!("{:.6}", c.get(&[i, j]))).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Pixels per matrix cell in the greyscale images.
const CELL: usize = 16;

/// Binary greyscale image, white for the largest entry.
fn pgm(c: &DenseTensor) -> Vec<u8> {
    let (rows, cols) = (c.rows(), c.cols());
    let max = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| c.get(&[i, j]))
        .fold(0.0f64, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", cols * CELL, rows * CELL).into_bytes();
    for y in 0..rows * CELL {
        for x in 0..cols * CELL {
            let v = c.get(&[y / CELL, x / CELL]);
            let g = if max > 0.0 { (255.0 * v / max).round() } else { 0.0 };
            out.push(g.clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Parses a mode name as written in configs and on the command line.
pub fn parse_mode(s: &str) -> CliResult<Mode> {
    crate::config::parse_name("mode", s)
}
