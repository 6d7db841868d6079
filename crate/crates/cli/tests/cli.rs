use std::fs;
use std::path::Path;
use std::process::Command;

use tnc_cli::{commands, RunConfig, StackSpec};

const SIDE: usize = 8;

/// Writes a small IDX pair where class `c` lights a distinct 2×2 patch,
/// with deterministic speckle.
fn write_idx(dir: &Path, prefix: &str, per_class: usize, salt: u32) {
    let n = per_class * 10;
    let mut images = vec![0, 0, 8, 3];
    images.extend((n as u32).to_be_bytes());
    images.extend((SIDE as u32).to_be_bytes());
    images.extend((SIDE as u32).to_be_bytes());
    let mut labels = vec![0, 0, 8, 1];
    labels.extend((n as u32).to_be_bytes());
    let mut state = 0x9e37_79b9u32 ^ salt;
    for i in 0..n {
        let c = i % 10;
        labels.push(c as u8);
        let (r0, c0) = (2 * (c / 4), 2 * (c % 4));
        for r in 0..SIDE {
            for col in 0..SIDE {
                state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                let speckle = (state >> 27) as u8;
                let on = (r0..r0 + 2).contains(&r) && (c0..c0 + 2).contains(&col);
                images.push(if on { 200 + speckle } else { speckle });
            }
        }
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

fn setup(root: &Path) -> RunConfig {
    let data = root.join("data");
    fs::create_dir_all(&data).unwrap();
    write_idx(&data, "train", 6, 1);
    write_idx(&data, "t10k", 3, 2);
    RunConfig {
        target_side: SIDE,
        d_encode: 8,
        d_batch: 8,
        d_final: 8,
        batch_size: 4,
        sweep_d_encode: vec![8],
        sweep_d_batch: vec![8],
        sweep_d_final: vec![2, 8],
        permutation_restarts: 5,
        output_dir: root.join("run"),
        ..RunConfig::with_data_dir(&data)
    }
}

#[test]
fn retraining_reproduces_the_container_byte_for_byte() {
    let root = tempfile::tempdir().unwrap();
    let a = setup(root.path());
    let b = RunConfig {
        output_dir: root.path().join("again"),
        parallel: false,
        ..a.clone()
    };
    let ma = commands::train(&a).unwrap();
    let mb = commands::train(&b).unwrap();
    let ca = fs::read(commands::classifier_path(&a)).unwrap();
    let cb = fs::read(commands::classifier_path(&b)).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(ma.artifacts[0].sha256, mb.artifacts[0].sha256);
    assert_eq!(ma.train, mb.train);
    assert!(root.path().join("run/train.manifest.json").exists());
}

#[test]
fn pipeline_writes_every_artifact() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path());
    let out = cfg.output_dir.clone();
    commands::train(&cfg).unwrap();
    let eval = commands::eval(&cfg, None).unwrap();
    assert_eq!(eval.test.len(), 2);
    for (p, t) in eval.test[0].per_class_correct.iter().zip(&eval.test[0].per_class_total) {
        assert!(p <= t);
    }
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    let sweep = commands::sweep(&cfg).unwrap();
    assert_eq!(sweep.len(), 2);

    let stacked = commands::stack(
        &RunConfig {
            stack: StackSpec::Dense { copies: 2 },
            ..cfg.clone()
        },
        None,
    )
    .unwrap();
    assert!(stacked.test_accuracy >= 0.0 && stacked.test_accuracy <= 100.0);

    let circuit = commands::export(&cfg, None).unwrap();
    assert!(!circuit.unitaries.is_empty());

    let report = commands::report(&out).unwrap();
    assert_eq!(report.confusion.len(), 2);
    for c in &report.confusion {
        assert!(c.permuted.cost <= c.cost + 1e-12);
    }
    for name in [
        "classifier.tnc",
        "eval.json",
        "sweep.csv",
        "stack.tns",
        "stack.json",
        "circuit.json",
        "report.json",
        "confusion_raw.pgm",
        "confusion_dense_permuted.csv",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    // every manifest lists checksums that match the files on disk
    for m in &report.manifests {
        for a in &m.artifacts {
            let now = tnc_cli::manifest::FileDigest::of(&a.path).unwrap();
            assert_eq!(now.sha256, a.sha256, "{}", a.path.display());
        }
    }
}

#[test]
fn hierarchical_layer_zero_is_the_raw_accuracy() {
    let root = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        stack: StackSpec::Hierarchical { copies: 2, layers: 2 },
        ..setup(root.path())
    };
    commands::train(&cfg).unwrap();
    let r = commands::stack(&cfg, None).unwrap();
    assert_eq!(r.test_layers.len(), 3);
    assert_eq!(r.test_layers[0], r.raw_test_accuracy);
    assert_eq!(r.train_layers[0], r.raw_train_accuracy);
}

#[test]
fn classical_stack_has_170_parameters() {
    let root = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        stack: StackSpec::Classical,
        dense_epochs: 50,
        ..setup(root.path())
    };
    commands::train(&cfg).unwrap();
    assert_eq!(commands::stack(&cfg, None).unwrap().parameters, Some(170));
}

fn tnc(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tnc"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn single_error_line(stderr: &str, code: &str) {
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with(&format!("error[{code}]: ")), "{stderr}");
}

#[test]
fn invalid_kind_is_a_config_error() {
    let (ok, err) = tnc(&["train", "--kind", "mera"]);
    assert!(!ok);
    single_error_line(&err, "E_CONFIG");
}

#[test]
fn usage_errors_are_single_lines() {
    let (ok, err) = tnc(&["train", "--d-final", "many"]);
    assert!(!ok);
    single_error_line(&err, "E_USAGE");
    let (ok, err) = tnc(&["--stack", "dense:0", "stack"]);
    assert!(!ok);
    single_error_line(&err, "E_CONFIG");
}

#[test]
fn missing_and_corrupt_classifiers_are_reported() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path());
    let data = root.path().join("data");
    let out = cfg.output_dir.to_str().unwrap();
    let common = ["--data-dir", data.to_str().unwrap(), "--output-dir", out];

    let (ok, err) = tnc(&[&["stack"], &common[..]].concat());
    assert!(!ok);
    single_error_line(&err, "E_DEPENDENCY");

    fs::create_dir_all(&cfg.output_dir).unwrap();
    fs::write(cfg.output_dir.join("classifier.tnc"), b"TNC1 not really").unwrap();
    let (ok, err) = tnc(&[&["eval"], &common[..]].concat());
    assert!(!ok);
    single_error_line(&err, "E_FORMAT");
}

#[test]
fn binary_trains_and_exports() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path());
    let path = root.path().join("config.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let (ok, err) = tnc(&[
        "--config",
        path.to_str().unwrap(),
        "--kind",
        "ttn",
        "--d-final",
        "4",
        "train",
    ]);
    assert!(ok, "{err}");
    let (ok, err) = tnc(&["--config", path.to_str().unwrap(), "--kind", "ttn", "export"]);
    assert!(ok, "{err}");
    assert!(cfg.output_dir.join("classifier.tnt").exists());
    assert!(cfg.output_dir.join("circuit.json").exists());
}
