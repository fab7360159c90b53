use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pclab::checkpoint::{load_checkpoint, load_pcm, save_checkpoint, Checkpoint};
use pclab::commands;
use pclab::{CliError, ExperimentConfig};
use pclab_core::datagen::class_means;
use pclab_core::model::ClassifierState;
use tempfile::TempDir;

fn small_config(out: &Path, kind: &str, epochs: usize, extra: &str) -> String {
    format!(
        r#"
run_label = "small"
output_dir = "{out}"
eval_ks = [1, 2]

[data]
num_classes = 4
head_count = 120
decay = 0.6
feature_dim = 4
correlation_groups = [[0, 1]]
within_group_angle = 0.5
noise_sigma = 0.3
seed = 3

[train]
epochs = {epochs}
batch_size = 16
learning_rate = 0.05
momentum = 0.9
mu = 0.9
seed = 3

[train.loss]
kind = "{kind}"
cb_normalize = true
{extra}"#,
        out = out.display()
    )
}

struct Run {
    dir: TempDir,
    config: PathBuf,
}

impl Run {
    fn new(kind: &str, epochs: usize, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("config.toml");
        let out = dir.path().join("out");
        std::fs::write(&config, small_config(&out, kind, epochs, extra)).unwrap();
        Self { dir, config }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn pclab(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_pclab"));
        cmd.args(args)
            .arg("--config")
            .arg(&self.config)
            .arg("--quiet");
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.pclab(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn cfg(&self) -> ExperimentConfig {
        ExperimentConfig::load(&self.config).unwrap()
    }
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn gen_data_writes_four_files_deterministically() {
    let run = Run::new("CE", 2, "");
    run.ok(&["gen-data"]);
    let names = ["train.csv", "val.csv", "test.csv", "manifest.json"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| read(run.out().join(n))).collect();
    run.ok(&["gen-data"]);
    let second: Vec<Vec<u8>> = names.iter().map(|n| read(run.out().join(n))).collect();
    assert_eq!(first, second);

    let header = String::from_utf8(first[0].clone()).unwrap();
    assert!(header.starts_with("f0,f1,f2,f3,label\n"));
    assert!(!header.contains('\r'));
    let manifest: serde_json::Value = serde_json::from_slice(&first[3]).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["spec"]["num_classes"], 4);
}

#[test]
fn seed_flag_overrides_config() {
    let run = Run::new("CE", 2, "");
    run.ok(&["gen-data"]);
    let a = read(run.out().join("train.csv"));
    run.ok(&["gen-data", "--seed", "4"]);
    let b = read(run.out().join("train.csv"));
    assert_ne!(a, b);
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(run.out().join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 4);
}

#[test]
fn malformed_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    let text =
        small_config(&dir.path().join("out"), "CE", 2, "").replace("learning_rate = 0.05\n", "");
    std::fs::write(&config, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pclab"))
        .args(["gen-data", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let text =
        small_config(&dir.path().join("out"), "CE", 2, "").replace("decay = 0.6", "decay = 1.5");
    std::fs::write(&config, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pclab"))
        .args(["gen-data", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data"));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let run = Run::new("CE", 2, "");
    let out = run.pclab(&["train"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let run = Run::new("CE", 2, "");
    let out = Command::new(env!("CARGO_BIN_EXE_pclab"))
        .args(["ablate", "--quiet", "--config"])
        .arg(&run.config)
        .env("PCLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ce_training_leaves_pcm_at_version_zero() {
    let run = Run::new("CE", 3, "");
    run.ok(&["gen-data"]);
    run.ok(&["train"]);
    let pcm = load_pcm(&run.out().join("pcm.json")).unwrap();
    assert_eq!(pcm.version(), 0);
    let trace = String::from_utf8(read(run.out().join("trace.csv"))).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,loss,mR@1,pcm_version");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.ends_with(",0")));
}

#[test]
fn refreshed_training_counts_one_update_per_epoch() {
    let run = Run::new("CB_PC", 5, "");
    run.ok(&["gen-data"]);
    run.ok(&["train"]);
    let pcm = load_pcm(&run.out().join("pcm.json")).unwrap();
    assert_eq!(pcm.version(), 5);
    assert_eq!(pcm.mu_history(), &[0.9; 5]);
}

#[test]
fn training_is_reproducible_across_directories() {
    let a = Run::new("PC", 3, "[train.initial_pcm]\nsource = \"uniform\"\n");
    let b = Run::new("PC", 3, "[train.initial_pcm]\nsource = \"uniform\"\n");
    for run in [&a, &b] {
        run.ok(&["gen-data"]);
        run.ok(&["train"]);
    }
    for name in ["trace.csv", "classifier.json", "pcm.json"] {
        assert_eq!(read(a.out().join(name)), read(b.out().join(name)), "{name}");
    }
}

#[test]
fn initial_pcm_can_come_from_a_checkpoint() {
    let first = Run::new("PC", 2, "");
    first.ok(&["gen-data"]);
    first.ok(&["train"]);
    let saved = first.out().join("pcm.json");
    let extra = format!(
        "[train.initial_pcm]\nsource = \"checkpoint\"\npath = \"{}\"\n",
        saved.display()
    );
    let second = Run::new("PC", 2, &extra);
    second.ok(&["gen-data"]);
    second.ok(&["train"]);
    let pcm = load_pcm(&second.out().join("pcm.json")).unwrap();
    // Versions continue from the loaded matrix.
    assert_eq!(pcm.version(), 4);
}

fn write_classifier(path: &Path, state: ClassifierState) {
    save_checkpoint(path, &Checkpoint::Classifier(state)).unwrap();
}

#[test]
fn eval_of_perfect_and_constant_classifiers() {
    let run = Run::new("CE", 2, "");
    let mut text = std::fs::read_to_string(&run.config).unwrap();
    text = text.replace("noise_sigma = 0.3", "noise_sigma = 0.001");
    std::fs::write(&run.config, text).unwrap();
    run.ok(&["gen-data"]);
    let cfg = run.cfg();
    let labels = cfg.data.labels().unwrap();

    let means = class_means(&cfg.data).unwrap();
    let weights: Vec<f64> = means.concat();
    let perfect = ClassifierState::from_parts(&labels, 4, weights, vec![0.0; 4], 0, 0).unwrap();
    let ckpt = run.out().join("perfect.json");
    write_classifier(&ckpt, perfect);
    let out = run.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_slice(&read(run.out().join("eval_report.json"))).unwrap();
    assert_eq!(report["mean_recall_at_k"]["1"], 1.0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("weight_norm_variance "));
    let first_json = read(run.out().join("eval_report.json"));
    run.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(first_json, read(run.out().join("eval_report.json")));

    let constant =
        ClassifierState::from_parts(&labels, 4, vec![0.0; 16], vec![1.0, 0.0, 0.0, 0.0], 0, 0)
            .unwrap();
    let ckpt = run.out().join("constant.json");
    write_classifier(&ckpt, constant);
    let out = run.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_slice(&read(run.out().join("eval_report.json"))).unwrap();
    assert_eq!(report["mean_recall_at_k"]["1"], 0.25);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        "weight_norm_variance 0.0"
    );
    // n = 4 gives groups of one class.
    assert_eq!(report["frequency_group_means"].as_array().unwrap().len(), 4);
}

#[test]
fn ablate_single_cell_and_full_matrix() {
    let run = Run::new("CE", 2, "[ablate]\nseeds = [1]\nlosses = [\"CE\"]\n");
    run.ok(&["ablate"]);
    let table = String::from_utf8(read(run.out().join("ablation.csv"))).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("CE,-,false,1,"));

    let run = Run::new("CE", 2, "[ablate]\nseeds = [1, 2]\n");
    let out = Command::new(env!("CARGO_BIN_EXE_pclab"))
        .args(["ablate", "--quiet", "--config"])
        .arg(&run.config)
        .env("PCLAB_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let serial = read(run.out().join("ablation.csv"));
    let table = String::from_utf8(serial.clone()).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    let cells: Vec<String> = rows
        .iter()
        .map(|r| r.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(
        cells,
        [
            "CE,-",
            "CB,-",
            "PC,static",
            "PC,0.0",
            "PC,0.5",
            "PC,0.9",
            "CB_PC,static",
            "CB_PC,0.0",
            "CB_PC,0.5",
            "CB_PC,0.9"
        ]
    );
    let out = Command::new(env!("CARGO_BIN_EXE_pclab"))
        .args(["ablate", "--quiet", "--config"])
        .arg(&run.config)
        .env("PCLAB_THREADS", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(serial, read(run.out().join("ablation.csv")));
}

#[test]
fn export_boundary_requires_two_dimensions() {
    let run = Run::new("CE", 2, "");
    run.ok(&["gen-data"]);
    run.ok(&["train"]);
    let out = run.pclab(&["export-boundary"]);
    assert_eq!(out.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let labels = pclab_core::LabelSpace::new(2).unwrap();
    let state =
        ClassifierState::from_parts(&labels, 2, vec![1.0, 0.0, -1.0, 0.0], vec![0.0; 2], 0, 0)
            .unwrap();
    let ckpt = dir.path().join("c.json");
    write_classifier(&ckpt, state);
    let mut cfg = run.cfg();
    cfg.boundary = Some(pclab_core::datagen::GridSpec {
        x_min: -1.0,
        x_max: 1.0,
        y_min: -1.0,
        y_max: 1.0,
        resolution: 4,
    });
    let path = commands::cmd_export_boundary(&cfg, &ckpt, dir.path()).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let classes: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(classes.len(), 16);
    for row in classes.chunks(4) {
        assert_eq!(row, ["1", "1", "0", "0"]);
    }
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let labels = pclab_core::LabelSpace::new(3).unwrap();
    let path = dir.path().join("pcm.json");
    save_checkpoint(
        &path,
        &Checkpoint::Pcm(pclab_core::pcm::uniform_pcm(&labels)),
    )
    .unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(CliError::CorruptFile { .. })
    ));

    std::fs::write(
        &path,
        text.replace("\"format_version\": 1", "\"format_version\": 2"),
    )
    .unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(
        err,
        CliError::UnsupportedVersion { version: 2, .. }
    ));
    assert_eq!(err.exit_code(), 3);

    std::fs::write(&path, text.replace("\"0.3333333333333333\"", "\"0.9\"")).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(CliError::CorruptFile { .. })
    ));

    std::fs::write(&path, &text).unwrap();
    assert!(matches!(
        pclab::checkpoint::load_classifier(&path),
        Err(CliError::CorruptFile { .. })
    ));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
