use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pclab_core::datagen::{
    export_decision_boundary, generate, Dataset, GridSpec, LongTailSpec, Split,
};
use pclab_core::loss::LossKind;
use pclab_core::metrics::{evaluate, mean_recall_at_k, recall_at_k, EvalReport};
use pclab_core::model::{
    estimate_pcm_from_model, predict_logits, train, weight_norm_variance, ClassifierState,
    EpochMetrics, TrainOutcome,
};
use pclab_core::pcm::uniform_pcm;
use pclab_core::{CorrelationMatrix, LabelSpace};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{load_classifier, load_pcm, save_checkpoint, Checkpoint};
use crate::config::{ExperimentConfig, InitialPcm};
use crate::error::{CliError, Result};

pub const TRAIN_CSV: &str = "train.csv";
pub const VAL_CSV: &str = "val.csv";
pub const TEST_CSV: &str = "test.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CLASSIFIER_JSON: &str = "classifier.json";
pub const PCM_JSON: &str = "pcm.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const EVAL_JSON: &str = "eval_report.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const BOUNDARY_CSV: &str = "boundary.csv";

fn csv_name(split: Split) -> &'static str {
    match split {
        Split::Train => TRAIN_CSV,
        Split::Val => VAL_CSV,
        Split::Test => TEST_CSV,
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Creates `dir` if needed; a directory that cannot be created is a
/// configuration problem.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::ConfigInvalid(format!(
            "output directory {} is not writable: {e}",
            dir.display()
        ))
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_label: &'a str,
    seed: u64,
    spec: &'a LongTailSpec,
    class_sizes: Vec<u64>,
    files: [&'static str; 3],
    rows: [usize; 3],
}

/// Writes the three splits and a manifest echoing the spec.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    prepare_output_dir(out)?;
    let data = generate(&cfg.data)?;
    let splits = [&data.train, &data.val, &data.test];
    let mut written = Vec::with_capacity(4);
    for set in splits {
        let path = out.join(csv_name(set.split));
        write(&path, &set.to_csv())?;
        written.push(path);
    }
    let manifest = Manifest {
        run_label: &cfg.run_label,
        seed: cfg.data.seed,
        spec: &cfg.data,
        class_sizes: cfg.class_counts(),
        files: [TRAIN_CSV, VAL_CSV, TEST_CSV],
        rows: splits.map(Dataset::len),
    };
    let path = out.join(MANIFEST_JSON);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&path, &text)?;
    written.push(path);
    Ok(written)
}

pub fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    let path = dir.join(csv_name(split));
    read_dataset(&path, split)
}

pub fn read_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Dataset::from_csv(&text, split)?)
}

/// Correlation matrix for the first epoch. Losses that ignore the matrix get
/// the all-zero one.
pub fn initial_pcm(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    labels: &LabelSpace,
) -> Result<CorrelationMatrix> {
    if !cfg.train.loss.kind.uses_pcm() {
        return Ok(CorrelationMatrix::zeros(labels));
    }
    match &cfg.train.initial_pcm {
        InitialPcm::Uniform => Ok(uniform_pcm(labels)),
        InitialPcm::Checkpoint { path } => {
            let pcm = load_pcm(path)?;
            if pcm.size() != labels.num_classes() {
                return Err(pclab_core::Error::DimensionMismatch(format!(
                    "checkpoint pcm is {0}x{0}, label space has {1} classes",
                    pcm.size(),
                    labels.num_classes()
                ))
                .into());
            }
            Ok(pcm)
        }
        InitialPcm::Pretrain => {
            let base = pretrain(
                cfg,
                cfg.train.loss.kind.without_pcm(),
                train_set,
                val_set,
                labels,
            )?;
            pcm_from(cfg, &base, val_set, labels)
        }
    }
}

/// The configured run with `kind` swapped in and the correlation matrix
/// frozen. For losses without a correlation term this is the full run.
pub fn pretrain(
    cfg: &ExperimentConfig,
    kind: LossKind,
    train_set: &Dataset,
    val_set: &Dataset,
    labels: &LabelSpace,
) -> Result<ClassifierState> {
    let zeros = CorrelationMatrix::zeros(labels);
    let mut tc = cfg.train_config(&zeros);
    tc.loss = cfg.loss_config(kind, &zeros);
    tc.pcm_refresh = false;
    Ok(train(train_set, val_set, labels, &tc, &zeros)?.state)
}

fn pcm_from(
    cfg: &ExperimentConfig,
    state: &ClassifierState,
    val_set: &Dataset,
    labels: &LabelSpace,
) -> Result<CorrelationMatrix> {
    Ok(estimate_pcm_from_model(
        state,
        val_set,
        labels,
        &cfg.train.pcm_estimation,
    )?)
}

pub fn run_training(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<TrainOutcome> {
    let labels = cfg.data.labels()?;
    let pcm = initial_pcm(cfg, train_set, val_set, &labels)?;
    let tc = cfg.train_config(&pcm);
    Ok(train(train_set, val_set, &labels, &tc, &pcm)?)
}

pub fn trace_csv(trace: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,mR@1,pcm_version\n");
    for m in trace {
        writeln!(
            out,
            "{},{:?},{:?},{}",
            m.epoch, m.loss, m.mean_recall_at_1, m.pcm_version
        )
        .expect("writing to a String");
    }
    out
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub classifier: PathBuf,
    pub pcm: PathBuf,
    pub trace: PathBuf,
}

/// Trains on the splits in `out` and writes both checkpoints and the trace.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainArtifacts> {
    prepare_output_dir(out)?;
    let train_set = load_split(out, Split::Train)?;
    let val_set = load_split(out, Split::Val)?;
    let outcome = run_training(cfg, &train_set, &val_set)?;
    let classifier = out.join(CLASSIFIER_JSON);
    let pcm = out.join(PCM_JSON);
    let trace = out.join(TRACE_CSV);
    save_checkpoint(&classifier, &Checkpoint::Classifier(outcome.state.clone()))?;
    save_checkpoint(&pcm, &Checkpoint::Pcm(outcome.pcm.clone()))?;
    write(&trace, &trace_csv(&outcome.trace))?;
    Ok(TrainArtifacts {
        outcome,
        classifier,
        pcm,
        trace,
    })
}

/// Frequency groups split the classes into five blocks.
pub fn group_size(num_classes: usize) -> usize {
    (num_classes / 5).max(1)
}

pub fn evaluate_state(
    cfg: &ExperimentConfig,
    state: &ClassifierState,
    data: &Dataset,
) -> Result<EvalReport> {
    let labels = cfg.data.labels()?;
    if state.num_classes() != labels.num_classes() {
        return Err(pclab_core::Error::DimensionMismatch(format!(
            "classifier has {} classes, config {}",
            state.num_classes(),
            labels.num_classes()
        ))
        .into());
    }
    let logits = predict_logits(state, data)?;
    Ok(evaluate(
        &logits,
        &data.labels,
        &labels,
        &cfg.eval_ks,
        &cfg.class_counts(),
        group_size(labels.num_classes()),
    )?)
}

pub struct EvalArtifacts {
    pub report: EvalReport,
    pub weight_norm_variance: f64,
    pub path: PathBuf,
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
) -> Result<EvalArtifacts> {
    prepare_output_dir(out)?;
    let state = load_classifier(checkpoint)?;
    let set = read_dataset(data, Split::Test)?;
    let report = evaluate_state(cfg, &state, &set)?;
    let path = out.join(EVAL_JSON);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write(&path, &text)?;
    Ok(EvalArtifacts {
        report,
        weight_norm_variance: weight_norm_variance(&state),
        path,
    })
}

pub fn norm_variance_line(v: f64) -> String {
    format!("weight_norm_variance {v:?}")
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub loss: LossKind,
    /// `None` for a frozen correlation matrix or a loss that has none.
    pub mu: Option<f64>,
}

impl Cell {
    pub fn refresh(&self) -> bool {
        self.mu.is_some()
    }

    fn mu_label(&self) -> String {
        match (self.loss.uses_pcm(), self.mu) {
            (false, _) => "-".into(),
            (true, None) => "static".into(),
            (true, Some(mu)) => format!("{mu:?}"),
        }
    }
}

pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &loss in &cfg.ablate.losses {
        if !loss.uses_pcm() {
            cells.push(Cell { loss, mu: None });
            continue;
        }
        if cfg.ablate.include_static {
            cells.push(Cell { loss, mu: None });
        }
        cells.extend(cfg.ablate.mus.iter().map(|&mu| Cell { loss, mu: Some(mu) }));
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScore {
    pub mean_recall_at_1: f64,
    pub recall_at_1: f64,
    pub weight_norm_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: Cell,
    /// One entry per seed, in configuration order.
    pub runs: Vec<RunScore>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

impl AblationRow {
    fn median_of(&self, f: impl Fn(&RunScore) -> f64) -> f64 {
        median(self.runs.iter().map(f).collect())
    }

    pub fn median_mean_recall(&self) -> f64 {
        self.median_of(|r| r.mean_recall_at_1)
    }

    pub fn median_recall(&self) -> f64 {
        self.median_of(|r| r.recall_at_1)
    }

    pub fn median_norm_variance(&self) -> f64 {
        self.median_of(|r| r.weight_norm_variance)
    }
}

fn score(state: &ClassifierState, test: &Dataset, labels: &LabelSpace) -> Result<RunScore> {
    let logits = predict_logits(state, test)?;
    Ok(RunScore {
        mean_recall_at_1: mean_recall_at_k(&logits, &test.labels, 1, labels)?.0,
        recall_at_1: recall_at_k(&logits, &test.labels, 1)?,
        weight_norm_variance: weight_norm_variance(state),
    })
}

struct SeedContext {
    cfg: ExperimentConfig,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    /// Frozen-matrix baselines keyed by loss kind, filled on demand.
    baselines: Vec<(LossKind, ClassifierState)>,
}

impl SeedContext {
    fn baseline(&self, kind: LossKind) -> &ClassifierState {
        &self
            .baselines
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("baseline trained in the first stage")
            .1
    }
}

/// Runs every cell for every seed. Each seed regenerates the data and seeds
/// the classifier with the same value. Correlation losses start from the
/// configured initial matrix; with `pretrain` that is the matrix of the
/// matching non-correlation run, which doubles as that run's row.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let cells = ablation_cells(cfg);
    let labels = cfg.data.labels()?;
    let pretrained = matches!(cfg.train.initial_pcm, InitialPcm::Pretrain);
    let mut base_kinds: Vec<LossKind> = Vec::new();
    for cell in &cells {
        let kind = cell.loss.without_pcm();
        if (!cell.loss.uses_pcm() || pretrained) && !base_kinds.contains(&kind) {
            base_kinds.push(kind);
        }
    }

    let mut contexts: Vec<SeedContext> = cfg
        .ablate
        .seeds
        .par_iter()
        .map(|&seed| {
            let cfg = cfg.clone().with_seed(seed);
            let data = generate(&cfg.data)?;
            Ok(SeedContext {
                cfg,
                train: data.train,
                val: data.val,
                test: data.test,
                baselines: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, LossKind)> = (0..contexts.len())
        .flat_map(|s| base_kinds.iter().map(move |&k| (s, k)))
        .collect();
    let trained: Vec<ClassifierState> = jobs
        .par_iter()
        .map(|&(s, kind)| {
            let c = &contexts[s];
            pretrain(&c.cfg, kind, &c.train, &c.val, &labels)
        })
        .collect::<Result<_>>()?;
    for ((s, kind), state) in jobs.into_iter().zip(trained) {
        contexts[s].baselines.push((kind, state));
    }

    let cell_jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..contexts.len()).map(move |s| (c, s)))
        .collect();
    let scores: Vec<RunScore> = cell_jobs
        .par_iter()
        .map(|&(c, s)| {
            let cell = cells[c];
            let ctx = &contexts[s];
            if !cell.loss.uses_pcm() {
                return score(ctx.baseline(cell.loss), &ctx.test, &labels);
            }
            let start = match &ctx.cfg.train.initial_pcm {
                InitialPcm::Pretrain => pcm_from(
                    &ctx.cfg,
                    ctx.baseline(cell.loss.without_pcm()),
                    &ctx.val,
                    &labels,
                )?,
                InitialPcm::Uniform => uniform_pcm(&labels),
                InitialPcm::Checkpoint { path } => load_pcm(path)?,
            };
            let mut tc = ctx.cfg.train_config(&start);
            tc.loss = ctx.cfg.loss_config(cell.loss, &start);
            tc.pcm_refresh = cell.refresh();
            tc.mu = cell.mu.unwrap_or(tc.mu);
            let outcome = train(&ctx.train, &ctx.val, &labels, &tc, &start)?;
            score(&outcome.state, &ctx.test, &labels)
        })
        .collect::<Result<_>>()?;

    let per_cell = contexts.len();
    Ok(cells
        .into_iter()
        .zip(scores.chunks(per_cell))
        .map(|(cell, runs)| AblationRow {
            cell,
            runs: runs.to_vec(),
        })
        .collect())
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("loss,mu,pcm_refresh,seeds,median_mR@1,median_R@1,median_norm_variance\n");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?}",
            row.cell.loss,
            row.cell.mu_label(),
            row.cell.refresh(),
            row.runs.len(),
            row.median_mean_recall(),
            row.median_recall(),
            row.median_norm_variance()
        )
        .expect("writing to a String");
    }
    out
}

pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<AblationRow>, PathBuf)> {
    prepare_output_dir(out)?;
    let rows = run_ablation(cfg)?;
    let path = out.join(ABLATION_CSV);
    write(&path, &ablation_csv(&rows))?;
    Ok((rows, path))
}

pub const DEFAULT_GRID: GridSpec = GridSpec {
    x_min: -2.0,
    x_max: 2.0,
    y_min: -2.0,
    y_max: 2.0,
    resolution: 101,
};

/// Grid of predicted classes as `row,col,x,y,class` lines.
pub fn boundary_csv(state: &ClassifierState, grid: &GridSpec) -> Result<String> {
    let classes = export_decision_boundary(state, grid)?;
    let res = grid.resolution;
    let mut out = String::from("row,col,x,y,class\n");
    for (i, class) in classes.iter().enumerate() {
        let (r, c) = (i / res, i % res);
        let x = GridSpec::coordinate(grid.x_min, grid.x_max, c, res);
        let y = GridSpec::coordinate(grid.y_min, grid.y_max, r, res);
        writeln!(out, "{r},{c},{x:?},{y:?},{class}").expect("writing to a String");
    }
    Ok(out)
}

pub fn cmd_export_boundary(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    out: &Path,
) -> Result<PathBuf> {
    prepare_output_dir(out)?;
    let state = load_classifier(checkpoint)?;
    let grid = cfg.boundary.unwrap_or(DEFAULT_GRID);
    let path = out.join(BOUNDARY_CSV);
    write(&path, &boundary_csv(&state, &grid)?)?;
    Ok(path)
}
