//! Linear softmax classifier and the alternating training schedule: each
//! epoch trains the classifier against the current correlation matrix, then
//! re-estimates the matrix from validation predictions and blends it in.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::loss::{loss_and_grad, LossConfig};
use crate::metrics::mean_recall_at_k;
use crate::pcm::{ema_update, estimate_pcm, PcmEstimationConfig};
use crate::types::{CorrelationMatrix, LabelSpace, LogitRecord};

/// Weights (`n x d`, row-major) and bias of a linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierState {
    num_classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    step: u64,
    seed: u64,
}

impl ClassifierState {
    pub fn from_parts(
        labels: &LabelSpace,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        step: u64,
        seed: u64,
    ) -> Result<Self> {
        let n = labels.num_classes();
        if dim == 0 {
            return Err(Error::InvalidDimension(
                "feature dimension must be >= 1".into(),
            ));
        }
        if weights.len() != n * dim || bias.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n}x{dim} weights and {n} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            num_classes: n,
            dim,
            weights,
            bias,
            step,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Weights uniform in `[-1/sqrt(d), 1/sqrt(d)]` from a ChaCha8 stream seeded
/// with `seed`; zero bias.
pub fn init_classifier(dim: usize, labels: &LabelSpace, seed: u64) -> Result<ClassifierState> {
    if dim == 0 {
        return Err(Error::InvalidDimension(
            "feature dimension must be >= 1".into(),
        ));
    }
    let n = labels.num_classes();
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..n * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    ClassifierState::from_parts(labels, dim, weights, vec![0.0; n], 0, seed)
}

/// `W x + b`.
pub fn forward(state: &ClassifierState, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != state.dim {
        return Err(Error::ShapeMismatch(format!(
            "feature vector of length {}, classifier expects {}",
            x.len(),
            state.dim
        )));
    }
    Ok(state
        .weights
        .chunks_exact(state.dim)
        .zip(&state.bias)
        .map(|(w, b)| w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect())
}

pub fn predict_logits(state: &ClassifierState, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.features.iter().map(|x| forward(state, x)).collect()
}

/// Momentum buffers matching a classifier's parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Velocity {
    pub fn zeros(state: &ClassifierState) -> Self {
        Self {
            weights: vec![0.0; state.weights.len()],
            bias: vec![0.0; state.bias.len()],
        }
    }
}

/// One SGD step with classical momentum on the mean batch loss:
/// `v <- momentum * v + grad`, `theta <- theta - lr * v`.
///
/// Returns the mean batch loss evaluated before the update. On a non-finite
/// gradient the state and velocity are left untouched.
pub fn sgd_step<R: AsRef<[f64]>>(
    state: &mut ClassifierState,
    velocity: &mut Velocity,
    features: &[R],
    targets: &[usize],
    loss_cfg: &LossConfig,
    lr: f64,
    momentum: f64,
) -> Result<f64> {
    if features.len() != targets.len() || features.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows and {} targets",
            features.len(),
            targets.len()
        )));
    }
    if velocity.weights.len() != state.weights.len() || velocity.bias.len() != state.bias.len() {
        return Err(Error::ShapeMismatch(
            "velocity does not match classifier".into(),
        ));
    }
    let d = state.dim;
    let m = features.len() as f64;
    let mut grad_w = vec![0.0; state.weights.len()];
    let mut grad_b = vec![0.0; state.bias.len()];
    let mut total = 0.0;
    for (x, &t) in features.iter().zip(targets) {
        let x = x.as_ref();
        let z = forward(state, x)?;
        let (loss, g) = loss_and_grad(&z, t, loss_cfg)?;
        total += loss;
        for (class, &gz) in g.as_slice().iter().enumerate() {
            let gz = gz / m;
            grad_b[class] += gz;
            for (acc, &xj) in grad_w[class * d..(class + 1) * d].iter_mut().zip(x) {
                *acc += gz * xj;
            }
        }
    }
    if grad_w.iter().chain(&grad_b).any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(state.step));
    }

    let new_vw: Vec<f64> = velocity
        .weights
        .iter()
        .zip(&grad_w)
        .map(|(v, g)| momentum * v + g)
        .collect();
    let new_vb: Vec<f64> = velocity
        .bias
        .iter()
        .zip(&grad_b)
        .map(|(v, g)| momentum * v + g)
        .collect();
    let new_w: Vec<f64> = state
        .weights
        .iter()
        .zip(&new_vw)
        .map(|(w, v)| w - lr * v)
        .collect();
    let new_b: Vec<f64> = state
        .bias
        .iter()
        .zip(&new_vb)
        .map(|(b, v)| b - lr * v)
        .collect();
    if new_w.iter().chain(&new_b).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient(state.step));
    }
    velocity.weights = new_vw;
    velocity.bias = new_vb;
    state.weights = new_w;
    state.bias = new_b;
    state.step += 1;
    Ok(total / m)
}

/// Population variance of the per-class weight-row norms.
pub fn weight_norm_variance(state: &ClassifierState) -> f64 {
    let norms: Vec<f64> = state
        .weights
        .chunks_exact(state.dim)
        .map(|row| row.iter().map(|w| w * w).sum::<f64>().sqrt())
        .collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Correlation matrix estimated from the classifier's softmax probabilities
/// on `data`.
pub fn estimate_pcm_from_model(
    state: &ClassifierState,
    data: &Dataset,
    labels: &LabelSpace,
    cfg: &PcmEstimationConfig,
) -> Result<CorrelationMatrix> {
    let records = data
        .features
        .iter()
        .zip(&data.labels)
        .enumerate()
        .map(|(k, (x, &t))| {
            let p = crate::loss::softmax(&forward(state, x)?)?;
            LogitRecord::new(labels, k as u64, t, p.into_inner())
        })
        .collect::<Result<Vec<_>>>()?;
    estimate_pcm(&records, labels, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// The correlation matrix inside is replaced by the live one each epoch.
    pub loss: LossConfig,
    pub mu: f64,
    pub pcm_refresh: bool,
    /// Leading epochs trained without the correlation term.
    pub warmup_epochs: usize,
    pub pcm_estimation: PcmEstimationConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossConfig, seed: u64) -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.0,
            loss,
            mu: 0.9,
            pcm_refresh: true,
            warmup_epochs: 0,
            pcm_estimation: PcmEstimationConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::MuOutOfRange(self.mu));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub loss: f64,
    /// Mean recall@1 on the validation set after the epoch.
    pub mean_recall_at_1: f64,
    pub pcm_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: ClassifierState,
    pub pcm: CorrelationMatrix,
    pub trace: Vec<EpochMetrics>,
}

/// Trains a fresh classifier (seeded from `cfg.seed`), alternating minibatch
/// SGD epochs with correlation-matrix refreshes on `val`.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    labels: &LabelSpace,
    cfg: &TrainConfig,
    initial_pcm: &CorrelationMatrix,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::ShapeMismatch(
            "training and validation sets must be nonempty".into(),
        ));
    }
    if train_set.dim() != val_set.dim() {
        return Err(Error::ShapeMismatch(format!(
            "train features have dimension {}, validation {}",
            train_set.dim(),
            val_set.dim()
        )));
    }
    if initial_pcm.size() != labels.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "initial pcm is {0}x{0}, label space has {1} classes",
            initial_pcm.size(),
            labels.num_classes()
        )));
    }

    let mut state = init_classifier(train_set.dim(), labels, cfg.seed)?;
    let mut velocity = Velocity::zeros(&state);
    let mut pcm = initial_pcm.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut loss_cfg = cfg.loss.clone();
        if epoch < cfg.warmup_epochs {
            loss_cfg.kind = loss_cfg.kind.without_pcm();
        }
        if loss_cfg.kind.uses_pcm() {
            loss_cfg.pcm = Some(pcm.clone());
        }
        loss_cfg.validate(labels.num_classes())?;

        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch
                .iter()
                .map(|&i| train_set.features[i].as_slice())
                .collect();
            let ts: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let batch_loss = sgd_step(
                &mut state,
                &mut velocity,
                &xs,
                &ts,
                &loss_cfg,
                cfg.learning_rate,
                cfg.momentum,
            )?;
            loss_sum += batch_loss * batch.len() as f64;
        }

        let val_logits = predict_logits(&state, val_set)?;
        let (mr1, _) = mean_recall_at_k(&val_logits, &val_set.labels, 1, labels)?;
        if cfg.pcm_refresh {
            let fresh = estimate_pcm_from_model(&state, val_set, labels, &cfg.pcm_estimation)?;
            pcm = ema_update(&pcm, &fresh, cfg.mu)?;
        }
        trace.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            mean_recall_at_1: mr1,
            pcm_version: pcm.version(),
        });
    }
    Ok(TrainOutcome { state, pcm, trace })
}
