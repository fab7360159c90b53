//! Softmax losses with analytic gradients.
//!
//! Four variants share one kernel:
//!
//! | kind    | loss for a sample of class `t`                         |
//! |---------|--------------------------------------------------------|
//! | `CE`    | `-ln(e^{z_t} / sum_j e^{z_j})`                          |
//! | `PC`    | `-ln(e^{z_t} / sum_j w_j e^{z_j})`, `w_j = 1 - g*pcm[t][j]` for `j != t`, `w_t = 1` |
//! | `CB`    | `W_t * CE` with `W_k = (1 - beta) / (1 - beta^{n_k})`   |
//! | `CB_PC` | `W_t * PC`                                             |
//!
//! The correlation weights shrink competitor terms in the denominator, so a
//! class that is strongly correlated with the ground truth receives a damped
//! discouraging gradient `w_i * p~_i` instead of `p_i`. All exponentials are
//! taken after subtracting `max(z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CorrelationMatrix, GradientVector, ProbabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "PC")]
    Pc,
    #[serde(rename = "CB")]
    Cb,
    #[serde(rename = "CB_PC")]
    CbPc,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Ce, LossKind::Cb, LossKind::Pc, LossKind::CbPc];

    pub fn uses_pcm(self) -> bool {
        matches!(self, LossKind::Pc | LossKind::CbPc)
    }

    pub fn class_balanced(self) -> bool {
        matches!(self, LossKind::Cb | LossKind::CbPc)
    }

    /// The same loss with the correlation term removed.
    pub fn without_pcm(self) -> Self {
        match self {
            LossKind::Pc => LossKind::Ce,
            LossKind::CbPc => LossKind::Cb,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "CE",
            LossKind::Pc => "PC",
            LossKind::Cb => "CB",
            LossKind::CbPc => "CB_PC",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CE" => Ok(LossKind::Ce),
            "PC" => Ok(LossKind::Pc),
            "CB" => Ok(LossKind::Cb),
            "CB_PC" => Ok(LossKind::CbPc),
            other => Err(Error::InvalidConfig(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Loss selection plus every parameter the selected loss needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub pcm: Option<CorrelationMatrix>,
    pub beta: Option<f64>,
    pub class_counts: Option<Vec<u64>>,
    /// Multiplies correlation entries before they become weights.
    pub pcm_gain: f64,
    /// Rescale class-balanced weights so they sum to the number of classes.
    pub cb_normalize: bool,
}

impl LossConfig {
    pub fn ce() -> Self {
        Self {
            kind: LossKind::Ce,
            pcm: None,
            beta: None,
            class_counts: None,
            pcm_gain: 1.0,
            cb_normalize: false,
        }
    }

    pub fn pc(pcm: CorrelationMatrix) -> Self {
        Self {
            kind: LossKind::Pc,
            pcm: Some(pcm),
            ..Self::ce()
        }
    }

    pub fn cb(class_counts: Vec<u64>, beta: f64) -> Self {
        Self {
            kind: LossKind::Cb,
            beta: Some(beta),
            class_counts: Some(class_counts),
            ..Self::ce()
        }
    }

    pub fn cb_pc(pcm: CorrelationMatrix, class_counts: Vec<u64>, beta: f64) -> Self {
        Self {
            kind: LossKind::CbPc,
            pcm: Some(pcm),
            ..Self::cb(class_counts, beta)
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.pcm_gain = gain;
        self
    }

    pub fn with_cb_normalize(mut self, on: bool) -> Self {
        self.cb_normalize = on;
        self
    }

    /// Checks the config against a label space of `n` classes.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.kind.uses_pcm() {
            let pcm = self.pcm.as_ref().ok_or(Error::ConfigMissingField("pcm"))?;
            if pcm.size() != n {
                return Err(Error::DimensionMismatch(format!(
                    "pcm is {0}x{0}, label space has {n} classes",
                    pcm.size()
                )));
            }
            if !(self.pcm_gain.is_finite() && self.pcm_gain >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "pcm_gain must be finite and >= 0, got {}",
                    self.pcm_gain
                )));
            }
            if self.pcm_gain * pcm.max_off_diagonal() >= 1.0 {
                let class = (0..n)
                    .find(|&t| (0..n).any(|j| j != t && self.pcm_gain * pcm.get(t, j) >= 1.0))
                    .unwrap_or(0);
                return Err(Error::GainTooLarge {
                    gain: self.pcm_gain,
                    class,
                });
            }
        }
        if self.kind.class_balanced() {
            let beta = self.beta.ok_or(Error::ConfigMissingField("beta"))?;
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::BetaOutOfRange(beta));
            }
            let counts = self
                .class_counts
                .as_ref()
                .ok_or(Error::ConfigMissingField("class_counts"))?;
            if counts.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: counts.len(),
                });
            }
            if let Some(k) = counts.iter().position(|&c| c == 0) {
                return Err(Error::ZeroCount(k));
            }
        }
        Ok(())
    }

    /// Per-sample scale factor for ground-truth class `t` (1 unless class balanced).
    pub fn sample_weight(&self, t: usize) -> Result<f64> {
        if !self.kind.class_balanced() {
            return Ok(1.0);
        }
        let beta = self.beta.ok_or(Error::ConfigMissingField("beta"))?;
        let counts = self
            .class_counts
            .as_ref()
            .ok_or(Error::ConfigMissingField("class_counts"))?;
        let w = cb_weight(counts, beta, t)?;
        if !self.cb_normalize {
            return Ok(w);
        }
        let total = (0..counts.len())
            .map(|k| cb_weight(counts, beta, k))
            .sum::<Result<f64>>()?;
        Ok(w * counts.len() as f64 / total)
    }
}

fn check_logits(z: &[f64], t: usize) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if t >= z.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: z.len(),
        });
    }
    Ok(())
}

fn max_of(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn softmax(z: &[f64]) -> Result<ProbabilityVector> {
    if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let m = max_of(z);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbabilityVector::from_normalized(
        exps.into_iter().map(|e| e / sum).collect(),
    ))
}

/// Loss and gradient of `-ln(e^{z_t} / sum_j w_j e^{z_j})`, `w = None` meaning all ones.
fn weighted_softmax_loss(z: &[f64], t: usize, w: Option<&[f64]>) -> (f64, Vec<f64>) {
    let m = max_of(z);
    let mut terms: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let denom: f64 = match w {
        Some(w) => terms.iter().zip(w).map(|(e, w)| w * e).sum(),
        None => terms.iter().sum(),
    };
    let loss = denom.ln() - (z[t] - m);
    for (i, e) in terms.iter_mut().enumerate() {
        let p = *e / denom;
        *e = match (i == t, w) {
            (true, _) => p - 1.0,
            (false, Some(w)) => w[i] * p,
            (false, None) => p,
        };
    }
    (loss, terms)
}

pub fn ce_loss(z: &[f64], t: usize) -> Result<f64> {
    check_logits(z, t)?;
    Ok(weighted_softmax_loss(z, t, None).0)
}

pub fn ce_grad(z: &[f64], t: usize) -> Result<GradientVector> {
    check_logits(z, t)?;
    GradientVector::new(weighted_softmax_loss(z, t, None).1)
}

/// Denominator weights for a sample of class `t`: `1 - gain * pcm[t][j]` off
/// the diagonal and exactly 1 for `t` itself.
pub fn pc_weights(pcm: &CorrelationMatrix, t: usize, gain: f64) -> Result<Vec<f64>> {
    let n = pcm.size();
    if t >= n {
        return Err(Error::IndexOutOfRange { index: t, len: n });
    }
    if !(gain.is_finite() && gain >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gain must be finite and >= 0, got {gain}"
        )));
    }
    pcm.row(t)
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            if j == t {
                return Ok(1.0);
            }
            let w = 1.0 - gain * c;
            if w > 0.0 {
                Ok(w)
            } else {
                Err(Error::GainTooLarge { gain, class: j })
            }
        })
        .collect()
}

fn pc_parts(z: &[f64], t: usize, pcm: &CorrelationMatrix, gain: f64) -> Result<(f64, Vec<f64>)> {
    check_logits(z, t)?;
    if z.len() != pcm.size() {
        return Err(Error::LengthMismatch {
            expected: pcm.size(),
            actual: z.len(),
        });
    }
    let w = pc_weights(pcm, t, gain)?;
    Ok(weighted_softmax_loss(z, t, Some(&w)))
}

pub fn pc_loss(z: &[f64], t: usize, pcm: &CorrelationMatrix, gain: f64) -> Result<f64> {
    pc_parts(z, t, pcm, gain).map(|(loss, _)| loss)
}

pub fn pc_grad(z: &[f64], t: usize, pcm: &CorrelationMatrix, gain: f64) -> Result<GradientVector> {
    pc_parts(z, t, pcm, gain).and_then(|(_, g)| GradientVector::new(g))
}

/// Effective-number class weight `(1 - beta) / (1 - beta^{n_k})`.
///
/// `1 - beta^{n}` is evaluated as `-expm1(n * ln_1p(-(1 - beta)))`, which keeps
/// full relative precision for `beta` close to 1.
pub fn cb_weight(class_counts: &[u64], beta: f64, k: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::BetaOutOfRange(beta));
    }
    let count = *class_counts.get(k).ok_or(Error::IndexOutOfRange {
        index: k,
        len: class_counts.len(),
    })?;
    match count {
        0 => Err(Error::ZeroCount(k)),
        1 => Ok(1.0),
        n => {
            let one_minus_beta = 1.0 - beta;
            let ln_beta = (-one_minus_beta).ln_1p();
            Ok(one_minus_beta / -(n as f64 * ln_beta).exp_m1())
        }
    }
}

/// Value and logit-gradient of the configured loss for one sample.
pub fn loss_and_grad(z: &[f64], t: usize, cfg: &LossConfig) -> Result<(f64, GradientVector)> {
    let (loss, grad) = match cfg.kind {
        LossKind::Ce | LossKind::Cb => {
            check_logits(z, t)?;
            weighted_softmax_loss(z, t, None)
        }
        LossKind::Pc | LossKind::CbPc => {
            let pcm = cfg.pcm.as_ref().ok_or(Error::ConfigMissingField("pcm"))?;
            pc_parts(z, t, pcm, cfg.pcm_gain)?
        }
    };
    let scale = cfg.sample_weight(t)?;
    let grad = GradientVector::new(grad)?;
    if scale == 1.0 {
        Ok((loss, grad))
    } else {
        Ok((scale * loss, grad.scale(scale)))
    }
}

/// Mean loss over a batch and the gradient of that mean with respect to every
/// row of logits. Samples are reduced in index order.
pub fn batch_loss_and_grad<R: AsRef<[f64]>>(
    logits: &[R],
    targets: &[usize],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let width = logits[0].as_ref().len();
    let m = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &t) in logits.iter().zip(targets) {
        let z = z.as_ref();
        if z.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "logit rows of width {width} and {}",
                z.len()
            )));
        }
        let (loss, grad) = loss_and_grad(z, t, cfg)?;
        total += loss;
        grads.push(grad.into_inner().into_iter().map(|g| g / m).collect());
    }
    Ok((total / m, grads))
}
