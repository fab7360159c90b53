//! Classification recall@K, mean recall@K and frequency-grouped breakdowns.
//!
//! Recall@K here is the classification analogue of retrieval recall: a sample
//! counts as recalled when its true class is among the K highest logits.
//! Ties in ranking go to the lower class index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{argmax, LabelSpace};

/// Zero-based rank of class `t` in `z`; equal logits rank lower indices first.
pub fn rank_of(z: &[f64], t: usize) -> usize {
    let zt = z[t];
    z.iter()
        .enumerate()
        .filter(|&(j, &v)| v > zt || (v == zt && j < t))
        .count()
}

fn check_inputs<R: AsRef<[f64]>>(logits: &[R], targets: &[usize], k: usize) -> Result<usize> {
    if logits.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let n = logits.first().map_or(0, |z| z.as_ref().len());
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    for (z, &t) in logits.iter().zip(targets) {
        if z.as_ref().len() != n {
            return Err(Error::ShapeMismatch("ragged score rows".into()));
        }
        if t >= n {
            return Err(Error::IndexOutOfRange { index: t, len: n });
        }
    }
    Ok(n)
}

/// Fraction of samples whose true class is in the top `k`.
pub fn recall_at_k<R: AsRef<[f64]>>(logits: &[R], targets: &[usize], k: usize) -> Result<f64> {
    check_inputs(logits, targets, k)?;
    let hits = logits
        .iter()
        .zip(targets)
        .filter(|(z, &t)| rank_of(z.as_ref(), t) < k)
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Recall@k of each class, `None` for classes without samples.
pub fn per_class_recall_at_k<R: AsRef<[f64]>>(
    logits: &[R],
    targets: &[usize],
    k: usize,
    labels: &LabelSpace,
) -> Result<Vec<Option<f64>>> {
    let n = check_inputs(logits, targets, k)?;
    if n != labels.num_classes() {
        return Err(Error::LengthMismatch {
            expected: labels.num_classes(),
            actual: n,
        });
    }
    let mut hits = vec![0u64; n];
    let mut totals = vec![0u64; n];
    for (z, &t) in logits.iter().zip(targets) {
        totals[t] += 1;
        if rank_of(z.as_ref(), t) < k {
            hits[t] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
        .collect())
}

/// Per-class recall@k averaged with equal class weight. Every class must
/// appear in `targets`.
pub fn mean_recall_at_k<R: AsRef<[f64]>>(
    logits: &[R],
    targets: &[usize],
    k: usize,
    labels: &LabelSpace,
) -> Result<(f64, Vec<f64>)> {
    let per_class = per_class_recall_at_k(logits, targets, k, labels)?
        .into_iter()
        .enumerate()
        .map(|(class, r)| r.ok_or(Error::EmptyClassInEval(class)))
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((mean, per_class))
}

/// `confusion[i][j]` counts samples of class `i` predicted as `j`.
pub fn confusion_matrix<R: AsRef<[f64]>>(
    logits: &[R],
    targets: &[usize],
    labels: &LabelSpace,
) -> Result<Vec<Vec<u64>>> {
    let n = labels.num_classes();
    if logits.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut m = vec![vec![0u64; n]; n];
    for (z, &t) in logits.iter().zip(targets) {
        let z = z.as_ref();
        if z.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: z.len(),
            });
        }
        labels.check_index(t)?;
        m[t][argmax(z)] += 1;
    }
    Ok(m)
}

/// Mean recall of a block of classes ranked by training frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGroup {
    /// 1-based frequency ranks covered, e.g. `"1-10"`.
    pub ranks: String,
    pub classes: Vec<usize>,
    pub mean_recall: f64,
}

/// Sorts classes by descending training size (ties by index), cuts them into
/// consecutive blocks of `group_size` and averages recall per block.
pub fn frequency_group_report(
    per_class_recall: &[f64],
    class_sizes: &[u64],
    group_size: usize,
) -> Result<Vec<FrequencyGroup>> {
    if group_size == 0 {
        return Err(Error::InvalidConfig("group_size must be >= 1".into()));
    }
    if per_class_recall.len() != class_sizes.len() {
        return Err(Error::LengthMismatch {
            expected: class_sizes.len(),
            actual: per_class_recall.len(),
        });
    }
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| class_sizes[b].cmp(&class_sizes[a]).then(a.cmp(&b)));
    Ok(order
        .chunks(group_size)
        .enumerate()
        .map(|(g, chunk)| {
            let first = g * group_size + 1;
            let mean = chunk.iter().map(|&c| per_class_recall[c]).sum::<f64>() / chunk.len() as f64;
            FrequencyGroup {
                ranks: format!("{first}-{}", first + chunk.len() - 1),
                classes: chunk.to_vec(),
                mean_recall: mean,
            }
        })
        .collect())
}

/// Everything `eval` reports about one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mean_recall_at_k: BTreeMap<usize, f64>,
    pub per_class_recall_at_k: BTreeMap<usize, Vec<f64>>,
    pub confusion: Vec<Vec<u64>>,
    /// Groups are formed from recall@1.
    pub frequency_group_means: Vec<FrequencyGroup>,
}

pub fn evaluate<R: AsRef<[f64]>>(
    logits: &[R],
    targets: &[usize],
    labels: &LabelSpace,
    ks: &[usize],
    class_sizes: &[u64],
    group_size: usize,
) -> Result<EvalReport> {
    let mut recall = BTreeMap::new();
    let mut mean = BTreeMap::new();
    let mut per_class = BTreeMap::new();
    for &k in ks {
        recall.insert(k, recall_at_k(logits, targets, k)?);
        let (m, pc) = mean_recall_at_k(logits, targets, k, labels)?;
        mean.insert(k, m);
        per_class.insert(k, pc);
    }
    let top1 = match per_class.get(&1) {
        Some(v) => v.clone(),
        None => mean_recall_at_k(logits, targets, 1, labels)?.1,
    };
    Ok(EvalReport {
        num_samples: targets.len(),
        recall_at_k: recall,
        mean_recall_at_k: mean,
        per_class_recall_at_k: per_class,
        confusion: confusion_matrix(logits, targets, labels)?,
        frequency_group_means: frequency_group_report(&top1, class_sizes, group_size)?,
    })
}
