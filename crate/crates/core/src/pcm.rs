//! Correlation matrix estimation from validation predictions and its
//! exponential moving-average refresh.
//!
//! Row `i` of the matrix is the mean, over every validation sample whose
//! ground truth is `i`, of that sample's score vector normalized to sum 1.
//! Normalization is a plain ratio; softmax rescaling of the scores is not
//! offered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CorrelationMatrix, LabelSpace, LogitRecord};

/// What to do with negative entries in raw score vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScorePolicy {
    #[default]
    Reject,
    /// Subtract the record's minimum entry before normalizing.
    ShiftToZero,
}

/// What to do with classes that have no validation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingClassPolicy {
    #[default]
    Error,
    /// Fill the row with `1/n`.
    UniformRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PcmEstimationConfig {
    pub negative_score_policy: NegativeScorePolicy,
    pub min_samples_per_class: usize,
    pub missing_class_policy: MissingClassPolicy,
}

impl PcmEstimationConfig {
    /// Builds a record from raw scores, applying the negative-score policy.
    pub fn record(
        &self,
        labels: &LabelSpace,
        sample_id: u64,
        true_class: usize,
        mut scores: Vec<f64>,
    ) -> Result<LogitRecord> {
        if self.negative_score_policy == NegativeScorePolicy::ShiftToZero
            && scores.iter().any(|&s| s < 0.0)
        {
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            scores.iter_mut().for_each(|s| *s -= min);
        }
        LogitRecord::new(labels, sample_id, true_class, scores)
    }
}

/// Estimates the correlation matrix as the per-class mean of ratio-normalized
/// score vectors. Records are accumulated in input order.
pub fn estimate_pcm(
    records: &[LogitRecord],
    labels: &LabelSpace,
    cfg: &PcmEstimationConfig,
) -> Result<CorrelationMatrix> {
    let n = labels.num_classes();
    let mut sums = vec![0.0; n * n];
    let mut counts = vec![0usize; n];
    for record in records {
        if record.scores().len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: record.scores().len(),
            });
        }
        let t = record.true_class();
        labels.check_index(t)?;
        let total: f64 = record.scores().iter().sum();
        let row = &mut sums[t * n..(t + 1) * n];
        for (acc, &s) in row.iter_mut().zip(record.scores()) {
            *acc += s / total;
        }
        counts[t] += 1;
    }

    for (class, &count) in counts.iter().enumerate() {
        let row = &mut sums[class * n..(class + 1) * n];
        if count == 0 {
            match cfg.missing_class_policy {
                MissingClassPolicy::Error => return Err(Error::EmptyClass(class)),
                MissingClassPolicy::UniformRow => row.fill(1.0 / n as f64),
            }
            continue;
        }
        if count < cfg.min_samples_per_class {
            return Err(Error::InsufficientSamples {
                class,
                count,
                required: cfg.min_samples_per_class,
            });
        }
        let count = count as f64;
        row.iter_mut().for_each(|v| *v /= count);
    }
    CorrelationMatrix::from_flat(n, sums)
}

/// Blends a freshly estimated matrix into the previous one:
/// `mu * prev + (1 - mu) * fresh`.
pub fn ema_update(
    prev: &CorrelationMatrix,
    fresh: &CorrelationMatrix,
    mu: f64,
) -> Result<CorrelationMatrix> {
    if prev.size() != fresh.size() {
        return Err(Error::DimensionMismatch(format!(
            "previous matrix is {0}x{0}, fresh matrix is {1}x{1}",
            prev.size(),
            fresh.size()
        )));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::MuOutOfRange(mu));
    }
    let n = prev.size();
    let entries: Vec<f64> = prev
        .entries()
        .iter()
        .zip(fresh.entries())
        .map(|(&p, &f)| mu * p + (1.0 - mu) * f)
        .collect();
    let mut history = prev.mu_history().to_vec();
    history.push(mu);
    let version = prev.version() + 1;
    if entries.iter().all(|&e| e == 0.0) {
        return Ok(CorrelationMatrix::with_history(
            n, entries, version, history,
        ));
    }
    CorrelationMatrix::from_parts(n, entries, version, history)
}

/// Every class equally correlated with every class.
pub fn uniform_pcm(labels: &LabelSpace) -> CorrelationMatrix {
    let n = labels.num_classes();
    CorrelationMatrix::with_history(n, vec![1.0 / n as f64; n * n], 0, Vec::new())
}

/// Shannon entropy (nats) of each row.
pub fn row_entropy_report(pcm: &CorrelationMatrix) -> Vec<f64> {
    pcm.rows()
        .map(|row| {
            -row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::types::ROW_SUM_TOL;
    use proptest::prelude::*;

    fn labels(n: usize) -> LabelSpace {
        LabelSpace::new(n).unwrap()
    }

    fn rec(l: &LabelSpace, id: u64, t: usize, scores: &[f64]) -> LogitRecord {
        LogitRecord::new(l, id, t, scores.to_vec()).unwrap()
    }

    /// Straight transcription of the per-class ratio mean, kept independent of
    /// the accumulator layout used by `estimate_pcm`.
    fn brute_force(records: &[LogitRecord], n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mine: Vec<&LogitRecord> =
                    records.iter().filter(|r| r.true_class() == i).collect();
                (0..n)
                    .map(|j| {
                        let mut acc = 0.0;
                        for r in &mine {
                            let denom: f64 = r.scores().iter().sum();
                            acc += r.scores()[j] / denom;
                        }
                        acc / mine.len() as f64
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn averages_normalized_records() {
        let l = labels(3);
        let records = vec![
            rec(&l, 0, 0, &[2.0, 1.0, 1.0]),
            rec(&l, 1, 0, &[1.0, 1.0, 2.0]),
            rec(&l, 2, 1, &[1.0, 1.0, 1.0]),
            rec(&l, 3, 2, &[0.1, 0.2, 0.7]),
        ];
        let pcm = estimate_pcm(&records, &l, &PcmEstimationConfig::default()).unwrap();
        assert_eq!(pcm.row(0), &[0.375, 0.25, 0.375]);
        for &v in pcm.row(1) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let row2 = pcm.row(2);
        for (a, b) in row2.iter().zip([0.1, 0.2, 0.7]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(pcm.version(), 0);
    }

    #[test]
    fn missing_and_sparse_classes() {
        let l = labels(3);
        let records = vec![
            rec(&l, 0, 0, &[1.0, 0.0, 0.0]),
            rec(&l, 1, 0, &[0.0, 1.0, 0.0]),
        ];
        let cfg = PcmEstimationConfig::default();
        assert_eq!(estimate_pcm(&records, &l, &cfg), Err(Error::EmptyClass(1)));

        let mut records = records;
        records.push(rec(&l, 2, 1, &[0.3, 0.3, 0.4]));
        let uniform = PcmEstimationConfig {
            missing_class_policy: MissingClassPolicy::UniformRow,
            ..Default::default()
        };
        let pcm = estimate_pcm(&records, &l, &uniform).unwrap();
        assert_eq!(pcm.row(2), &[1.0 / 3.0; 3]);

        let strict = PcmEstimationConfig {
            min_samples_per_class: 2,
            missing_class_policy: MissingClassPolicy::UniformRow,
            ..Default::default()
        };
        assert!(matches!(
            estimate_pcm(&records, &l, &strict),
            Err(Error::InsufficientSamples {
                class: 1,
                count: 1,
                required: 2
            })
        ));
    }

    #[test]
    fn negative_policy() {
        let l = labels(3);
        let reject = PcmEstimationConfig::default();
        assert!(matches!(
            reject.record(&l, 0, 0, vec![1.0, -1.0, 0.0]),
            Err(Error::NegativeScore { .. })
        ));
        let shift = PcmEstimationConfig {
            negative_score_policy: NegativeScorePolicy::ShiftToZero,
            ..Default::default()
        };
        let r = shift.record(&l, 0, 0, vec![1.0, -1.0, 0.0]).unwrap();
        assert_eq!(r.scores(), &[2.0, 0.0, 1.0]);
        assert_eq!(
            shift.record(&l, 0, 0, vec![-1.0, -1.0, -1.0]),
            Err(Error::AllZeroScores)
        );
    }

    #[test]
    fn ema_examples() {
        let prev = CorrelationMatrix::new(vec![vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
        let fresh = CorrelationMatrix::new(vec![vec![0.2, 0.8], vec![0.1, 0.9]]).unwrap();
        let mid = ema_update(&prev, &fresh, 0.5).unwrap();
        assert!((mid.get(0, 0) - 0.3).abs() < 1e-15);
        assert!((mid.get(0, 1) - 0.7).abs() < 1e-15);
        assert_eq!(mid.version(), 1);
        assert_eq!(mid.mu_history(), &[0.5]);

        assert_eq!(
            ema_update(&prev, &fresh, 0.0).unwrap().entries(),
            fresh.entries()
        );
        assert_eq!(
            ema_update(&prev, &fresh, 1.0).unwrap().entries(),
            prev.entries()
        );
        assert_eq!(
            ema_update(&prev, &fresh, 1.5),
            Err(Error::MuOutOfRange(1.5))
        );
        let big = uniform_pcm(&labels(3));
        assert!(matches!(
            ema_update(&prev, &big, 0.5),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn uniform_and_entropy() {
        let u = uniform_pcm(&labels(2));
        assert_eq!(u.entries(), &[0.5; 4]);
        assert!(uniform_pcm(&labels(4)).entries().iter().all(|&v| v == 0.25));
        assert!(
            CorrelationMatrix::from_flat(4, uniform_pcm(&labels(4)).entries().to_vec()).is_ok()
        );

        let h = row_entropy_report(&uniform_pcm(&labels(3)));
        assert!((h[0] - 3f64.ln()).abs() < 1e-12);

        let eps = 1e-9;
        let m = CorrelationMatrix::new(vec![
            vec![1.0 - 2.0 * eps, eps, eps],
            vec![0.5, 0.5, 0.0],
            vec![0.2, 0.3, 0.5],
        ])
        .unwrap();
        let h = row_entropy_report(&m);
        assert!(h[0] < 1e-7);
        assert!((h[1] - 2f64.ln()).abs() < 1e-12);
        assert!(h.iter().all(|&v| v >= 0.0 && v <= 3f64.ln() + 1e-12));
    }

    fn record_set() -> impl Strategy<Value = (usize, Vec<(usize, Vec<f64>)>)> {
        (2usize..6).prop_flat_map(|n| {
            let rec = (0..n, prop::collection::vec(0.01f64..10.0, n));
            (Just(n), prop::collection::vec(rec, n..40))
        })
    }

    proptest! {
        #[test]
        fn estimate_is_row_stochastic_and_matches_oracle((n, raw) in record_set()) {
            let l = labels(n);
            let records: Vec<LogitRecord> = raw
                .into_iter()
                .enumerate()
                .map(|(k, (t, s))| LogitRecord::new(&l, k as u64, t, s).unwrap())
                .collect();
            let cfg = PcmEstimationConfig {
                missing_class_policy: MissingClassPolicy::UniformRow,
                ..Default::default()
            };
            let pcm = estimate_pcm(&records, &l, &cfg).unwrap();
            for row in pcm.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL);
            }
            let oracle = brute_force(&records, n);
            for i in 0..n {
                if records.iter().any(|r| r.true_class() == i) {
                    prop_assert_eq!(pcm.row(i), oracle[i].as_slice());
                }
            }
        }

        #[test]
        fn estimate_ignores_positive_rescaling(
            (n, raw) in record_set(),
            factors in prop::collection::vec(0.001f64..1000.0, 40),
        ) {
            let l = labels(n);
            let cfg = PcmEstimationConfig {
                missing_class_policy: MissingClassPolicy::UniformRow,
                ..Default::default()
            };
            let plain: Vec<LogitRecord> = raw.iter().enumerate()
                .map(|(k, (t, s))| LogitRecord::new(&l, k as u64, *t, s.clone()).unwrap())
                .collect();
            let scaled: Vec<LogitRecord> = raw.iter().enumerate()
                .map(|(k, (t, s))| {
                    let s = s.iter().map(|v| v * factors[k]).collect();
                    LogitRecord::new(&l, k as u64, *t, s).unwrap()
                })
                .collect();
            let a = estimate_pcm(&plain, &l, &cfg).unwrap();
            let b = estimate_pcm(&scaled, &l, &cfg).unwrap();
            for (x, y) in a.entries().iter().zip(b.entries()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn ema_preserves_row_sums(
            a in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 4),
            b in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 4),
            mu in 0.0f64..=1.0,
        ) {
            let norm = |m: Vec<Vec<f64>>| {
                let rows = m.into_iter().map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                }).collect();
                CorrelationMatrix::new(rows).unwrap()
            };
            let out = ema_update(&norm(a), &norm(b), mu).unwrap();
            for row in out.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL);
            }
        }
    }
}
