//! Validated domain types shared by every other module.
//!
//! All constructors reject invalid input instead of clamping, so any value of
//! these types can be used without re-checking its invariants.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on row sums of stochastic matrices and probability vectors.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// The set of classes a model predicts over.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSpace {
    num_classes: usize,
    names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::TooFewClasses(num_classes));
        }
        Ok(Self {
            num_classes,
            names: None,
        })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut space = Self::new(names.len())?;
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidNames(format!("duplicate name `{name}`")));
            }
        }
        space.names = Some(names);
        Ok(space)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.num_classes {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index,
                len: self.num_classes,
            })
        }
    }
}

/// One prediction on a validation sample: its ground-truth class and the
/// nonnegative score the model assigned to every class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitRecord {
    sample_id: u64,
    true_class: usize,
    scores: Vec<f64>,
}

impl LogitRecord {
    pub fn new(
        labels: &LabelSpace,
        sample_id: u64,
        true_class: usize,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let n = labels.num_classes();
        if scores.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: scores.len(),
            });
        }
        labels.check_index(true_class)?;
        for (index, &value) in scores.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteInput);
            }
            if value < 0.0 {
                return Err(Error::NegativeScore { index, value });
            }
        }
        if scores.iter().all(|&s| s == 0.0) {
            return Err(Error::AllZeroScores);
        }
        Ok(Self {
            sample_id,
            true_class,
            scores,
        })
    }

    pub fn sample_id(&self) -> u64 {
        self.sample_id
    }

    pub fn true_class(&self) -> usize {
        self.true_class
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Square matrix whose row `i` describes how strongly each class is
/// correlated with ground-truth class `i`.
///
/// Rows sum to 1 and entries lie in `[0, 1)`. The single exception is the
/// null matrix from [`CorrelationMatrix::zeros`], under which the correlation
/// loss reduces to plain cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    n: usize,
    entries: Vec<f64>,
    version: u64,
    mu_history: Vec<f64>,
}

impl CorrelationMatrix {
    /// Validates a row-stochastic matrix; the result has version 0.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != n {
                return Err(Error::NotSquare {
                    row,
                    len: values.len(),
                    expected: n,
                });
            }
            entries.extend_from_slice(values);
        }
        Self::from_flat(n, entries)
    }

    /// Row-major constructor with the same validation as [`CorrelationMatrix::new`].
    pub fn from_flat(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::NotSquare {
                row: 0,
                len: entries.len(),
                expected: n * n,
            });
        }
        for row in 0..n {
            let values = &entries[row * n..(row + 1) * n];
            for (col, &value) in values.iter().enumerate() {
                if !(0.0..1.0).contains(&value) {
                    return Err(Error::EntryOutOfRange { row, col, value });
                }
            }
            let sum: f64 = values.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotRowStochastic { row, sum });
            }
        }
        Ok(Self {
            n,
            entries,
            version: 0,
            mu_history: Vec::new(),
        })
    }

    /// Rebuilds a matrix with its update metadata, e.g. from a checkpoint.
    pub fn from_parts(
        n: usize,
        entries: Vec<f64>,
        version: u64,
        mu_history: Vec<f64>,
    ) -> Result<Self> {
        let mut m = if !entries.is_empty() && entries.iter().all(|&e| e == 0.0) {
            if entries.len() != n * n {
                return Err(Error::NotSquare {
                    row: 0,
                    len: entries.len(),
                    expected: n * n,
                });
            }
            Self::null(n)
        } else {
            Self::from_flat(n, entries)?
        };
        if let Some(&mu) = mu_history.iter().find(|mu| !(0.0..=1.0).contains(*mu)) {
            return Err(Error::MuOutOfRange(mu));
        }
        m.version = version;
        m.mu_history = mu_history;
        Ok(m)
    }

    /// The all-zero matrix: no class is correlated with any other.
    pub fn zeros(labels: &LabelSpace) -> Self {
        Self::null(labels.num_classes())
    }

    fn null(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
            version: 0,
            mu_history: Vec::new(),
        }
    }

    pub(crate) fn with_history(
        n: usize,
        entries: Vec<f64>,
        version: u64,
        mu_history: Vec<f64>,
    ) -> Self {
        Self {
            n,
            entries,
            version,
            mu_history,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks_exact(self.n)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn mu_history(&self) -> &[f64] {
        &self.mu_history
    }

    pub fn is_null(&self) -> bool {
        self.entries.iter().all(|&e| e == 0.0)
    }

    /// Largest entry outside the diagonal.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    max = max.max(self.get(i, j));
                }
            }
        }
        max
    }
}

/// A discrete distribution over the label space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::NonFiniteInput);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NotRowStochastic { row: 0, sum });
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Derivative of a loss with respect to the logits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(grads: Vec<f64>) -> Result<Self> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self(grads))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scale(mut self, factor: f64) -> Self {
        self.0.iter_mut().for_each(|g| *g *= factor);
        self
    }
}

/// Position of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
