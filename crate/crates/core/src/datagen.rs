//! Synthetic long-tailed datasets with controllable semantic overlap.
//!
//! Every class has a unit-norm mean direction. Classes listed together in a
//! correlation group sit at a fixed pairwise angle around a shared axis, so a
//! small angle makes them hard to tell apart; everything else is close to
//! orthogonal. Features are `mean + sigma * N(0, I)`.
//!
//! Geometry: each group and each ungrouped class owns one axis. A group of
//! `g` members additionally spreads its means over a `(g - 1)`-dimensional
//! regular simplex in the axes left over after that, so the feature dimension
//! must be at least `clusters + max_group_size - 1`.

use std::fmt::Write as _;
use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, ClassifierState};
use crate::types::{argmax, LabelSpace};

/// Per-class cap on validation and test samples.
pub const EVAL_SAMPLES_PER_CLASS: u64 = 30;

/// Recipe for a synthetic long-tailed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTailSpec {
    pub num_classes: usize,
    /// Train samples of class 0.
    pub head_count: u64,
    /// Class `k` gets `max(1, round(head_count * decay^k))` train samples.
    pub decay: f64,
    pub feature_dim: usize,
    #[serde(default)]
    pub correlation_groups: Vec<Vec<usize>>,
    /// Pairwise angle (radians) between means in the same group.
    pub within_group_angle: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        LabelSpace::new(self.num_classes)?;
        if self.head_count == 0 {
            return Err(Error::InvalidConfig("head_count must be >= 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidDimension("feature_dim must be >= 1".into()));
        }
        if !(self.within_group_angle > 0.0
            && self.within_group_angle <= std::f64::consts::FRAC_PI_2)
        {
            return Err(Error::InvalidConfig(format!(
                "within_group_angle must lie in (0, pi/2], got {}",
                self.within_group_angle
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        let mut seen = vec![false; self.num_classes];
        for group in &self.correlation_groups {
            if group.is_empty() {
                return Err(Error::InvalidConfig("empty correlation group".into()));
            }
            for &k in group {
                if k >= self.num_classes {
                    return Err(Error::IndexOutOfRange {
                        index: k,
                        len: self.num_classes,
                    });
                }
                if seen[k] {
                    return Err(Error::InvalidConfig(format!(
                        "class {k} appears in more than one correlation group"
                    )));
                }
                seen[k] = true;
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<LabelSpace> {
        LabelSpace::new(self.num_classes)
    }

    /// Groups plus one singleton per ungrouped class, groups first.
    fn clusters(&self) -> Vec<Vec<usize>> {
        let mut grouped = vec![false; self.num_classes];
        let mut clusters = self.correlation_groups.clone();
        for g in &self.correlation_groups {
            for &k in g {
                grouped[k] = true;
            }
        }
        clusters.extend(
            (0..self.num_classes)
                .filter(|&k| !grouped[k])
                .map(|k| vec![k]),
        );
        clusters
    }
}

/// Train sample count per class.
pub fn class_sizes(spec: &LongTailSpec) -> Vec<u64> {
    (0..spec.num_classes)
        .map(|k| {
            let raw = spec.head_count as f64 * spec.decay.powi(k as i32);
            (raw.round() as u64).max(1)
        })
        .collect()
}

/// Unit mean direction of every class.
pub fn class_means(spec: &LongTailSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let d = spec.feature_dim;
    let clusters = spec.clusters();
    let max_group = clusters.iter().map(Vec::len).max().unwrap_or(1);
    let required = clusters.len() + max_group - 1;
    if d < required {
        return Err(Error::DimensionTooSmall { dim: d, required });
    }

    let spare = d - clusters.len();
    let block = max_group - 1;
    let blocks = spare.checked_div(block).unwrap_or(1);
    let mut means = vec![Vec::new(); spec.num_classes];
    let mut multi = 0usize;
    for (axis, members) in clusters.iter().enumerate() {
        let g = members.len();
        if g == 1 {
            let mut m = vec![0.0; d];
            m[axis] = 1.0;
            means[members[0]] = m;
            continue;
        }
        // regular simplex: pairwise cosine rho = -1/(g-1) between spread directions
        let rho = -1.0 / (g as f64 - 1.0);
        let sin2 = (1.0 - spec.within_group_angle.cos()) / (1.0 - rho);
        let (sin_a, cos_a) = (sin2.sqrt(), (1.0 - sin2).sqrt());
        let offset = clusters.len() + (multi % blocks) * block;
        // the second group sharing a block gets the mirrored simplex
        let sign = if (multi / blocks).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        multi += 1;
        let norm = (1.0 - 1.0 / g as f64).sqrt();
        for (i, &class) in members.iter().enumerate() {
            let mut m = vec![0.0; d];
            m[axis] = cos_a;
            for k in 1..g {
                // Helmert basis vector k evaluated at vertex i
                let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
                let h = match i.cmp(&k) {
                    std::cmp::Ordering::Less => scale,
                    std::cmp::Ordering::Equal => -(k as f64) * scale,
                    std::cmp::Ordering::Greater => 0.0,
                };
                m[offset + k - 1] = sign * sin_a * h / norm;
            }
            means[class] = m;
        }
    }

    let cluster_of: Vec<usize> = {
        let mut c = vec![0; spec.num_classes];
        for (idx, members) in clusters.iter().enumerate() {
            for &k in members {
                c[k] = idx;
            }
        }
        c
    };
    for a in 0..spec.num_classes {
        for b in a + 1..spec.num_classes {
            if cluster_of[a] != cluster_of[b] && dot(&means[a], &means[b]) > 0.5 {
                return Err(Error::DimensionTooSmall {
                    dim: d,
                    required: d + 1,
                });
            }
        }
    }
    Ok(means)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Feature vectors with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, split: Split) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if let Some(bad) = features.iter().find(|f| f.len() != d) {
                return Err(Error::ShapeMismatch(format!(
                    "feature rows of width {d} and {}",
                    bad.len()
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Sample count of every class in `0..n`.
    pub fn class_histogram(&self, n: usize) -> Vec<u64> {
        let mut h = vec![0u64; n];
        for &y in &self.labels {
            if y < n {
                h[y] += 1;
            }
        }
        h
    }

    /// Header `f0,...,f{d-1},label`, shortest round-trip floats, LF endings.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            let _ = write!(out, "f{j},");
        }
        out.push_str("label\n");
        for (x, y) in self.features.iter().zip(&self.labels) {
            for v in x {
                let _ = write!(out, "{v:?},");
            }
            let _ = writeln!(out, "{y}");
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    pub fn from_csv(text: &str, split: Split) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Csv {
            line: 1,
            reason: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        let d = cols.len().saturating_sub(1);
        let header_ok = cols.last() == Some(&"label")
            && cols[..d]
                .iter()
                .enumerate()
                .all(|(j, c)| *c == format!("f{j}"));
        if !header_ok {
            return Err(Error::Csv {
                line: 1,
                reason: format!("unexpected header `{header}`"),
            });
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::Csv {
                    line: line_no,
                    reason: format!("expected {} fields, got {}", d + 1, fields.len()),
                });
            }
            let x = fields[..d]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Csv {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            let y = fields[d].parse::<usize>().map_err(|e| Error::Csv {
                line: line_no,
                reason: e.to_string(),
            })?;
            features.push(x);
            labels.push(y);
        }
        Dataset::new(features, labels, split)
    }
}

/// The three splits of one generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Draws train (long-tailed), val and test (at most 30 per class) splits.
pub fn generate(spec: &LongTailSpec) -> Result<GeneratedData> {
    let means = class_means(spec)?;
    let sizes = class_sizes(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |split: Split, counts: &[u64]| {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (class, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                let x: Vec<f64> = means[class]
                    .iter()
                    .map(|&m| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        m + spec.noise_sigma * e
                    })
                    .collect();
                features.push(x);
                labels.push(class);
            }
        }
        Dataset::new(features, labels, split)
    };
    let eval_counts: Vec<u64> = sizes
        .iter()
        .map(|&n| n.min(EVAL_SAMPLES_PER_CLASS))
        .collect();
    Ok(GeneratedData {
        train: draw(Split::Train, &sizes)?,
        val: draw(Split::Val, &eval_counts)?,
        test: draw(Split::Test, &eval_counts)?,
    })
}

/// Rectangle sampled by [`export_decision_boundary`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Points per axis, endpoints included.
    pub resolution: usize,
}

impl GridSpec {
    pub fn coordinate(lo: f64, hi: f64, i: usize, resolution: usize) -> f64 {
        if resolution == 1 {
            (lo + hi) / 2.0
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    }
}

/// Predicted class at every grid point, row-major: row `r` is the `r`-th
/// `y` value from `y_min` upward, column `c` the `c`-th `x` value.
pub fn export_decision_boundary(state: &ClassifierState, grid: &GridSpec) -> Result<Vec<usize>> {
    if state.dim() != 2 {
        return Err(Error::NotTwoDimensional(state.dim()));
    }
    if grid.resolution == 0 {
        return Err(Error::InvalidConfig("grid resolution must be >= 1".into()));
    }
    let res = grid.resolution;
    let mut out = Vec::with_capacity(res * res);
    for r in 0..res {
        let y = GridSpec::coordinate(grid.y_min, grid.y_max, r, res);
        for c in 0..res {
            let x = GridSpec::coordinate(grid.x_min, grid.x_max, c, res);
            out.push(argmax(&forward(state, &[x, y])?));
        }
    }
    Ok(out)
}
