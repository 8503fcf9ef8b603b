//! Shallow learners over spectral profiles: logistic regression, linear
//! SVM, feature standardization, and k-means clustering.
//!
//! Both trainers run deterministic full-batch (sub)gradient descent from
//! zero initialization, so identical inputs always give identical models.
//! Training accuracy of the logistic regression is what the cloaking score
//! maps through; k-means (k=2) on the highest-frequency bin reproduces the
//! two-cluster structure of real-data profiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::spectrum::SpectralProfile;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("feature matrix is empty")]
    Empty,
    #[error("ragged feature matrix: row {row} has {got} features, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("labels length {labels} does not match sample count {samples}")]
    LabelMismatch { labels: usize, samples: usize },
    #[error("k = {k} exceeds sample count {samples}")]
    KTooLarge { k: usize, samples: usize },
}

/// Which linear separator a [`LinearModel`] is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Linsvm,
}

/// Weights and bias of a trained linear separator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn decision(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        self.weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    /// Predicted class in {0, 1}.
    pub fn predict(&self, features: &[f64]) -> u8 {
        match self.kind {
            ModelKind::Logreg => u8::from(sigmoid(self.decision(features)) >= 0.5),
            ModelKind::Linsvm => u8::from(self.decision(features) >= 0.0),
        }
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[u8]) -> f64 {
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        correct as f64 / labels.len() as f64
    }
}

/// Per-feature z-scoring parameters fit on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn check_rect(features: &[Vec<f64>]) -> Result<usize, ModelError> {
    let first = features.first().ok_or(ModelError::Empty)?;
    let dim = first.len();
    for (row, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(ModelError::Ragged {
                row,
                got: f.len(),
                expected: dim,
            });
        }
    }
    Ok(dim)
}

/// Fits per-feature mean and population std; stds below 1e-12 become 1 so
/// constant columns map to zero instead of blowing up.
pub fn fit_standardizer(features: &[Vec<f64>]) -> Result<Standardizer, ModelError> {
    let dim = check_rect(features)?;
    let count = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    let mut var = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / count).sqrt();
            if sd < 1e-12 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(Standardizer { mean, std })
}

impl Standardizer {
    pub fn apply(&self, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
        features
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

/// log1p on every profile entry: the preprocessing applied before
/// standardization, since raw radial power spans many orders of magnitude.
pub fn log1p_features(profiles: &[SpectralProfile]) -> Vec<Vec<f64>> {
    profiles
        .iter()
        .map(|p| p.values().iter().map(|&v| v.ln_1p()).collect())
        .collect()
}

fn check_two_classes(labels: &[u8]) -> Result<(), ModelError> {
    let has0 = labels.iter().any(|&y| y == 0);
    let has1 = labels.iter().any(|&y| y == 1);
    if has0 && has1 {
        Ok(())
    } else {
        Err(ModelError::SingleClass)
    }
}

/// Full-batch gradient descent on mean BCE from zero initialization.
/// Returns the model and its final training accuracy (threshold 0.5).
/// The run is fully deterministic; `_seed` is accepted for interface parity
/// with samplers upstream and is not consumed here.
pub fn train_logreg(
    features: &[Vec<f64>],
    labels: &[u8],
    epochs: usize,
    lr: f64,
    _seed: u64,
) -> Result<(LinearModel, f64), ModelError> {
    let dim = check_rect(features)?;
    if labels.len() != features.len() {
        return Err(ModelError::LabelMismatch {
            labels: labels.len(),
            samples: features.len(),
        });
    }
    check_two_classes(labels)?;
    let m = features.len() as f64;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    for _ in 0..epochs {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let z = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
            let err = sigmoid(z) - y as f64;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += err * v;
            }
            gb += err;
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= lr * g / m;
        }
        bias -= lr * gb / m;
    }
    let model = LinearModel {
        kind: ModelKind::Logreg,
        weights,
        bias,
    };
    let acc = model.accuracy(features, labels);
    Ok((model, acc))
}

/// Mean BCE loss of a logistic model (used by the monotonicity tests).
pub fn logreg_loss(model: &LinearModel, features: &[Vec<f64>], labels: &[u8]) -> f64 {
    let eps = 1e-12;
    let mut total = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let p = sigmoid(model.decision(x)).clamp(eps, 1.0 - eps);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    total / features.len() as f64
}

/// Full-batch subgradient descent on L2-regularized hinge loss from zero
/// initialization. Deterministic; `_seed` kept for interface parity.
pub fn train_linsvm(
    features: &[Vec<f64>],
    labels: &[u8],
    epochs: usize,
    lr: f64,
    reg: f64,
    _seed: u64,
) -> Result<(LinearModel, f64), ModelError> {
    let dim = check_rect(features)?;
    if labels.len() != features.len() {
        return Err(ModelError::LabelMismatch {
            labels: labels.len(),
            samples: features.len(),
        });
    }
    check_two_classes(labels)?;
    let m = features.len() as f64;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    for _ in 0..epochs {
        let mut gw: Vec<f64> = weights.iter().map(|w| reg * w).collect();
        let mut gb = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let s = if y == 1 { 1.0 } else { -1.0 };
            let margin = s * (weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias);
            if margin < 1.0 {
                for (g, v) in gw.iter_mut().zip(x) {
                    *g -= s * v / m;
                }
                gb -= s / m;
            }
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        bias -= lr * gb;
    }
    let model = LinearModel {
        kind: ModelKind::Linsvm,
        weights,
        bias,
    };
    let acc = model.accuracy(features, labels);
    Ok((model, acc))
}

/// Outcome of k-means: centroids, per-sample assignments, and the summed
/// squared distance to assigned centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut assignments = Vec::with_capacity(points.len());
    let mut inertia = 0.0;
    for p in points {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, dist2(p, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("k >= 1");
        assignments.push(best);
        inertia += d;
    }
    (assignments, inertia)
}

/// k-means++ seeded Lloyd iteration until the assignment fixpoint or
/// `max_iter`. Emptied clusters are reseeded at the farthest point.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansResult, ModelError> {
    let dim = check_rect(points)?;
    if k > points.len() || k == 0 {
        return Err(ModelError::KTooLarge {
            k,
            samples: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ initialization.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[next].clone());
    }

    let (mut assignments, mut inertia) = assign(points, &centroids);
    for _ in 0..max_iter {
        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (sum, &count)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if count > 0 {
                *c = sum.iter().map(|s| s / count as f64).collect();
            }
        }
        for (ci, &count) in counts.iter().enumerate() {
            if count == 0 {
                // Reseed at the point farthest from its centroid.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (j, q)| {
                        dist2(p, &centroids[assignments[*i]])
                            .total_cmp(&dist2(q, &centroids[assignments[*j]]))
                    })
                    .map(|(i, _)| i)
                    .expect("non-empty points");
                centroids[ci] = points[far].clone();
            }
        }
        let (new_assignments, new_inertia) = assign(points, &centroids);
        let converged = new_assignments == assignments;
        assignments = new_assignments;
        inertia = new_inertia;
        if converged {
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        inertia,
    })
}

/// 1D k-means on the highest-frequency bin only, then per-cluster mean full
/// profiles as the reported centroids. `inertia` and `assignments` come
/// from the 1D clustering.
pub fn cluster_by_top_frequency(
    profiles: &[SpectralProfile],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansResult, ModelError> {
    let last: Vec<Vec<f64>> = profiles.iter().map(|p| vec![p.last_bin()]).collect();
    let one_d = kmeans(&last, k, seed, max_iter)?;
    let len = profiles[0].len();
    let mut sums = vec![vec![0.0; len]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in profiles.iter().zip(&one_d.assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p.values()) {
            *s += v;
        }
    }
    let centroids = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &count)| {
            let c = count.max(1) as f64;
            sum.into_iter().map(|s| s / c).collect()
        })
        .collect();
    Ok(KMeansResult {
        centroids,
        assignments: one_d.assignments,
        inertia: one_d.inertia,
    })
}
