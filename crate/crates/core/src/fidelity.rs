//! Evaluation metrics for spectral distribution fidelity.
//!
//! Spectral Difference is the L1 distance between the mean radial profiles
//! of two image sets. The Cloaking Score maps the training accuracy of a
//! logistic regression separating the two profile sets through
//! `1 − 2·|acc − 0.5|`: 1 means spectrally indistinguishable, 0 means
//! linearly separable. A detection harness reports held-out accuracies for
//! logistic-regression and linear-SVM separators, including the transfer
//! setting where a model trained on one pair of corpora is scored on
//! another.
//!
//! All profile features pass through log1p before z-scoring: raw radial
//! power spans many orders of magnitude and would otherwise be dominated by
//! the DC bin. Spectral Difference defaults to the same log1p scale, with a
//! raw mode preserving the literal sum-of-absolute-differences reading.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linmodels::{fit_standardizer, log1p_features, train_linsvm, train_logreg, ModelError};
use crate::spectrum::SpectralProfile;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FidelityError {
    #[error("profile set is empty")]
    EmptySet,
    #[error("profile length mismatch: {real} (real) vs {generated} (generated)")]
    LengthMismatch { real: usize, generated: usize },
    #[error("accuracy {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error("split {0} must lie strictly between 0 and 1")]
    BadSplit(f64),
    #[error("a fold ended up with a single class; adjust split or set sizes")]
    SingleClassFold,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Scale on which Spectral Difference compares mean profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdScale {
    /// log1p of the mean profiles (default; keeps all radii comparable).
    #[default]
    Log1p,
    /// Raw mean profiles, the literal reading.
    Raw,
}

impl SdScale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "log1p" => Some(SdScale::Log1p),
            "raw" => Some(SdScale::Raw),
            _ => None,
        }
    }
}

fn mean_profile(profiles: &[SpectralProfile], scale: SdScale) -> Result<Vec<f64>, FidelityError> {
    let first = profiles.first().ok_or(FidelityError::EmptySet)?;
    let len = first.len();
    let mut mean = vec![0.0; len];
    for p in profiles {
        if p.len() != len {
            return Err(FidelityError::LengthMismatch {
                real: len,
                generated: p.len(),
            });
        }
        for (m, &v) in mean.iter_mut().zip(p.values()) {
            *m += match scale {
                SdScale::Log1p => v.ln_1p(),
                SdScale::Raw => v,
            };
        }
    }
    for m in mean.iter_mut() {
        *m /= profiles.len() as f64;
    }
    Ok(mean)
}

/// Sum of absolute differences between the two sets' mean profiles. On the
/// log1p scale each profile is log-scaled before averaging, so a constant
/// per-bin log shift of every profile moves the result by exactly L·shift.
pub fn spectral_difference(
    real: &[SpectralProfile],
    generated: &[SpectralProfile],
    scale: SdScale,
) -> Result<f64, FidelityError> {
    let mr = mean_profile(real, scale)?;
    let mg = mean_profile(generated, scale)?;
    if mr.len() != mg.len() {
        return Err(FidelityError::LengthMismatch {
            real: mr.len(),
            generated: mg.len(),
        });
    }
    Ok(mr.iter().zip(&mg).map(|(a, b)| (a - b).abs()).sum())
}

/// `1 − 2·|accuracy − 0.5|`, clamped into [0, 1] against floating error.
pub fn cloaking_score(train_accuracy: f64) -> Result<f64, FidelityError> {
    if !(0.0..=1.0).contains(&train_accuracy) || !train_accuracy.is_finite() {
        return Err(FidelityError::AccuracyOutOfRange(train_accuracy));
    }
    Ok((1.0 - 2.0 * (train_accuracy - 0.5).abs()).clamp(0.0, 1.0))
}

/// Defaults of the cloaking-score protocol: 1000 full-batch epochs at
/// lr 0.1 from zero initialization.
pub const CS_EPOCHS: usize = 1000;
pub const CS_LR: f64 = 0.1;

/// Defaults of the linear-SVM detector.
pub const SVM_EPOCHS: usize = 2000;
pub const SVM_LR: f64 = 0.01;
pub const SVM_REG: f64 = 1e-3;

/// Cloaking-score evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsOutcome {
    pub cs: f64,
    pub lr_train_acc: f64,
    pub n_real: usize,
    pub n_generated: usize,
}

/// Balanced, seeded subsample: when one side is larger, it is sampled down
/// to the smaller count so both classes contribute equally.
fn balance<'a>(
    real: &'a [SpectralProfile],
    generated: &'a [SpectralProfile],
    seed: u64,
) -> (Vec<&'a SpectralProfile>, Vec<&'a SpectralProfile>) {
    let take = real.len().min(generated.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |set: &'a [SpectralProfile]| -> Vec<&'a SpectralProfile> {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(take);
        idx.sort_unstable();
        idx.into_iter().map(|i| &set[i]).collect()
    };
    (pick(real), pick(generated))
}

fn preprocess(profiles: &[&SpectralProfile]) -> Vec<Vec<f64>> {
    let owned: Vec<SpectralProfile> = profiles.iter().map(|&p| p.clone()).collect();
    log1p_features(&owned)
}

/// Trains the cloaking-score logistic regression on both full profile sets
/// (balanced to the smaller count) and maps its training accuracy through
/// the score formula.
pub fn evaluate_cs(
    real: &[SpectralProfile],
    generated: &[SpectralProfile],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<CsOutcome, FidelityError> {
    if real.is_empty() || generated.is_empty() {
        return Err(FidelityError::EmptySet);
    }
    if real[0].len() != generated[0].len() {
        return Err(FidelityError::LengthMismatch {
            real: real[0].len(),
            generated: generated[0].len(),
        });
    }
    let (r, g) = balance(real, generated, seed);
    let mut features = preprocess(&r);
    features.extend(preprocess(&g));
    let labels: Vec<u8> = std::iter::repeat(0u8)
        .take(r.len())
        .chain(std::iter::repeat(1u8).take(g.len()))
        .collect();
    let standardizer = fit_standardizer(&features)?;
    let features = standardizer.apply(&features);
    let (_, train_acc) = train_logreg(&features, &labels, epochs, lr, seed)?;
    Ok(CsOutcome {
        cs: cloaking_score(train_acc)?,
        lr_train_acc: train_acc,
        n_real: r.len(),
        n_generated: g.len(),
    })
}

/// Which separator the detection harness trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Lr,
    Svm,
}

impl DetectorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lr" => Some(DetectorKind::Lr),
            "svm" => Some(DetectorKind::Svm),
            _ => None,
        }
    }
}

/// Train/held-out accuracies of one detector run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionAccuracy {
    pub train_acc: f64,
    pub test_acc: f64,
}

struct PreppedSplit {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<u8>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<u8>,
}

/// Stratified shuffled split of a (real, generated) pair into train and
/// test folds, preprocessed and standardized on the train fold.
fn split_pair(
    real: &[SpectralProfile],
    generated: &[SpectralProfile],
    split: f64,
    seed: u64,
) -> Result<PreppedSplit, FidelityError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(FidelityError::BadSplit(split));
    }
    if real.is_empty() || generated.is_empty() {
        return Err(FidelityError::EmptySet);
    }
    let (r, g) = balance(real, generated, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut fold = |set: Vec<&SpectralProfile>| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(&mut rng);
        let cut = ((set.len() as f64) * split).round() as usize;
        let features = preprocess(&set);
        let train = idx[..cut].iter().map(|&i| features[i].clone()).collect();
        let test = idx[cut..].iter().map(|&i| features[i].clone()).collect();
        (train, test)
    };
    let (train_r, test_r) = fold(r);
    let (train_g, test_g) = fold(g);
    if train_r.is_empty() || train_g.is_empty() || test_r.is_empty() || test_g.is_empty() {
        return Err(FidelityError::SingleClassFold);
    }
    let mut train_x = train_r.clone();
    train_x.extend(train_g.clone());
    let train_y: Vec<u8> = std::iter::repeat(0u8)
        .take(train_r.len())
        .chain(std::iter::repeat(1u8).take(train_g.len()))
        .collect();
    let mut test_x = test_r.clone();
    test_x.extend(test_g.clone());
    let test_y: Vec<u8> = std::iter::repeat(0u8)
        .take(test_r.len())
        .chain(std::iter::repeat(1u8).take(test_g.len()))
        .collect();
    let standardizer = fit_standardizer(&train_x)?;
    Ok(PreppedSplit {
        train_x: standardizer.apply(&train_x),
        train_y,
        test_x: standardizer.apply(&test_x),
        test_y,
    })
}

fn fit_detector(
    kind: DetectorKind,
    x: &[Vec<f64>],
    y: &[u8],
    seed: u64,
) -> Result<(crate::linmodels::LinearModel, f64), ModelError> {
    match kind {
        DetectorKind::Lr => train_logreg(x, y, CS_EPOCHS, CS_LR, seed),
        DetectorKind::Svm => train_linsvm(x, y, SVM_EPOCHS, SVM_LR, SVM_REG, seed),
    }
}

/// Trains a detector on the train fold of a stratified split and reports
/// train and held-out accuracy.
pub fn evaluate_detection(
    real: &[SpectralProfile],
    generated: &[SpectralProfile],
    split: f64,
    kind: DetectorKind,
    seed: u64,
) -> Result<DetectionAccuracy, FidelityError> {
    let prepped = split_pair(real, generated, split, seed)?;
    let (model, train_acc) = fit_detector(kind, &prepped.train_x, &prepped.train_y, seed)?;
    let test_acc = model.accuracy(&prepped.test_x, &prepped.test_y);
    Ok(DetectionAccuracy {
        train_acc,
        test_acc,
    })
}

/// Transfer setting: the detector is trained on pair A and evaluated on
/// pair B, with preprocessing and standardization fit on A only.
pub fn evaluate_detection_transfer(
    train_pair: (&[SpectralProfile], &[SpectralProfile]),
    eval_pair: (&[SpectralProfile], &[SpectralProfile]),
    kind: DetectorKind,
    seed: u64,
) -> Result<DetectionAccuracy, FidelityError> {
    let (train_real, train_gen) = train_pair;
    let (eval_real, eval_gen) = eval_pair;
    if train_real.is_empty() || train_gen.is_empty() || eval_real.is_empty() || eval_gen.is_empty()
    {
        return Err(FidelityError::EmptySet);
    }
    let (r, g) = balance(train_real, train_gen, seed);
    let mut train_x = preprocess(&r);
    train_x.extend(preprocess(&g));
    let train_y: Vec<u8> = std::iter::repeat(0u8)
        .take(r.len())
        .chain(std::iter::repeat(1u8).take(g.len()))
        .collect();
    let standardizer = fit_standardizer(&train_x)?;
    let train_x = standardizer.apply(&train_x);
    let (model, train_acc) = fit_detector(kind, &train_x, &train_y, seed)?;

    let (er, eg) = balance(eval_real, eval_gen, seed ^ 0x517c_c1b7_2722_0a95);
    let mut eval_x = preprocess(&er);
    eval_x.extend(preprocess(&eg));
    let eval_y: Vec<u8> = std::iter::repeat(0u8)
        .take(er.len())
        .chain(std::iter::repeat(1u8).take(eg.len()))
        .collect();
    let eval_x = standardizer.apply(&eval_x);
    let test_acc = model.accuracy(&eval_x, &eval_y);
    Ok(DetectionAccuracy {
        train_acc,
        test_acc,
    })
}

/// Configuration echo embedded in a [`FidelityReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub sd_scale: SdScale,
    pub cs_epochs: usize,
    pub cs_lr: f64,
    pub split: f64,
    pub seed: u64,
    pub preprocess: String,
}

/// The full metric block for one (real, generated) pair.
///
/// `lr.train_acc` is the cloaking-score regression's training accuracy, so
/// `cs == 1 − 2·|lr.train_acc − 0.5|` holds exactly; `lr.test_acc` and the
/// `svm` block come from the held-out detection runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub sd: f64,
    pub cs: f64,
    pub lr: DetectionAccuracy,
    pub svm: DetectionAccuracy,
    pub n_real: usize,
    pub n_generated: usize,
    pub config: ReportConfig,
}

/// Assembles SD, CS, and both detectors into one report.
pub fn evaluate_report(
    real: &[SpectralProfile],
    generated: &[SpectralProfile],
    sd_scale: SdScale,
    split: f64,
    seed: u64,
) -> Result<FidelityReport, FidelityError> {
    let sd = spectral_difference(real, generated, sd_scale)?;
    let cs_out = evaluate_cs(real, generated, CS_EPOCHS, CS_LR, seed)?;
    let lr_det = evaluate_detection(real, generated, split, DetectorKind::Lr, seed)?;
    let svm_det = evaluate_detection(real, generated, split, DetectorKind::Svm, seed)?;
    Ok(FidelityReport {
        sd,
        cs: cs_out.cs,
        lr: DetectionAccuracy {
            train_acc: cs_out.lr_train_acc,
            test_acc: lr_det.test_acc,
        },
        svm: svm_det,
        n_real: cs_out.n_real,
        n_generated: cs_out.n_generated,
        config: ReportConfig {
            sd_scale,
            cs_epochs: CS_EPOCHS,
            cs_lr: CS_LR,
            split,
            seed,
            preprocess: "log1p+zscore".to_string(),
        },
    })
}
