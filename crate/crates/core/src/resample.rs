//! Up-sampling operators and the spectral replica identity.
//!
//! Doubling a signal's resolution by zero insertion leaves the DFT of the
//! result an exact two-fold tiling of the original spectrum:
//! `â_up(k̄) = â(k̄ mod N)`. The classical derivation splits the up-sampled
//! sum into even/odd terms and convolves with a Dirac comb; the discrete
//! identity is asserted here directly, and no normalization prefactor
//! survives in this form. Everything above the base band is therefore an
//! up-sampling artifact until smoothing removes it, which is what the
//! nearest and bilinear variants demonstrate.

use crate::imagecore::Image;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ResampleError {
    #[error("unsupported up-sampling factor {0} (only 2 is implemented)")]
    UnsupportedFactor(usize),
}

/// A real-valued 1D signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal1D {
    values: Vec<f64>,
}

impl Signal1D {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "signal must have at least one sample");
        assert!(values.iter().all(|v| v.is_finite()), "non-finite sample");
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
}

/// 1D up-sampling rule: what lands between the original samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsample1DMethod {
    /// Inserted samples are zero.
    BedOfNails,
    /// Inserted samples repeat their left neighbor.
    Nearest,
}

/// 2D up-sampling rule, applied separably along both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsample2DMethod {
    BedOfNails,
    Nearest,
    /// Nearest, then each inserted sample is replaced by the average of its
    /// two axis neighbors (the right edge keeps its single neighbor).
    Bilinear,
}

impl Upsample2DMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bed-of-nails" => Some(Self::BedOfNails),
            "nearest" => Some(Self::Nearest),
            "bilinear" => Some(Self::Bilinear),
            _ => None,
        }
    }
}

/// Doubles a signal's length: even outputs carry the original samples, odd
/// outputs follow the method.
pub fn upsample1d(sig: &Signal1D, method: Upsample1DMethod) -> Signal1D {
    let n = sig.len();
    let mut out = vec![0.0; 2 * n];
    for (j, &a) in sig.values().iter().enumerate() {
        out[2 * j] = a;
        out[2 * j + 1] = match method {
            Upsample1DMethod::BedOfNails => 0.0,
            Upsample1DMethod::Nearest => a,
        };
    }
    Signal1D::new(out)
}

fn upsample_row(row: &[f64], method: Upsample2DMethod) -> Vec<f64> {
    let n = row.len();
    let mut out = vec![0.0; 2 * n];
    for (j, &a) in row.iter().enumerate() {
        out[2 * j] = a;
        out[2 * j + 1] = match method {
            Upsample2DMethod::BedOfNails => 0.0,
            Upsample2DMethod::Nearest => a,
            Upsample2DMethod::Bilinear => {
                if j + 1 < n {
                    (a + row[j + 1]) / 2.0
                } else {
                    a
                }
            }
        };
    }
    out
}

/// Doubles both image dimensions by applying the 1D rule along rows, then
/// columns. Only `factor == 2` is supported.
pub fn upsample2d(
    image: &Image,
    method: Upsample2DMethod,
    factor: usize,
) -> Result<Image, ResampleError> {
    if factor != 2 {
        return Err(ResampleError::UnsupportedFactor(factor));
    }
    let (h, w) = (image.height(), image.width());
    // Rows.
    let mut widened = Vec::with_capacity(h * 2 * w);
    for r in 0..h {
        widened.extend(upsample_row(&image.pixels()[r * w..(r + 1) * w], method));
    }
    // Columns.
    let new_w = 2 * w;
    let mut col = vec![0.0; h];
    let mut out = vec![0.0; 2 * h * new_w];
    for c in 0..new_w {
        for r in 0..h {
            col[r] = widened[r * new_w + c];
        }
        let up = upsample_row(&col, method);
        for (r, &v) in up.iter().enumerate() {
            out[r * new_w + c] = v;
        }
    }
    Ok(Image::from_clamped(2 * h, new_w, out).expect("dimensions are consistent"))
}

/// Direct 1D DFT (forward, unnormalized) returning (re, im) pairs.
pub fn dft1(values: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (j, &a) in values.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (j * k % n) as f64 / n as f64;
                re += a * ang.cos();
                im += a * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// Outcome of checking the replica identity on one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaReport {
    /// max over k̄ of |â_up(k̄) − â(k̄ mod N)|.
    pub max_abs_err: f64,
    /// The high-band indices k̄ = N..2N−1 whose values replicate the base band.
    pub replica_positions: Vec<usize>,
}

/// Verifies that zero-insertion ×2 up-sampling tiles the base-band spectrum
/// across the doubled frequency axis.
pub fn verify_replica(sig: &Signal1D) -> ReplicaReport {
    assert!(sig.len() >= 2, "replica check needs at least 2 samples");
    let n = sig.len();
    let base = dft1(sig.values());
    let up = upsample1d(sig, Upsample1DMethod::BedOfNails);
    let up_hat = dft1(up.values());
    let mut max_abs_err = 0.0f64;
    for (kbar, &(ure, uim)) in up_hat.iter().enumerate() {
        let (bre, bim) = base[kbar % n];
        max_abs_err = max_abs_err.max(((ure - bre).powi(2) + (uim - bim).powi(2)).sqrt());
    }
    ReplicaReport {
        max_abs_err,
        replica_positions: (n..2 * n).collect(),
    }
}

/// High-band power fraction of a length-2N signal: energy at k̄ ≥ N over
/// total energy.
pub fn high_band_fraction(up_values: &[f64]) -> f64 {
    let spec = dft1(up_values);
    let n = spec.len() / 2;
    let power: Vec<f64> = spec.iter().map(|(re, im)| re * re + im * im).collect();
    let high: f64 = power[n..].iter().sum();
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}
