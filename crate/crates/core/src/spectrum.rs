//! Discrete Fourier transforms, power spectra, and radial profiles.
//!
//! The forward transform is the unnormalized DFT
//! `Î(k,ℓ) = Σ_{m,n} e^{-2πi(mk/M + nℓ/N)} I(m,n)`, computed row-column with
//! a radix-2 FFT on power-of-two sizes and direct summation otherwise. The
//! radial profile aggregates the center-shifted power spectrum per integer
//! radius; in `binned` mode every bin lands in exactly one ring, so the
//! profile partitions the total power (a Parseval identity the tests lean on).

use rayon::prelude::*;

use crate::imagecore::Image;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpectrumError {
    #[error("azimuthal integral requires a square image, got {height}x{width}")]
    NonSquare { height: usize, width: usize },
    #[error("image side must be >= 2, got {0}")]
    TooSmall(usize),
    #[error("profile list is empty")]
    EmptyProfileSet,
    #[error("profile length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Complex frequency grid of an image, stored as separate re/im planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrum {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    /// Complex value at frequency bin (k, l).
    pub fn at(&self, k: usize, l: usize) -> (f64, f64) {
        let idx = k * self.width + l;
        (self.re[idx], self.im[idx])
    }
}

#[derive(Clone, Copy)]
struct C {
    re: f64,
    im: f64,
}

impl C {
    const ZERO: C = C { re: 0.0, im: 0.0 };

    fn mul(self, other: C) -> C {
        C {
            re: self.re * other.re - self.im * other.im,
            im: self.re * other.im + self.im * other.re,
        }
    }

    fn add(self, other: C) -> C {
        C {
            re: self.re + other.re,
            im: self.im + other.im,
        }
    }

    fn sub(self, other: C) -> C {
        C {
            re: self.re - other.re,
            im: self.im - other.im,
        }
    }
}

/// In-place iterative radix-2 Cooley-Tukey, forward (e^{-2πi jk/N}) sign.
fn fft_pow2(buf: &mut [C]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // Exact angle per twiddle keeps error within the 1e-9 budget.
                let ang = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
                let w = C {
                    re: ang.cos(),
                    im: ang.sin(),
                };
                let a = buf[start + k];
                let b = buf[start + k + half].mul(w);
                buf[start + k] = a.add(b);
                buf[start + k + half] = a.sub(b);
            }
        }
        len <<= 1;
    }
}

/// Direct O(n^2) DFT for non-power-of-two lengths.
fn dft_naive(input: &[C]) -> Vec<C> {
    let n = input.len();
    let mut out = vec![C::ZERO; n];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = C::ZERO;
        for (j, &x) in input.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (j * k % n) as f64 / n as f64;
            let w = C {
                re: ang.cos(),
                im: ang.sin(),
            };
            acc = acc.add(x.mul(w));
        }
        *slot = acc;
    }
    out
}

fn transform_1d(buf: &mut Vec<C>) {
    if buf.len().is_power_of_two() {
        fft_pow2(buf);
    } else {
        *buf = dft_naive(buf);
    }
}

/// Unnormalized forward 2D DFT of a real image.
pub fn dft2(image: &Image) -> Spectrum {
    let (h, w) = (image.height(), image.width());
    let mut grid: Vec<C> = image
        .pixels()
        .iter()
        .map(|&p| C { re: p, im: 0.0 })
        .collect();
    // Rows.
    let mut row = Vec::with_capacity(w);
    for r in 0..h {
        row.clear();
        row.extend_from_slice(&grid[r * w..(r + 1) * w]);
        transform_1d(&mut row);
        grid[r * w..(r + 1) * w].copy_from_slice(&row);
    }
    // Columns.
    let mut col = Vec::with_capacity(h);
    for c in 0..w {
        col.clear();
        col.extend((0..h).map(|r| grid[r * w + c]));
        transform_1d(&mut col);
        for (r, &v) in col.iter().enumerate() {
            grid[r * w + c] = v;
        }
    }
    Spectrum {
        height: h,
        width: w,
        re: grid.iter().map(|c| c.re).collect(),
        im: grid.iter().map(|c| c.im).collect(),
    }
}

/// Per-bin squared magnitude `re² + im²`. If `shifted`, the DC bin is moved
/// to (⌊M/2⌋, ⌊N/2⌋) so radii can be read from the grid center.
pub fn power_spectrum(spec: &Spectrum, shifted: bool) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let mut out = vec![0.0; h * w];
    for k in 0..h {
        for l in 0..w {
            let (re, im) = spec.at(k, l);
            let p = re * re + im * im;
            if shifted {
                let i = (k + h / 2) % h;
                let j = (l + w / 2) % w;
                out[i * w + j] = p;
            } else {
                out[k * w + l] = p;
            }
        }
    }
    out
}

/// Radial aggregation of the 2D power spectrum into a 1D profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    values: Vec<f64>,
    source_size: usize,
}

impl SpectralProfile {
    /// Wraps raw profile values, e.g. read back from a CSV. `source_size` is
    /// the side length of the originating image; pass 0 when unknown.
    pub fn from_values(values: Vec<f64>, source_size: usize) -> Self {
        Self {
            values,
            source_size,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    /// Power at the outermost radius (the profile's last bin).
    pub fn last_bin(&self) -> f64 {
        *self.values.last().expect("profile is non-empty")
    }
}

/// Number of radial bins for an n×n image: one per integer radius out to the
/// corner of the shifted grid, i.e. ⌈n/√2⌉ + 1.
pub fn profile_len(n: usize) -> usize {
    (n as f64 / std::f64::consts::SQRT_2).ceil() as usize + 1
}

/// Ring index of the unshifted frequency bin (k, l) of an n×n spectrum:
/// the rounded Euclidean distance of the shifted bin from the DC center.
/// Shared with the spectral discriminator so both paths bin identically.
pub(crate) fn ring_index(n: usize, k: usize, l: usize) -> usize {
    let c = (n / 2) as f64;
    let i = ((k + n / 2) % n) as f64;
    let j = ((l + n / 2) % n) as f64;
    ((i - c).powi(2) + (j - c).powi(2)).sqrt().round() as usize
}

/// How the radial profile aggregates the power spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileMode {
    /// Each bin is added to the ring its rounded radius selects. Exactly
    /// partitions the total power; the default.
    #[default]
    Binned,
    /// Arc-length-weighted sum of bilinear samples on each radius circle,
    /// mirroring the integral-over-angles reading. Samples falling outside
    /// the grid contribute zero.
    Interpolated,
}

impl ProfileMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "binned" => Some(ProfileMode::Binned),
            "interpolated" => Some(ProfileMode::Interpolated),
            _ => None,
        }
    }
}

fn bilinear(grid: &[f64], n: usize, y: f64, x: f64) -> f64 {
    if y < 0.0 || x < 0.0 || y > (n - 1) as f64 || x > (n - 1) as f64 {
        return 0.0;
    }
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(n - 1);
    let x1 = (x0 + 1).min(n - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let a = grid[y0 * n + x0] * (1.0 - fy) * (1.0 - fx);
    let b = grid[y0 * n + x1] * (1.0 - fy) * fx;
    let c = grid[y1 * n + x0] * fy * (1.0 - fx);
    let d = grid[y1 * n + x1] * fy * fx;
    a + b + c + d
}

/// Radial power profile of a square image.
pub fn azimuthal_integral(
    image: &Image,
    mode: ProfileMode,
) -> Result<SpectralProfile, SpectrumError> {
    if !image.is_square() {
        return Err(SpectrumError::NonSquare {
            height: image.height(),
            width: image.width(),
        });
    }
    let n = image.height();
    if n < 2 {
        return Err(SpectrumError::TooSmall(n));
    }
    let spec = dft2(image);
    let len = profile_len(n);
    let mut values = vec![0.0; len];
    match mode {
        ProfileMode::Binned => {
            let power = power_spectrum(&spec, false);
            for k in 0..n {
                for l in 0..n {
                    values[ring_index(n, k, l)] += power[k * n + l];
                }
            }
        }
        ProfileMode::Interpolated => {
            let power = power_spectrum(&spec, true);
            let c = (n / 2) as f64;
            values[0] = power[(n / 2) * n + n / 2];
            for (r, slot) in values.iter_mut().enumerate().skip(1) {
                let radius = r as f64;
                let samples = (2.0 * std::f64::consts::PI * radius).ceil().max(8.0) as usize;
                let mut acc = 0.0;
                for t in 0..samples {
                    let phi = 2.0 * std::f64::consts::PI * t as f64 / samples as f64;
                    acc += bilinear(&power, n, c + radius * phi.sin(), c + radius * phi.cos());
                }
                *slot = 2.0 * std::f64::consts::PI * radius * acc / samples as f64;
            }
        }
    }
    Ok(SpectralProfile {
        values,
        source_size: n,
    })
}

/// Profiles a whole corpus in parallel (one image per task).
pub fn corpus_profiles(
    images: &[Image],
    mode: ProfileMode,
) -> Result<Vec<SpectralProfile>, SpectrumError> {
    images
        .par_iter()
        .map(|img| azimuthal_integral(img, mode))
        .collect()
}

/// Per-index sample mean and population standard deviation of profiles.
pub fn profile_stats(
    profiles: &[SpectralProfile],
) -> Result<(SpectralProfile, SpectralProfile), SpectrumError> {
    let first = profiles.first().ok_or(SpectrumError::EmptyProfileSet)?;
    let len = first.len();
    for p in profiles {
        if p.len() != len {
            return Err(SpectrumError::LengthMismatch {
                expected: len,
                got: p.len(),
            });
        }
    }
    let count = profiles.len() as f64;
    let mut mean = vec![0.0; len];
    for p in profiles {
        for (m, v) in mean.iter_mut().zip(p.values()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    let mut var = vec![0.0; len];
    for p in profiles {
        for ((s, v), m) in var.iter_mut().zip(p.values()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.into_iter().map(|s| (s / count).sqrt()).collect();
    let n = first.source_size;
    Ok((
        SpectralProfile {
            values: mean,
            source_size: n,
        },
        SpectralProfile {
            values: std,
            source_size: n,
        },
    ))
}
