//! Image representation, file IO, and deterministic synthetic corpora.
//!
//! Everything downstream works on a single grayscale channel in `[0, 1]`;
//! color inputs are reduced with the BT.601 luminance weights at load time.
//! Synthetic corpora stand in for large face datasets at desk scale and are
//! byte-reproducible from `(kind, count, size, seed)`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Errors raised by image IO and corpus generation.
#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("io error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported pixel format in {path} (expected 8-bit gray or RGB)")]
    UnsupportedFormat { path: PathBuf },
    #[error("zero-sized image")]
    ZeroSized,
    #[error("pixel count {got} does not match {height}x{width}")]
    DimensionMismatch {
        height: usize,
        width: usize,
        got: usize,
    },
    #[error("non-finite or out-of-range pixel value {value} at index {index}")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// A grayscale image: row-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image, validating dimensions and pixel range.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::ZeroSized);
        }
        if pixels.len() != height * width {
            return Err(ImageError::DimensionMismatch {
                height,
                width,
                got: pixels.len(),
            });
        }
        for (i, &p) in pixels.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ImageError::PixelOutOfRange { index: i, value: p });
            }
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image, clamping every pixel into `[0, 1]` first.
    pub fn from_clamped(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        let clamped = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Self::new(height, width, clamped)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }
}

/// BT.601 luminance from 8-bit RGB, scaled to `[0, 1]`.
fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Loads a PGM (P5) or PNG (8-bit gray or RGB) file as a grayscale image.
///
/// Color inputs are reduced via `0.299 R + 0.587 G + 0.114 B`.
pub fn load_image(path: &Path) -> Result<Image, ImageError> {
    let dynimg = image::open(path).map_err(|source| ImageError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    if w == 0 || h == 0 {
        return Err(ImageError::ZeroSized);
    }
    let pixels: Vec<f64> = match dynimg {
        image::DynamicImage::ImageLuma8(g) => {
            g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageRgb8(rgb) => rgb
            .into_raw()
            .chunks_exact(3)
            .map(|px| luminance(px[0], px[1], px[2]))
            .collect(),
        image::DynamicImage::ImageRgba8(rgba) => rgba
            .into_raw()
            .chunks_exact(4)
            .map(|px| luminance(px[0], px[1], px[2]))
            .collect(),
        image::DynamicImage::ImageLumaA8(ga) => ga
            .into_raw()
            .chunks_exact(2)
            .map(|px| px[0] as f64 / 255.0)
            .collect(),
        _ => {
            return Err(ImageError::UnsupportedFormat {
                path: path.to_path_buf(),
            })
        }
    };
    Image::new(h, w, pixels)
}

/// Saves an image as an 8-bit grayscale PNG (pixels quantized to 1/255).
pub fn save_png(image: &Image, path: &Path) -> Result<(), ImageError> {
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .map(|&p| (p * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(image.width as u32, image.height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| ImageError::Decode {
            path: path.to_path_buf(),
            source,
        })
}

/// Saves an image as a binary PGM (P5) file.
pub fn save_pgm(image: &Image, path: &Path) -> Result<(), ImageError> {
    use std::io::Write;
    let file = fs::File::create(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let write = (|| {
        write!(w, "P5\n{} {}\n255\n", image.width, image.height)?;
        let bytes: Vec<u8> = image
            .pixels
            .iter()
            .map(|&p| (p * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    })();
    write.map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Which synthetic generator produced a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    GaussTexture,
    Checker,
    Blobs,
    BimodalNoise,
}

impl CorpusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::GaussTexture => "gauss-texture",
            CorpusKind::Checker => "checker",
            CorpusKind::Blobs => "blobs",
            CorpusKind::BimodalNoise => "bimodal-noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gauss-texture" => Some(CorpusKind::GaussTexture),
            "checker" => Some(CorpusKind::Checker),
            "blobs" => Some(CorpusKind::Blobs),
            "bimodal-noise" => Some(CorpusKind::BimodalNoise),
            _ => None,
        }
    }
}

/// Class label attached to a corpus entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Generated => "generated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Label::Real),
            "generated" => Some(Label::Generated),
            _ => None,
        }
    }
}

/// One corpus image on disk plus its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
}

/// Index of a generated corpus: seed, generator kind, image size, entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub kind: String,
    pub size: usize,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| ImageError::Manifest(e.to_string()))?;
        fs::write(path, json).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let text = fs::read_to_string(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ImageError::Manifest(e.to_string()))
    }

    /// Loads every entry, resolving relative paths against `base`.
    pub fn load_images(&self, base: &Path) -> Result<Vec<(Image, Label)>, ImageError> {
        self.entries
            .par_iter()
            .map(|e| {
                let p = base.join(&e.path);
                load_image(&p).map(|img| (img, e.label))
            })
            .collect()
    }
}

/// Per-image sub-seed: images are independent streams, so corpus generation
/// can parallelize without changing output.
fn sub_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Noise amplitudes for the two modes of `bimodal-noise`.
pub const BIMODAL_AMP_LOW: f64 = 0.03;
pub const BIMODAL_AMP_HIGH: f64 = 0.30;

/// The amplitude mode `bimodal-noise` draws for image `index` of a corpus
/// seeded with `seed`. `true` means the high-amplitude mode.
pub fn bimodal_mode(seed: u64, index: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, index));
    rng.gen::<f64>() < 0.5
}

fn smooth_noise(size: usize, rng: &mut ChaCha8Rng, passes: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..size * size).map(|_| rng.gen::<f64>()).collect();
    // Separable box blur with wraparound; repeated passes approximate a
    // Gaussian and strip nearly all high-frequency power.
    let mut tmp = vec![0.0; size * size];
    for _ in 0..passes {
        for i in 0..size {
            for j in 0..size {
                let l = grid[i * size + (j + size - 1) % size];
                let c = grid[i * size + j];
                let r = grid[i * size + (j + 1) % size];
                tmp[i * size + j] = (l + c + r) / 3.0;
            }
        }
        for j in 0..size {
            for i in 0..size {
                let u = tmp[((i + size - 1) % size) * size + j];
                let c = tmp[i * size + j];
                let d = tmp[((i + 1) % size) * size + j];
                grid[i * size + j] = (u + c + d) / 3.0;
            }
        }
    }
    grid
}

fn normalize_to_band(grid: &mut [f64], lo: f64, hi: f64) {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in grid.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    let span = (max - min).max(1e-12);
    for v in grid.iter_mut() {
        *v = lo + (hi - lo) * (*v - min) / span;
    }
}

fn synth_image(kind: CorpusKind, size: usize, seed: u64, index: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, index));
    let n = size;
    let pixels = match kind {
        CorpusKind::Checker => (0..n * n)
            .map(|p| {
                let (i, j) = (p / n, p % n);
                ((i + j) % 2) as f64
            })
            .collect(),
        CorpusKind::GaussTexture => {
            let mut grid = smooth_noise(n, &mut rng, 4);
            normalize_to_band(&mut grid, 0.1, 0.9);
            grid
        }
        CorpusKind::Blobs => {
            let n_blobs = rng.gen_range(2..=5);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
                .map(|_| {
                    let cy = rng.gen::<f64>() * n as f64;
                    let cx = rng.gen::<f64>() * n as f64;
                    let sigma = n as f64 * (0.08 + 0.12 * rng.gen::<f64>());
                    let amp = 0.4 + 0.6 * rng.gen::<f64>();
                    (cy, cx, sigma, amp)
                })
                .collect();
            let mut grid = vec![0.1; n * n];
            for (p, v) in grid.iter_mut().enumerate() {
                let (i, j) = ((p / n) as f64, (p % n) as f64);
                for &(cy, cx, sigma, amp) in &blobs {
                    let d2 = (i - cy).powi(2) + (j - cx).powi(2);
                    *v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
            grid.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
        }
        CorpusKind::BimodalNoise => {
            // First draw decides the amplitude mode; keep in sync with
            // `bimodal_mode` so the generating mode stays recoverable.
            let high = rng.gen::<f64>() < 0.5;
            let amp = if high { BIMODAL_AMP_HIGH } else { BIMODAL_AMP_LOW };
            let mut base = smooth_noise(n, &mut rng, 4);
            normalize_to_band(&mut base, 0.35, 0.65);
            base.iter()
                .map(|&b| (b + amp * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0))
                .collect()
        }
    };
    Image::new(n, n, pixels).expect("generator output is in range")
}

/// Generates `count` synthetic images of `size`x`size` under `out_dir` and
/// writes `manifest.json` next to them. Identical arguments reproduce
/// byte-identical files; each image depends only on `seed ^ index`.
pub fn synth_corpus(
    kind: CorpusKind,
    count: usize,
    size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest, ImageError> {
    assert!(count >= 1, "count must be >= 1");
    assert!(
        size >= 8 && size.is_power_of_two(),
        "size must be a power of two >= 8"
    );
    fs::create_dir_all(out_dir).map_err(|source| ImageError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let entries: Vec<ManifestEntry> = (0..count)
        .into_par_iter()
        .map(|index| {
            let img = synth_image(kind, size, seed, index);
            let name = format!("{:06}.png", index);
            save_png(&img, &out_dir.join(&name))?;
            Ok(ManifestEntry {
                path: name,
                label: Label::Real,
            })
        })
        .collect::<Result<_, ImageError>>()?;
    let manifest = CorpusManifest {
        seed,
        kind: kind.as_str().to_string(),
        size,
        entries,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn new_rejects_zero_sized() {
        assert!(matches!(Image::new(0, 3, vec![]), Err(ImageError::ZeroSized)));
        assert!(matches!(Image::new(3, 0, vec![]), Err(ImageError::ZeroSized)));
    }

    #[test]
    fn new_rejects_out_of_range() {
        let e = Image::new(1, 2, vec![0.5, 1.5]);
        assert!(matches!(e, Err(ImageError::PixelOutOfRange { index: 1, .. })));
        let e = Image::new(1, 2, vec![f64::NAN, 0.0]);
        assert!(matches!(e, Err(ImageError::PixelOutOfRange { index: 0, .. })));
    }

    #[test]
    fn luminance_of_pure_red_is_0_299() {
        assert!((luminance(255, 0, 0) - 0.299).abs() < 1e-12);
        assert!((luminance(0, 255, 0) - 0.587).abs() < 1e-12);
        assert!((luminance(0, 0, 255) - 0.114).abs() < 1e-12);
    }

    #[test]
    fn load_black_and_white_images() {
        let dir = tempdir().unwrap();
        let black = Image::new(2, 2, vec![0.0; 4]).unwrap();
        let p = dir.path().join("black.png");
        save_png(&black, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), black);

        let white = Image::new(1, 1, vec![1.0]).unwrap();
        let p = dir.path().join("white.pgm");
        save_pgm(&white, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), white);
    }

    #[test]
    fn rgb_png_reduces_to_luminance() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("red.png");
        let rgb = image::RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]));
        rgb.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.pixels()[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pixels: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let img = Image::new(8, 8, pixels).unwrap();
        let savers: [(&str, fn(&Image, &Path) -> Result<(), ImageError>); 2] =
            [("a.png", save_png), ("a.pgm", save_pgm)];
        for (name, save) in savers {
            let p = dir.path().join(name);
            save(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn checker_alternates_zero_one() {
        let dir = tempdir().unwrap();
        let m = synth_corpus(CorpusKind::Checker, 1, 8, 42, dir.path()).unwrap();
        let img = load_image(&dir.path().join(&m.entries[0].path)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(img.get(i, j), ((i + j) % 2) as f64);
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        for kind in [
            CorpusKind::GaussTexture,
            CorpusKind::Blobs,
            CorpusKind::BimodalNoise,
        ] {
            synth_corpus(kind, 4, 16, 123, d1.path()).unwrap();
            synth_corpus(kind, 4, 16, 123, d2.path()).unwrap();
            for i in 0..4 {
                let name = format!("{:06}.png", i);
                let a = fs::read(d1.path().join(&name)).unwrap();
                let b = fs::read(d2.path().join(&name)).unwrap();
                assert_eq!(a, b, "kind {:?} image {} differs", kind, i);
            }
        }
    }

    #[test]
    fn bimodal_modes_are_balanced() {
        // Binomial(1000, 1/2) leaves each mode with >= 400 members except
        // with probability < 1e-9.
        let seed = 2024;
        let high = (0..1000).filter(|&i| bimodal_mode(seed, i)).count();
        assert!(high >= 400 && high <= 600, "high count {}", high);
    }

    #[test]
    fn bimodal_mode_matches_generated_noise_level() {
        let dir = tempdir().unwrap();
        let m = synth_corpus(CorpusKind::BimodalNoise, 40, 16, 5, dir.path()).unwrap();
        for (i, e) in m.entries.iter().enumerate() {
            let img = load_image(&dir.path().join(&e.path)).unwrap();
            // High-mode noise produces visibly larger local variation.
            let mut rough = 0.0;
            for r in 0..16 {
                for c in 0..15 {
                    rough += (img.get(r, c + 1) - img.get(r, c)).abs();
                }
            }
            let is_high = rough / (16.0 * 15.0) > 0.1;
            assert_eq!(is_high, bimodal_mode(5, i), "image {}", i);
        }
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempdir().unwrap();
        let m = synth_corpus(CorpusKind::Checker, 2, 8, 9, dir.path()).unwrap();
        let loaded = CorpusManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m, loaded);
        let images = loaded.load_images(dir.path()).unwrap();
        assert_eq!(images.len(), 2);
        assert!(images.iter().all(|(img, _)| img.is_square()));
    }
}
