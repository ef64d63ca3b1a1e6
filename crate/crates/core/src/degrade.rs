//! Controlled synthetic degradations and score-vs-level sweeps.
//!
//! Operator definitions (all outputs clipped to `[0, 1]`, dimensions kept):
//!
//! | attribute     | parameter | formula                                        | identity |
//! |---------------|-----------|------------------------------------------------|----------|
//! | brightness    | factor    | `out = factor * in`                            | 1        |
//! | noisiness     | sigma     | `out = in + N(0, sigma^2)`, per sample         | 0        |
//! | colorfulness  | factor    | `out = gray + factor * (in - gray)`            | 1        |
//! | sharpness     | factor    | `out = blur + factor * (in - blur)`            | 1        |
//!
//! `gray` is Rec. 601 luma (`0.299 R + 0.587 G + 0.114 B`). `blur` is the
//! 3x3 smoothing kernel `[[1,1,1],[1,5,1],[1,1,1]] / 13` with edge
//! replication.
//!
//! Sweep levels are oriented so a larger level means more of the positive
//! prompt's attribute. For noisiness the level is `-sigma`, so levels are
//! `<= 0` and `0` is the clean image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::image::ImageBuffer;
use crate::metrics::level_correlation;
use crate::prompts::{PromptPair, PromptRegistry};

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];
pub const SMOOTH_KERNEL: [[f32; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]];
pub const SMOOTH_KERNEL_SUM: f32 = 13.0;

fn check_non_negative(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Input(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

pub fn adjust_brightness(image: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_non_negative("brightness factor", factor)?;
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let f = factor as f32;
    let data = image.data().iter().map(|v| v * f).collect();
    ImageBuffer::from_clipped(image.height(), image.width(), data)
}

pub fn adjust_noise(image: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer> {
    check_non_negative("noise sigma", sigma)?;
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let noise = gaussian_noise(image.data().len(), sigma, seed)?;
    let data = image.data().iter().zip(&noise).map(|(v, n)| v + n).collect();
    ImageBuffer::from_clipped(image.height(), image.width(), data)
}

/// The additive noise field `adjust_noise` would use, before clipping.
pub fn gaussian_noise(len: usize, sigma: f64, seed: u64) -> Result<Vec<f32>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Input(format!("invalid sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| normal.sample(&mut rng) as f32).collect())
}

pub fn luma(rgb: [f32; 3]) -> f32 {
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

pub fn adjust_colorfulness(image: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_non_negative("colorfulness factor", factor)?;
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let f = factor as f32;
    let mut data = Vec::with_capacity(image.data().len());
    for px in image.data().chunks_exact(3) {
        let gray = luma([px[0], px[1], px[2]]);
        data.extend(px.iter().map(|&c| gray + f * (c - gray)));
    }
    ImageBuffer::from_clipped(image.height(), image.width(), data)
}

/// Smoothing pass used by [`adjust_sharpness`].
pub fn smooth(image: &ImageBuffer) -> ImageBuffer {
    let (h, w) = (image.height(), image.width());
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0f32;
                for (ky, row) in SMOOTH_KERNEL.iter().enumerate() {
                    let sy = (y as isize + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                    for (kx, k) in row.iter().enumerate() {
                        let sx = (x as isize + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                        acc += k * src[(sy * w + sx) * 3 + c];
                    }
                }
                out[(y * w + x) * 3 + c] = acc / SMOOTH_KERNEL_SUM;
            }
        }
    }
    ImageBuffer::from_clipped(h, w, out).expect("same shape as input")
}

pub fn adjust_sharpness(image: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    check_non_negative("sharpness factor", factor)?;
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let blurred = smooth(image);
    let f = factor as f32;
    let data = blurred
        .data()
        .iter()
        .zip(image.data())
        .map(|(b, v)| b + f * (v - b))
        .collect();
    ImageBuffer::from_clipped(image.height(), image.width(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAttribute {
    Brightness,
    Noisiness,
    Colorfulness,
    Sharpness,
}

impl SweepAttribute {
    pub const ALL: [SweepAttribute; 4] = [
        SweepAttribute::Brightness,
        SweepAttribute::Noisiness,
        SweepAttribute::Colorfulness,
        SweepAttribute::Sharpness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAttribute::Brightness => "brightness",
            SweepAttribute::Noisiness => "noisiness",
            SweepAttribute::Colorfulness => "colorfulness",
            SweepAttribute::Sharpness => "sharpness",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown sweep attribute `{name}` (expected brightness, noisiness, colorfulness or sharpness)"
                ))
            })
    }

    /// Level at which the operator is the identity.
    pub fn identity_level(self) -> f64 {
        match self {
            SweepAttribute::Noisiness => 0.0,
            _ => 1.0,
        }
    }

    /// Default level grid (ascending). These grids are a local choice, not
    /// calibrated against any published figure.
    pub fn default_levels(self) -> Vec<f64> {
        let steps = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        match self {
            SweepAttribute::Brightness => steps(0.2, 2.0, 10),
            SweepAttribute::Noisiness => steps(-0.3, 0.0, 10),
            SweepAttribute::Colorfulness => steps(0.0, 2.0, 10),
            SweepAttribute::Sharpness => steps(0.0, 3.0, 10),
        }
    }

    /// Applies the operator at `level`. `seed` only matters for noise.
    pub fn apply(self, image: &ImageBuffer, level: f64, seed: u64) -> Result<ImageBuffer> {
        match self {
            SweepAttribute::Brightness => adjust_brightness(image, level),
            SweepAttribute::Colorfulness => adjust_colorfulness(image, level),
            SweepAttribute::Sharpness => adjust_sharpness(image, level),
            SweepAttribute::Noisiness => {
                if level > 0.0 {
                    return Err(Error::Input(format!(
                        "noisiness levels are -sigma and must be <= 0, got {level}"
                    )));
                }
                adjust_noise(image, -level, seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub attribute: SweepAttribute,
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(attribute: SweepAttribute, levels: Vec<f64>, seed: u64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Input("degradation spec needs at least one level".into()));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::Input("degradation levels must be finite".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(format!("levels must be strictly increasing: {levels:?}")));
        }
        Ok(Self { attribute, levels, seed })
    }

    pub fn with_default_levels(attribute: SweepAttribute, seed: u64) -> Self {
        Self::new(attribute, attribute.default_levels(), seed).expect("default grids are valid")
    }
}

/// Something that scores an image for an antonym pair.
pub trait ImageScorer: Sync {
    fn score(&self, image: &ImageBuffer, pair: &PromptPair) -> Result<f64>;
}

impl<F> ImageScorer for F
where
    F: Fn(&ImageBuffer, &PromptPair) -> Result<f64> + Sync,
{
    fn score(&self, image: &ImageBuffer, pair: &PromptPair) -> Result<f64> {
        self(image, pair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub attribute: SweepAttribute,
    pub levels: Vec<f64>,
    /// `per_level_scores[l][i]` is image `i` at `levels[l]`.
    pub per_level_scores: Vec<Vec<f64>>,
    /// Absent when fewer than two levels were swept.
    pub level_correlation: Option<f64>,
    pub seed: u64,
    /// Names of the swept images, when the caller supplies them.
    #[serde(default)]
    pub images: Vec<String>,
}

impl SweepReport {
    pub fn mean_scores(&self) -> Vec<f64> {
        self.per_level_scores
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect()
    }
}

/// Per-task seed derived from the sweep seed and the (image, level) cell.
pub fn task_seed(seed: u64, image_index: usize, level_index: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(((image_index as u64) << 32) ^ level_index as u64))
}

/// Degrades every image at every level and scores it with the attribute's
/// registered prompt pair.
pub fn run_sweep<S: ImageScorer + ?Sized>(
    images: &[ImageBuffer],
    spec: &DegradationSpec,
    registry: &PromptRegistry,
    scorer: &S,
    exec: Execution,
) -> Result<SweepReport> {
    if images.is_empty() {
        return Err(Error::Input("sweep needs at least one image".into()));
    }
    let pair = registry.get_pair(spec.attribute.name()).map_err(|e| match e {
        Error::UnknownAttribute { name, .. } => {
            Error::Config(format!("no prompt pair registered for sweep attribute `{name}`"))
        }
        other => other,
    })?;
    let n_img = images.len();
    let cells = exec.map_range(spec.levels.len() * n_img, |k| {
        let (li, ii) = (k / n_img, k % n_img);
        let degraded = spec
            .attribute
            .apply(&images[ii], spec.levels[li], task_seed(spec.seed, ii, li))?;
        scorer.score(&degraded, &pair)
    });
    let mut per_level_scores = vec![Vec::with_capacity(n_img); spec.levels.len()];
    for (k, cell) in cells.into_iter().enumerate() {
        per_level_scores[k / n_img].push(cell?);
    }
    let level_correlation = if spec.levels.len() >= 2 {
        let grouped: Vec<(f64, Vec<f64>)> = spec.levels.iter().copied().zip(per_level_scores.iter().cloned()).collect();
        Some(level_correlation(&grouped)?)
    } else {
        None
    };
    Ok(SweepReport {
        attribute: spec.attribute,
        levels: spec.levels.clone(),
        per_level_scores,
        level_correlation,
        seed: spec.seed,
        images: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gradient(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, |y, x| {
            [x as f32 / w as f32, y as f32 / h as f32, ((x + y) % 7) as f32 / 7.0]
        })
        .unwrap()
    }

    #[test]
    fn identity_levels_are_bit_identical() {
        let img = gradient(17, 23);
        assert_eq!(adjust_brightness(&img, 1.0).unwrap(), img);
        assert_eq!(adjust_noise(&img, 0.0, 9).unwrap(), img);
        assert_eq!(adjust_colorfulness(&img, 1.0).unwrap(), img);
        assert_eq!(adjust_sharpness(&img, 1.0).unwrap(), img);
        for a in SweepAttribute::ALL {
            assert_eq!(a.apply(&img, a.identity_level(), 3).unwrap(), img);
        }
    }

    #[test]
    fn brightness_examples() {
        let img = ImageBuffer::filled(4, 4, [0.25; 3]).unwrap();
        assert!(adjust_brightness(&img, 0.0).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(adjust_brightness(&img, 2.0).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(adjust_brightness(&img, 8.0).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(matches!(adjust_brightness(&img, -0.1), Err(Error::Input(_))));
    }

    #[test]
    fn noise_determinism_and_statistics() {
        let img = ImageBuffer::filled(256, 256, [0.5; 3]).unwrap();
        let a = adjust_noise(&img, 0.05, 42).unwrap();
        assert_eq!(a, adjust_noise(&img, 0.05, 42).unwrap());
        assert_ne!(a, adjust_noise(&img, 0.05, 43).unwrap());
        assert!(matches!(adjust_noise(&img, -1.0, 0), Err(Error::Input(_))));

        // sample std of the pre-clip noise field vs sigma
        let n = gaussian_noise(256 * 256 * 3, 0.05, 42).unwrap();
        let mean = n.iter().map(|&v| v as f64).sum::<f64>() / n.len() as f64;
        let var = n.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n.len() - 1) as f64;
        assert!((var.sqrt() - 0.05).abs() / 0.05 < 0.05, "std {}", var.sqrt());
        // mid-gray with sigma 0.05 essentially never clips, so out - in is the field
        let diff_std = {
            let d: Vec<f64> = a.data().iter().zip(img.data()).map(|(o, i)| (o - i) as f64).collect();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt()
        };
        assert!((diff_std - 0.05).abs() / 0.05 < 0.05);
    }

    #[test]
    fn colorfulness_examples() {
        let img = gradient(8, 8);
        let gray = adjust_colorfulness(&img, 0.0).unwrap();
        for px in gray.data().chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
        // pure red at factor 0.5: gray = 0.299, R = 0.299 + 0.5 * 0.701, G = B = 0.1495
        let red = ImageBuffer::filled(1, 1, [1.0, 0.0, 0.0]).unwrap();
        let half = adjust_colorfulness(&red, 0.5).unwrap();
        let expect = [0.6495f32, 0.1495, 0.1495];
        for (a, b) in half.data().iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-6);
        }
    }

    /// Direct 3x3 convolution with edge replication, written independently of `smooth`.
    fn reference_blur(img: &ImageBuffer) -> Vec<f32> {
        let (h, w) = (img.height() as i64, img.width() as i64);
        let at = |y: i64, x: i64, c: usize| img.pixel(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize)[c];
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut s = 5.0 * at(y, x, c);
                    for (dy, dx) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                        s += at(y + dy, x + dx, c);
                    }
                    out.push(s / 13.0);
                }
            }
        }
        out
    }

    #[test]
    fn sharpness_examples() {
        let img = gradient(9, 11);
        let blurred = adjust_sharpness(&img, 0.0).unwrap();
        for (a, b) in blurred.data().iter().zip(reference_blur(&img)) {
            assert_relative_eq!(*a, b, epsilon = 1e-6);
        }
        let flat = ImageBuffer::filled(6, 6, [0.3, 0.6, 0.9]).unwrap();
        for f in [0.0, 0.5, 2.0, 5.0] {
            let out = adjust_sharpness(&flat, f).unwrap();
            for (a, b) in out.data().iter().zip(flat.data()) {
                assert_relative_eq!(*a, *b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn outputs_stay_in_range_with_same_shape() {
        let img = gradient(12, 10);
        for a in SweepAttribute::ALL {
            for &l in &a.default_levels() {
                let out = a.apply(&img, l, 1).unwrap();
                assert_eq!((out.height(), out.width()), (12, 10));
                assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    fn mean_scorer(img: &ImageBuffer, _: &PromptPair) -> Result<f64> {
        Ok(img.mean())
    }

    #[test]
    fn sweep_identity_level_equals_original_score() {
        let img = gradient(8, 8);
        let spec = DegradationSpec::new(SweepAttribute::Brightness, vec![1.0], 0).unwrap();
        let rep = run_sweep(std::slice::from_ref(&img), &spec, &PromptRegistry::builtin(), &mean_scorer, Execution::Sequential).unwrap();
        assert_eq!(rep.per_level_scores, vec![vec![img.mean()]]);
        assert_eq!(rep.level_correlation, None);
    }

    #[test]
    fn monotone_mock_sweep_has_unit_correlation() {
        let imgs: Vec<_> = (0..4).map(|i| ImageBuffer::filled(6, 6, [0.1 + 0.05 * i as f32; 3]).unwrap()).collect();
        let spec = DegradationSpec::new(SweepAttribute::Brightness, vec![0.2, 0.5, 1.0, 1.5, 2.0], 0).unwrap();
        let rep = run_sweep(&imgs, &spec, &PromptRegistry::builtin(), &mean_scorer, Execution::Parallel).unwrap();
        assert_eq!(rep.level_correlation, Some(1.0));
        assert_eq!(rep.per_level_scores.len(), 5);
        assert!(rep.per_level_scores.iter().all(|s| s.len() == 4));
    }

    #[test]
    fn sweep_is_identical_across_execution_strategies() {
        let imgs: Vec<_> = (0..3).map(|i| gradient(10 + i, 9)).collect();
        let spec = DegradationSpec::with_default_levels(SweepAttribute::Noisiness, 5);
        let reg = PromptRegistry::builtin();
        let a = run_sweep(&imgs, &spec, &reg, &mean_scorer, Execution::Sequential).unwrap();
        let b = run_sweep(&imgs, &spec, &reg, &mean_scorer, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_errors() {
        let img = gradient(4, 4);
        let spec = DegradationSpec::new(SweepAttribute::Sharpness, vec![0.5, 1.0], 0).unwrap();
        assert!(matches!(
            run_sweep(&[], &spec, &PromptRegistry::builtin(), &mean_scorer, Execution::Sequential),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            run_sweep(&[img], &spec, &PromptRegistry::empty(), &mean_scorer, Execution::Sequential),
            Err(Error::Config(_))
        ));
        assert!(DegradationSpec::new(SweepAttribute::Sharpness, vec![1.0, 0.5], 0).is_err());
        assert!(matches!(SweepAttribute::parse("contrast"), Err(Error::Config(_))));
        assert!(SweepAttribute::Noisiness.apply(&gradient(2, 2), 0.1, 0).is_err());
    }
}
