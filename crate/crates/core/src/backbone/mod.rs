//! Frozen vision-language backbone: checkpoint loading, positional-embedding
//! surgery, and image/text embedding.
//!
//! Everything downstream talks to the [`Encoder`] trait, so a table-driven
//! [`MockEncoder`] can stand in for real weights.

pub mod archive;
pub mod card;
mod mock;
pub(crate) mod nn;
pub mod resnet;
pub mod surgery;
pub mod synthetic;
pub mod text;
pub mod tokenizer;
pub mod vit;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use archive::{Tensor, TensorArchive};
pub use card::ModelCard;
pub use mock::MockEncoder;
pub use surgery::{apply_positional_surgery, PosEmbeddingMode};
pub use text::TextEncoder;
pub use tokenizer::{TokenSequence, Tokenizer};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::prompts::PromptPair;
use crate::scoring::{Embedding, TextEmbeddingProvider};
use nn::Weights;
use resnet::ResNetEncoder;
use vit::VitEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "residual-attnpool")]
    ResidualAttnPool,
    #[serde(rename = "patch-transformer")]
    PatchTransformer,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::ResidualAttnPool => "residual-attnpool",
            Variant::PatchTransformer => "patch-transformer",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residual-attnpool" | "resnet" | "rn50" => Ok(Variant::ResidualAttnPool),
            "patch-transformer" | "vit" => Ok(Variant::PatchTransformer),
            other => Err(Error::Config(format!(
                "unknown backbone variant `{other}` (expected residual-attnpool or patch-transformer)"
            ))),
        }
    }
}

/// Smallest side accepted by the residual encoder (its total downsampling).
pub const MIN_SIDE: usize = resnet::DOWNSAMPLE;

/// Default removed/interpolated-mode pixel budget.
pub const DEFAULT_MAX_PIXELS: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: Variant,
    pub pos_embedding_mode: PosEmbeddingMode,
    pub native_input_size: usize,
    pub checkpoint_path: PathBuf,
    pub vocab_path: PathBuf,
    /// Defaults to the checkpoint path with a `.toml` extension.
    #[serde(default)]
    pub model_card_path: Option<PathBuf>,
    #[serde(default = "default_max_pixels")]
    pub max_pixels: usize,
}

fn default_max_pixels() -> usize {
    DEFAULT_MAX_PIXELS
}

impl BackboneConfig {
    pub fn new(variant: Variant, mode: PosEmbeddingMode, checkpoint: impl Into<PathBuf>, vocab: impl Into<PathBuf>) -> Self {
        Self {
            variant,
            pos_embedding_mode: mode,
            native_input_size: 224,
            checkpoint_path: checkpoint.into(),
            vocab_path: vocab.into(),
            model_card_path: None,
            max_pixels: DEFAULT_MAX_PIXELS,
        }
    }

    pub fn card_path(&self) -> PathBuf {
        self.model_card_path
            .clone()
            .unwrap_or_else(|| self.checkpoint_path.with_extension("toml"))
    }

    pub fn with_mode(&self, mode: PosEmbeddingMode) -> Self {
        Self {
            pos_embedding_mode: mode,
            ..self.clone()
        }
    }
}

/// Size policy an encoder imposes on its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputPolicy {
    /// Square input of exactly this side; callers resize/crop first.
    Exact { size: usize },
    /// Any size with both sides at least `min_side` and at most `max_pixels` pixels.
    Flexible { min_side: usize, max_pixels: usize },
}

impl InputPolicy {
    pub fn check(&self, height: usize, width: usize) -> Result<()> {
        match *self {
            InputPolicy::Exact { size } if (height, width) != (size, size) => Err(Error::Input(format!(
                "this backbone needs {size}x{size} inputs, got {height}x{width}; \
                 resize and center-crop first (ImageBuffer::resize_center_crop)"
            ))),
            InputPolicy::Flexible { min_side, .. } if height.min(width) < min_side => Err(Error::Input(format!(
                "image {height}x{width} is smaller than the minimum side of {min_side}"
            ))),
            InputPolicy::Flexible { max_pixels, .. } if height * width > max_pixels => Err(Error::Input(format!(
                "image {height}x{width} has {} pixels, over the budget of {max_pixels}; \
                 downscale it or raise max_pixels",
                height * width
            ))),
            _ => Ok(()),
        }
    }

    /// Brings an arbitrary image into policy: exact policies resize the
    /// shorter side and center-crop; flexible policies only downscale images
    /// over the pixel budget.
    pub fn prepare(&self, image: &ImageBuffer) -> Result<ImageBuffer> {
        match *self {
            InputPolicy::Exact { size } => {
                if (image.height(), image.width()) == (size, size) {
                    Ok(image.clone())
                } else {
                    image.resize_center_crop(size)
                }
            }
            InputPolicy::Flexible { max_pixels, .. } => {
                let px = image.height() * image.width();
                if px <= max_pixels {
                    return Ok(image.clone());
                }
                let f = (max_pixels as f64 / px as f64).sqrt();
                let h = ((image.height() as f64 * f).floor() as usize).max(1);
                let w = ((image.width() as f64 * f).floor() as usize).max(1);
                image.resize(h, w)
            }
        }
    }
}

/// Anything that maps images and prompt texts into a shared embedding space.
pub trait Encoder: Sync {
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding>;
    fn embed_text(&self, text: &str) -> Result<Embedding>;
    /// Stable identifier of the weights and preprocessing; part of cache keys.
    fn fingerprint(&self) -> String;
    fn input_policy(&self) -> InputPolicy;

    /// Text tower usable for prompt tuning, if the encoder has one.
    fn text_tower(&self) -> Option<TextTower<'_>> {
        None
    }

    fn pair_embeddings(&self, pair: &PromptPair) -> Result<(Embedding, Embedding)> {
        Ok((self.embed_text(&pair.positive_text)?, self.embed_text(&pair.negative_text)?))
    }
}

impl TextEmbeddingProvider for dyn Encoder + '_ {
    fn pair_embeddings(&self, pair: &PromptPair) -> Result<(Embedding, Embedding)> {
        Encoder::pair_embeddings(self, pair)
    }
}

/// Borrowed text encoder plus tokenizer: what prompt tuning needs.
#[derive(Clone, Copy)]
pub struct TextTower<'a> {
    pub encoder: &'a TextEncoder,
    pub tokenizer: &'a Tokenizer,
}

impl TextTower<'_> {
    /// Token-embedding rows of `text` without start/end tokens.
    pub fn prompt_rows(&self, text: &str) -> Result<ndarray::Array2<f64>> {
        let seq = self.tokenizer.tokenize(text)?;
        self.encoder.lookup(seq.content())
    }

    /// `[start; rows; end]`, the input the encoder sees for a learnable prompt.
    pub fn wrap(&self, rows: ndarray::ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
        let start = self.encoder.lookup(&[self.tokenizer.start_id()])?;
        let end = self.encoder.lookup(&[self.tokenizer.end_id()])?;
        ndarray::concatenate(ndarray::Axis(0), &[start.view(), rows, end.view()])
            .map_err(|e| Error::Contract(format!("context width mismatch: {e}")))
    }
}

#[derive(Debug)]
enum ImageTower {
    Residual(ResNetEncoder),
    Patch(VitEncoder),
}

/// Loaded, immutable model handle.
#[derive(Debug)]
pub struct Backbone {
    config: BackboneConfig,
    card: ModelCard,
    image: ImageTower,
    text: TextEncoder,
    tokenizer: Tokenizer,
    fingerprint: String,
    degraded_accuracy: bool,
}

/// Tensor-name patterns a checkpoint of `variant` must provide.
pub fn expected_tensor_manifest(variant: Variant) -> Vec<&'static str> {
    let mut names = match variant {
        Variant::ResidualAttnPool => vec![
            "visual.conv{1,2,3}.weight",
            "visual.bn{1,2,3}.{weight,bias,running_mean,running_var}",
            "visual.layer{1..4}.{i}.conv{1,2,3}.weight",
            "visual.layer{1..4}.{i}.bn{1,2,3}.{weight,bias,running_mean,running_var}",
            "visual.layer{1..4}.0.downsample.0.weight (when shape changes)",
            "visual.layer{1..4}.0.downsample.1.{weight,bias,running_mean,running_var}",
            "visual.attnpool.positional_embedding",
            "visual.attnpool.{q,k,v,c}_proj.{weight,bias}",
        ],
        Variant::PatchTransformer => vec![
            "visual.conv1.weight",
            "visual.class_embedding",
            "visual.positional_embedding",
            "visual.ln_pre.{weight,bias}",
            "visual.transformer.resblocks.{i}.ln_{1,2}.{weight,bias}",
            "visual.transformer.resblocks.{i}.attn.{in_proj_weight,in_proj_bias,out_proj.weight,out_proj.bias}",
            "visual.transformer.resblocks.{i}.mlp.{c_fc,c_proj}.{weight,bias}",
            "visual.ln_post.{weight,bias}",
            "visual.proj",
        ],
    };
    names.extend([
        "token_embedding.weight",
        "positional_embedding",
        "transformer.resblocks.{i}.ln_{1,2}.{weight,bias}",
        "transformer.resblocks.{i}.attn.{in_proj_weight,in_proj_bias,out_proj.weight,out_proj.bias}",
        "transformer.resblocks.{i}.mlp.{c_fc,c_proj}.{weight,bias}",
        "ln_final.{weight,bias}",
        "text_projection",
    ]);
    names
}

fn manifest_message(variant: Variant, problem: &str) -> String {
    format!(
        "{problem}; a {variant} checkpoint must contain:\n    {}",
        expected_tensor_manifest(variant).join("\n    ")
    )
}

fn detect_variant(archive: &TensorArchive) -> Option<Variant> {
    if archive.names().any(|n| n.starts_with("visual.attnpool.")) {
        Some(Variant::ResidualAttnPool)
    } else if archive.contains("visual.class_embedding") {
        Some(Variant::PatchTransformer)
    } else {
        None
    }
}

pub fn load_backbone(config: &BackboneConfig) -> Result<Backbone> {
    let variant = config.variant;
    let ckpt = &config.checkpoint_path;
    if !ckpt.is_file() {
        return Err(Error::asset(ckpt, manifest_message(variant, "checkpoint file not found")));
    }
    let bytes = std::fs::read(ckpt).map_err(|e| Error::io(ckpt, e))?;
    let archive = TensorArchive::from_bytes(&bytes)
        .map_err(|m| Error::asset(ckpt, manifest_message(variant, &format!("corrupt checkpoint ({m})"))))?;
    drop(bytes);

    let card_path = config.card_path();
    let card = ModelCard::load(&card_path)?;
    if card.variant != variant {
        return Err(Error::Config(format!(
            "config declares {variant} but the model card at {} describes {}",
            card_path.display(),
            card.variant
        )));
    }
    match detect_variant(&archive) {
        Some(found) if found != variant => {
            return Err(Error::Config(format!(
                "config declares {variant} but the checkpoint holds {found} weights"
            )))
        }
        None => {
            return Err(Error::asset(ckpt, manifest_message(variant, "no image-encoder tensors found")));
        }
        _ => {}
    }
    if card.native_input_size != config.native_input_size {
        return Err(Error::Config(format!(
            "config native_input_size {} disagrees with the model card ({})",
            config.native_input_size, card.native_input_size
        )));
    }
    let tokenizer = Tokenizer::load(&config.vocab_path)?;
    if tokenizer.context_length() != card.context_length {
        return Err(Error::Config(format!(
            "tokenizer context {} differs from model card context {}",
            tokenizer.context_length(),
            card.context_length
        )));
    }

    let mode = config.pos_embedding_mode;
    let archive_digest = archive.digest();
    let archive = apply_positional_surgery(archive, variant, mode)
        .map_err(|e| Error::asset(ckpt, manifest_message(variant, &e.to_string())))?;
    let as_asset = |e: Error| match e {
        Error::Config(m) if m.contains("missing tensor") => Error::asset(ckpt, manifest_message(variant, &m)),
        other => other,
    };
    let w = Weights::new(&archive);
    let image = match variant {
        Variant::ResidualAttnPool => {
            ImageTower::Residual(ResNetEncoder::load(&w, card.vision_heads, card.native_input_size, mode).map_err(as_asset)?)
        }
        Variant::PatchTransformer => {
            ImageTower::Patch(VitEncoder::load(&w, card.vision_heads, card.native_input_size, mode).map_err(as_asset)?)
        }
    };
    let text = TextEncoder::load(&w, card.text_heads).map_err(as_asset)?;
    drop(archive);

    let image_dim = match &image {
        ImageTower::Residual(e) => e.output_dim(),
        ImageTower::Patch(e) => e.output_dim(),
    };
    if image_dim != card.embed_dim || text.output_dim() != card.embed_dim {
        return Err(Error::Config(format!(
            "embedding dims disagree: image {image_dim}, text {}, model card {}",
            text.output_dim(),
            card.embed_dim
        )));
    }
    if text.vocab_size() != tokenizer.vocab_size() {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the text embedding table has {} rows",
            tokenizer.vocab_size(),
            text.vocab_size()
        )));
    }

    let degraded_accuracy = variant == Variant::PatchTransformer && mode == PosEmbeddingMode::Removed;
    if degraded_accuracy {
        log::warn!("patch-transformer without positional embedding is known to score poorly; use it for ablations only");
    }

    let vocab_bytes = std::fs::read(&config.vocab_path).map_err(|e| Error::io(&config.vocab_path, e))?;
    let mut h = Sha256::new();
    h.update(b"lookfeel-backbone/1\0");
    h.update(archive_digest.as_bytes());
    h.update(Sha256::digest(&vocab_bytes));
    h.update(card.to_toml().as_bytes());
    h.update(format!("{variant}/{mode}/{}", config.max_pixels).as_bytes());
    let fingerprint = hex::encode(h.finalize());

    Ok(Backbone {
        config: config.clone(),
        card,
        image,
        text,
        tokenizer,
        fingerprint,
        degraded_accuracy,
    })
}

impl Backbone {
    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn card(&self) -> &ModelCard {
        &self.card
    }

    pub fn embed_dim(&self) -> usize {
        self.card.embed_dim
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    /// Set for configurations that load but are known to score poorly.
    pub fn degraded_accuracy(&self) -> bool {
        self.degraded_accuracy
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.tokenizer.tokenize(text)
    }

    pub fn embed_tokens(&self, tokens: &TokenSequence) -> Result<Embedding> {
        Embedding::new(self.text.encode_tokens(tokens)?)
    }

    /// SHA-256 over every parameter the encoders hold after load.
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |xs: &[f64]| {
            for v in xs {
                h.update(v.to_le_bytes());
            }
        };
        match &self.image {
            ImageTower::Residual(e) => e.visit_params(&mut feed),
            ImageTower::Patch(e) => e.visit_params(&mut feed),
        }
        self.text.visit_params(&mut feed);
        hex::encode(h.finalize())
    }

    /// Channel-normalized `(3, H, W)` tensor.
    fn normalize(&self, image: &ImageBuffer) -> Array3<f64> {
        let (hgt, wid) = (image.height(), image.width());
        let data = image.data();
        let mut x = Array3::zeros((3, hgt, wid));
        for c in 0..3 {
            let (m, s) = (self.card.mean[c], self.card.std[c]);
            for y in 0..hgt {
                for xx in 0..wid {
                    x[[c, y, xx]] = (data[(y * wid + xx) * 3 + c] as f64 - m) / s;
                }
            }
        }
        x
    }
}

impl Encoder for Backbone {
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding> {
        self.input_policy().check(image.height(), image.width())?;
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("pixel values must lie in [0, 1]".into()));
        }
        let x = self.normalize(image);
        let v = match &self.image {
            ImageTower::Residual(e) => e.forward(&x)?,
            ImageTower::Patch(e) => e.forward(&x)?,
        };
        Embedding::new(v)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.embed_tokens(&self.tokenize(text)?)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn input_policy(&self) -> InputPolicy {
        match self.config.pos_embedding_mode {
            PosEmbeddingMode::Vanilla => InputPolicy::Exact {
                size: self.card.native_input_size,
            },
            _ => InputPolicy::Flexible {
                min_side: match &self.image {
                    ImageTower::Residual(_) => MIN_SIDE,
                    ImageTower::Patch(e) => e.patch_size(),
                },
                max_pixels: self.config.max_pixels,
            },
        }
    }

    fn text_tower(&self) -> Option<TextTower<'_>> {
        Some(TextTower {
            encoder: &self.text,
            tokenizer: &self.tokenizer,
        })
    }
}

/// Writes `archive`, its model card and a vocabulary next to each other and
/// returns a matching config. Convenient for converted or synthetic models.
pub fn install_model(
    dir: &Path,
    stem: &str,
    archive: &TensorArchive,
    card: &ModelCard,
    merges: &str,
    mode: PosEmbeddingMode,
) -> Result<BackboneConfig> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = dir.join(format!("{stem}.lfta"));
    archive.save(&ckpt)?;
    card.save(ckpt.with_extension("toml"))?;
    let vocab = dir.join(format!("{stem}.vocab.txt"));
    std::fs::write(&vocab, merges).map_err(|e| Error::io(&vocab, e))?;
    Ok(BackboneConfig {
        native_input_size: card.native_input_size,
        ..BackboneConfig::new(card.variant, mode, ckpt, vocab)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::synthetic::SyntheticSpec;

    fn tiny(variant: Variant, mode: PosEmbeddingMode) -> (tempfile::TempDir, Backbone) {
        let dir = tempfile::tempdir().unwrap();
        let model = SyntheticSpec::tiny(variant).build();
        let cfg = model.install(dir.path(), mode).unwrap();
        let bb = load_backbone(&cfg).unwrap();
        (dir, bb)
    }

    fn test_image(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, |y, x| {
            let fy = y as f32 / h as f32;
            let fx = x as f32 / w as f32;
            [fy, fx, 0.5 * (fx + fy)]
        })
        .unwrap()
    }

    #[test]
    fn variant_and_mode_parse() {
        assert_eq!("residual-attnpool".parse::<Variant>().unwrap(), Variant::ResidualAttnPool);
        assert!(matches!("cnn".parse::<Variant>(), Err(Error::Config(_))));
        assert!(matches!("bicubic".parse::<PosEmbeddingMode>(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_checkpoint_lists_manifest() {
        let cfg = BackboneConfig::new(Variant::ResidualAttnPool, PosEmbeddingMode::Removed, "/nope.lfta", "/nope.txt");
        let err = load_backbone(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Asset { .. }));
        assert!(msg.contains("visual.attnpool.positional_embedding"), "{msg}");
        assert!(msg.contains("text_projection"));
    }

    #[test]
    fn corrupt_checkpoint_is_asset_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = SyntheticSpec::tiny(Variant::ResidualAttnPool).build();
        let cfg = model.install(dir.path(), PosEmbeddingMode::Removed).unwrap();
        let mut bytes = std::fs::read(&cfg.checkpoint_path).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&cfg.checkpoint_path, bytes).unwrap();
        assert!(matches!(load_backbone(&cfg), Err(Error::Asset { .. })));
    }

    #[test]
    fn variant_mismatch_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = SyntheticSpec::tiny(Variant::ResidualAttnPool).build();
        let mut cfg = model.install(dir.path(), PosEmbeddingMode::Removed).unwrap();
        cfg.variant = Variant::PatchTransformer;
        assert!(matches!(load_backbone(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn removed_mode_accepts_any_size() {
        let (_d, bb) = tiny(Variant::ResidualAttnPool, PosEmbeddingMode::Removed);
        let a = bb.embed_image(&test_image(384 / 4, 512 / 4)).unwrap();
        let b = bb.embed_image(&test_image(56, 56)).unwrap();
        let c = bb.embed_image(&test_image(32, 45)).unwrap();
        assert_eq!(a.dim(), bb.embed_dim());
        assert_eq!(b.dim(), c.dim());
        assert!(matches!(bb.embed_image(&test_image(31, 64)), Err(Error::Input(_))));
    }

    #[test]
    fn vanilla_requires_native_size() {
        let (_d, bb) = tiny(Variant::ResidualAttnPool, PosEmbeddingMode::Vanilla);
        let n = bb.card().native_input_size;
        assert!(bb.embed_image(&test_image(n, n)).is_ok());
        let err = bb.embed_image(&test_image(n, n + 32)).unwrap_err();
        assert!(matches!(err, Error::Input(ref m) if m.contains("resize")));
    }

    #[test]
    fn max_pixel_budget_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let model = SyntheticSpec::tiny(Variant::ResidualAttnPool).build();
        let mut cfg = model.install(dir.path(), PosEmbeddingMode::Removed).unwrap();
        cfg.max_pixels = 64 * 64;
        let bb = load_backbone(&cfg).unwrap();
        assert!(bb.embed_image(&test_image(64, 64)).is_ok());
        assert!(matches!(bb.embed_image(&test_image(65, 64)), Err(Error::Input(_))));
    }

    #[test]
    fn interpolated_equals_vanilla_at_native_size() {
        for variant in [Variant::ResidualAttnPool, Variant::PatchTransformer] {
            let (_d1, van) = tiny(variant, PosEmbeddingMode::Vanilla);
            let (_d2, interp) = tiny(variant, PosEmbeddingMode::Interpolated);
            let n = van.card().native_input_size;
            let img = test_image(n, n);
            let a = van.embed_image(&img).unwrap();
            let b = interp.embed_image(&img).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-6);
            }
            // off-native sizes work only when interpolating
            assert!(interp.embed_image(&test_image(n + 32, n)).is_ok());
        }
    }

    #[test]
    fn embeddings_are_deterministic_and_weights_frozen() {
        let (_d, bb) = tiny(Variant::ResidualAttnPool, PosEmbeddingMode::Removed);
        let before = bb.weights_digest();
        let img = test_image(64, 96);
        let a = bb.embed_image(&img).unwrap();
        let b = bb.embed_image(&img).unwrap();
        assert_eq!(a, b);
        let t1 = bb.embed_text("Good photo.").unwrap();
        let t2 = bb.embed_text("Good photo.").unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.dim(), a.dim());
        assert_ne!(t1, bb.embed_text("Bad photo.").unwrap());
        assert_eq!(before, bb.weights_digest());
    }

    #[test]
    fn patch_transformer_removed_is_flagged() {
        let (_d, bb) = tiny(Variant::PatchTransformer, PosEmbeddingMode::Removed);
        assert!(bb.degraded_accuracy());
        let (_d, bb) = tiny(Variant::ResidualAttnPool, PosEmbeddingMode::Removed);
        assert!(!bb.degraded_accuracy());
    }

    #[test]
    fn over_length_text_is_input_error() {
        let (_d, bb) = tiny(Variant::ResidualAttnPool, PosEmbeddingMode::Removed);
        let long = vec!["good"; 100].join(" ");
        assert!(matches!(bb.embed_text(&long), Err(Error::Input(_))));
    }

    #[test]
    fn prepare_brings_images_into_policy() {
        let p = InputPolicy::Exact { size: 64 };
        let img = p.prepare(&test_image(80, 120)).unwrap();
        assert!(p.check(img.height(), img.width()).is_ok());
        let p = InputPolicy::Flexible { min_side: 32, max_pixels: 100 * 100 };
        let img = p.prepare(&test_image(200, 300)).unwrap();
        assert!(p.check(img.height(), img.width()).is_ok());
    }
}
