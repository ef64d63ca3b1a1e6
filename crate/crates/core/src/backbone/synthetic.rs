//! Small randomly initialised checkpoints with the real tensor layout.
//!
//! They exercise the full load/embed path in tests and benches without
//! pretrained weights. Scores they produce carry no perceptual meaning.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::archive::{Tensor, TensorArchive};
use super::card::ModelCard;
use super::tokenizer::{merges_for_words, Tokenizer, CONTEXT_LENGTH};
use super::{install_model, BackboneConfig, PosEmbeddingMode, Variant};
use crate::error::Result;
use crate::prompts::PromptRegistry;

/// CLIP preprocessing constants, used for every synthetic card.
pub const CLIP_MEAN: [f64; 3] = [0.48145466, 0.4578275, 0.40821073];
pub const CLIP_STD: [f64; 3] = [0.26862954, 0.26130258, 0.27577711];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub variant: Variant,
    /// Residual: stem width (output channels are `32 * width`).
    /// Patch: transformer width.
    pub vision_width: usize,
    pub vision_layers: usize,
    pub vision_heads: usize,
    pub patch_size: usize,
    pub text_width: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub embed_dim: usize,
    pub native_input_size: usize,
    pub seed: u64,
    /// Words given dedicated merges in the vocabulary.
    pub words: Vec<String>,
}

pub struct SyntheticModel {
    pub archive: TensorArchive,
    pub card: ModelCard,
    pub merges: String,
}

/// Every word appearing in the builtin registry, plus template words.
pub fn registry_words() -> Vec<String> {
    let mut words: Vec<String> = ["photo", "a", "of", "there", "is", "in", "the"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for e in PromptRegistry::builtin().entries() {
        for w in e.positive.split_whitespace().chain(e.negative.split_whitespace()) {
            let w = w.to_lowercase();
            if !words.contains(&w) {
                words.push(w);
            }
        }
    }
    for (p, n) in ["good/bad", "high quality/low quality", "high definition/low definition"]
        .iter()
        .map(|s| s.split_once('/').expect("literal"))
    {
        for w in p.split_whitespace().chain(n.split_whitespace()) {
            if !words.contains(&w.to_string()) {
                words.push(w.to_string());
            }
        }
    }
    words
}

impl SyntheticSpec {
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            vision_width: match variant {
                Variant::ResidualAttnPool => 4,
                Variant::PatchTransformer => 16,
            },
            vision_layers: 2,
            vision_heads: match variant {
                Variant::ResidualAttnPool => 4,
                Variant::PatchTransformer => 2,
            },
            patch_size: 32,
            text_width: 16,
            text_layers: 2,
            text_heads: 2,
            embed_dim: 16,
            native_input_size: 224,
            seed: 7,
            words: registry_words(),
        }
    }

    pub fn build(&self) -> SyntheticModel {
        let mut g = Gen::new(self.seed);
        let mut a = TensorArchive::new();
        match self.variant {
            Variant::ResidualAttnPool => self.residual(&mut g, &mut a),
            Variant::PatchTransformer => self.patch(&mut g, &mut a),
        }
        let merges = merges_for_words(self.words.iter().map(String::as_str));
        let vocab = Tokenizer::from_merges(&merges, CONTEXT_LENGTH)
            .expect("generated merges are valid")
            .vocab_size();
        self.text(&mut g, &mut a, vocab);
        let card = ModelCard {
            variant: self.variant,
            embed_dim: self.embed_dim,
            native_input_size: self.native_input_size,
            vision_heads: self.vision_heads,
            text_heads: self.text_heads,
            context_length: CONTEXT_LENGTH,
            mean: CLIP_MEAN,
            std: CLIP_STD,
        };
        SyntheticModel { archive: a, card, merges }
    }

    fn residual(&self, g: &mut Gen, a: &mut TensorArchive) {
        let w = self.vision_width;
        let half = (w / 2).max(1);
        g.conv(a, "visual.conv1", 3, half, 3);
        g.bn(a, "visual.bn1", half);
        g.conv(a, "visual.conv2", half, half, 3);
        g.bn(a, "visual.bn2", half);
        g.conv(a, "visual.conv3", half, w, 3);
        g.bn(a, "visual.bn3", w);
        let mut inplanes = w;
        for (li, mult) in [1usize, 2, 4, 8].into_iter().enumerate() {
            let planes = w * mult;
            for bi in 0..self.vision_layers.max(1) {
                let p = format!("visual.layer{}.{bi}", li + 1);
                g.conv(a, &format!("{p}.conv1"), inplanes, planes, 1);
                g.bn(a, &format!("{p}.bn1"), planes);
                g.conv(a, &format!("{p}.conv2"), planes, planes, 3);
                g.bn(a, &format!("{p}.bn2"), planes);
                g.conv(a, &format!("{p}.conv3"), planes, planes * 4, 1);
                g.bn(a, &format!("{p}.bn3"), planes * 4);
                let stride = if bi == 0 && li > 0 { 2 } else { 1 };
                if stride > 1 || inplanes != planes * 4 {
                    g.conv(a, &format!("{p}.downsample.0"), inplanes, planes * 4, 1);
                    g.bn(a, &format!("{p}.downsample.1"), planes * 4);
                }
                inplanes = planes * 4;
            }
        }
        let c = inplanes;
        let grid = self.native_input_size / super::resnet::DOWNSAMPLE;
        g.normal(a, "visual.attnpool.positional_embedding", &[grid * grid + 1, c], 1.0 / (c as f64).sqrt());
        for name in ["q_proj", "k_proj", "v_proj"] {
            g.linear(a, &format!("visual.attnpool.{name}"), c, c);
        }
        g.linear(a, "visual.attnpool.c_proj", c, self.embed_dim);
    }

    fn patch(&self, g: &mut Gen, a: &mut TensorArchive) {
        let (w, p) = (self.vision_width, self.patch_size);
        let std = 1.0 / ((3 * p * p) as f64).sqrt();
        g.normal(a, "visual.conv1.weight", &[w, 3, p, p], std);
        let grid = self.native_input_size / p;
        g.normal(a, "visual.class_embedding", &[w], 0.5);
        g.normal(a, "visual.positional_embedding", &[grid * grid + 1, w], 0.5);
        g.layer_norm(a, "visual.ln_pre", w);
        for i in 0..self.vision_layers {
            g.block(a, &format!("visual.transformer.resblocks.{i}"), w);
        }
        g.layer_norm(a, "visual.ln_post", w);
        g.normal(a, "visual.proj", &[w, self.embed_dim], 1.0 / (w as f64).sqrt());
    }

    fn text(&self, g: &mut Gen, a: &mut TensorArchive, vocab: usize) {
        let w = self.text_width;
        g.normal(a, "token_embedding.weight", &[vocab, w], 0.5);
        g.normal(a, "positional_embedding", &[CONTEXT_LENGTH, w], 0.1);
        for i in 0..self.text_layers {
            g.block(a, &format!("transformer.resblocks.{i}"), w);
        }
        g.layer_norm(a, "ln_final", w);
        g.normal(a, "text_projection", &[w, self.embed_dim], 1.0 / (w as f64).sqrt());
    }
}

impl SyntheticModel {
    pub fn install(&self, dir: &Path, mode: PosEmbeddingMode) -> Result<BackboneConfig> {
        let stem = match self.card.variant {
            Variant::ResidualAttnPool => "synthetic-rn",
            Variant::PatchTransformer => "synthetic-vit",
        };
        install_model(dir, stem, &self.archive, &self.card, &self.merges, mode)
    }
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self, a: &mut TensorArchive, name: &str, shape: &[usize], std: f64) {
        let n: usize = shape.iter().product();
        let d = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| d.sample(&mut self.rng) as f32).collect();
        a.insert(name, Tensor::new(shape.to_vec(), data).expect("sized"));
    }

    fn uniform(&mut self, a: &mut TensorArchive, name: &str, n: usize, lo: f32, hi: f32) {
        use rand::Rng;
        let data = (0..n).map(|_| self.rng.random_range(lo..hi)).collect();
        a.insert(name, Tensor::new(vec![n], data).expect("sized"));
    }

    fn conv(&mut self, a: &mut TensorArchive, prefix: &str, cin: usize, cout: usize, k: usize) {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        self.normal(a, &format!("{prefix}.weight"), &[cout, cin, k, k], std);
    }

    fn bn(&mut self, a: &mut TensorArchive, prefix: &str, n: usize) {
        self.uniform(a, &format!("{prefix}.weight"), n, 0.5, 1.5);
        self.uniform(a, &format!("{prefix}.bias"), n, -0.1, 0.1);
        self.uniform(a, &format!("{prefix}.running_mean"), n, -0.1, 0.1);
        self.uniform(a, &format!("{prefix}.running_var"), n, 0.5, 1.5);
    }

    fn linear(&mut self, a: &mut TensorArchive, prefix: &str, cin: usize, cout: usize) {
        self.normal(a, &format!("{prefix}.weight"), &[cout, cin], 1.0 / (cin as f64).sqrt());
        self.normal(a, &format!("{prefix}.bias"), &[cout], 0.02);
    }

    fn layer_norm(&mut self, a: &mut TensorArchive, prefix: &str, n: usize) {
        self.uniform(a, &format!("{prefix}.weight"), n, 0.8, 1.2);
        self.uniform(a, &format!("{prefix}.bias"), n, -0.1, 0.1);
    }

    fn block(&mut self, a: &mut TensorArchive, prefix: &str, w: usize) {
        self.layer_norm(a, &format!("{prefix}.ln_1"), w);
        let std = 1.0 / (w as f64).sqrt();
        self.normal(a, &format!("{prefix}.attn.in_proj_weight"), &[3 * w, w], std);
        self.normal(a, &format!("{prefix}.attn.in_proj_bias"), &[3 * w], 0.02);
        self.linear(a, &format!("{prefix}.attn.out_proj"), w, w);
        self.layer_norm(a, &format!("{prefix}.ln_2"), w);
        self.linear(a, &format!("{prefix}.mlp.c_fc"), w, 4 * w);
        self.linear(a, &format!("{prefix}.mlp.c_proj"), 4 * w, w);
    }
}
