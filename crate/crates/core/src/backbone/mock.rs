//! Table-driven stand-in for a real backbone.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{Encoder, InputPolicy};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::prompts::PromptPair;
use crate::scoring::Embedding;

type ImageFn = Arc<dyn Fn(&ImageBuffer) -> Result<Embedding> + Send + Sync>;

/// Deterministic encoder backed by lookup tables.
///
/// Images are resolved by content hash first, then by the optional image
/// function. Texts must be registered explicitly.
#[derive(Clone)]
pub struct MockEncoder {
    name: String,
    images: HashMap<String, Embedding>,
    image_fn: Option<ImageFn>,
    texts: BTreeMap<String, Embedding>,
    policy: InputPolicy,
}

impl std::fmt::Debug for MockEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockEncoder")
            .field("name", &self.name)
            .field("images", &self.images.len())
            .field("texts", &self.texts.len())
            .finish()
    }
}

impl MockEncoder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            images: HashMap::new(),
            image_fn: None,
            texts: BTreeMap::new(),
            policy: InputPolicy::Flexible {
                min_side: 1,
                max_pixels: usize::MAX,
            },
        }
    }

    pub fn with_text(mut self, text: impl Into<String>, embedding: Embedding) -> Self {
        self.texts.insert(text.into(), embedding);
        self
    }

    pub fn with_image(mut self, image: &ImageBuffer, embedding: Embedding) -> Self {
        self.images.insert(image.content_hash(), embedding);
        self
    }

    pub fn with_image_fn(mut self, f: impl Fn(&ImageBuffer) -> Result<Embedding> + Send + Sync + 'static) -> Self {
        self.image_fn = Some(Arc::new(f));
        self
    }

    pub fn with_policy(mut self, policy: InputPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Two-dimensional probe: every positive prompt of `pairs` embeds to
    /// `[1, 0]`, every negative to `[0, 1]`, and an image with feature value
    /// `v` (clamped to `[0, 1]`) to `[cos t, sin t]` with `t = (1 - v) pi / 2`.
    /// The pair score is then strictly increasing in `v`.
    pub fn probe(
        name: impl Into<String>,
        pairs: &[PromptPair],
        feature: impl Fn(&ImageBuffer) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let pos = Embedding::new(vec![1.0, 0.0]).expect("finite");
        let neg = Embedding::new(vec![0.0, 1.0]).expect("finite");
        let mut enc = Self::new(name).with_image_fn(move |img| {
            let v = feature(img);
            if !v.is_finite() {
                return Err(Error::Input("probe feature is not finite".into()));
            }
            Embedding::new(probe_vector(v))
        });
        for p in pairs {
            enc = enc
                .with_text(p.positive_text.clone(), pos.clone())
                .with_text(p.negative_text.clone(), neg.clone());
        }
        enc
    }
}

/// Image vector used by [`MockEncoder::probe`] for feature value `v`.
pub fn probe_vector(v: f64) -> Vec<f64> {
    let t = (1.0 - v.clamp(0.0, 1.0)) * std::f64::consts::FRAC_PI_2;
    vec![t.cos(), t.sin()]
}

impl Encoder for MockEncoder {
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding> {
        self.policy.check(image.height(), image.width())?;
        if let Some(e) = self.images.get(&image.content_hash()) {
            return Ok(e.clone());
        }
        match &self.image_fn {
            Some(f) => f(image),
            None => Err(Error::Input(format!(
                "mock encoder `{}` has no entry for this image",
                self.name
            ))),
        }
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.texts
            .get(text)
            .cloned()
            .ok_or_else(|| Error::Input(format!("mock encoder `{}` has no entry for text {text:?}", self.name)))
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"mock\0");
        h.update(self.name.as_bytes());
        for (t, e) in &self.texts {
            h.update(t.as_bytes());
            for v in e.values() {
                h.update(v.to_le_bytes());
            }
        }
        let mut imgs: Vec<_> = self.images.iter().collect();
        imgs.sort_by(|a, b| a.0.cmp(b.0));
        for (k, e) in imgs {
            h.update(k.as_bytes());
            for v in e.values() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn input_policy(&self) -> InputPolicy {
        self.policy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptRegistry;
    use crate::scoring::score_image;

    #[test]
    fn probe_score_is_monotone_in_feature() {
        let pair = PromptRegistry::builtin().get_pair("brightness").unwrap();
        let enc = MockEncoder::probe("brightness", std::slice::from_ref(&pair), |img| img.mean());
        let (t1, t2) = enc.pair_embeddings(&pair).unwrap();
        let mut last = 0.0;
        for v in [0.0f32, 0.1, 0.4, 0.7, 1.0] {
            let img = ImageBuffer::filled(4, 4, [v; 3]).unwrap();
            let s = score_image(&enc.embed_image(&img).unwrap(), &pair, (&t1, &t2)).unwrap().score;
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn table_lookup_and_misses() {
        let img = ImageBuffer::filled(2, 2, [0.3; 3]).unwrap();
        let e = Embedding::new(vec![1.0, 2.0, 3.0]).unwrap();
        let enc = MockEncoder::new("t").with_image(&img, e.clone()).with_text("x", e.clone());
        assert_eq!(enc.embed_image(&img).unwrap(), e);
        assert_eq!(enc.embed_text("x").unwrap(), e);
        assert!(enc.embed_text("y").is_err());
        assert!(enc.embed_image(&ImageBuffer::filled(2, 2, [0.4; 3]).unwrap()).is_err());
        assert_eq!(enc.fingerprint(), enc.clone().fingerprint());
        assert_ne!(enc.fingerprint(), MockEncoder::new("t").fingerprint());
    }
}
