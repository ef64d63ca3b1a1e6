//! Antonym-pair score mathematics.
//!
//! An image embedding `x` is compared with the embeddings of a positive
//! prompt `t1` and its antonym `t2`. Each comparison is a cosine similarity,
//! and the two cosines are reduced to one relative score with a two-way
//! softmax:
//!
//! ```text
//! s_i = <x, t_i> / (|x| |t_i|)
//! score = e^{s1} / (e^{s1} + e^{s2})
//! ```
//!
//! A larger score means the image is closer to the positive prompt. The
//! single-prompt cosine is also exposed so the two approaches can be
//! compared on the same data.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::PromptPair;

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("embedding must have dim >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "embedding entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Per-image, per-attribute result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub attribute: String,
    /// Cosine to the positive prompt.
    pub s1: f64,
    /// Cosine to the negative prompt.
    pub s2: f64,
    pub score: f64,
    pub positive_prompt: String,
    pub negative_prompt: String,
}

/// Cosine similarity. Errors on dimension mismatch or a zero-norm argument.
pub fn cosine_similarity(x: &Embedding, t: &Embedding) -> Result<f64> {
    if x.dim() != t.dim() {
        return Err(Error::Contract(format!(
            "embedding dimensions differ: {} vs {}",
            x.dim(),
            t.dim()
        )));
    }
    let nx = x.norm();
    let nt = t.norm();
    if nx == 0.0 || nt == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm embedding".into(),
        ));
    }
    let dot: f64 = x.values().iter().zip(t.values()).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * nt)).clamp(-1.0, 1.0))
}

/// Naive single-prompt score: the raw cosine between image and prompt.
pub fn single_prompt_score(x: &Embedding, t: &Embedding) -> Result<f64> {
    cosine_similarity(x, t)
}

/// Two-way softmax of the antonym cosines.
pub fn pair_score(s1: f64, s2: f64) -> Result<f64> {
    pair_score_scaled(s1, s2, 1.0)
}

/// Softmax over `scale * s1` and `scale * s2`. With `scale = 1` this is
/// exactly [`pair_score`]; pretrained logit scales are never applied
/// implicitly.
pub fn pair_score_scaled(s1: f64, s2: f64, scale: f64) -> Result<f64> {
    if !s1.is_finite() || !s2.is_finite() {
        return Err(Error::Contract(format!(
            "pair_score requires finite inputs, got ({s1}, {s2})"
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Contract(format!(
            "softmax scale must be positive and finite, got {scale}"
        )));
    }
    Ok(sigmoid(scale * (s1 - s2)))
}

/// Logistic function, evaluated on the side that never overflows.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scores one image against one antonym pair.
///
/// `text_embeddings` must be ordered (positive, negative) to match `pair`;
/// that ordering cannot be checked here.
pub fn score_image(
    image_embedding: &Embedding,
    pair: &PromptPair,
    text_embeddings: (&Embedding, &Embedding),
) -> Result<AttributeScore> {
    score_image_scaled(image_embedding, pair, text_embeddings, 1.0)
}

pub fn score_image_scaled(
    image_embedding: &Embedding,
    pair: &PromptPair,
    text_embeddings: (&Embedding, &Embedding),
    scale: f64,
) -> Result<AttributeScore> {
    let s1 = cosine_similarity(image_embedding, text_embeddings.0)?;
    let s2 = cosine_similarity(image_embedding, text_embeddings.1)?;
    Ok(AttributeScore {
        attribute: pair.attribute.clone(),
        s1,
        s2,
        score: pair_score_scaled(s1, s2, scale)?,
        positive_prompt: pair.positive_text.clone(),
        negative_prompt: pair.negative_text.clone(),
    })
}

/// Source of (positive, negative) text embeddings for a prompt pair.
pub trait TextEmbeddingProvider {
    fn pair_embeddings(&self, pair: &PromptPair) -> Result<(Embedding, Embedding)>;
}

impl<F> TextEmbeddingProvider for F
where
    F: Fn(&PromptPair) -> Result<(Embedding, Embedding)>,
{
    fn pair_embeddings(&self, pair: &PromptPair) -> Result<(Embedding, Embedding)> {
        self(pair)
    }
}

/// Multi-attribute scoring, one result per pair in input order.
pub fn score_attributes<P: TextEmbeddingProvider + ?Sized>(
    image_embedding: &Embedding,
    pairs: &[PromptPair],
    provider: &P,
) -> Result<Vec<AttributeScore>> {
    if pairs.is_empty() {
        return Err(Error::Input("score_attributes needs at least one prompt pair".into()));
    }
    let mut seen = HashSet::new();
    for p in pairs {
        if !seen.insert(p.attribute.as_str()) {
            return Err(Error::Config(format!(
                "duplicate attribute `{}` in pair list",
                p.attribute
            )));
        }
    }
    pairs
        .iter()
        .map(|p| {
            let (t1, t2) = provider.pair_embeddings(p)?;
            score_image(image_embedding, p, (&t1, &t2))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn flipped(self) -> Self {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }
}

/// Outcome of a two-image comparison. Exact ties pick `A` and set `tie`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub choice: Choice,
    pub tie: bool,
    pub score_a: f64,
    pub score_b: f64,
}

pub fn compare_images(
    embedding_a: &Embedding,
    embedding_b: &Embedding,
    pair: &PromptPair,
    text_embeddings: (&Embedding, &Embedding),
) -> Result<Comparison> {
    let a = score_image(embedding_a, pair, text_embeddings)?.score;
    let b = score_image(embedding_b, pair, text_embeddings)?.score;
    Ok(Comparison {
        choice: if b > a { Choice::B } else { Choice::A },
        tie: a == b,
        score_a: a,
        score_b: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{PromptRegistry, TemplateId};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn quality() -> PromptPair {
        PromptRegistry::builtin().get_pair("quality").unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&emb(&[1., 0.]), &emb(&[1., 0.])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&emb(&[1., 0.]), &emb(&[0., 1.])).unwrap(), 0.0);
        // (12 + 12) / (5 * 5)
        assert_relative_eq!(
            cosine_similarity(&emb(&[3., 4.]), &emb(&[4., 3.])).unwrap(),
            0.96,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&emb(&[1., 0.]), &emb(&[1., 0., 0.])),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            cosine_similarity(&emb(&[0., 0.]), &emb(&[1., 0.])),
            Err(Error::Degenerate(_))
        ));
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn single_prompt_examples() {
        assert_eq!(single_prompt_score(&emb(&[1., 0.]), &emb(&[1., 0.])).unwrap(), 1.0);
        assert_eq!(single_prompt_score(&emb(&[0., 2.]), &emb(&[0., 5.])).unwrap(), 1.0);
        assert_relative_eq!(
            single_prompt_score(&emb(&[1., 1.]), &emb(&[1., 0.])).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pair_score_examples() {
        assert_eq!(pair_score(0.3, 0.3).unwrap(), 0.5);
        // 1/(1+e^-2), evaluated independently at high precision
        assert_relative_eq!(pair_score(1.0, -1.0).unwrap(), 0.880_797_077_977_882_444, epsilon = 1e-15);
        assert_relative_eq!(pair_score(-1.0, 1.0).unwrap(), 0.119_202_922_022_117_556, epsilon = 1e-15);
        assert!(pair_score(f64::INFINITY, 0.0).is_err());
        assert!(pair_score(0.0, f64::NAN).is_err());
    }

    #[test]
    fn score_image_examples() {
        let pair = quality();
        let x = emb(&[1., 0.]);
        let t1 = emb(&[1., 0.]);
        let t2 = emb(&[0., 1.]);
        let s = score_image(&x, &pair, (&t1, &t2)).unwrap();
        assert_eq!((s.s1, s.s2), (1.0, 0.0));
        // e / (e + 1)
        assert_relative_eq!(s.score, 0.731_058_578_630_004_879, epsilon = 1e-15);
        assert_eq!(s.positive_prompt, "Good photo.");

        let swapped = score_image(&x, &pair, (&t2, &t1)).unwrap();
        assert_relative_eq!(swapped.score, 1.0 - s.score, epsilon = 1e-15);

        let mid = score_image(&emb(&[1., 1.]), &pair, (&t1, &t2)).unwrap();
        assert_eq!(mid.score, 0.5);
    }

    #[test]
    fn scale_parameter_defaults_to_plain_softmax() {
        assert_eq!(pair_score_scaled(0.2, 0.1, 1.0).unwrap(), pair_score(0.2, 0.1).unwrap());
        assert!(pair_score_scaled(0.2, 0.1, 100.0).unwrap() > pair_score(0.2, 0.1).unwrap());
        assert!(pair_score_scaled(0.2, 0.1, 0.0).is_err());
    }

    fn table_provider(p: &PromptPair) -> Result<(Embedding, Embedding)> {
        let h = p.attribute.len() as f64;
        Ok((
            Embedding::new(vec![1.0, h, 0.5])?,
            Embedding::new(vec![h, 1.0, -0.5])?,
        ))
    }

    #[test]
    fn score_attributes_reduces_to_score_image() {
        let x = emb(&[0.3, 0.9, 0.1]);
        let pair = quality();
        let out = score_attributes(&x, std::slice::from_ref(&pair), &table_provider).unwrap();
        let (t1, t2) = table_provider(&pair).unwrap();
        assert_eq!(out, vec![score_image(&x, &pair, (&t1, &t2)).unwrap()]);
    }

    #[test]
    fn score_attributes_order_and_duplicates() {
        let reg = PromptRegistry::builtin();
        let names = ["complex", "natural", "happy", "scary", "new"];
        let pairs: Vec<_> = names.iter().map(|n| reg.get_pair(n).unwrap()).collect();
        let x = emb(&[0.3, 0.9, 0.1]);
        let out = score_attributes(&x, &pairs, &table_provider).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|s| s.score > 0.0 && s.score < 1.0));

        let mut rev = pairs.clone();
        rev.reverse();
        let mut out_rev = score_attributes(&x, &rev, &table_provider).unwrap();
        out_rev.reverse();
        assert_eq!(out, out_rev);

        let dup = vec![pairs[0].clone(), pairs[0].clone()];
        assert!(matches!(score_attributes(&x, &dup, &table_provider), Err(Error::Config(_))));
        assert!(matches!(score_attributes(&x, &[], &table_provider), Err(Error::Input(_))));
    }

    #[test]
    fn compare_examples() {
        let pair = quality();
        let t1 = emb(&[1., 0.]);
        let t2 = emb(&[0., 1.]);
        let good = emb(&[1., 0.2]);
        let bad = emb(&[0.1, 1.]);
        let c = compare_images(&good, &bad, &pair, (&t1, &t2)).unwrap();
        assert_eq!((c.choice, c.tie), (Choice::A, false));
        let c2 = compare_images(&bad, &good, &pair, (&t1, &t2)).unwrap();
        assert_eq!(c2.choice, Choice::B);

        let tie = compare_images(&good, &good, &pair, (&t1, &t2)).unwrap();
        assert_eq!((tie.choice, tie.tie), (Choice::A, true));
    }

    #[test]
    fn custom_pair_is_accepted() {
        let pair = PromptPair::new("x", "Up", "Down", TemplateId::T1).unwrap();
        let s = score_image(&emb(&[1., 0.]), &pair, (&emb(&[1., 0.]), &emb(&[0., 1.]))).unwrap();
        assert_eq!(s.attribute, "x");
        assert_eq!(s.negative_prompt, "Down photo.");
    }

    proptest! {
        #[test]
        fn compare_is_invariant_to_common_rescaling(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 4),
            k in 1e-3f64..1e3,
        ) {
            let pair = quality();
            let t1 = emb(&[1., 0.3, -0.2, 0.0]);
            let t2 = emb(&[-0.5, 1.0, 0.1, 0.4]);
            let ea = emb(&a);
            let eb = emb(&b);
            prop_assume!(ea.norm() > 1e-3 && eb.norm() > 1e-3);
            let base = compare_images(&ea, &eb, &pair, (&t1, &t2)).unwrap();
            let scaled = compare_images(&ea.scaled(k).unwrap(), &eb.scaled(k).unwrap(), &pair, (&t1, &t2)).unwrap();
            if (base.score_a - base.score_b).abs() > 1e-9 {
                prop_assert_eq!(base.choice, scaled.choice);
            }
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
        ) {
            let ea = emb(&a);
            let eb = emb(&b);
            prop_assume!(ea.norm() > 1e-6 && eb.norm() > 1e-6);
            let c = cosine_similarity(&ea, &eb).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert_eq!(c, cosine_similarity(&eb, &ea).unwrap());
        }
    }
}
