//! Batch scoring over manifests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cache::{file_hash, ScoreCache};
use super::manifest::{DatasetManifest, ManifestRecord, SplitFilter};
use super::report::{EvalReport, ImageScore, Quartiles, ScorerId};
use crate::backbone::Encoder;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::prompts::{PromptPair, PromptRegistry};
use crate::scoring::{cosine_similarity, pair_score, Embedding};
use crate::tuner::{self, context_embeddings, LearnableContext, LogRecord, TrainSample, TuneConfig, TuneOutcome};

/// A fixed antonym pair or a tuned context.
#[derive(Debug, Clone, Copy)]
pub enum PromptSource<'a> {
    Pair(&'a PromptPair),
    Context(&'a LearnableContext),
}

impl PromptSource<'_> {
    pub fn id(&self) -> ScorerId {
        match self {
            PromptSource::Pair(p) => ScorerId::Pair {
                attribute: p.attribute.clone(),
                positive: p.positive_text.clone(),
                negative: p.negative_text.clone(),
            },
            PromptSource::Context(c) => ScorerId::Context {
                attribute: c.meta.attribute.clone(),
                digest: c.digest(),
            },
        }
    }
}

/// Text side resolved once per run.
pub struct PreparedScorer {
    id: ScorerId,
    positive: Embedding,
    negative: Embedding,
}

impl PreparedScorer {
    pub fn new(source: PromptSource<'_>, encoder: &dyn Encoder) -> Result<Self> {
        let (positive, negative) = match source {
            PromptSource::Pair(p) => encoder.pair_embeddings(p)?,
            PromptSource::Context(c) => {
                let tower = encoder
                    .text_tower()
                    .ok_or_else(|| Error::Unsupported("tuned contexts need an encoder with a text tower".into()))?;
                context_embeddings(c, tower)?
            }
        };
        Ok(Self {
            id: source.id(),
            positive,
            negative,
        })
    }

    pub fn id(&self) -> &ScorerId {
        &self.id
    }

    pub fn score_embedding(&self, image: &Embedding) -> Result<f64> {
        pair_score(
            cosine_similarity(image, &self.positive)?,
            cosine_similarity(image, &self.negative)?,
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions<'a> {
    pub split: SplitFilter,
    pub exec: Execution,
    pub cache: Option<&'a ScoreCache>,
}

/// Embeds one manifest record, honouring preprocessing and the encoder's input policy.
pub fn embed_record(manifest: &DatasetManifest, record: &ManifestRecord, encoder: &dyn Encoder) -> Result<Embedding> {
    let img = manifest.load_image(record)?;
    let img = encoder.input_policy().prepare(&img)?;
    encoder.embed_image(&img)
}

fn check_cache(cache: Option<&ScoreCache>, encoder: &dyn Encoder) -> Result<()> {
    if let Some(c) = cache {
        let current = encoder.fingerprint();
        if c.backbone() != current {
            return Err(Error::StaleCache {
                dir: c.dir().to_path_buf(),
                cached: c.backbone().to_string(),
                current,
            });
        }
    }
    Ok(())
}

/// Scores `records` in input order; failures are collected per image.
pub fn score_records(
    manifest: &DatasetManifest,
    records: &[&ManifestRecord],
    scorer: &PreparedScorer,
    encoder: &dyn Encoder,
    options: &EvalOptions<'_>,
) -> Result<Vec<f64>> {
    check_cache(options.cache, encoder)?;
    let scorer_key = scorer.id.key();
    let pre = manifest.preprocess.key();
    let results = options.exec.map(records, |_, rec| -> Result<f64> {
        let key = match options.cache {
            Some(c) => {
                let k = c.key(&file_hash(&rec.resolved)?, &scorer_key, &pre);
                if let Some(v) = c.get(&k) {
                    return Ok(v);
                }
                Some(k)
            }
            None => None,
        };
        let score = scorer.score_embedding(&embed_record(manifest, rec, encoder)?)?;
        if let (Some(c), Some(k)) = (options.cache, key) {
            c.put(&k, score)?;
        }
        Ok(score)
    });
    let mut scores = Vec::with_capacity(records.len());
    let mut problems = Vec::new();
    for (rec, r) in records.iter().zip(results) {
        match r {
            Ok(s) => scores.push(s),
            Err(e) => problems.push(format!("{}: {e}", rec.image_path)),
        }
    }
    if problems.is_empty() {
        Ok(scores)
    } else {
        Err(Error::Ingestion {
            source_name: manifest.name.clone(),
            problems,
        })
    }
}

/// Everything that determines a report's contents.
pub fn config_fingerprint(
    manifest: &DatasetManifest,
    split: SplitFilter,
    scorer: &ScorerId,
    encoder_fingerprint: &str,
) -> String {
    let mut h = Sha256::new();
    let mut part = |s: &str| {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    };
    part(&manifest.name);
    part(&manifest.to_csv());
    part(&manifest.preprocess.key());
    part(&split.to_string());
    part(&scorer.key());
    part(encoder_fingerprint);
    hex::encode(h.finalize())
}

/// Scores every selected image and correlates against MOS.
pub fn eval_dataset(
    manifest: &DatasetManifest,
    source: PromptSource<'_>,
    encoder: &dyn Encoder,
    options: &EvalOptions<'_>,
) -> Result<EvalReport> {
    let labelled = manifest.labelled(options.split)?;
    let scorer = PreparedScorer::new(source, encoder)?;
    let records: Vec<&ManifestRecord> = labelled.iter().map(|(r, _)| *r).collect();
    let scores = score_records(manifest, &records, &scorer, encoder, options)?;
    let per_image = labelled
        .iter()
        .zip(scores)
        .map(|((r, mos), score)| ImageScore {
            path: r.image_path.clone(),
            score,
            mos: *mos,
        })
        .collect();
    let fp = config_fingerprint(manifest, options.split, scorer.id(), &encoder.fingerprint());
    EvalReport::assemble(
        manifest.name.clone(),
        scorer.id.clone(),
        options.split.to_string(),
        per_image,
        fp,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Equal-length manifests: row `i` of one against row `i` of the other.
    Index,
    /// Every low image against every high image.
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub attribute: String,
    pub low: Quartiles,
    pub high: Quartiles,
    /// Share of pairs where the high-quality image scores higher; ties count half.
    pub win_fraction: f64,
    pub pairs: usize,
    pub pairing: Pairing,
}

/// Scores a low-quality and a high-quality set independently and summarises
/// how well the attribute separates them.
pub fn paired_benchmark_compare(
    low: &DatasetManifest,
    high: &DatasetManifest,
    attribute: &str,
    registry: &PromptRegistry,
    encoder: &dyn Encoder,
    options: &EvalOptions<'_>,
) -> Result<PairedSummary> {
    let pair = registry.get_pair(attribute).map_err(|e| match e {
        Error::UnknownAttribute { name, registered } => Error::Config(format!(
            "unknown attribute `{name}`; registered: {}",
            registered.join(", ")
        )),
        other => other,
    })?;
    let scorer = PreparedScorer::new(PromptSource::Pair(&pair), encoder)?;
    let score_all = |m: &DatasetManifest| -> Result<Vec<f64>> {
        let recs = m.select(options.split);
        if recs.is_empty() {
            return Err(Error::Input(format!("manifest `{}` has no {} records", m.name, options.split)));
        }
        score_records(m, &recs, &scorer, encoder, options)
    };
    let lo = score_all(low)?;
    let hi = score_all(high)?;
    let credit = |h: f64, l: f64| {
        if h > l {
            1.0
        } else if h == l {
            0.5
        } else {
            0.0
        }
    };
    let (wins, pairs, pairing) = if lo.len() == hi.len() {
        let w: f64 = hi.iter().zip(&lo).map(|(&h, &l)| credit(h, l)).sum();
        (w, lo.len(), Pairing::Index)
    } else {
        let w: f64 = hi.iter().flat_map(|&h| lo.iter().map(move |&l| credit(h, l))).sum();
        (w, lo.len() * hi.len(), Pairing::Cross)
    };
    Ok(PairedSummary {
        attribute: pair.attribute,
        low: Quartiles::of(&lo)?,
        high: Quartiles::of(&hi)?,
        win_fraction: wins / pairs as f64,
        pairs,
        pairing,
    })
}

/// Tunes a context for `pair` on the manifest's training records.
pub fn tune_on_manifest(
    manifest: &DatasetManifest,
    pair: &PromptPair,
    encoder: &dyn Encoder,
    config: &TuneConfig,
    exec: Execution,
    on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TuneOutcome> {
    config.validate()?;
    let tower = encoder
        .text_tower()
        .ok_or_else(|| Error::Unsupported("prompt tuning needs an encoder with a text tower".into()))?;
    let labelled = manifest.labelled(SplitFilter::Train)?;
    let embedded = exec.map(&labelled, |_, (r, _)| embed_record(manifest, r, encoder));
    let mut samples = Vec::with_capacity(labelled.len());
    let mut problems = Vec::new();
    for ((r, mos), e) in labelled.iter().zip(embedded) {
        match e {
            Ok(embedding) => samples.push(TrainSample {
                id: r.image_path.clone(),
                embedding,
                mos: *mos,
            }),
            Err(e) => problems.push(format!("{}: {e}", r.image_path)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Ingestion {
            source_name: manifest.name.clone(),
            problems,
        });
    }
    let init = tuner::init_context(pair, tower)?;
    tuner::tune(&samples, tower, init, config, on_log)
}
