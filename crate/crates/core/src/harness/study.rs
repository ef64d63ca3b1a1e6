//! Two-image preference studies against human majority votes.
//!
//! Pairs file (CSV): `pair_id,image_a,image_b`, paths relative to the file.
//! Votes file (CSV): `pair_id,attribute,choice` where `choice` is `A` or `B`,
//! the image the majority judged more `attribute` (the positive adjective).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{PreparedScorer, PromptSource};
use crate::backbone::Encoder;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::image::ImageBuffer;
use crate::metrics::{pairwise_accuracy, Decision};
use crate::prompts::PromptRegistry;
use crate::scoring::{Choice, Embedding};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPair {
    pub pair_id: String,
    pub image_a: PathBuf,
    pub image_b: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub pair_id: String,
    pub attribute: String,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAccuracy {
    pub accuracy: f64,
    pub pairs: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub per_attribute: BTreeMap<String, AttributeAccuracy>,
}

#[derive(Debug, Deserialize)]
struct PairRow {
    pair_id: String,
    image_a: String,
    image_b: String,
}

#[derive(Debug, Deserialize)]
struct VoteRow {
    pair_id: String,
    attribute: String,
    choice: String,
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    for (i, row) in r.deserialize::<T>().enumerate() {
        match row {
            Ok(v) => rows.push(v),
            Err(e) => problems.push(format!("row {}: {e}", i + 2)),
        }
    }
    Ok((rows, problems))
}

fn ingestion(path: &Path, problems: Vec<String>) -> Error {
    Error::Ingestion {
        source_name: path.display().to_string(),
        problems,
    }
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<StudyPair>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let (rows, mut problems) = read_csv::<PairRow>(path)?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for row in rows {
        if !seen.insert(row.pair_id.clone()) {
            problems.push(format!("duplicate pair_id `{}`", row.pair_id));
            continue;
        }
        for p in [&row.image_a, &row.image_b] {
            if !base.join(p).is_file() {
                problems.push(format!("pair `{}`: image not found: {}", row.pair_id, base.join(p).display()));
            }
        }
        pairs.push(StudyPair {
            pair_id: row.pair_id,
            image_a: base.join(row.image_a),
            image_b: base.join(row.image_b),
        });
    }
    if problems.is_empty() {
        Ok(pairs)
    } else {
        Err(ingestion(path, problems))
    }
}

pub fn load_votes(path: impl AsRef<Path>) -> Result<Vec<Vote>> {
    let path = path.as_ref();
    let (rows, mut problems) = read_csv::<VoteRow>(path)?;
    let mut votes = Vec::new();
    for row in rows {
        let choice = match row.choice.to_ascii_uppercase().as_str() {
            "A" => Choice::A,
            "B" => Choice::B,
            other => {
                problems.push(format!("pair `{}`: choice `{other}` is not A or B", row.pair_id));
                continue;
            }
        };
        votes.push(Vote {
            pair_id: row.pair_id,
            attribute: row.attribute,
            choice,
        });
    }
    if problems.is_empty() {
        Ok(votes)
    } else {
        Err(ingestion(path, problems))
    }
}

/// Checks that votes and pairs refer to each other exactly.
fn cross_check(pairs: &[StudyPair], votes: &[Vote]) -> Vec<String> {
    let ids: HashSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    let voted: HashSet<&str> = votes.iter().map(|v| v.pair_id.as_str()).collect();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for v in votes {
        if !ids.contains(v.pair_id.as_str()) {
            problems.push(format!("vote for unknown pair `{}`", v.pair_id));
        }
        if !seen.insert((v.pair_id.as_str(), v.attribute.as_str())) {
            problems.push(format!("duplicate vote for pair `{}` attribute `{}`", v.pair_id, v.attribute));
        }
    }
    for p in pairs {
        if !voted.contains(p.pair_id.as_str()) {
            problems.push(format!("pair `{}` has no votes", p.pair_id));
        }
    }
    problems
}

/// Model choice per pair and attribute, scored against the majority votes.
/// Ties earn half credit.
pub fn pair_study(
    pairs: &[StudyPair],
    votes: &[Vote],
    registry: &PromptRegistry,
    encoder: &dyn Encoder,
    exec: Execution,
) -> Result<StudyResult> {
    let problems = cross_check(pairs, votes);
    if !problems.is_empty() {
        return Err(Error::Ingestion {
            source_name: "pair study".into(),
            problems,
        });
    }
    if votes.is_empty() {
        return Err(Error::Input("pair study has no votes".into()));
    }
    let mut attributes: BTreeMap<&str, Vec<&Vote>> = BTreeMap::new();
    for v in votes {
        attributes.entry(v.attribute.as_str()).or_default().push(v);
    }
    let scorers = attributes
        .keys()
        .map(|a| {
            let pair = registry.get_pair(a)?;
            Ok((*a, PreparedScorer::new(PromptSource::Pair(&pair), encoder)?))
        })
        .collect::<Result<HashMap<_, _>>>()?;

    // each distinct image is embedded once
    let mut paths: Vec<&PathBuf> = pairs.iter().flat_map(|p| [&p.image_a, &p.image_b]).collect();
    paths.sort();
    paths.dedup();
    let embedded = exec.try_map(&paths, |_, p| -> Result<Embedding> {
        let img = encoder.input_policy().prepare(&ImageBuffer::load(p)?)?;
        encoder.embed_image(&img)
    })?;
    let embeddings: HashMap<&PathBuf, Embedding> = paths.into_iter().zip(embedded).collect();
    let by_id: HashMap<&str, &StudyPair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();

    let mut per_attribute = BTreeMap::new();
    for (attr, vs) in attributes {
        let scorer = &scorers[attr];
        let mut decisions = Vec::with_capacity(vs.len());
        let mut human = Vec::with_capacity(vs.len());
        for v in &vs {
            let p = by_id[v.pair_id.as_str()];
            let a = scorer.score_embedding(&embeddings[&p.image_a])?;
            let b = scorer.score_embedding(&embeddings[&p.image_b])?;
            decisions.push(if a == b {
                Decision::Tie
            } else if b > a {
                Decision::B
            } else {
                Decision::A
            });
            human.push(v.choice);
        }
        let ties = decisions.iter().filter(|d| **d == Decision::Tie).count();
        per_attribute.insert(
            attr.to_string(),
            AttributeAccuracy {
                accuracy: pairwise_accuracy(&decisions, &human, 0.5)?,
                pairs: decisions.len(),
                ties,
            },
        );
    }
    Ok(StudyResult { per_attribute })
}

/// File-based entry point: loads both files and runs [`pair_study`].
pub fn abstract_pair_study(
    pairs_file: impl AsRef<Path>,
    votes_file: impl AsRef<Path>,
    registry: &PromptRegistry,
    encoder: &dyn Encoder,
    exec: Execution,
) -> Result<StudyResult> {
    let pairs = load_pairs(pairs_file)?;
    let votes = load_votes(votes_file)?;
    pair_study(&pairs, &votes, registry, encoder, exec)
}
