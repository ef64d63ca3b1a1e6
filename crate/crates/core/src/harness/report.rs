//! Evaluation reports and their derived views.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{plcc, srocc, PairedSamples};

/// What produced the scores: a fixed prompt pair or a tuned context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerId {
    Pair {
        attribute: String,
        positive: String,
        negative: String,
    },
    Context {
        attribute: String,
        digest: String,
    },
}

impl ScorerId {
    /// Stable key used in cache entries and fingerprints.
    pub fn key(&self) -> String {
        match self {
            ScorerId::Pair { positive, negative, .. } => format!("pair\0{positive}\0{negative}"),
            ScorerId::Context { digest, .. } => format!("context\0{digest}"),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScorerId::Pair { positive, negative, .. } => format!("{positive} / {negative}"),
            ScorerId::Context { attribute, digest } => format!("context {attribute} {}", &digest[..digest.len().min(12)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub path: String,
    pub score: f64,
    pub mos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub scorer: ScorerId,
    pub split: String,
    pub srocc: f64,
    pub plcc: f64,
    pub n: usize,
    pub per_image: Vec<ImageScore>,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub(crate) fn assemble(
        dataset: String,
        scorer: ScorerId,
        split: String,
        per_image: Vec<ImageScore>,
        config_fingerprint: String,
    ) -> Result<Self> {
        let (srocc, plcc) = metrics_of(&per_image)?;
        Ok(Self {
            dataset,
            scorer,
            split,
            srocc,
            plcc,
            n: per_image.len(),
            per_image,
            config_fingerprint,
        })
    }

    /// Recomputes the header metrics from the rows; they must match exactly.
    pub fn verify(&self) -> Result<()> {
        if self.n != self.per_image.len() {
            return Err(Error::Input(format!(
                "report claims n = {} but has {} rows",
                self.n,
                self.per_image.len()
            )));
        }
        let (s, p) = metrics_of(&self.per_image)?;
        if s.to_bits() != self.srocc.to_bits() || p.to_bits() != self.plcc.to_bits() {
            return Err(Error::Input(format!(
                "report metrics ({}, {}) do not match its rows ({s}, {p})",
                self.srocc, self.plcc
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Loads and verifies a report.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text)?;
        report.verify()?;
        Ok(report)
    }

    /// Summary line plus per-image rows, metrics rounded to 3 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# dataset={} scorer={} split={} n={} srocc={:.3} plcc={:.3}\npath,score,mos\n",
            self.dataset,
            self.scorer.label(),
            self.split,
            self.n,
            self.srocc,
            self.plcc
        );
        for r in &self.per_image {
            out.push_str(&format!("{},{},{}\n", r.path, r.score, r.mos));
        }
        out
    }
}

fn metrics_of(rows: &[ImageScore]) -> Result<(f64, f64)> {
    let samples = PairedSamples::new(
        rows.iter().map(|r| r.score).collect(),
        rows.iter().map(|r| r.mos).collect(),
    )?;
    Ok((srocc(&samples)?, plcc(&samples)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub top: Vec<ImageScore>,
    pub bottom: Vec<ImageScore>,
}

/// The `k` highest- and `k` lowest-scoring images. Ties break by path so the
/// selection is deterministic.
pub fn rank_extremes(report: &EvalReport, k: usize) -> Result<Extremes> {
    let n = report.per_image.len();
    if k == 0 || 2 * k > n {
        return Err(Error::Input(format!("k must lie in 1..={} for {n} images, got {k}", n / 2)));
    }
    let mut rows = report.per_image.clone();
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.path.cmp(&b.path)));
    let bottom = rows.split_off(n - k);
    rows.truncate(k);
    Ok(Extremes {
        top: rows,
        bottom: bottom.into_iter().rev().collect(),
    })
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("quartiles of an empty sample".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}
