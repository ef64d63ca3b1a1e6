//! Dataset manifests: CSV with header `image_path,mos,split`.
//!
//! `mos` may be empty (unlabelled images); `split` is `train`, `test` or
//! `all` and defaults to `all` when the column is omitted. Relative image
//! paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Usable under every protocol (datasets evaluated in full).
    All,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" | "" => Ok(Split::All),
            other => Err(Error::Input(format!("unknown split `{other}` (expected train, test or all)"))),
        }
    }
}

/// Which records an evaluation or training run selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitFilter {
    /// `test` and `all` records.
    #[default]
    Test,
    /// `train` and `all` records.
    Train,
    /// Every record.
    Everything,
}

impl SplitFilter {
    pub fn accepts(self, split: Split) -> bool {
        match self {
            SplitFilter::Test => split != Split::Train,
            SplitFilter::Train => split != Split::Test,
            SplitFilter::Everything => true,
        }
    }
}

impl fmt::Display for SplitFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitFilter::Test => "test",
            SplitFilter::Train => "train",
            SplitFilter::Everything => "all",
        })
    }
}

impl FromStr for SplitFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "test" => Ok(SplitFilter::Test),
            "train" => Ok(SplitFilter::Train),
            "all" | "everything" => Ok(SplitFilter::Everything),
            other => Err(Error::Config(format!("unknown split filter `{other}` (expected test, train or all)"))),
        }
    }
}

/// Image preprocessing applied before the encoder's own input policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Preprocess {
    /// Resize so the shorter side has this length (aspect ratio kept).
    pub shorter_side: Option<usize>,
}

impl Preprocess {
    /// SPAQ protocol: shorter side resized to 512.
    pub fn spaq() -> Self {
        Self { shorter_side: Some(512) }
    }

    pub fn apply(&self, image: ImageBuffer) -> Result<ImageBuffer> {
        match self.shorter_side {
            Some(s) if image.height().min(image.width()) != s => image.resize_shorter_side(s),
            _ => Ok(image),
        }
    }

    /// Stable text form used in fingerprints.
    pub fn key(&self) -> String {
        match self.shorter_side {
            Some(s) => format!("shorter-side={s}"),
            None => "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path as written in the manifest (report key).
    pub image_path: String,
    /// Resolved location on disk.
    pub resolved: PathBuf,
    pub mos: Option<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosScale {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<ManifestRecord>,
    /// Observed MOS range; absent when no record is labelled.
    pub mos_scale: Option<MosScale>,
    pub preprocess: Preprocess,
}

#[derive(Debug, Deserialize)]
struct Row {
    image_path: String,
    #[serde(default)]
    mos: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Dataset name; defaults to the manifest file stem.
    pub name: Option<String>,
    pub preprocess: Preprocess,
    /// Skip the existence check (manifests describing remote layouts).
    pub skip_file_check: bool,
}

/// Reads and validates a manifest file. All problems are collected and
/// reported together.
pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    ingest_manifest_with(path, &IngestOptions::default())
}

pub fn ingest_manifest_with(path: impl AsRef<Path>, options: &IngestOptions) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = options.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let base = path.parent().unwrap_or(Path::new("."));
    let mut manifest = parse_manifest(&text, &name, base, &path.display().to_string(), options.skip_file_check)?;
    manifest.preprocess = options.preprocess;
    Ok(manifest)
}

/// Parses manifest text; `base` resolves relative paths.
pub fn parse_manifest(
    text: &str,
    name: &str,
    base: &Path,
    source_name: &str,
    skip_file_check: bool,
) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut problems = Vec::new();
    for col in headers.iter() {
        if !matches!(col, "image_path" | "mos" | "split") {
            problems.push(format!("header: unknown column `{col}` (expected image_path,mos,split)"));
        }
    }
    if !headers.iter().any(|c| c == "image_path") {
        problems.push("header: missing `image_path` column".into());
    }
    if !problems.is_empty() {
        return Err(Error::Ingestion {
            source_name: source_name.into(),
            problems,
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("row {line}: {e}"));
                continue;
            }
        };
        if row.image_path.is_empty() {
            problems.push(format!("row {line}: empty image_path"));
            continue;
        }
        let mos = match row.mos.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    problems.push(format!("row {line}: mos `{s}` is not a finite number"));
                    continue;
                }
            },
        };
        let split = match row.split.as_deref().unwrap_or("").parse::<Split>() {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("row {line}: {e}"));
                continue;
            }
        };
        if !seen.insert(row.image_path.clone()) {
            problems.push(format!("row {line}: duplicate image_path `{}`", row.image_path));
            continue;
        }
        let resolved = base.join(&row.image_path);
        if !skip_file_check && !resolved.is_file() {
            problems.push(format!("row {line}: image file not found: {}", resolved.display()));
            continue;
        }
        records.push(ManifestRecord {
            image_path: row.image_path,
            resolved,
            mos,
            split,
        });
    }
    if !problems.is_empty() {
        return Err(Error::Ingestion {
            source_name: source_name.into(),
            problems,
        });
    }
    let labelled: Vec<f64> = records.iter().filter_map(|r| r.mos).collect();
    let mos_scale = (!labelled.is_empty()).then(|| MosScale {
        min: labelled.iter().copied().fold(f64::INFINITY, f64::min),
        max: labelled.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    Ok(DatasetManifest {
        name: name.into(),
        records,
        mos_scale,
        preprocess: Preprocess::default(),
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn select(&self, filter: SplitFilter) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| filter.accepts(r.split)).collect()
    }

    /// Selected records, failing with every unlabelled row listed.
    pub fn labelled(&self, filter: SplitFilter) -> Result<Vec<(&ManifestRecord, f64)>> {
        let selected = self.select(filter);
        if selected.is_empty() {
            return Err(Error::Input(format!("manifest `{}` has no {filter} records", self.name)));
        }
        let missing: Vec<String> = selected
            .iter()
            .filter(|r| r.mos.is_none())
            .map(|r| format!("{}: no mos", r.image_path))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Ingestion {
                source_name: self.name.clone(),
                problems: missing,
            });
        }
        Ok(selected.into_iter().map(|r| (r, r.mos.expect("checked"))).collect())
    }

    /// Loads and preprocesses one record's image.
    pub fn load_image(&self, record: &ManifestRecord) -> Result<ImageBuffer> {
        self.preprocess.apply(ImageBuffer::load(&record.resolved)?)
    }

    /// Serializes back to manifest CSV (paths as written).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_path,mos,split\n");
        for r in &self.records {
            let mos = r.mos.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{mos},{}\n", csv_field(&r.image_path), r.split));
        }
        out
    }
}

/// Seeded choice of `count` distinct indices from `0..n`, sorted; all of
/// them when `count >= n`.
pub fn seeded_sample(n: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..n).collect();
    if count < n {
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(count);
        idx.sort_unstable();
    }
    idx
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
