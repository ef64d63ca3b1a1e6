//! Prompt templates, antonym adjective pairs, and the attribute registry.
//!
//! Registry files are plain text, one pair per line:
//!
//! ```text
//! # attribute | template | positive adjective | negative adjective
//! quality | T1 | Good | Bad
//! contrast | T1 | High contrast | Low contrast
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Fields are trimmed;
//! `|` may not appear inside a field.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SLOT: &str = "[text]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    T1,
    T2,
    T3,
}

impl TemplateId {
    pub const ALL: [TemplateId; 3] = [TemplateId::T1, TemplateId::T2, TemplateId::T3];

    pub fn pattern(self) -> &'static str {
        match self {
            TemplateId::T1 => "[text] photo.",
            TemplateId::T2 => "A photo of [text].",
            TemplateId::T3 => "There is [text] in the photo.",
        }
    }

    /// Substitutes `adjective` into the slot verbatim.
    pub fn render(self, adjective: &str) -> Result<String> {
        if adjective.is_empty() {
            return Err(Error::Input("cannot render a prompt with an empty adjective".into()));
        }
        Ok(self.pattern().replacen(SLOT, adjective, 1))
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateId::T1 => "T1",
            TemplateId::T2 => "T2",
            TemplateId::T3 => "T3",
        })
    }
}

impl FromStr for TemplateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" | "1" => Ok(TemplateId::T1),
            "T2" | "2" => Ok(TemplateId::T2),
            "T3" | "3" => Ok(TemplateId::T3),
            other => Err(Error::Config(format!("unknown template `{other}` (expected T1, T2 or T3)"))),
        }
    }
}

/// Convenience wrapper matching the free-function form of rendering.
pub fn render(template: TemplateId, adjective: &str) -> Result<String> {
    template.render(adjective)
}

/// A rendered antonym pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptPair {
    pub attribute: String,
    pub positive_text: String,
    pub negative_text: String,
    pub template_id: TemplateId,
}

impl PromptPair {
    pub fn new(attribute: &str, positive: &str, negative: &str, template: TemplateId) -> Result<Self> {
        let positive_text = template.render(positive)?;
        let negative_text = template.render(negative)?;
        if positive_text == negative_text {
            return Err(Error::Input(format!(
                "prompt pair for `{attribute}` renders both sides to `{positive_text}`"
            )));
        }
        Ok(Self {
            attribute: attribute.to_string(),
            positive_text,
            negative_text,
            template_id: template,
        })
    }

    /// The same pair with positive and negative exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            attribute: self.attribute.clone(),
            positive_text: self.negative_text.clone(),
            negative_text: self.positive_text.clone(),
            template_id: self.template_id,
        }
    }
}

/// One registry record: adjectives plus the template they are rendered with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub attribute: String,
    pub template: TemplateId,
    pub positive: String,
    pub negative: String,
}

impl RegistryEntry {
    pub fn pair(&self) -> Result<PromptPair> {
        PromptPair::new(&self.attribute, &self.positive, &self.negative, self.template)
    }
}

/// Overall-quality adjective presets used by the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdjectivePreset {
    /// Good / Bad
    A,
    /// High quality / Low quality
    B,
    /// High definition / Low definition
    C,
}

impl AdjectivePreset {
    pub const ALL: [AdjectivePreset; 3] = [AdjectivePreset::A, AdjectivePreset::B, AdjectivePreset::C];

    pub fn adjectives(self) -> (&'static str, &'static str) {
        match self {
            AdjectivePreset::A => ("Good", "Bad"),
            AdjectivePreset::B => ("High quality", "Low quality"),
            AdjectivePreset::C => ("High definition", "Low definition"),
        }
    }

    pub fn pair(self, template: TemplateId) -> Result<PromptPair> {
        let (p, n) = self.adjectives();
        PromptPair::new("quality", p, n, template)
    }
}

impl fmt::Display for AdjectivePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjectivePreset::A => "a",
            AdjectivePreset::B => "b",
            AdjectivePreset::C => "c",
        })
    }
}

impl FromStr for AdjectivePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "good-bad" => Ok(AdjectivePreset::A),
            "b" | "high-quality" => Ok(AdjectivePreset::B),
            "c" | "high-definition" => Ok(AdjectivePreset::C),
            other => Err(Error::Config(format!("unknown adjective preset `{other}` (expected a, b or c)"))),
        }
    }
}

const BUILTIN: &[(&str, &str, &str)] = &[
    ("quality", "Good", "Bad"),
    ("brightness", "Bright", "Dark"),
    ("noisiness", "Clean", "Noisy"),
    ("colorfulness", "Colorful", "Dull"),
    ("sharpness", "Sharp", "Blurry"),
    ("contrast", "High contrast", "Low contrast"),
    ("complex", "Complex", "Simple"),
    ("natural", "Natural", "Synthetic"),
    ("happy", "Happy", "Sad"),
    ("scary", "Scary", "Peaceful"),
    ("new", "New", "Old"),
    ("warm", "Warm", "Cold"),
    ("real", "Real", "Abstract"),
    ("beautiful", "Beautiful", "Ugly"),
    ("lonely", "Lonely", "Sociable"),
    ("relaxing", "Relaxing", "Stressful"),
];

/// Attribute → antonym pair table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptRegistry {
    entries: Vec<RegistryEntry>,
}

impl PromptRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped quality, fine-grained and abstract attribute pairs.
    pub fn builtin() -> Self {
        let entries = BUILTIN
            .iter()
            .map(|&(a, p, n)| RegistryEntry {
                attribute: a.to_string(),
                template: TemplateId::T1,
                positive: p.to_string(),
                negative: n.to_string(),
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.attribute.clone()).collect()
    }

    fn find(&self, attribute: &str) -> Option<&RegistryEntry> {
        if let Some(e) = self.entries.iter().find(|e| e.attribute == attribute) {
            return Some(e);
        }
        // Also accept the `positive/negative` spelling, e.g. "happy/sad".
        let (pos, neg) = attribute.split_once('/')?;
        self.entries.iter().find(|e| {
            e.positive.eq_ignore_ascii_case(pos.trim()) && e.negative.eq_ignore_ascii_case(neg.trim())
        })
    }

    pub fn get_pair(&self, attribute: &str) -> Result<PromptPair> {
        match self.find(attribute) {
            Some(e) => e.pair(),
            None => Err(Error::UnknownAttribute {
                name: attribute.to_string(),
                registered: self.names(),
            }),
        }
    }

    pub fn register_pair(
        &mut self,
        attribute: &str,
        positive: &str,
        negative: &str,
        template: TemplateId,
        overwrite: bool,
    ) -> Result<()> {
        validate_field(attribute, "attribute")?;
        validate_field(positive, "positive adjective")?;
        validate_field(negative, "negative adjective")?;
        let entry = RegistryEntry {
            attribute: attribute.to_string(),
            template,
            positive: positive.to_string(),
            negative: negative.to_string(),
        };
        entry.pair()?;
        match self.entries.iter_mut().find(|e| e.attribute == attribute) {
            Some(_) if !overwrite => Err(Error::Conflict(attribute.to_string())),
            Some(existing) => {
                *existing = entry;
                Ok(())
            }
            None => {
                self.entries.push(entry);
                Ok(())
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# attribute | template | positive adjective | negative adjective\n");
        for e in &self.entries {
            out.push_str(&format!("{} | {} | {} | {}\n", e.attribute, e.template, e.positive, e.negative));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reg = Self::empty();
        let mut problems = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            if fields.len() != 4 {
                problems.push(format!("line {}: expected 4 `|`-separated fields, found {}", lineno + 1, fields.len()));
                continue;
            }
            let res = fields[1]
                .parse::<TemplateId>()
                .and_then(|t| reg.register_pair(fields[0], fields[2], fields[3], t, false));
            if let Err(e) = res {
                problems.push(format!("line {}: {e}", lineno + 1));
            }
        }
        if problems.is_empty() {
            Ok(reg)
        } else {
            Err(Error::Ingestion {
                source_name: "prompt registry".into(),
                problems,
            })
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn validate_field(value: &str, what: &str) -> Result<()> {
    if value.trim().is_empty() {
        return Err(Error::Input(format!("{what} must not be empty")));
    }
    if value.contains('|') || value.contains('\n') || value.trim() != value {
        return Err(Error::Input(format!(
            "{what} `{value}` may not contain `|`, newlines, or surrounding whitespace"
        )));
    }
    Ok(())
}
