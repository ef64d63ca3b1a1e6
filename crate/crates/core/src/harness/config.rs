//! Harness configuration file (TOML).
//!
//! ```toml
//! cache_dir = ".lookfeel-cache"   # omit to disable caching
//! workers = 0                     # 0 = one per core
//! deterministic = false           # true forces sequential execution
//! seed = 0
//! registry = "prompts.txt"        # optional custom prompt pairs
//!
//! [backbone]
//! variant = "residual-attnpool"
//! pos_embedding_mode = "removed"
//! native_input_size = 224
//! checkpoint_path = "models/rn50.lfta"
//! vocab_path = "models/rn50.vocab.txt.gz"
//!
//! [tune]
//! learning_rate = 0.002
//! iterations = 100000
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::prompts::PromptRegistry;
use crate::tuner::TuneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub backbone: Option<BackboneConfig>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub tune: TuneConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            backbone: None,
            cache_dir: None,
            workers: 0,
            deterministic: false,
            seed: 0,
            registry: None,
            tune: TuneConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(b) = cfg.backbone.as_mut() {
            fix(&mut b.checkpoint_path);
            fix(&mut b.vocab_path);
            if let Some(c) = b.model_card_path.as_mut() {
                fix(c);
            }
        }
        if let Some(c) = cfg.cache_dir.as_mut() {
            fix(c);
        }
        if let Some(r) = cfg.registry.as_mut() {
            fix(r);
        }
        cfg.tune.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn execution(&self) -> Execution {
        if self.deterministic {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    /// Builtin pairs plus (overriding) those of the configured registry file.
    pub fn registry(&self) -> Result<PromptRegistry> {
        let mut reg = PromptRegistry::builtin();
        if let Some(path) = &self.registry {
            if path.exists() {
                for e in PromptRegistry::load(path)?.entries() {
                    reg.register_pair(&e.attribute, &e.positive, &e.negative, e.template, true)?;
                }
            }
        }
        Ok(reg)
    }

    pub fn backbone(&self) -> Result<&BackboneConfig> {
        self.backbone
            .as_ref()
            .ok_or_else(|| Error::Config("no [backbone] section in the configuration".into()))
    }
}
