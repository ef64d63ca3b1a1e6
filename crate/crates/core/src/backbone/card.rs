//! Model card: the TOML sidecar describing a converted checkpoint.
//!
//! ```toml
//! variant = "residual-attnpool"
//! embed_dim = 1024
//! native_input_size = 224
//! vision_heads = 32
//! text_heads = 8
//! context_length = 77
//! mean = [0.48145466, 0.4578275, 0.40821073]
//! std = [0.26862954, 0.26130258, 0.27577711]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Variant;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub variant: Variant,
    pub embed_dim: usize,
    pub native_input_size: usize,
    pub vision_heads: usize,
    pub text_heads: usize,
    #[serde(default = "default_context_length")]
    pub context_length: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

fn default_context_length() -> usize {
    77
}

impl ModelCard {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let card: ModelCard = toml::from_str(text).map_err(|e| e.to_string())?;
        if card.std.iter().any(|&s| !(s > 0.0)) {
            return Err("normalization std entries must be positive".into());
        }
        if card.embed_dim == 0 || card.vision_heads == 0 || card.text_heads == 0 || card.native_input_size == 0 {
            return Err("embed_dim, heads and native_input_size must be positive".into());
        }
        Ok(card)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::asset(path, m))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model card serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
