//! Causal text transformer with a reverse pass to its input embeddings.
//!
//! The output embedding is read at the end-of-text position. Because
//! attention is causal, positions after it (padding) cannot influence the
//! result, so sequences are truncated right after the end-of-text token.

use ndarray::{s, Array1, Array2};

use super::nn::{count_indexed, visit_array, BlockCache, LayerNorm, LnCache, ResidualBlock, Weights};
use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TextEncoder {
    token_embedding: Array2<f64>,
    positional: Array2<f64>,
    blocks: Vec<ResidualBlock>,
    ln_final: LayerNorm,
    projection: Array2<f64>,
}

/// Saved activations for [`TextEncoder::backward`].
pub struct TextTrace {
    blocks: Vec<BlockCache>,
    ln_final: LnCache,
    eot_index: usize,
    len: usize,
}

impl TextEncoder {
    pub(crate) fn load(w: &Weights, heads: usize) -> Result<Self> {
        let n = count_indexed(w.archive(), "transformer.resblocks");
        if n == 0 {
            return Err(Error::Config("checkpoint has no text transformer blocks".into()));
        }
        let blocks = (0..n)
            .map(|i| ResidualBlock::load(w, &format!("transformer.resblocks.{i}"), heads))
            .collect::<Result<Vec<_>>>()?;
        let enc = Self {
            token_embedding: w.mat("token_embedding.weight")?,
            positional: w.mat("positional_embedding")?,
            blocks,
            ln_final: LayerNorm::load(w, "ln_final")?,
            projection: w.mat("text_projection")?,
        };
        if enc.positional.ncols() != enc.width() || enc.projection.nrows() != enc.width() {
            return Err(Error::Config("text tower widths are inconsistent".into()));
        }
        Ok(enc)
    }

    pub fn width(&self) -> usize {
        self.token_embedding.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.nrows()
    }

    pub fn context_length(&self) -> usize {
        self.positional.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// Embedding-table rows for `ids`, shape `(ids.len(), width)`.
    pub fn lookup(&self, ids: &[u32]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((ids.len(), self.width()));
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.vocab_size() {
                return Err(Error::Input(format!(
                    "token id {id} outside the embedding table ({} rows)",
                    self.vocab_size()
                )));
            }
            out.row_mut(i).assign(&self.token_embedding.row(id));
        }
        Ok(out)
    }

    pub fn encode_tokens(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        if tokens.ids().len() > self.context_length() {
            return Err(Error::Input(format!(
                "{} tokens exceed the text context of {}",
                tokens.ids().len(),
                self.context_length()
            )));
        }
        let x = self.lookup(&tokens.ids()[..=tokens.eot_index()])?;
        Ok(self.forward_traced(x)?.0)
    }

    /// Encodes token-embedding rows whose last row is the end-of-text token.
    pub fn encode_embeddings(&self, x: Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: Array2<f64>) -> Result<(Vec<f64>, TextTrace)> {
        let len = x.nrows();
        if len == 0 || len > self.context_length() {
            return Err(Error::Input(format!(
                "sequence length {len} outside 1..={}",
                self.context_length()
            )));
        }
        if x.ncols() != self.width() {
            return Err(Error::Contract(format!(
                "token embeddings have width {}, encoder expects {}",
                x.ncols(),
                self.width()
            )));
        }
        let mut h = x + &self.positional.slice(s![..len, ..]);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward_cached(&h, true)?;
            caches.push(cache);
            h = next;
        }
        let eot = len - 1;
        let (normed, ln_cache) = self.ln_final.forward_cached(h.slice(s![eot..eot + 1, ..]));
        let out = normed.dot(&self.projection).row(0).to_vec();
        Ok((
            out,
            TextTrace {
                blocks: caches,
                ln_final: ln_cache,
                eot_index: eot,
                len,
            },
        ))
    }

    /// Gradient of `<grad_out, encode(x)>` with respect to the input rows `x`.
    pub fn backward(&self, trace: &TextTrace, grad_out: &[f64]) -> Result<Array2<f64>> {
        if grad_out.len() != self.output_dim() {
            return Err(Error::Contract(format!(
                "output gradient has {} entries, expected {}",
                grad_out.len(),
                self.output_dim()
            )));
        }
        let g = Array1::from(grad_out.to_vec());
        let d_norm = self.projection.dot(&g).insert_axis(ndarray::Axis(0));
        let d_eot = self.ln_final.backward(d_norm.view(), &trace.ln_final);
        let mut dh = Array2::zeros((trace.len, self.width()));
        dh.row_mut(trace.eot_index).assign(&d_eot.row(0));
        for (b, cache) in self.blocks.iter().zip(&trace.blocks).rev() {
            dh = b.backward(&dh, cache);
        }
        // positional embeddings are additive constants
        Ok(dh)
    }

    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        visit_array(&self.token_embedding, f);
        visit_array(&self.positional, f);
        for b in &self.blocks {
            b.visit_params(f);
        }
        self.ln_final.visit_params(f);
        visit_array(&self.projection, f);
    }
}
