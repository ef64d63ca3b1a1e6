//! Patch-transformer image encoder. Positional information enters right
//! after patch embedding, before any transformer block.

use ndarray::{concatenate, Array1, Array2, Array3, Axis};

use super::nn::{count_indexed, visit_array, Conv2d, LayerNorm, ResidualBlock, Weights};
use super::surgery::{resample_with_class_token, PosEmbeddingMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct VitEncoder {
    patch_embed: Conv2d,
    patch: usize,
    class_embedding: Array1<f64>,
    positional: Option<Array2<f64>>,
    ln_pre: super::nn::LayerNorm,
    blocks: Vec<ResidualBlock>,
    ln_post: LayerNorm,
    proj: Array2<f64>,
    native_grid: usize,
    mode: PosEmbeddingMode,
}

impl VitEncoder {
    pub(crate) fn load(w: &Weights, heads: usize, native_input_size: usize, mode: PosEmbeddingMode) -> Result<Self> {
        let shape = w.shape("visual.conv1.weight")?.to_vec();
        if shape.len() != 4 {
            return Err(Error::Config("visual.conv1.weight must be 4-D".into()));
        }
        let patch = shape[2];
        let patch_embed = Conv2d::load(w, "visual.conv1", patch, 0)?;
        let native_grid = native_input_size / patch;
        let pos_key = "visual.positional_embedding";
        let positional = if w.has(pos_key) { Some(w.mat(pos_key)?) } else { None };
        if let Some(p) = &positional {
            if p.nrows() != native_grid * native_grid + 1 {
                return Err(Error::Config(format!(
                    "positional embedding has {} rows, expected {}",
                    p.nrows(),
                    native_grid * native_grid + 1
                )));
            }
        } else if mode != PosEmbeddingMode::Removed {
            return Err(Error::Config(format!("{mode} mode needs `{pos_key}` in the checkpoint")));
        }
        let n = count_indexed(w.archive(), "visual.transformer.resblocks");
        let blocks = (0..n)
            .map(|i| ResidualBlock::load(w, &format!("visual.transformer.resblocks.{i}"), heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            patch_embed,
            patch,
            class_embedding: w.vec("visual.class_embedding")?,
            positional: if mode == PosEmbeddingMode::Removed { None } else { positional },
            ln_pre: LayerNorm::load(w, "visual.ln_pre")?,
            blocks,
            ln_post: LayerNorm::load(w, "visual.ln_post")?,
            proj: w.mat("visual.proj")?,
            native_grid,
            mode,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.proj.ncols()
    }

    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        self.patch_embed.visit_params(f);
        visit_array(&self.class_embedding, f);
        if let Some(p) = &self.positional {
            visit_array(p, f);
        }
        self.ln_pre.visit_params(f);
        for b in &self.blocks {
            b.visit_params(f);
        }
        self.ln_post.visit_params(f);
        visit_array(&self.proj, f);
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Vec<f64>> {
        let h = self.patch_embed.forward(x)?;
        let (c, gh, gw) = h.dim();
        let tokens = h
            .view()
            .into_shape_with_order((c, gh * gw))
            .expect("contiguous")
            .t()
            .to_owned();
        let cls = self.class_embedding.view().insert_axis(Axis(0));
        let mut seq = concatenate(Axis(0), &[cls, tokens.view()]).expect("same width");
        match (self.mode, &self.positional) {
            (PosEmbeddingMode::Removed, _) | (_, None) => {}
            (PosEmbeddingMode::Vanilla, Some(p)) => {
                if (gh, gw) != (self.native_grid, self.native_grid) {
                    return Err(Error::Input(format!(
                        "vanilla positional embedding needs a {0}x{0} patch grid, got {gh}x{gw}",
                        self.native_grid
                    )));
                }
                seq += p;
            }
            (PosEmbeddingMode::Interpolated, Some(p)) => {
                let g = self.native_grid;
                seq += &resample_with_class_token(p.view(), (g, g), (gh, gw))?;
            }
        }
        let mut seq = self.ln_pre.forward(seq.view());
        for b in &self.blocks {
            seq = b.forward(&seq, false)?;
        }
        let cls_out = self.ln_post.forward(seq.slice(ndarray::s![..1, ..]));
        Ok(cls_out.dot(&self.proj).row(0).to_vec())
    }
}
