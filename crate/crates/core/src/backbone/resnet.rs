//! Residual image encoder with attention pooling.
//!
//! Stem of three 3x3 convolutions and a 2x average pool, four stages of
//! bottleneck blocks (anti-aliased by average pooling before strided
//! convolutions), and a single-query multi-head attention pool whose query
//! is the spatial mean token. Total downsampling is 32.

use ndarray::{concatenate, s, Array2, Array3, Axis};

use super::nn::{attention, avg_pool, count_indexed, relu_inplace, visit_array, Conv2d, Linear, Weights};
use super::surgery::{resample_with_class_token, PosEmbeddingMode};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
pub const DOWNSAMPLE: usize = 32;

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    stride: usize,
    downsample: Option<Conv2d>,
}

impl Bottleneck {
    fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let mut out = self.conv1.forward(x)?;
        relu_inplace(&mut out);
        let mut out = self.conv2.forward(&out)?;
        relu_inplace(&mut out);
        let out = avg_pool(&out, self.stride)?;
        let mut out = self.conv3.forward(&out)?;
        match &self.downsample {
            Some(ds) => out += &ds.forward(&avg_pool(x, self.stride)?)?,
            None => out += x,
        }
        relu_inplace(&mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct AttnPool {
    positional: Option<Array2<f64>>,
    q: Linear,
    k: Linear,
    v: Linear,
    c: Linear,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct ResNetEncoder {
    stem: [Conv2d; 3],
    stages: Vec<Vec<Bottleneck>>,
    pool: AttnPool,
    native_grid: usize,
    mode: PosEmbeddingMode,
}

impl ResNetEncoder {
    pub(crate) fn load(w: &Weights, heads: usize, native_input_size: usize, mode: PosEmbeddingMode) -> Result<Self> {
        let stem = [
            Conv2d::load(w, "visual.conv1", 2, 1)?.fold_batch_norm(w, "visual.bn1", BN_EPS)?,
            Conv2d::load(w, "visual.conv2", 1, 1)?.fold_batch_norm(w, "visual.bn2", BN_EPS)?,
            Conv2d::load(w, "visual.conv3", 1, 1)?.fold_batch_norm(w, "visual.bn3", BN_EPS)?,
        ];
        let mut stages = Vec::with_capacity(4);
        for (si, first_stride) in [1usize, 2, 2, 2].into_iter().enumerate() {
            let prefix = format!("visual.layer{}", si + 1);
            let n = count_indexed(w.archive(), &prefix);
            if n == 0 {
                return Err(Error::Config(format!("checkpoint has no blocks under `{prefix}`")));
            }
            let mut blocks = Vec::with_capacity(n);
            for bi in 0..n {
                let p = format!("{prefix}.{bi}");
                let stride = if bi == 0 { first_stride } else { 1 };
                let ds_name = format!("{p}.downsample.0");
                let downsample = if w.has(&format!("{ds_name}.weight")) {
                    Some(Conv2d::load(w, &ds_name, 1, 0)?.fold_batch_norm(w, &format!("{p}.downsample.1"), BN_EPS)?)
                } else {
                    None
                };
                blocks.push(Bottleneck {
                    conv1: Conv2d::load(w, &format!("{p}.conv1"), 1, 0)?.fold_batch_norm(w, &format!("{p}.bn1"), BN_EPS)?,
                    conv2: Conv2d::load(w, &format!("{p}.conv2"), 1, 1)?.fold_batch_norm(w, &format!("{p}.bn2"), BN_EPS)?,
                    conv3: Conv2d::load(w, &format!("{p}.conv3"), 1, 0)?.fold_batch_norm(w, &format!("{p}.bn3"), BN_EPS)?,
                    stride,
                    downsample,
                });
            }
            stages.push(blocks);
        }
        let pos_key = "visual.attnpool.positional_embedding";
        let positional = if w.has(pos_key) { Some(w.mat(pos_key)?) } else { None };
        let native_grid = native_input_size / DOWNSAMPLE;
        if let Some(p) = &positional {
            if p.nrows() != native_grid * native_grid + 1 {
                return Err(Error::Config(format!(
                    "positional embedding has {} rows, expected {} for a {native_input_size}px input",
                    p.nrows(),
                    native_grid * native_grid + 1
                )));
            }
        } else if mode != PosEmbeddingMode::Removed {
            return Err(Error::Config(format!("{mode} mode needs `{pos_key}` in the checkpoint")));
        }
        let lin = |name: &str| {
            Linear::load(
                w,
                &format!("visual.attnpool.{name}.weight"),
                Some(&format!("visual.attnpool.{name}.bias")),
            )
        };
        Ok(Self {
            stem,
            stages,
            pool: AttnPool {
                positional: if mode == PosEmbeddingMode::Removed { None } else { positional },
                q: lin("q_proj")?,
                k: lin("k_proj")?,
                v: lin("v_proj")?,
                c: lin("c_proj")?,
                heads,
            },
            native_grid,
            mode,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.pool.c.out_features()
    }

    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        for c in &self.stem {
            c.visit_params(f);
        }
        for b in self.stages.iter().flatten() {
            for c in [&b.conv1, &b.conv2, &b.conv3].into_iter().chain(&b.downsample) {
                c.visit_params(f);
            }
        }
        if let Some(p) = &self.pool.positional {
            visit_array(p, f);
        }
        for l in [&self.pool.q, &self.pool.k, &self.pool.v, &self.pool.c] {
            l.visit_params(f);
        }
    }

    /// Normalized `(3, H, W)` input to an embedding vector.
    pub fn forward(&self, x: &Array3<f64>) -> Result<Vec<f64>> {
        let mut h = x.clone();
        for conv in &self.stem {
            h = conv.forward(&h)?;
            relu_inplace(&mut h);
        }
        h = avg_pool(&h, 2)?;
        for stage in &self.stages {
            for block in stage {
                h = block.forward(&h)?;
            }
        }
        self.pool_forward(&h)
    }

    fn pool_forward(&self, h: &Array3<f64>) -> Result<Vec<f64>> {
        let (c, gh, gw) = h.dim();
        let tokens = h
            .view()
            .into_shape_with_order((c, gh * gw))
            .expect("contiguous")
            .t()
            .to_owned();
        let mean = tokens.mean_axis(Axis(0)).expect("non-empty grid").insert_axis(Axis(0));
        let mut seq = concatenate(Axis(0), &[mean.view(), tokens.view()]).expect("same width");
        match (self.mode, &self.pool.positional) {
            (PosEmbeddingMode::Removed, _) | (_, None) => {}
            (PosEmbeddingMode::Vanilla, Some(p)) => {
                if (gh, gw) != (self.native_grid, self.native_grid) {
                    return Err(Error::Input(format!(
                        "vanilla positional embedding needs a {0}x{0} token grid, got {gh}x{gw}",
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
        let q = self.pool.q.forward(seq.slice(s![..1, ..]));
        let k = self.pool.k.forward(seq.view());
        let v = self.pool.v.forward(seq.view());
        let (o, _) = attention(q.view(), k.view(), v.view(), self.pool.heads, false)?;
        let out = self.pool.c.forward(o.view());
        Ok(out.row(0).to_vec())
    }
}
