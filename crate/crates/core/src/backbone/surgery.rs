//! Positional-embedding surgery.
//!
//! * `Vanilla`: weights untouched, inputs must match the native resolution.
//! * `Removed`: the positional tensor is dropped from the weights, so the
//!   encoder adds no positional term and accepts any spatial grid.
//! * `Interpolated`: weights untouched; at embed time the spatial part of the
//!   positional grid is bilinearly resampled to the input's token grid
//!   (half-pixel centers, edge clamped).

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::archive::TensorArchive;
use super::Variant;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosEmbeddingMode {
    Removed,
    Vanilla,
    Interpolated,
}

impl PosEmbeddingMode {
    pub const ALL: [PosEmbeddingMode; 3] = [
        PosEmbeddingMode::Removed,
        PosEmbeddingMode::Vanilla,
        PosEmbeddingMode::Interpolated,
    ];
}

impl fmt::Display for PosEmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosEmbeddingMode::Removed => "removed",
            PosEmbeddingMode::Vanilla => "vanilla",
            PosEmbeddingMode::Interpolated => "interpolated",
        })
    }
}

impl FromStr for PosEmbeddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "removed" | "none" => Ok(PosEmbeddingMode::Removed),
            "vanilla" => Ok(PosEmbeddingMode::Vanilla),
            "interpolated" => Ok(PosEmbeddingMode::Interpolated),
            other => Err(Error::Config(format!(
                "unknown positional-embedding mode `{other}` (expected removed, vanilla or interpolated)"
            ))),
        }
    }
}

/// Archive key of the image encoder's positional embedding.
pub fn positional_key(variant: Variant) -> &'static str {
    match variant {
        Variant::ResidualAttnPool => "visual.attnpool.positional_embedding",
        Variant::PatchTransformer => "visual.positional_embedding",
    }
}

pub fn apply_positional_surgery(
    mut weights: TensorArchive,
    variant: Variant,
    mode: PosEmbeddingMode,
) -> Result<TensorArchive> {
    let key = positional_key(variant);
    if !weights.contains(key) {
        return Err(Error::Config(format!(
            "checkpoint has no positional embedding at `{key}`"
        )));
    }
    if mode == PosEmbeddingMode::Removed {
        weights.remove(key);
    }
    Ok(weights)
}

/// Bilinear resampling of a `(gh * gw, C)` grid of embeddings to
/// `(oh * ow, C)`, half-pixel aligned.
pub fn resample_grid(grid: ArrayView2<f64>, from: (usize, usize), to: (usize, usize)) -> Result<Array2<f64>> {
    let (gh, gw) = from;
    let (oh, ow) = to;
    if grid.nrows() != gh * gw {
        return Err(Error::Contract(format!(
            "grid has {} rows, expected {gh}x{gw}",
            grid.nrows()
        )));
    }
    if oh == 0 || ow == 0 {
        return Err(Error::Input("target grid must be non-empty".into()));
    }
    if (gh, gw) == (oh, ow) {
        return Ok(grid.to_owned());
    }
    let axis = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, src - i0 as f64)
    };
    let c = grid.ncols();
    let mut out = Array2::zeros((oh * ow, c));
    for y in 0..oh {
        let (y0, y1, ly) = axis(y, oh, gh);
        for x in 0..ow {
            let (x0, x1, lx) = axis(x, ow, gw);
            let mut row = out.row_mut(y * ow + x);
            for (wgt, gy, gx) in [
                ((1.0 - ly) * (1.0 - lx), y0, x0),
                ((1.0 - ly) * lx, y0, x1),
                (ly * (1.0 - lx), y1, x0),
                (ly * lx, y1, x1),
            ] {
                if wgt != 0.0 {
                    row.scaled_add(wgt, &grid.row(gy * gw + gx));
                }
            }
        }
    }
    Ok(out)
}

/// Resamples a positional table whose first row is the pooled/class token.
pub fn resample_with_class_token(pos: ArrayView2<f64>, from: (usize, usize), to: (usize, usize)) -> Result<Array2<f64>> {
    let spatial = resample_grid(pos.slice(s![1.., ..]), from, to)?;
    let mut out = Array2::zeros((spatial.nrows() + 1, pos.ncols()));
    out.row_mut(0).assign(&pos.row(0));
    out.slice_mut(s![1.., ..]).assign(&spatial);
    Ok(out)
}
