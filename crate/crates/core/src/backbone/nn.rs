//! Inference primitives over `ndarray`. Feature maps are `(C, H, W)`,
//! token sequences are `(L, D)` row-major.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use super::archive::{Tensor, TensorArchive};
use crate::error::{Error, Result};

pub(crate) struct Weights<'a> {
    archive: &'a TensorArchive,
}

impl<'a> Weights<'a> {
    pub fn new(archive: &'a TensorArchive) -> Self {
        Self { archive }
    }

    pub fn archive(&self) -> &'a TensorArchive {
        self.archive
    }

    pub fn has(&self, name: &str) -> bool {
        self.archive.contains(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&'a Tensor> {
        self.archive
            .get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor `{name}`")))
    }

    fn shaped(&self, name: &str, ndim: usize) -> Result<&'a Tensor> {
        let t = self.tensor(name)?;
        if t.shape.len() != ndim {
            return Err(Error::Config(format!(
                "tensor `{name}` has shape {:?}, expected {ndim} dims",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn vec(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.shaped(name, 1)?;
        Ok(t.data.iter().map(|&v| v as f64).collect())
    }

    pub fn mat(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.shaped(name, 2)?;
        Ok(Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.iter().map(|&v| v as f64).collect())
            .expect("shape validated"))
    }

    pub fn shape(&self, name: &str) -> Result<&'a [usize]> {
        Ok(&self.tensor(name)?.shape)
    }
}

/// 2-D convolution in im2col form. Weight is `(out, in * k * k)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Array2<f64>,
    bias: Option<Array1<f64>>,
    in_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub(crate) fn load(w: &Weights, prefix: &str, stride: usize, padding: usize) -> Result<Self> {
        let t = w.shaped(&format!("{prefix}.weight"), 4)?;
        let (out, cin, kh, kw) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
        if kh != kw {
            return Err(Error::Config(format!("{prefix}: non-square kernel {kh}x{kw}")));
        }
        let weight = Array2::from_shape_vec((out, cin * kh * kw), t.data.iter().map(|&v| v as f64).collect())
            .expect("shape validated");
        let bias_name = format!("{prefix}.bias");
        let bias = if w.has(&bias_name) { Some(w.vec(&bias_name)?) } else { None };
        Ok(Self {
            weight,
            bias,
            in_channels: cin,
            kernel: kh,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    /// Folds an inference-mode batch norm (`{prefix}.weight/bias/running_mean/running_var`).
    pub(crate) fn fold_batch_norm(mut self, w: &Weights, prefix: &str, eps: f64) -> Result<Self> {
        let gamma = w.vec(&format!("{prefix}.weight"))?;
        let beta = w.vec(&format!("{prefix}.bias"))?;
        let mean = w.vec(&format!("{prefix}.running_mean"))?;
        let var = w.vec(&format!("{prefix}.running_var"))?;
        let n = self.out_channels();
        if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&l| l != n) {
            return Err(Error::Config(format!("{prefix}: batch norm size does not match {n} channels")));
        }
        let mut bias = self.bias.take().unwrap_or_else(|| Array1::zeros(n));
        for o in 0..n {
            let scale = gamma[o] / (var[o] + eps).sqrt();
            self.weight.row_mut(o).mapv_inplace(|v| v * scale);
            bias[o] = (bias[o] - mean[o]) * scale + beta[o];
        }
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (c, h, wd) = x.dim();
        if c != self.in_channels {
            return Err(Error::Contract(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let k = self.kernel;
        let (p, st) = (self.padding, self.stride);
        if h + 2 * p < k || wd + 2 * p < k {
            return Err(Error::Input(format!("feature map {h}x{wd} is smaller than a {k}x{k} kernel")));
        }
        let ho = (h + 2 * p - k) / st + 1;
        let wo = (wd + 2 * p - k) / st + 1;
        let mut out = if k == 1 && st == 1 && p == 0 {
            let flat = x.view().into_shape_with_order((c, h * wd)).expect("contiguous");
            self.weight.dot(&flat)
        } else {
            let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
            for ci in 0..c {
                let plane = x.index_axis(Axis(0), ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let mut row = cols.row_mut((ci * k + ky) * k + kx);
                        for oy in 0..ho {
                            let iy = (oy * st + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * st + kx) as isize - p as isize;
                                if ix >= 0 && ix < wd as isize {
                                    row[oy * wo + ox] = plane[[iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                }
            }
            self.weight.dot(&cols)
        };
        if let Some(b) = &self.bias {
            for (mut row, &bv) in out.rows_mut().into_iter().zip(b) {
                row += bv;
            }
        }
        Ok(out.into_shape_with_order((self.out_channels(), ho, wo)).expect("sized above"))
    }
}

/// Average pooling with kernel = stride = `k` (floor mode).
pub fn avg_pool(x: &Array3<f64>, k: usize) -> Result<Array3<f64>> {
    if k == 1 {
        return Ok(x.clone());
    }
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / k, w / k);
    if ho == 0 || wo == 0 {
        return Err(Error::Input(format!("feature map {h}x{w} too small for {k}x{k} pooling")));
    }
    let inv = 1.0 / (k * k) as f64;
    let mut out = Array3::zeros((c, ho, wo));
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let win = x.slice(s![ci, oy * k..oy * k + k, ox * k..ox * k + k]);
                out[[ci, oy, ox]] = win.sum() * inv;
            }
        }
    }
    Ok(out)
}

pub fn relu_inplace(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Affine layer, weight `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    pub(crate) fn load(w: &Weights, weight: &str, bias: Option<&str>) -> Result<Self> {
        Ok(Self {
            weight: w.mat(weight)?,
            bias: bias.map(|b| w.vec(b)).transpose()?,
        })
    }

    pub fn out_features(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    /// Gradient with respect to the input only.
    pub fn backward_input(&self, dy: ArrayView2<f64>) -> Array2<f64> {
        dy.dot(&self.weight)
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Normalized rows and reciprocal std, kept for the backward pass.
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

impl LayerNorm {
    pub(crate) fn load(w: &Weights, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: w.vec(&format!("{prefix}.weight"))?,
            beta: w.vec(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, LnCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            *r = 1.0 / (var + LN_EPS).sqrt();
            let rs = *r;
            row.mapv_inplace(|v| (v - mean) * rs);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, dy: ArrayView2<f64>, cache: &LnCache) -> Array2<f64> {
        let d = dy.ncols() as f64;
        let dxhat = &dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let mean_g = g.sum() / d;
            let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            let r = cache.rstd[i];
            for j in 0..dy.ncols() {
                dx[[i, j]] = r * (g[j] - mean_g - xh[j] * mean_gx);
            }
        }
        dx
    }
}

pub fn quick_gelu(u: f64) -> f64 {
    u * crate::scoring::sigmoid(1.702 * u)
}

pub fn quick_gelu_grad(u: f64) -> f64 {
    let s = crate::scoring::sigmoid(1.702 * u);
    s + 1.702 * u * s * (1.0 - s)
}

/// Row-wise softmax in place; `-inf` entries become exact zeros.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Multi-head attention with separate query and key/value inputs.
///
/// `q`, `k`, `v` are already projected, shapes `(Lq, D)`, `(Lk, D)`,
/// `(Lk, D)`. Returns the concatenated head outputs `(Lq, D)` and the
/// per-head attention matrices.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
    causal: bool,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let d = q.ncols();
    if d % heads != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut sc = qh.dot(&kh.t()) * scale;
        if causal {
            for i in 0..sc.nrows() {
                for j in i + 1..sc.ncols() {
                    sc[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut sc);
        out.slice_mut(cols).assign(&sc.dot(&vh));
        probs.push(sc);
    }
    Ok((out, probs))
}

/// Packed-QKV self-attention block weights (`in_proj_weight` is `(3D, D)`).
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub in_proj: Linear,
    pub out_proj: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub(crate) fn load(w: &Weights, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            in_proj: Linear::load(w, &format!("{prefix}.in_proj_weight"), Some(&format!("{prefix}.in_proj_bias")))?,
            out_proj: Linear::load(w, &format!("{prefix}.out_proj.weight"), Some(&format!("{prefix}.out_proj.bias")))?,
            heads,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc: Linear,
    pub proj: Linear,
}

/// Pre-norm transformer block: `x + attn(ln_1(x))`, then `x + mlp(ln_2(x))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub ln_1: LayerNorm,
    pub attn: SelfAttention,
    pub ln_2: LayerNorm,
    pub mlp: Mlp,
}

/// Activations of one block needed to backpropagate to its input.
pub struct BlockCache {
    ln1: LnCache,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ln2: LnCache,
    pre_gelu: Array2<f64>,
}

impl ResidualBlock {
    pub(crate) fn load(w: &Weights, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            ln_1: LayerNorm::load(w, &format!("{prefix}.ln_1"))?,
            attn: SelfAttention::load(w, &format!("{prefix}.attn"), heads)?,
            ln_2: LayerNorm::load(w, &format!("{prefix}.ln_2"))?,
            mlp: Mlp {
                fc: Linear::load(w, &format!("{prefix}.mlp.c_fc.weight"), Some(&format!("{prefix}.mlp.c_fc.bias")))?,
                proj: Linear::load(w, &format!("{prefix}.mlp.c_proj.weight"), Some(&format!("{prefix}.mlp.c_proj.bias")))?,
            },
        })
    }

    pub fn forward(&self, x: &Array2<f64>, causal: bool) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, causal)?.0)
    }

    pub fn forward_cached(&self, x: &Array2<f64>, causal: bool) -> Result<(Array2<f64>, BlockCache)> {
        let d = x.ncols();
        let (h1, ln1) = self.ln_1.forward_cached(x.view());
        let qkv = self.attn.in_proj.forward(h1.view());
        let (o, probs) = attention(
            qkv.slice(s![.., ..d]),
            qkv.slice(s![.., d..2 * d]),
            qkv.slice(s![.., 2 * d..]),
            self.attn.heads,
            causal,
        )?;
        let x2 = x + &self.attn.out_proj.forward(o.view());
        let (h2, ln2) = self.ln_2.forward_cached(x2.view());
        let pre_gelu = self.mlp.fc.forward(h2.view());
        let act = pre_gelu.mapv(quick_gelu);
        let x3 = &x2 + &self.mlp.proj.forward(act.view());
        Ok((
            x3,
            BlockCache {
                ln1,
                qkv,
                probs,
                ln2,
                pre_gelu,
            },
        ))
    }

    /// Vector-Jacobian product with respect to the block input.
    pub fn backward(&self, dx3: &Array2<f64>, cache: &BlockCache) -> Array2<f64> {
        let d = dx3.ncols();
        let heads = self.attn.heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();

        // MLP branch
        let dact = self.mlp.proj.backward_input(dx3.view());
        let dpre = &dact * &cache.pre_gelu.mapv(quick_gelu_grad);
        let dh2 = self.mlp.fc.backward_input(dpre.view());
        let dx2 = dx3 + &self.ln_2.backward(dh2.view(), &cache.ln2);

        // attention branch
        let d_o = self.attn.out_proj.backward_input(dx2.view());
        let q = cache.qkv.slice(s![.., ..d]);
        let k = cache.qkv.slice(s![.., d..2 * d]);
        let v = cache.qkv.slice(s![.., 2 * d..]);
        let mut dqkv = Array2::<f64>::zeros(cache.qkv.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * hd..(h + 1) * hd];
            let doh = d_o.slice(cols);
            let dp = doh.dot(&v.slice(cols).t());
            let dv = p.t().dot(&doh);
            let mut ds = p * &dp;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = row.sum();
                // row currently holds p * dp; subtract p * sum(p * dp)
                row.zip_mut_with(&prow, |r, &pv| *r -= pv * dot);
            }
            let dq = ds.dot(&k.slice(cols)) * scale;
            let dk = ds.t().dot(&q.slice(cols)) * scale;
            dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&dq);
            dqkv.slice_mut(s![.., d + h * hd..d + (h + 1) * hd]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]).assign(&dv);
        }
        let dh1 = self.attn.in_proj.backward_input(dqkv.view());
        &dx2 + &self.ln_1.backward(dh1.view(), &cache.ln1)
    }
}

pub(crate) fn visit_array<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, f: &mut dyn FnMut(&[f64])) {
    match a.as_slice_memory_order() {
        Some(s) => f(s),
        None => f(&a.iter().copied().collect::<Vec<_>>()),
    }
}

impl Conv2d {
    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        visit_array(&self.weight, f);
        if let Some(b) = &self.bias {
            visit_array(b, f);
        }
    }
}

impl Linear {
    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        visit_array(&self.weight, f);
        if let Some(b) = &self.bias {
            visit_array(b, f);
        }
    }
}

impl LayerNorm {
    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        visit_array(&self.gamma, f);
        visit_array(&self.beta, f);
    }
}

impl ResidualBlock {
    pub(crate) fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        self.ln_1.visit_params(f);
        self.attn.in_proj.visit_params(f);
        self.attn.out_proj.visit_params(f);
        self.ln_2.visit_params(f);
        self.mlp.fc.visit_params(f);
        self.mlp.proj.visit_params(f);
    }
}

/// Number of `{prefix}.{i}.` sub-modules present in the archive.
pub(crate) fn count_indexed(archive: &TensorArchive, prefix: &str) -> usize {
    let p = format!("{prefix}.");
    archive
        .names()
        .filter_map(|n| n.strip_prefix(&p))
        .filter_map(|rest| rest.split('.').next()?.parse::<usize>().ok())
        .max()
        .map_or(0, |m| m + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn conv_matches_direct_sum() {
        let mut a = TensorArchive::new();
        let wdata: Vec<f32> = (0..2 * 3 * 3 * 3).map(|i| ((i * 7 % 11) as f32 - 5.0) / 10.0).collect();
        a.insert("c.weight", Tensor::new(vec![2, 3, 3, 3], wdata.clone()).unwrap());
        a.insert("c.bias", Tensor::new(vec![2], vec![0.1, -0.2]).unwrap());
        let w = Weights::new(&a);
        let conv = Conv2d::load(&w, "c", 2, 1).unwrap();
        let x = Array3::from_shape_fn((3, 5, 6), |(c, y, x)| ((c * 31 + y * 7 + x * 3) % 13) as f64 / 13.0);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.dim(), (2, 3, 3));
        for o in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = [0.1f32 as f64, -0.2f32 as f64][o];
                    for c in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                    acc += wdata[((o * 3 + c) * 3 + ky) * 3 + kx] as f64 * x[[c, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    assert!((y[[o, oy, ox]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn avg_pool_floor_mode() {
        let x = Array3::from_shape_fn((1, 5, 4), |(_, y, x)| (y * 4 + x) as f64);
        let p = avg_pool(&x, 2).unwrap();
        assert_eq!(p.dim(), (1, 2, 2));
        assert_eq!(p[[0, 0, 0]], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm {
            gamma: Array1::ones(4),
            beta: Array1::zeros(4),
        };
        let y = ln.forward(array![[1.0, 2.0, 3.0, 4.0], [10.0, 0.0, -10.0, 5.0]].view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            assert!((row.mapv(|v| v * v).sum() / 4.0 - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn causal_attention_ignores_future_tokens() {
        let q = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1);
        let (a, _) = attention(q.view(), q.view(), q.view(), 2, true).unwrap();
        let (b, _) = attention(q.slice(s![..2, ..]), q.slice(s![..2, ..]), q.slice(s![..2, ..]), 2, true).unwrap();
        assert!((&a.slice(s![..2, ..]) - &b).iter().all(|v| v.abs() < 1e-15));
    }
}
