//! Document encoder: word + learned positional embeddings followed by a
//! stack of self-attention layers whose feed-forward sublayer is a
//! convolutional block (width-1, width-5, width-1).
//!
//! Padded positions are zero-masked after the embedding and after every
//! sublayer, attention masks padded keys, and the intermediate convolution
//! input is re-masked, so the representation of a real token does not
//! depend on how much padding follows it.
//!
//! All gradients are computed manually; [`Encoder::forward`] returns the
//! caches [`Encoder::backward`] consumes.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::UNK_ID;
use crate::error::{Error, Result};
use crate::util::{dropout_mask, ensure_finite, glorot_uniform, Mode, RunRng};

const LN_EPS: f64 = 1e-5;

/// Which encoding path produces token representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Full self-attention stack.
    Transformer,
    /// Embeddings only (word + position); no contextualization.
    Bag,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(EncoderKind::Transformer),
            "bag" => Ok(EncoderKind::Bag),
            other => Err(Error::config(format!(
                "unknown encoder kind {other:?} (expected \"transformer\" or \"bag\")"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Transformer => "transformer",
            EncoderKind::Bag => "bag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_filters: usize,
    pub dropout: f64,
    pub word_dropout: f64,
    /// Positional table size; documents longer than this are rejected.
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 64,
            num_layers: 2,
            num_heads: 8,
            ffn_filters: 256,
            dropout: 0.3,
            word_dropout: 0.15,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must cover PAD and UNK"));
        }
        if self.d_model == 0 || self.max_len == 0 {
            return Err(Error::config("d_model and max_len must be positive"));
        }
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "d_model {} must be divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.num_layers > 0 && self.ffn_filters == 0 {
            return Err(Error::config("ffn_filters must be positive"));
        }
        for (name, p) in [("dropout", self.dropout), ("word_dropout", self.word_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    /// Width-1 convolution `[d_model × ffn_filters]`.
    pub conv1_w: Array2<f64>,
    pub conv1_b: Array1<f64>,
    /// Width-5 convolution `[5 × ffn_filters × ffn_filters]`.
    pub conv5_w: Array3<f64>,
    pub conv5_b: Array1<f64>,
    /// Width-1 convolution back `[ffn_filters × d_model]`.
    pub conv_out_w: Array2<f64>,
    pub conv_out_b: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
}

impl LayerParams {
    fn new(rng: &mut RunRng, dm: usize, ff: usize) -> Self {
        let square = |rng: &mut RunRng| {
            Array2::from_shape_vec((dm, dm), glorot_uniform(rng, dm, dm, dm * dm)).unwrap()
        };
        let wq = square(rng);
        let wk = square(rng);
        let wv = square(rng);
        let wo = square(rng);
        let conv1_w =
            Array2::from_shape_vec((dm, ff), glorot_uniform(rng, dm, ff, dm * ff)).unwrap();
        let conv5_w = Array3::from_shape_vec(
            (5, ff, ff),
            glorot_uniform(rng, 5 * ff, ff, 5 * ff * ff),
        )
        .unwrap();
        let conv_out_w =
            Array2::from_shape_vec((ff, dm), glorot_uniform(rng, ff, dm, ff * dm)).unwrap();
        LayerParams {
            wq,
            wk,
            wv,
            wo,
            conv1_w,
            conv1_b: Array1::zeros(ff),
            conv5_w,
            conv5_b: Array1::zeros(ff),
            conv_out_w,
            conv_out_b: Array1::zeros(dm),
            ln1_gamma: Array1::ones(dm),
            ln1_beta: Array1::zeros(dm),
            ln2_gamma: Array1::ones(dm),
            ln2_beta: Array1::zeros(dm),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerParams {
            wq: Array2::zeros(self.wq.raw_dim()),
            wk: Array2::zeros(self.wk.raw_dim()),
            wv: Array2::zeros(self.wv.raw_dim()),
            wo: Array2::zeros(self.wo.raw_dim()),
            conv1_w: Array2::zeros(self.conv1_w.raw_dim()),
            conv1_b: Array1::zeros(self.conv1_b.raw_dim()),
            conv5_w: Array3::zeros(self.conv5_w.raw_dim()),
            conv5_b: Array1::zeros(self.conv5_b.raw_dim()),
            conv_out_w: Array2::zeros(self.conv_out_w.raw_dim()),
            conv_out_b: Array1::zeros(self.conv_out_b.raw_dim()),
            ln1_gamma: Array1::zeros(self.ln1_gamma.raw_dim()),
            ln1_beta: Array1::zeros(self.ln1_beta.raw_dim()),
            ln2_gamma: Array1::zeros(self.ln2_gamma.raw_dim()),
            ln2_beta: Array1::zeros(self.ln2_beta.raw_dim()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub word_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

/// Gradient accumulator with the same shapes as [`Encoder`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub word_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug)]
struct LnCache {
    xhat: Array3<f64>,
    inv_std: Array2<f64>,
}

#[derive(Debug)]
struct SublayerCache {
    dropout: Option<Array3<f64>>,
    ln: LnCache,
}

#[derive(Debug)]
struct LayerCache {
    x_in: Array3<f64>,
    q: Array3<f64>,
    k: Array3<f64>,
    v: Array3<f64>,
    /// `[batch, heads, N, N]` post-softmax attention weights.
    probs: ndarray::Array4<f64>,
    ctx: Array3<f64>,
    attn: SublayerCache,
    x_mid: Array3<f64>,
    r1_pre: Array3<f64>,
    r1: Array3<f64>,
    r2_pre: Array3<f64>,
    r2: Array3<f64>,
    ffn: SublayerCache,
}

#[derive(Debug)]
pub struct EncoderCache {
    effective_ids: Array2<usize>,
    embed_dropout: Option<Array3<f64>>,
    mask: Array2<bool>,
    layers: Vec<LayerCache>,
}

impl EncoderCache {
    /// Post-softmax attention weights of layer `l`, `[batch, heads, N, N]`.
    pub fn attention_probs(&self, l: usize) -> ndarray::ArrayView4<'_, f64> {
        self.layers[l].probs.view()
    }
}

fn zero_masked(x: &mut Array3<f64>, mask: &Array2<bool>) {
    let (batch, n, _) = x.dim();
    for b in 0..batch {
        for t in 0..n {
            if !mask[[b, t]] {
                x.slice_mut(s![b, t, ..]).fill(0.0);
            }
        }
    }
}

fn layer_norm(
    x: &Array3<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array3<f64>, LnCache) {
    let (batch, n, dm) = x.dim();
    let mut out = Array3::zeros((batch, n, dm));
    let mut xhat = Array3::zeros((batch, n, dm));
    let mut inv_std = Array2::zeros((batch, n));
    for b in 0..batch {
        for t in 0..n {
            let row = x.slice(s![b, t, ..]);
            let mean = row.sum() / dm as f64;
            let var = row.fold(0.0, |a, &v| a + (v - mean) * (v - mean)) / dm as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[[b, t]] = inv;
            for c in 0..dm {
                let xh = (row[c] - mean) * inv;
                xhat[[b, t, c]] = xh;
                out[[b, t, c]] = gamma[c] * xh + beta[c];
            }
        }
    }
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &LnCache,
    gamma: &Array1<f64>,
    d_out: &Array3<f64>,
    d_gamma: &mut Array1<f64>,
    d_beta: &mut Array1<f64>,
) -> Array3<f64> {
    let (batch, n, dm) = cache.xhat.dim();
    let mut d_x = Array3::zeros((batch, n, dm));
    for b in 0..batch {
        for t in 0..n {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c in 0..dm {
                let d = d_out[[b, t, c]];
                let xh = cache.xhat[[b, t, c]];
                d_gamma[c] += d * xh;
                d_beta[c] += d;
                let dxh = d * gamma[c];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh;
            }
            let inv = cache.inv_std[[b, t]];
            let m = dm as f64;
            for c in 0..dm {
                let dxh = d_out[[b, t, c]] * gamma[c];
                let xh = cache.xhat[[b, t, c]];
                d_x[[b, t, c]] = inv * (dxh - sum_dxhat / m - xh * sum_dxhat_xhat / m);
            }
        }
    }
    d_x
}

/// `out[b,t,:] = x[b,t,:]·W + bias` for every token.
fn pointwise(x: &Array3<f64>, w: &Array2<f64>, bias: &Array1<f64>) -> Array3<f64> {
    let (batch, n, din) = x.dim();
    let dout = w.ncols();
    let flat = x.view().into_shape_with_order((batch * n, din)).unwrap();
    let mut out = flat.dot(w);
    out += bias;
    out.into_shape_with_order((batch, n, dout)).unwrap()
}

fn pointwise_backward(
    x: &Array3<f64>,
    w: &Array2<f64>,
    d_out: &Array3<f64>,
    d_w: &mut Array2<f64>,
    d_b: &mut Array1<f64>,
) -> Array3<f64> {
    let (batch, n, din) = x.dim();
    let dout = w.ncols();
    let flat_x = x.view().into_shape_with_order((batch * n, din)).unwrap();
    let flat_d = d_out.view().into_shape_with_order((batch * n, dout)).unwrap();
    *d_w += &flat_x.t().dot(&flat_d);
    *d_b += &flat_d.sum_axis(Axis(0));
    flat_d
        .dot(&w.t())
        .into_shape_with_order((batch, n, din))
        .unwrap()
}

/// Width-5 convolution over the token axis, zero padding of two on each
/// side: `out[t] = b + Σ_o x[t+o−2]·W[o]`.
fn conv5(x: &Array3<f64>, w: &Array3<f64>, bias: &Array1<f64>) -> Array3<f64> {
    let (batch, n, _ff) = x.dim();
    let ff_out = bias.len();
    let mut out = Array3::zeros((batch, n, ff_out));
    out += bias;
    for o in 0..5 {
        let shift = o as isize - 2;
        let (t0, s0) = if shift < 0 { ((-shift) as usize, 0) } else { (0, shift as usize) };
        let span = n - t0.max(s0);
        if span == 0 {
            continue;
        }
        let w_o = w.slice(s![o, .., ..]);
        for b in 0..batch {
            let src = x.slice(s![b, s0..s0 + span, ..]);
            let add = src.dot(&w_o);
            let mut dst = out.slice_mut(s![b, t0..t0 + span, ..]);
            dst += &add;
        }
    }
    out
}

fn conv5_backward(
    x: &Array3<f64>,
    w: &Array3<f64>,
    d_out: &Array3<f64>,
    d_w: &mut Array3<f64>,
    d_b: &mut Array1<f64>,
) -> Array3<f64> {
    let (batch, n, _ff) = x.dim();
    let mut d_x = Array3::zeros(x.raw_dim());
    for b in 0..batch {
        for t in 0..n {
            for c in 0..d_b.len() {
                d_b[c] += d_out[[b, t, c]];
            }
        }
    }
    for o in 0..5 {
        let shift = o as isize - 2;
        let (t0, s0) = if shift < 0 { ((-shift) as usize, 0) } else { (0, shift as usize) };
        let span = n - t0.max(s0);
        if span == 0 {
            continue;
        }
        let w_o = w.slice(s![o, .., ..]);
        for b in 0..batch {
            let src = x.slice(s![b, s0..s0 + span, ..]);
            let d_dst = d_out.slice(s![b, t0..t0 + span, ..]);
            let mut dw_o = d_w.slice_mut(s![o, .., ..]);
            dw_o += &src.t().dot(&d_dst);
            let d_src = d_dst.dot(&w_o.t());
            let mut dx_slice = d_x.slice_mut(s![b, s0..s0 + span, ..]);
            dx_slice += &d_src;
        }
    }
    d_x
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut RunRng) -> Result<Self> {
        config.validate()?;
        let word_emb = Array2::from_shape_vec(
            (config.vocab_size, config.d_model),
            crate::util::embedding_init(rng, config.vocab_size * config.d_model),
        )
        .unwrap();
        let pos_emb = Array2::zeros((config.max_len, config.d_model));
        let layers = (0..config.num_layers)
            .map(|_| LayerParams::new(rng, config.d_model, config.ffn_filters))
            .collect();
        Ok(Encoder { config, word_emb, pos_emb, layers })
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            word_emb: Array2::zeros(self.word_emb.raw_dim()),
            pos_emb: Array2::zeros(self.pos_emb.raw_dim()),
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// Token representations `[batch × N × d_model]` plus backward caches.
    ///
    /// `kind` selects the full stack or the bag-of-embeddings shortcut; the
    /// embedding stage (word dropout, dropout, padding mask) is shared.
    pub fn forward(
        &self,
        ids: &Array2<usize>,
        mask: &Array2<bool>,
        kind: EncoderKind,
        mode: Mode,
        rng: &mut RunRng,
    ) -> Result<(Array3<f64>, EncoderCache)> {
        let (batch, n) = ids.dim();
        if mask.dim() != (batch, n) {
            return Err(Error::input("mask shape does not match ids"));
        }
        if n > self.config.max_len {
            return Err(Error::Capacity(format!(
                "sequence length {n} exceeds positional capacity {}",
                self.config.max_len
            )));
        }
        let dm = self.config.d_model;

        // Word dropout: replace a token by UNK before lookup.
        let mut effective_ids = ids.clone();
        let p_word = mode.dropout(self.config.word_dropout);
        for b in 0..batch {
            for t in 0..n {
                let id = ids[[b, t]];
                if id >= self.config.vocab_size {
                    return Err(Error::input(format!(
                        "token id {id} out of range (vocab_size = {})",
                        self.config.vocab_size
                    )));
                }
                if mask[[b, t]] && p_word > 0.0 && rng.gen_bool(p_word) {
                    effective_ids[[b, t]] = UNK_ID;
                }
            }
        }

        let mut x = Array3::zeros((batch, n, dm));
        for b in 0..batch {
            for t in 0..n {
                let id = effective_ids[[b, t]];
                for c in 0..dm {
                    x[[b, t, c]] = self.word_emb[[id, c]] + self.pos_emb[[t, c]];
                }
            }
        }
        let p = mode.dropout(self.config.dropout);
        let embed_dropout = if p > 0.0 {
            let m = Array3::from_shape_vec(
                (batch, n, dm),
                dropout_mask(rng, batch * n * dm, p),
            )
            .unwrap();
            x *= &m;
            Some(m)
        } else {
            None
        };
        zero_masked(&mut x, mask);

        let mut cache = EncoderCache {
            effective_ids,
            embed_dropout,
            mask: mask.clone(),
            layers: Vec::new(),
        };
        if kind == EncoderKind::Bag {
            return Ok((x, cache));
        }

        for (l, layer) in self.layers.iter().enumerate() {
            let (next, layer_cache) = self.layer_forward(layer, &x, mask, mode, rng);
            ensure_finite(&next, &format!("encoder layer {l}"))?;
            cache.layers.push(layer_cache);
            x = next;
        }
        Ok((x, cache))
    }

    fn layer_forward(
        &self,
        layer: &LayerParams,
        x: &Array3<f64>,
        mask: &Array2<bool>,
        mode: Mode,
        rng: &mut RunRng,
    ) -> (Array3<f64>, LayerCache) {
        let (batch, n, dm) = x.dim();
        let heads = self.config.num_heads;
        let dh = dm / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = pointwise(x, &layer.wq, &Array1::zeros(dm));
        let k = pointwise(x, &layer.wk, &Array1::zeros(dm));
        let v = pointwise(x, &layer.wv, &Array1::zeros(dm));

        let mut probs = ndarray::Array4::zeros((batch, heads, n, n));
        let mut ctx = Array3::zeros((batch, n, dm));
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![b, .., cols.clone()]);
                let kh = k.slice(s![b, .., cols.clone()]);
                let vh = v.slice(s![b, .., cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                for j in 0..n {
                    if !mask[[b, j]] {
                        scores.column_mut(j).fill(f64::NEG_INFINITY);
                    }
                }
                for i in 0..n {
                    let row = scores.row(i);
                    let max = row.fold(f64::NEG_INFINITY, |a, &s| a.max(s));
                    let mut z = 0.0;
                    for &sv in row {
                        z += (sv - max).exp();
                    }
                    for j in 0..n {
                        probs[[b, h, i, j]] = (scores[[i, j]] - max).exp() / z;
                    }
                }
                let ph = probs.slice(s![b, h, .., ..]);
                let ctx_h = ph.dot(&vh);
                ctx.slice_mut(s![b, .., cols]).assign(&ctx_h);
            }
        }
        let attn_out = pointwise(&ctx, &layer.wo, &Array1::zeros(dm));

        let (x_mid, attn_cache) = self.sublayer_close(x, attn_out, mask, mode, rng,
            &layer.ln1_gamma, &layer.ln1_beta);

        // Convolutional feed-forward block.
        let r1_pre = pointwise(&x_mid, &layer.conv1_w, &layer.conv1_b);
        let mut r1 = r1_pre.mapv(|v| v.max(0.0));
        zero_masked(&mut r1, mask);
        let r2_pre = conv5(&r1, &layer.conv5_w, &layer.conv5_b);
        let r2 = r2_pre.mapv(|v| v.max(0.0));
        let ffn_out = pointwise(&r2, &layer.conv_out_w, &layer.conv_out_b);

        let (x_out, ffn_cache) = self.sublayer_close(&x_mid, ffn_out, mask, mode, rng,
            &layer.ln2_gamma, &layer.ln2_beta);

        let cache = LayerCache {
            x_in: x.clone(),
            q,
            k,
            v,
            probs,
            ctx,
            attn: attn_cache,
            x_mid,
            r1_pre,
            r1,
            r2_pre,
            r2,
            ffn: ffn_cache,
        };
        (x_out, cache)
    }

    /// dropout → residual add → layer norm → padding mask.
    #[allow(clippy::too_many_arguments)]
    fn sublayer_close(
        &self,
        residual: &Array3<f64>,
        mut sub_out: Array3<f64>,
        mask: &Array2<bool>,
        mode: Mode,
        rng: &mut RunRng,
        gamma: &Array1<f64>,
        beta: &Array1<f64>,
    ) -> (Array3<f64>, SublayerCache) {
        let p = mode.dropout(self.config.dropout);
        let dropout = if p > 0.0 {
            let (batch, n, dm) = sub_out.dim();
            let m = Array3::from_shape_vec(
                (batch, n, dm),
                dropout_mask(rng, batch * n * dm, p),
            )
            .unwrap();
            sub_out *= &m;
            Some(m)
        } else {
            None
        };
        sub_out += residual;
        let (mut out, ln) = layer_norm(&sub_out, gamma, beta);
        zero_masked(&mut out, mask);
        (out, SublayerCache { dropout, ln })
    }

    /// Backward pass; accumulates into `grads`. `d_out` is the gradient at
    /// the encoder output.
    pub fn backward(&self, cache: &EncoderCache, d_out: &Array3<f64>, grads: &mut EncoderGrads) {
        let mask = &cache.mask;
        let mut d_x = d_out.clone();
        zero_masked(&mut d_x, mask);

        for (l, layer_cache) in cache.layers.iter().enumerate().rev() {
            d_x = self.layer_backward(&self.layers[l], layer_cache, mask, &d_x, &mut grads.layers[l]);
        }

        // Embedding stage.
        if let Some(m) = &cache.embed_dropout {
            d_x *= m;
        }
        let (batch, n) = cache.effective_ids.dim();
        for b in 0..batch {
            for t in 0..n {
                if !mask[[b, t]] {
                    continue;
                }
                let id = cache.effective_ids[[b, t]];
                let g = d_x.slice(s![b, t, ..]);
                let mut w_row = grads.word_emb.row_mut(id);
                w_row += &g;
                let mut p_row = grads.pos_emb.row_mut(t);
                p_row += &g;
            }
        }
    }

    fn layer_backward(
        &self,
        layer: &LayerParams,
        c: &LayerCache,
        mask: &Array2<bool>,
        d_out: &Array3<f64>,
        g: &mut LayerParams,
    ) -> Array3<f64> {
        let (batch, n, dm) = c.x_in.dim();
        let heads = self.config.num_heads;
        let dh = dm / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // FFN sublayer close.
        let mut d = d_out.clone();
        zero_masked(&mut d, mask);
        let d_res2 = layer_norm_backward(&c.ffn.ln, &layer.ln2_gamma, &d,
            &mut g.ln2_gamma, &mut g.ln2_beta);
        let mut d_x_mid = d_res2.clone();
        let mut d_ffn_out = d_res2;
        if let Some(m) = &c.ffn.dropout {
            d_ffn_out *= m;
        }

        // FFN block.
        let mut d_bias_sink = Array1::zeros(dm);
        let mut d_r2 = pointwise_backward(&c.r2, &layer.conv_out_w, &d_ffn_out,
            &mut g.conv_out_w, &mut g.conv_out_b);
        ndarray::Zip::from(&mut d_r2).and(&c.r2_pre).for_each(|d, &pre| {
            if pre <= 0.0 {
                *d = 0.0;
            }
        });
        let mut d_r1 = conv5_backward(&c.r1, &layer.conv5_w, &d_r2, &mut g.conv5_w, &mut g.conv5_b);
        zero_masked(&mut d_r1, mask);
        ndarray::Zip::from(&mut d_r1).and(&c.r1_pre).for_each(|d, &pre| {
            if pre <= 0.0 {
                *d = 0.0;
            }
        });
        let mut d_conv1_b = Array1::zeros(layer.conv1_b.len());
        d_x_mid += &pointwise_backward(&c.x_mid, &layer.conv1_w, &d_r1,
            &mut g.conv1_w, &mut d_conv1_b);
        g.conv1_b += &d_conv1_b;

        // Attention sublayer close.
        zero_masked(&mut d_x_mid, mask);
        let d_res1 = layer_norm_backward(&c.attn.ln, &layer.ln1_gamma, &d_x_mid,
            &mut g.ln1_gamma, &mut g.ln1_beta);
        let mut d_x = d_res1.clone();
        let mut d_attn_out = d_res1;
        if let Some(m) = &c.attn.dropout {
            d_attn_out *= m;
        }

        // Attention block.
        let d_ctx = pointwise_backward(&c.ctx, &layer.wo, &d_attn_out, &mut g.wo, &mut d_bias_sink);
        let mut d_q = Array3::zeros((batch, n, dm));
        let mut d_k = Array3::zeros((batch, n, dm));
        let mut d_v = Array3::zeros((batch, n, dm));
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = c.q.slice(s![b, .., cols.clone()]);
                let kh = c.k.slice(s![b, .., cols.clone()]);
                let vh = c.v.slice(s![b, .., cols.clone()]);
                let ph = c.probs.slice(s![b, h, .., ..]);
                let d_ctx_h = d_ctx.slice(s![b, .., cols.clone()]);
                let d_p = d_ctx_h.dot(&vh.t());
                d_v.slice_mut(s![b, .., cols.clone()])
                    .assign(&ph.t().dot(&d_ctx_h));
                // Softmax rows.
                let mut d_s = Array2::zeros((n, n));
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += d_p[[i, j]] * ph[[i, j]];
                    }
                    for j in 0..n {
                        d_s[[i, j]] = ph[[i, j]] * (d_p[[i, j]] - dot);
                    }
                }
                d_s *= scale;
                d_q.slice_mut(s![b, .., cols.clone()]).assign(&d_s.dot(&kh));
                d_k.slice_mut(s![b, .., cols]).assign(&d_s.t().dot(&qh));
            }
        }
        d_x += &pointwise_backward(&c.x_in, &layer.wq, &d_q, &mut g.wq, &mut d_bias_sink);
        d_x += &pointwise_backward(&c.x_in, &layer.wk, &d_k, &mut g.wk, &mut d_bias_sink);
        d_x += &pointwise_backward(&c.x_in, &layer.wv, &d_v, &mut g.wv, &mut d_bias_sink);
        zero_masked(&mut d_x, mask);
        d_x
    }
}
