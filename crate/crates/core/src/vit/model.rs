use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::erf;

use super::{BlockParams, ViTConfig, ViTParameters, LN_EPS};
use crate::error::{Error, Result};
use crate::raster::{RasterFrame, CHANNELS};

/// A training or evaluation item: a patch matrix and a band index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub patches: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from this seed.
    Train { seed: u64 },
}

/// Resizes a frame to the model input size when needed.
pub fn prepare_frame(frame: &RasterFrame, config: &ViTConfig) -> Result<RasterFrame> {
    if frame.width() == config.image_w && frame.height() == config.image_h {
        Ok(frame.clone())
    } else {
        frame.resize(config.image_w, config.image_h)
    }
}

/// `N x (P*P*C)` patch matrix: patches in raster order, each flattened
/// row-major with channels innermost, scaled to [0, 1] then standardized.
pub fn patchify(frame: &RasterFrame, config: &ViTConfig) -> Result<Vec<f64>> {
    if frame.width() != config.image_w || frame.height() != config.image_h {
        return Err(Error::Argument(format!(
            "frame is {}x{}, model expects {}x{}",
            frame.width(),
            frame.height(),
            config.image_w,
            config.image_h
        )));
    }
    let p = config.patch_size;
    let px = frame.pixels();
    let mut out = Vec::with_capacity(config.num_patches() * config.patch_dim());
    for gy in 0..config.grid_h() {
        for gx in 0..config.grid_w() {
            for py in 0..p {
                let row = ((gy * p + py) * config.image_w + gx * p) * CHANNELS;
                for (i, &v) in px[row..row + p * CHANNELS].iter().enumerate() {
                    let c = i % CHANNELS;
                    out.push((v as f64 / 255.0 - config.channel_mean[c]) / config.channel_std[c]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`], rounding back to 8-bit values.
pub fn unpatchify(patches: &[f64], config: &ViTConfig) -> Result<RasterFrame> {
    if patches.len() != config.num_patches() * config.patch_dim() {
        return Err(Error::Argument(format!(
            "patch matrix has {} values, expected {}",
            patches.len(),
            config.num_patches() * config.patch_dim()
        )));
    }
    let p = config.patch_size;
    let mut px = vec![0u8; config.image_w * config.image_h * CHANNELS];
    let mut it = patches.iter();
    for gy in 0..config.grid_h() {
        for gx in 0..config.grid_w() {
            for py in 0..p {
                let row = ((gy * p + py) * config.image_w + gx * p) * CHANNELS;
                for i in 0..p * CHANNELS {
                    let c = i % CHANNELS;
                    let v = it.next().expect("length checked");
                    px[row + i] = ((v * config.channel_std[c] + config.channel_mean[c]) * 255.0)
                        .round()
                        .clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    RasterFrame::new(config.image_w, config.image_h, px, 0)
}

/// Attention weights of every layer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub seq_len: usize,
    pub num_heads: usize,
    /// Per layer: `heads x T x T`, rows softmax-normalized.
    pub layers: Vec<Vec<f64>>,
}

impl AttentionMap {
    pub fn row(&self, layer: usize, head: usize, i: usize) -> &[f64] {
        let t = self.seq_len;
        let start = (head * t + i) * t;
        &self.layers[layer][start..start + t]
    }

    /// Class-token attention to each patch in the final layer, averaged over
    /// heads. Not rescaled.
    pub fn class_attention(&self) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut out = vec![0.0; self.seq_len - 1];
        for h in 0..self.num_heads {
            for (o, a) in out.iter_mut().zip(&self.row(last, h, 0)[1..]) {
                *o += a / self.num_heads as f64;
            }
        }
        out
    }

    /// [`class_attention`](Self::class_attention) min-max rescaled to [0, 1].
    /// A flat map rescales to all zeros.
    pub fn spatial(&self) -> Vec<f64> {
        let raw = self.class_attention();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        raw.iter()
            .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub attention: AttentionMap,
}

pub fn forward(frame: &RasterFrame, params: &ViTParameters, config: &ViTConfig, mode: Mode) -> Result<ForwardOutput> {
    config.validate()?;
    params.check_shapes(config)?;
    params.check_finite(config)?;
    let patches = patchify(frame, config)?;
    let mut rng = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let cache = forward_cached(&patches, params, config, rng.as_mut());
    Ok(cache.into_output(config))
}

/// Eval-mode forward on a prepared patch matrix. Parameters are assumed
/// validated by the caller.
pub fn forward_patches(patches: &[f64], params: &ViTParameters, config: &ViTConfig) -> ForwardOutput {
    forward_cached(patches, params, config, None).into_output(config)
}

pub fn loss_and_gradients(
    batch: &[Example],
    params: &ViTParameters,
    config: &ViTConfig,
    dropout_seed: Option<u64>,
) -> Result<(f64, ViTParameters)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let expected = config.num_patches() * config.patch_dim();
    for ex in batch {
        if ex.label >= config.num_classes {
            return Err(Error::Argument(format!("label {} outside the band set", ex.label)));
        }
        if ex.patches.len() != expected {
            return Err(Error::Argument(format!("patch matrix length {} != {expected}", ex.patches.len())));
        }
    }
    params.check_shapes(config)?;
    params.check_finite(config)?;
    Ok(batch_gradients(batch, params, config, dropout_seed))
}

/// Examples per parallel work unit; partial sums are combined in chunk order
/// so results do not depend on the thread count.
const CHUNK: usize = 4;

pub(crate) fn batch_gradients(
    batch: &[Example],
    params: &ViTParameters,
    config: &ViTConfig,
    dropout_seed: Option<u64>,
) -> (f64, ViTParameters) {
    let weight = 1.0 / batch.len() as f64;
    let partials: Vec<(f64, ViTParameters)> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut grads = ViTParameters::zeros(config);
            let mut loss = 0.0;
            for (j, ex) in chunk.iter().enumerate() {
                let mut rng = dropout_seed
                    .map(|s| ChaCha8Rng::seed_from_u64(crate::seed_for(s, &format!("ex{}", ci * CHUNK + j))));
                let cache = forward_cached(&ex.patches, params, config, rng.as_mut());
                loss += weight * cache.loss(ex.label);
                backward(&cache, ex, params, config, weight, &mut grads);
            }
            (loss, grads)
        })
        .collect();
    let mut it = partials.into_iter();
    let (mut loss, mut grads) = it.next().expect("non-empty batch");
    for (l, g) in it {
        loss += l;
        grads.axpy(1.0, &g);
    }
    (loss, grads)
}

// ---------------------------------------------------------------------------
// Kernels

fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn linear(x: &[f64], t: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut y = matmul(x, t, din, w, dout);
    for row in y.chunks_mut(dout) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn linear_back(
    x: &[f64],
    dy: &[f64],
    t: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; t * din];
    for i in 0..t {
        let dyr = &dy[i * dout..(i + 1) * dout];
        for (d, g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        let xr = &x[i * din..(i + 1) * din];
        let dxr = &mut dx[i * din..(i + 1) * din];
        for p in 0..din {
            let wr = &w[p * dout..(p + 1) * dout];
            let dwr = &mut dw[p * dout..(p + 1) * dout];
            let mut acc = 0.0;
            let xv = xr[p];
            for j in 0..dout {
                acc += dyr[j] * wr[j];
                dwr[j] += xv * dyr[j];
            }
            dxr[p] = acc;
        }
    }
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], t: usize, d: usize, scale: &[f64], shift: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut rstd = vec![0.0; t];
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * scale[j] + shift[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(
    dy: &[f64],
    cache: &LnCache,
    t: usize,
    d: usize,
    scale: &[f64],
    dscale: &mut [f64],
    dshift: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; t * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..d {
            dscale[j] += dyr[j] * xh[j];
            dshift[j] += dyr[j];
            dxhat[j] = dyr[j] * scale[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            dx[i * d + j] = cache.rstd[i] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * INV_SQRT2))
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + erf(x * INV_SQRT2)) + x * pdf
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Inverted-dropout mask, `None` when dropout is off.
fn dropout_mask(len: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn masked(dy: &[f64], mask: &Option<Vec<f64>>) -> Vec<f64> {
    let mut v = dy.to_vec();
    apply_mask(&mut v, mask);
    v
}

// ---------------------------------------------------------------------------
// Forward with cache

struct BlockCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    o: Vec<f64>,
    mask_attn: Option<Vec<f64>>,
    ln2: LnCache,
    b: Vec<f64>,
    h: Vec<f64>,
    g: Vec<f64>,
    mask_hidden: Option<Vec<f64>>,
    mask_mlp: Option<Vec<f64>>,
}

struct Cache {
    mask_embed: Option<Vec<f64>>,
    blocks: Vec<BlockCache>,
    final_ln: LnCache,
    y: Vec<f64>,
    head_pre: Vec<f64>,
    head_act: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Cache {
    fn loss(&self, label: usize) -> f64 {
        -self.probs[label].max(f64::MIN_POSITIVE).ln()
    }

    fn into_output(self, config: &ViTConfig) -> ForwardOutput {
        ForwardOutput {
            logits: self.logits,
            probabilities: self.probs,
            attention: AttentionMap {
                seq_len: config.seq_len(),
                num_heads: config.num_heads,
                layers: self.blocks.into_iter().map(|b| b.attn).collect(),
            },
        }
    }
}

fn attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = vec![0.0; heads * t * t];
    let mut o = vec![0.0; t * d];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..t {
            let row = &mut attn[(h * t + i) * t..(h * t + i + 1) * t];
            let qi = &q[i * d + c0..i * d + c0 + dh];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d + c0..j * d + c0 + dh];
                *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax_in_place(row);
            let oi = &mut o[i * d + c0..i * d + c0 + dh];
            for (j, &a) in row.iter().enumerate() {
                for (ov, vv) in oi.iter_mut().zip(&v[j * d + c0..j * d + c0 + dh]) {
                    *ov += a * vv;
                }
            }
        }
    }
    (o, attn)
}

fn attention_back(
    dout: &[f64],
    cache: &BlockCache,
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut da = vec![0.0; t];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..t {
            let a = &cache.attn[(h * t + i) * t..(h * t + i + 1) * t];
            let doi = &dout[i * d + c0..i * d + c0 + dh];
            for j in 0..t {
                let vj = &v[j * d + c0..j * d + c0 + dh];
                da[j] = doi.iter().zip(vj).map(|(x, y)| x * y).sum();
                for (dvv, g) in dv[j * d + c0..j * d + c0 + dh].iter_mut().zip(doi) {
                    *dvv += a[j] * g;
                }
            }
            let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            for j in 0..t {
                let ds = a[j] * (da[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + c0 + c] += ds * k[j * d + c0 + c];
                    dk[j * d + c0 + c] += ds * q[i * d + c0 + c];
                }
            }
        }
    }
    (dq, dk, dv)
}

fn forward_cached(
    patches: &[f64],
    params: &ViTParameters,
    config: &ViTConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Cache {
    let (n, t, d, m) = (config.num_patches(), config.seq_len(), config.latent_dim, config.mlp_hidden_dim);
    let p = config.dropout_p;

    let proj = matmul(patches, n, config.patch_dim(), &params.patch_projection, d);
    let mut z = params.positional_embedding.clone();
    for (zv, c) in z[..d].iter_mut().zip(&params.class_token) {
        *zv += c;
    }
    for (zv, e) in z[d..].iter_mut().zip(&proj) {
        *zv += e;
    }
    let mask_embed = dropout_mask(t * d, p, rng.as_deref_mut());
    apply_mask(&mut z, &mask_embed);

    let mut blocks = Vec::with_capacity(config.num_layers);
    for bp in &params.blocks {
        debug_assert_eq!(z.len(), t * d);
        let (a, ln1) = layer_norm(&z, t, d, &bp.ln1_scale, &bp.ln1_shift);
        let q = linear(&a, t, d, &bp.w_q, &bp.b_q, d);
        let k = linear(&a, t, d, &bp.w_k, &bp.b_k, d);
        let v = linear(&a, t, d, &bp.w_v, &bp.b_v, d);
        let (o, attn) = attention(&q, &k, &v, t, d, config.num_heads);
        let mut ao = linear(&o, t, d, &bp.w_o, &bp.b_o, d);
        let mask_attn = dropout_mask(t * d, p, rng.as_deref_mut());
        apply_mask(&mut ao, &mask_attn);
        for (zv, x) in z.iter_mut().zip(&ao) {
            *zv += x;
        }

        let (b, ln2) = layer_norm(&z, t, d, &bp.ln2_scale, &bp.ln2_shift);
        let h = linear(&b, t, d, &bp.w_mlp1, &bp.b_mlp1, m);
        let mut g: Vec<f64> = h.iter().map(|&x| gelu(x)).collect();
        let mask_hidden = dropout_mask(t * m, p, rng.as_deref_mut());
        apply_mask(&mut g, &mask_hidden);
        let mut mo = linear(&g, t, m, &bp.w_mlp2, &bp.b_mlp2, d);
        let mask_mlp = dropout_mask(t * d, p, rng.as_deref_mut());
        apply_mask(&mut mo, &mask_mlp);
        for (zv, x) in z.iter_mut().zip(&mo) {
            *zv += x;
        }
        blocks.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            attn,
            o,
            mask_attn,
            ln2,
            b,
            h,
            g,
            mask_hidden,
            mask_mlp,
        });
    }

    let (y, final_ln) = layer_norm(&z[..d], 1, d, &params.final_ln_scale, &params.final_ln_shift);
    let hh = config.head_hidden_dim;
    let (head_pre, head_act, logits) = if hh > 0 {
        let pre = linear(&y, 1, d, &params.head_hidden_w, &params.head_hidden_b, hh);
        let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
        let logits = linear(&act, 1, hh, &params.head_w, &params.head_b, config.num_classes);
        (pre, act, logits)
    } else {
        let logits = linear(&y, 1, d, &params.head_w, &params.head_b, config.num_classes);
        (Vec::new(), Vec::new(), logits)
    };
    let mut probs = logits.clone();
    softmax_in_place(&mut probs);
    Cache {
        mask_embed,
        blocks,
        final_ln,
        y,
        head_pre,
        head_act,
        logits,
        probs,
    }
}

/// Accumulates `weight * d(loss)/d(params)` for one example into `grads`.
fn backward(
    cache: &Cache,
    ex: &Example,
    params: &ViTParameters,
    config: &ViTConfig,
    weight: f64,
    grads: &mut ViTParameters,
) {
    let (n, t, d, m) = (config.num_patches(), config.seq_len(), config.latent_dim, config.mlp_hidden_dim);
    let nc = config.num_classes;
    let dlogits: Vec<f64> = cache
        .probs
        .iter()
        .enumerate()
        .map(|(c, &p)| weight * (p - if c == ex.label { 1.0 } else { 0.0 }))
        .collect();

    let hh = config.head_hidden_dim;
    let dy = if hh > 0 {
        let dact = linear_back(&cache.head_act, &dlogits, 1, hh, &params.head_w, nc, &mut grads.head_w, &mut grads.head_b);
        let dpre: Vec<f64> = dact.iter().zip(&cache.head_pre).map(|(g, &x)| g * gelu_grad(x)).collect();
        linear_back(
            &cache.y,
            &dpre,
            1,
            d,
            &params.head_hidden_w,
            hh,
            &mut grads.head_hidden_w,
            &mut grads.head_hidden_b,
        )
    } else {
        linear_back(&cache.y, &dlogits, 1, d, &params.head_w, nc, &mut grads.head_w, &mut grads.head_b)
    };

    let mut dz = vec![0.0; t * d];
    let dcls = layer_norm_back(
        &dy,
        &cache.final_ln,
        1,
        d,
        &params.final_ln_scale,
        &mut grads.final_ln_scale,
        &mut grads.final_ln_shift,
    );
    dz[..d].copy_from_slice(&dcls);

    for ((bp, bc), bg) in params.blocks.iter().zip(&cache.blocks).zip(grads.blocks.iter_mut()).rev() {
        dz = block_back(dz, bp, bc, bg, t, d, m, config.num_heads);
    }

    apply_mask(&mut dz, &cache.mask_embed);
    for (g, v) in grads.class_token.iter_mut().zip(&dz[..d]) {
        *g += v;
    }
    for (g, v) in grads.positional_embedding.iter_mut().zip(&dz) {
        *g += v;
    }
    // dE += X^T dZ[1..]
    let pd = config.patch_dim();
    for i in 0..n {
        let dzr = &dz[(i + 1) * d..(i + 2) * d];
        for pp in 0..pd {
            let x = ex.patches[i * pd + pp];
            if x == 0.0 {
                continue;
            }
            for (g, v) in grads.patch_projection[pp * d..(pp + 1) * d].iter_mut().zip(dzr) {
                *g += x * v;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn block_back(
    dz_out: Vec<f64>,
    bp: &BlockParams,
    bc: &BlockCache,
    bg: &mut BlockParams,
    t: usize,
    d: usize,
    m: usize,
    heads: usize,
) -> Vec<f64> {
    // MLP branch.
    let mut dz = dz_out;
    let dmo = masked(&dz, &bc.mask_mlp);
    let dg = linear_back(&bc.g, &dmo, t, m, &bp.w_mlp2, d, &mut bg.w_mlp2, &mut bg.b_mlp2);
    let dg = masked(&dg, &bc.mask_hidden);
    let dh: Vec<f64> = dg.iter().zip(&bc.h).map(|(g, &x)| g * gelu_grad(x)).collect();
    let db = linear_back(&bc.b, &dh, t, d, &bp.w_mlp1, m, &mut bg.w_mlp1, &mut bg.b_mlp1);
    let dres = layer_norm_back(&db, &bc.ln2, t, d, &bp.ln2_scale, &mut bg.ln2_scale, &mut bg.ln2_shift);
    for (a, b) in dz.iter_mut().zip(&dres) {
        *a += b;
    }

    // Attention branch.
    let dao = masked(&dz, &bc.mask_attn);
    let dov = linear_back(&bc.o, &dao, t, d, &bp.w_o, d, &mut bg.w_o, &mut bg.b_o);
    let (dq, dk, dv) = attention_back(&dov, bc, t, d, heads);
    let mut da = linear_back(&bc.a, &dq, t, d, &bp.w_q, d, &mut bg.w_q, &mut bg.b_q);
    for (x, y) in da
        .iter_mut()
        .zip(linear_back(&bc.a, &dk, t, d, &bp.w_k, d, &mut bg.w_k, &mut bg.b_k))
    {
        *x += y;
    }
    for (x, y) in da
        .iter_mut()
        .zip(linear_back(&bc.a, &dv, t, d, &bp.w_v, d, &mut bg.w_v, &mut bg.b_v))
    {
        *x += y;
    }
    let dres = layer_norm_back(&da, &bc.ln1, t, d, &bp.ln1_scale, &mut bg.ln1_scale, &mut bg.ln1_shift);
    for (a, b) in dz.iter_mut().zip(&dres) {
        *a += b;
    }
    dz
}

// ---------------------------------------------------------------------------
// Attention overlay

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOverlay {
    /// `grid_h x grid_w` rescaled class attention.
    pub grid: Vec<f64>,
    /// Grid upsampled to the frame size, values in [0, 1].
    pub heat: Vec<f64>,
    /// The frame with brightness modulated by `heat`.
    pub image: RasterFrame,
}

/// Final-layer class-token attention, averaged over heads, rescaled to
/// [0, 1], bilinearly upsampled and blended over the frame so that higher
/// attention reads as brighter pixels.
pub fn attention_overlay(frame: &RasterFrame, params: &ViTParameters, config: &ViTConfig) -> Result<AttentionOverlay> {
    let input = prepare_frame(frame, config)?;
    let out = forward(&input, params, config, Mode::Eval)?;
    let grid = out.attention.spatial();
    let heat = upsample_bilinear(&grid, config.grid_w(), config.grid_h(), frame.width(), frame.height());
    let mut image = frame.clone();
    for (px, &hv) in image.pixels_mut().chunks_mut(CHANNELS).zip(&heat) {
        let gain = 0.25 + 0.75 * hv;
        for c in px.iter_mut() {
            *c = (*c as f64 * gain).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(AttentionOverlay { grid, heat, image })
}

fn upsample_bilinear(grid: &[f64], gw: usize, gh: usize, w: usize, h: usize) -> Vec<f64> {
    let sample = |v: f64, n: usize| {
        let v = v.clamp(0.0, (n - 1) as f64);
        let i0 = v.floor() as usize;
        (i0, (i0 + 1).min(n - 1), v - i0 as f64)
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * gh as f64 / h as f64 - 0.5, gh);
        for x in 0..w {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * gw as f64 / w as f64 - 0.5, gw);
            let top = grid[y0 * gw + x0] * (1.0 - fx) + grid[y0 * gw + x1] * fx;
            let bottom = grid[y1 * gw + x0] * (1.0 - fx) + grid[y1 * gw + x1] * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    out
}
