//! Batched forward and backward passes.
//!
//! A batch of `B` images becomes one `[B * T, D]` token matrix with
//! `T = L + num_patches` rows per sample: the sensor's `L` prefix tokens
//! followed by the patch tokens. Linear layers run on the whole stack;
//! attention runs per sample and head.

use ndarray::{s, Array1, Array2, Axis};

use super::{Block, EncoderConfig, EncoderParams, Scalar};
use crate::datagen::TactileImage;
use crate::embedding::Embedding;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

struct NormCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

struct BlockCache<T> {
    ln1: NormCache<T>,
    h1: Array2<T>,
    qkv: Array2<T>,
    /// Softmax weights per (sample, head), `[T, T]` each.
    attn: Vec<Array2<T>>,
    ctx: Array2<T>,
    ln2: NormCache<T>,
    h2: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache<T> {
    sensors: Vec<usize>,
    patches: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    final_norm: NormCache<T>,
    pooled: Array2<T>,
    /// Unnormalized outputs, `[B, C]`.
    pub raw: Array2<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.sensors.len()
    }
}

fn gelu<T: Scalar>(u: T) -> T {
    let t = (T::of(GELU_C) * (u + T::of(GELU_A) * u * u * u)).tanh();
    T::of(0.5) * u * (T::one() + t)
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = (c * (u + a * u * u * u)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * u * u)
}

fn layer_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>, bias: &Array1<T>) -> (Array2<T>, NormCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / d;
        let rs = T::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * rs);
        *r = rs;
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &NormCache<T>,
    gain: &Array1<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let d = T::of(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dh.sum() / d;
        let m2 = dh.dot(&xh) / d;
        let rs = cache.rstd[i];
        for ((o, &g), &x) in out.iter_mut().zip(dh).zip(xh) {
            *o = (g - m1 - x * m2) * rs;
        }
    }
    dx
}

fn softmax_rows<T: Scalar>(a: &mut Array2<T>) {
    for mut row in a.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Flattens each image into `[num_patches, P*P*3]` rows, patches in
/// row-major grid order, values in (dy, dx, channel) order.
fn extract_patches<T: Scalar>(config: &EncoderConfig, images: &[&[f32]]) -> Array2<T> {
    let p = config.patch_size;
    let gw = config.width / p;
    let gh = config.height / p;
    let np = gh * gw;
    let mut out = Array2::zeros((images.len() * np, config.patch_len()));
    for (b, img) in images.iter().enumerate() {
        for py in 0..gh {
            for px in 0..gw {
                let mut row = out.row_mut(b * np + py * gw + px);
                let mut k = 0;
                for dy in 0..p {
                    let y = py * p + dy;
                    for dx in 0..p {
                        let x = px * p + dx;
                        let base = (y * config.width + x) * 3;
                        for c in 0..3 {
                            row[k] = T::of(img[base + c] as f64);
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_inputs(config: &EncoderConfig, images: &[&[f32]], sensors: &[usize]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Empty("encoder batch has no images".into()));
    }
    if images.len() != sensors.len() {
        return Err(Error::Shape(format!(
            "{} images but {} sensor indices",
            images.len(),
            sensors.len()
        )));
    }
    let want = config.height * config.width * 3;
    if let Some(img) = images.iter().find(|i| i.len() != want) {
        return Err(Error::Shape(format!(
            "image has {} values, encoder expects {}x{}x3 = {want}",
            img.len(),
            config.height,
            config.width
        )));
    }
    if let Some(&k) = sensors.iter().find(|&&k| k >= config.num_sensors) {
        return Err(Error::SensorOutOfRange {
            index: k,
            count: config.num_sensors,
        });
    }
    Ok(())
}

fn block_forward<T: Scalar>(
    blk: &Block<T>,
    config: &EncoderConfig,
    batch: usize,
    x: Array2<T>,
) -> (Array2<T>, BlockCache<T>) {
    let seq = config.seq_len();
    let d = config.dim;
    let dh = config.head_dim();
    let heads = config.n_heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let (h1, ln1) = layer_norm(&x, &blk.ln1_gain, &blk.ln1_bias);
    let qkv = h1.dot(&blk.qkv_weight) + &blk.qkv_bias;
    let mut ctx = Array2::zeros((batch * seq, d));
    let mut attn = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        let r = b * seq..(b + 1) * seq;
        for h in 0..heads {
            let c = h * dh..(h + 1) * dh;
            let q = qkv.slice(s![r.clone(), c.clone()]);
            let k = qkv.slice(s![r.clone(), d + c.start..d + c.end]);
            let v = qkv.slice(s![r.clone(), 2 * d + c.start..2 * d + c.end]);
            let mut a = q.dot(&k.t());
            a.mapv_inplace(|e| e * scale);
            softmax_rows(&mut a);
            ctx.slice_mut(s![r.clone(), c]).assign(&a.dot(&v));
            attn.push(a);
        }
    }
    let x_mid = x + &(ctx.dot(&blk.out_weight) + &blk.out_bias);
    let (h2, ln2) = layer_norm(&x_mid, &blk.ln2_gain, &blk.ln2_bias);
    let pre = h2.dot(&blk.fc1_weight) + &blk.fc1_bias;
    let act = pre.mapv(gelu);
    let x_out = x_mid + &(act.dot(&blk.fc2_weight) + &blk.fc2_bias);
    (
        x_out,
        BlockCache {
            ln1,
            h1,
            qkv,
            attn,
            ctx,
            ln2,
            h2,
            pre,
            act,
        },
    )
}

fn block_backward<T: Scalar>(
    blk: &Block<T>,
    grad: &mut Block<T>,
    cache: &BlockCache<T>,
    config: &EncoderConfig,
    batch: usize,
    dx_out: Array2<T>,
) -> Array2<T> {
    let seq = config.seq_len();
    let d = config.dim;
    let dh = config.head_dim();
    let heads = config.n_heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    // MLP branch.
    grad.fc2_weight += &cache.act.t().dot(&dx_out);
    grad.fc2_bias += &dx_out.sum_axis(Axis(0));
    let mut dpre = dx_out.dot(&blk.fc2_weight.t());
    dpre.zip_mut_with(&cache.pre, |g, &u| *g = *g * gelu_grad(u));
    grad.fc1_weight += &cache.h2.t().dot(&dpre);
    grad.fc1_bias += &dpre.sum_axis(Axis(0));
    let dh2 = dpre.dot(&blk.fc1_weight.t());
    let dx_mid = dx_out
        + &layer_norm_backward(&dh2, &cache.ln2, &blk.ln2_gain, &mut grad.ln2_gain, &mut grad.ln2_bias);

    // Attention branch.
    grad.out_weight += &cache.ctx.t().dot(&dx_mid);
    grad.out_bias += &dx_mid.sum_axis(Axis(0));
    let dctx = dx_mid.dot(&blk.out_weight.t());
    let mut dqkv = Array2::zeros((batch * seq, 3 * d));
    for b in 0..batch {
        let r = b * seq..(b + 1) * seq;
        for h in 0..heads {
            let c = h * dh..(h + 1) * dh;
            let a = &cache.attn[b * heads + h];
            let q = cache.qkv.slice(s![r.clone(), c.clone()]);
            let k = cache.qkv.slice(s![r.clone(), d + c.start..d + c.end]);
            let v = cache.qkv.slice(s![r.clone(), 2 * d + c.start..2 * d + c.end]);
            let dout = dctx.slice(s![r.clone(), c.clone()]);
            let da = dout.dot(&v.t());
            let dv = a.t().dot(&dout);
            let mut ds = da;
            for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let inner = drow.dot(&arow);
                for (g, &p) in drow.iter_mut().zip(arow) {
                    *g = p * (*g - inner) * scale;
                }
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![r.clone(), c.clone()]).assign(&dq);
            dqkv.slice_mut(s![r.clone(), d + c.start..d + c.end]).assign(&dk);
            dqkv.slice_mut(s![r.clone(), 2 * d + c.start..2 * d + c.end]).assign(&dv);
        }
    }
    grad.qkv_weight += &cache.h1.t().dot(&dqkv);
    grad.qkv_bias += &dqkv.sum_axis(Axis(0));
    let dh1 = dqkv.dot(&blk.qkv_weight.t());
    dx_mid + &layer_norm_backward(&dh1, &cache.ln1, &blk.ln1_gain, &mut grad.ln1_gain, &mut grad.ln1_bias)
}

/// Runs the encoder on a batch, keeping what backward needs.
pub fn forward<T: Scalar>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    images: &[&[f32]],
    sensors: &[usize],
) -> Result<ForwardCache<T>> {
    check_inputs(config, images, sensors)?;
    let batch = images.len();
    let seq = config.seq_len();
    let prefix = config.tokens_per_sensor;
    let np = config.num_patches();

    let patches: Array2<T> = extract_patches(config, images);
    let embedded = patches.dot(&params.patch_weight) + &params.patch_bias;
    let mut x = Array2::zeros((batch * seq, config.dim));
    for (b, &k) in sensors.iter().enumerate() {
        let base = b * seq;
        if prefix > 0 {
            x.slice_mut(s![base..base + prefix, ..])
                .assign(&params.sensors.tokens.slice(s![k, .., ..]));
        }
        let mut body = x.slice_mut(s![base + prefix..base + seq, ..]);
        body.assign(&embedded.slice(s![b * np..(b + 1) * np, ..]));
        body += &params.positions;
    }

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for blk in &params.blocks {
        let (next, cache) = block_forward(blk, config, batch, x);
        x = next;
        blocks.push(cache);
    }

    let (y, final_norm) = layer_norm(&x, &params.final_gain, &params.final_bias);
    let mut pooled = Array2::zeros((batch, config.dim));
    for b in 0..batch {
        let rows = y.slice(s![b * seq + prefix..(b + 1) * seq, ..]);
        pooled
            .row_mut(b)
            .assign(&rows.mean_axis(Axis(0)).expect("at least one patch"));
    }
    let raw = pooled.dot(&params.head_weight);
    Ok(ForwardCache {
        sensors: sensors.to_vec(),
        patches,
        blocks,
        final_norm,
        pooled,
        raw,
    })
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient `d_raw` (`[B, C]`) on the unnormalized outputs.
pub fn backward<T: Scalar>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    cache: &ForwardCache<T>,
    d_raw: &Array2<T>,
) -> EncoderParams<T> {
    let batch = cache.batch_size();
    let seq = config.seq_len();
    let prefix = config.tokens_per_sensor;
    let np = config.num_patches();
    let mut grad = params.zeros_like();

    grad.head_weight = cache.pooled.t().dot(d_raw);
    let dpooled = d_raw.dot(&params.head_weight.t());
    let mut dy = Array2::zeros((batch * seq, config.dim));
    let inv = T::of(1.0 / np as f64);
    for b in 0..batch {
        let share = dpooled.row(b).mapv(|v| v * inv);
        for t in prefix..seq {
            dy.row_mut(b * seq + t).assign(&share);
        }
    }
    let mut dx = layer_norm_backward(
        &dy,
        &cache.final_norm,
        &params.final_gain,
        &mut grad.final_gain,
        &mut grad.final_bias,
    );
    for ((blk, g), bc) in params
        .blocks
        .iter()
        .zip(grad.blocks.iter_mut())
        .zip(&cache.blocks)
        .rev()
    {
        dx = block_backward(blk, g, bc, config, batch, dx);
    }

    let mut dembedded = Array2::zeros((batch * np, config.dim));
    for (b, &k) in cache.sensors.iter().enumerate() {
        let base = b * seq;
        if prefix > 0 {
            let mut tok = grad.sensors.tokens.slice_mut(s![k, .., ..]);
            tok += &dx.slice(s![base..base + prefix, ..]);
        }
        let body = dx.slice(s![base + prefix..base + seq, ..]);
        grad.positions += &body;
        dembedded.slice_mut(s![b * np..(b + 1) * np, ..]).assign(&body);
    }
    grad.patch_weight = cache.patches.t().dot(&dembedded);
    grad.patch_bias = dembedded.sum_axis(Axis(0));
    grad
}

/// L2-normalizes each row in `f64`, returning the unit rows and the norms.
pub fn normalize_rows<T: Scalar>(raw: &Array2<T>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut out = raw.mapv(|v| v.to_f64().unwrap());
    let mut norms = Vec::with_capacity(out.nrows());
    for mut row in out.rows_mut() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        let n = row.dot(&row).sqrt();
        if n == 0.0 {
            return Err(Error::NonFinite("encoder output has zero norm".into()));
        }
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient on unit embeddings back through the normalization.
pub fn normalize_backward<T: Scalar>(unit: &Array2<f64>, norms: &[f64], d_unit: &Array2<f64>) -> Array2<T> {
    let mut out = Array2::zeros(unit.raw_dim());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let e = unit.row(i);
        let g = d_unit.row(i);
        let proj = e.dot(&g);
        for ((o, &ei), &gi) in row.iter_mut().zip(e).zip(g) {
            *o = T::of((gi - ei * proj) / norms[i]);
        }
    }
    out
}

/// Embeds a batch of touch images with explicit sensor indices.
pub fn encode_batch<T: Scalar>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    images: &[&[f32]],
    sensors: &[usize],
) -> Result<Vec<Embedding>> {
    let cache = forward(params, config, images, sensors)?;
    let (unit, _) = normalize_rows(&cache.raw)?;
    Ok(unit
        .rows()
        .into_iter()
        .map(|r| Embedding::normalized(r.to_vec()).expect("already unit norm"))
        .collect())
}

/// Embeds one touch image using the prefix tokens of `sensor_index`.
pub fn encode_touch<T: Scalar>(
    image: &TactileImage,
    sensor_index: usize,
    params: &EncoderParams<T>,
    config: &EncoderConfig,
) -> Result<Embedding> {
    if image.height != config.height || image.width != config.width {
        return Err(Error::Shape(format!(
            "image is {}x{}, encoder expects {}x{}",
            image.height, image.width, config.height, config.width
        )));
    }
    let mut out = encode_batch(params, config, &[&image.pixels], &[sensor_index])?;
    Ok(out.pop().expect("one embedding"))
}
