//! Symmetric InfoNCE between touch and anchor embeddings.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::encoder::{backward, forward, normalize_backward, normalize_rows, EncoderConfig, EncoderParams, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { temperature: 0.07 }
    }
}

/// `B` touch/vision pairs aligned by row, with the source dataset of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub touch: Array2<f64>,
    pub vision: Array2<f64>,
    pub sources: Vec<usize>,
}

fn check(touch: &ArrayView2<f64>, vision: &ArrayView2<f64>, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    if touch.dim() != vision.dim() {
        return Err(Error::Shape(format!(
            "touch batch {:?} and vision batch {:?} differ",
            touch.dim(),
            vision.dim()
        )));
    }
    if touch.nrows() == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    if touch.iter().chain(vision.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding batch".into()));
    }
    Ok(())
}

fn logits(queries: &ArrayView2<f64>, keys: &ArrayView2<f64>, tau: f64) -> Array2<f64> {
    queries.dot(&keys.t()) / tau
}

/// Row-wise softmax with the row maximum subtracted first, and each row's
/// log-sum-exp.
fn softmax_rows(s: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut p = s.clone();
    let mut lse = Vec::with_capacity(s.nrows());
    for mut row in p.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
        lse.push(max + sum.ln());
    }
    (p, lse)
}

fn directional(queries: &ArrayView2<f64>, keys: &ArrayView2<f64>, tau: f64) -> f64 {
    let s = logits(queries, keys, tau);
    let (_, lse) = softmax_rows(&s);
    let b = s.nrows();
    let total: f64 = (0..b).map(|i| lse[i] - s[[i, i]]).sum();
    (total / b as f64).max(0.0)
}

/// Touch-to-vision InfoNCE: each touch must pick its own image among the batch.
pub fn info_nce_t2v(touch: ArrayView2<f64>, vision: ArrayView2<f64>, tau: f64) -> Result<f64> {
    check(&touch, &vision, tau)?;
    Ok(directional(&touch, &vision, tau))
}

/// Vision-to-touch InfoNCE; the denominator runs over touch embeddings.
pub fn info_nce_v2t(touch: ArrayView2<f64>, vision: ArrayView2<f64>, tau: f64) -> Result<f64> {
    check(&touch, &vision, tau)?;
    Ok(directional(&vision, &touch, tau))
}

pub fn total_loss(touch: ArrayView2<f64>, vision: ArrayView2<f64>, tau: f64) -> Result<f64> {
    Ok(info_nce_t2v(touch, vision, tau)? + info_nce_v2t(touch, vision, tau)?)
}

/// Total loss and its gradient with respect to the touch embeddings. The
/// vision side is treated as constant.
pub fn total_loss_and_grad(
    touch: ArrayView2<f64>,
    vision: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    check(&touch, &vision, tau)?;
    let b = touch.nrows();
    let s = logits(&touch, &vision, tau);
    let (p_rows, lse_rows) = softmax_rows(&s);
    let st = s.t().to_owned();
    let (p_cols_t, lse_cols) = softmax_rows(&st);
    let mut t2v = 0.0;
    let mut v2t = 0.0;
    for i in 0..b {
        t2v += lse_rows[i] - s[[i, i]];
        v2t += lse_cols[i] - s[[i, i]];
    }
    let bf = b as f64;
    let loss = (t2v / bf).max(0.0) + (v2t / bf).max(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }
    // dL/dS = (P_row - I + P_col - I) / B
    let mut ds = p_rows + &p_cols_t.t();
    for i in 0..b {
        ds[[i, i]] -= 2.0;
    }
    ds /= bf;
    let d_touch = ds.dot(&vision) / tau;
    Ok((loss, d_touch))
}

/// Loss and parameter gradients for one raw batch of touch images against
/// fixed anchor embeddings (`[B, C]`).
pub fn loss_gradient<T: Scalar>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    images: &[&[f32]],
    sensors: &[usize],
    anchors: &Array2<f64>,
    tau: f64,
) -> Result<(f64, EncoderParams<T>)> {
    let cache = forward(params, config, images, sensors)?;
    let (unit, norms) = normalize_rows(&cache.raw)?;
    let (loss, d_unit) = total_loss_and_grad(unit.view(), anchors.view(), tau)?;
    let d_raw = normalize_backward::<T>(&unit, &norms, &d_unit);
    Ok((loss, backward(params, config, &cache, &d_raw)))
}
