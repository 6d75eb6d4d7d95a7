//! Slow, obviously-correct reference implementations.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_core::embedding::Embedding;
use tactile_core::encoder::resolve_sensor_pixels;
use tactile_core::eval::{argmax, average_precision, score_prompts};
use tactile_core::objective::{info_nce_t2v, info_nce_v2t};

/// AP as the sum of precision@k at every relevant k, each precision recounted
/// from scratch.
pub fn brute_force_ap(relevance: &[bool]) -> Option<f64> {
    let positives = relevance.iter().filter(|&&r| r).count();
    if positives == 0 {
        return None;
    }
    let mut sum = 0.0;
    for k in 1..=relevance.len() {
        if relevance[k - 1] {
            let hits = relevance[..k].iter().filter(|&&r| r).count();
            sum += hits as f64 / k as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Largest |fast - brute| over `n` random relevance lists; `None` if the two
/// ever disagree on whether positives exist.
pub fn ap_max_error(n: usize, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let len = rng.random_range(1..60);
        let rate: f64 = rng.random();
        let rel: Vec<bool> = (0..len).map(|_| rng.random_bool(rate)).collect();
        match (average_precision(&rel), brute_force_ap(&rel)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => return None,
        }
    }
    Some(worst)
}

/// `-ln(softmax)` of each diagonal entry, straight from the definition.
pub fn naive_info_nce(queries: &Array2<f64>, keys: &Array2<f64>, tau: f64) -> f64 {
    let b = queries.nrows();
    let mut total = 0.0;
    for i in 0..b {
        let sim = |j: usize| -> f64 {
            let mut s = 0.0;
            for d in 0..queries.ncols() {
                s += queries[[i, d]] * keys[[j, d]];
            }
            s / tau
        };
        let mut denom = 0.0;
        for j in 0..b {
            denom += sim(j).exp();
        }
        total += -(sim(i).exp() / denom).ln();
    }
    total / b as f64
}

fn unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Array2<f64> {
    let mut m: Array2<f64> = Array2::from_shape_simple_fn((b, d), || rng.random_range(-1.0..1.0));
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

/// Largest deviation of both InfoNCE directions from the naive loop.
pub fn info_nce_max_error(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let b = rng.random_range(1..33);
        let d = rng.random_range(2..17);
        let tau = rng.random_range(0.05..1.0);
        let t = unit_rows(&mut rng, b, d);
        let v = unit_rows(&mut rng, b, d);
        let fast_tv = info_nce_t2v(t.view(), v.view(), tau).unwrap();
        let fast_vt = info_nce_v2t(t.view(), v.view(), tau).unwrap();
        worst = worst
            .max((fast_tv - naive_info_nce(&t, &v, tau).max(0.0)).abs())
            .max((fast_vt - naive_info_nce(&v, &t, tau).max(0.0)).abs());
    }
    worst
}

/// Nearest prototype by L1 over the per-channel pixel mean, first index on ties.
pub fn exhaustive_resolve(pixels: &[f32], prototypes: &[[f64; 3]]) -> usize {
    let n = pixels.len() / 3;
    let mut mean = [0.0f64; 3];
    for p in 0..n {
        for c in 0..3 {
            mean[c] += pixels[3 * p + c] as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let dist = |k: usize| -> f64 { (0..3).map(|c| (mean[c] - prototypes[k][c]).abs()).sum() };
    let mut best = 0;
    for k in 1..prototypes.len() {
        if dist(k) < dist(best) {
            best = k;
        }
    }
    best
}

/// Number of random images where `resolve_sensor_pixels` disagrees with the
/// exhaustive search.
pub fn resolve_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let k = rng.random_range(1..6);
        let prototypes: Vec<[f64; 3]> = (0..k).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let side = rng.random_range(1..9);
        let base: [f32; 3] = [rng.random(), rng.random(), rng.random()];
        let pixels: Vec<f32> = (0..side * side * 3)
            .map(|i| (base[i % 3] + rng.random_range(-0.2f32..0.2)).clamp(0.0, 1.0))
            .collect();
        if resolve_sensor_pixels(&pixels, &prototypes).unwrap() != exhaustive_resolve(&pixels, &prototypes) {
            bad += 1;
        }
    }
    bad
}

/// Number of random cases where positive scaling changes the predicted prompt,
/// either on raw scores or through a scaled query embedding.
pub fn scaling_violations(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let m = rng.random_range(2..12);
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        if argmax(&scores) != argmax(&scaled) {
            bad += 1;
        }

        let d = 8;
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prompts: Vec<Embedding> = (0..m)
            .map(|_| Embedding::normalized((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let q = Embedding::normalized(raw.clone()).unwrap();
        let qs = Embedding::normalized(raw.iter().map(|v| v * c).collect()).unwrap();
        if score_prompts(&q, &prompts).0 != score_prompts(&qs, &prompts).0 {
            bad += 1;
        }
    }
    bad
}
