//! Browser bindings: render touch images per sensor, inspect sampler batch
//! composition, and trace the contrastive loss against temperature.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tactile_core::datagen::{render_touch, render_vision, LatentSample, WorldConfig};
use tactile_core::objective::total_loss;
use tactile_core::sampler::{dataset_probabilities, draw_batch, SamplerConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_rgba(pixels: &[f32]) -> Vec<u8> {
    pixels
        .chunks(3)
        .flat_map(|p| {
            let c = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [c(p[0]), c(p[1]), c(p[2]), 255]
        })
        .collect()
}

/// Side length of rendered images.
#[wasm_bindgen]
pub fn image_size() -> usize {
    WorldConfig::default().image_size
}

#[wasm_bindgen]
pub fn num_sensors() -> usize {
    WorldConfig::default().sensors.len()
}

#[wasm_bindgen]
pub fn num_materials() -> usize {
    WorldConfig::default().num_classes
}

/// Touch image of one contact under one sensor, as RGBA bytes. Pass
/// `sensor = num_sensors()` for the sensor-free vision image instead.
#[wasm_bindgen]
pub fn render_contact(sensor: usize, material: usize, depth: f64, cx: f64, cy: f64, seed: u64) -> Result<Vec<u8>, JsError> {
    let world = WorldConfig::default();
    let latent = LatentSample {
        material_class: material,
        texture_frequency: world.base_frequency * world.frequency_ratio.powi(material as i32),
        contact_depth: depth,
        contact_center: [cx, cy],
        grasp_stable: depth >= world.grasp_threshold,
        object_id: 0,
        scene: 0,
    };
    latent.validate(world.num_classes).map_err(js_err)?;
    if sensor == world.sensors.len() {
        return Ok(to_rgba(&render_vision(&latent, world.image_size).pixels));
    }
    let profile = world
        .sensors
        .get(sensor)
        .ok_or_else(|| JsError::new(&format!("sensor {sensor} out of range")))?;
    Ok(to_rgba(&render_touch(&latent, profile, seed, world.image_size).pixels))
}

#[derive(Serialize)]
struct SamplerSummary {
    probabilities: Vec<f64>,
    selection_frequency: Vec<f64>,
    majority: usize,
    /// Per-dataset counts in the first batch.
    first_batch: Vec<usize>,
}

/// Draws `batches` mixed-source batches over datasets of the given sizes and
/// reports how often each dataset led a batch. Returns JSON.
#[wasm_bindgen]
pub fn sampler_summary(sizes: Vec<u32>, sigma: f64, batch_size: usize, batches: usize, seed: u64) -> Result<String, JsError> {
    let sizes: Vec<usize> = sizes.into_iter().map(|s| s as usize).collect();
    let probabilities = dataset_probabilities(&sizes).map_err(js_err)?;
    let mut start = 0;
    let pools: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&s| {
            let p = (start..start + s).collect();
            start += s;
            p
        })
        .collect();
    let owner = |i: usize| pools.iter().position(|p| p.first() <= Some(&i) && p.last() >= Some(&i)).unwrap_or(0);
    let config = SamplerConfig { sigma, batch_size, seed };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; sizes.len()];
    let mut first_batch = vec![0usize; sizes.len()];
    let mut majority = 0;
    for b in 0..batches.max(1) {
        let draw = draw_batch(&pools, &config, &mut rng).map_err(js_err)?;
        counts[draw.selected] += 1;
        if b == 0 {
            majority = draw.majority;
            for &i in &draw.indices {
                first_batch[owner(i)] += 1;
            }
        }
    }
    let n = batches.max(1) as f64;
    let summary = SamplerSummary {
        probabilities,
        selection_frequency: counts.iter().map(|&c| c as f64 / n).collect(),
        majority,
        first_batch,
    };
    serde_json::to_string(&summary).map_err(js_err)
}

fn unit_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut r in a.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    a
}

/// Symmetric contrastive loss of one random batch at each temperature in
/// `taus`. Touch rows are their paired anchors plus Gaussian noise of scale
/// `noise`. Returns JSON `[[tau, loss], ...]`.
#[wasm_bindgen]
pub fn loss_curve(batch_size: usize, dim: usize, noise: f64, taus: Vec<f64>, seed: u64) -> Result<String, JsError> {
    if batch_size == 0 || dim == 0 {
        return Err(JsError::new("batch size and dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 {
        // Box-Muller keeps the bindings free of extra distributions.
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let v: f64 = rng.random();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    };
    let vision = unit_rows(Array2::from_shape_simple_fn((batch_size, dim), &mut gauss));
    let jitter = Array2::from_shape_simple_fn((batch_size, dim), &mut gauss);
    let touch = unit_rows(&vision + &(jitter * noise));
    let mut out = Vec::with_capacity(taus.len());
    for tau in taus {
        let loss = total_loss(touch.view(), vision.view(), tau).map_err(js_err)?;
        out.push([tau, loss]);
    }
    serde_json::to_string(&out).map_err(js_err)
}
