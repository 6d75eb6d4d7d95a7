use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LatentSample, SensorProfile, TactileImage, VisionImage};

/// Per-channel response of the gel to an imprint.
const IMPRINT_TINT: [f64; 3] = [1.0, 0.85, 0.7];
const TEXTURE_WEIGHT: f64 = 0.45;
const SHADING_WEIGHT: f64 = 0.35;

/// Bump width (image units) for a gel of the given stiffness.
pub fn touch_spread(gel_stiffness: f64) -> f64 {
    0.22 / gel_stiffness.sqrt()
}

/// Renders a touch image: background, a texture-modulated contact bump shaded
/// along the illumination axis, then clamped Gaussian noise.
pub fn render_touch(
    latent: &LatentSample,
    profile: &SensorProfile,
    noise_seed: u64,
    size: usize,
) -> TactileImage {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let spread = touch_spread(profile.gel_stiffness);
    let [lx, ly] = profile.illumination_direction;
    let [cx, cy] = latent.contact_center;
    let freq = latent.texture_frequency * profile.texture_scale;
    let depth = latent.contact_depth;

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        let v = (y as f64 + 0.5) / size as f64;
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let (du, dv) = (u - cx, v - cy);
            let bump = (-(du * du + dv * dv) / (2.0 * spread * spread)).exp();
            let texture = (2.0 * PI * freq * (u * lx + v * ly)).sin();
            let shading = -(du * lx + dv * ly) / spread;
            let imprint = depth * bump * (TEXTURE_WEIGHT * texture + SHADING_WEIGHT * shading);
            for c in 0..3 {
                let mut value = profile.background_color[c] + imprint * IMPRINT_TINT[c];
                if profile.noise_sigma > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    value += profile.noise_sigma * n;
                }
                pixels.push(value.clamp(0.0, 1.0) as f32);
            }
        }
    }
    TactileImage {
        height: size,
        width: size,
        sensor_id: profile.sensor_id,
        pixels,
    }
}

const MATERIAL_PALETTE: [[f64; 3]; 8] = [
    [0.62, 0.42, 0.22],
    [0.70, 0.72, 0.75],
    [0.30, 0.45, 0.70],
    [0.55, 0.25, 0.35],
    [0.35, 0.60, 0.35],
    [0.80, 0.75, 0.55],
    [0.25, 0.25, 0.25],
    [0.85, 0.55, 0.30],
];

/// Light color of each recording environment.
const SCENE_LIGHT: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.1, 0.95, 0.8], [0.8, 0.95, 1.15], [0.95, 1.1, 0.9]];

/// Renders the object as seen by a camera: material color, texture, and a
/// contact shadow. Sensor independent.
pub fn render_vision(latent: &LatentSample, size: usize) -> VisionImage {
    let material = MATERIAL_PALETTE[latent.material_class % MATERIAL_PALETTE.len()];
    let light = SCENE_LIGHT[latent.scene % SCENE_LIGHT.len()];
    let color: [f64; 3] = std::array::from_fn(|c| material[c] * light[c]);
    let [cx, cy] = latent.contact_center;
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        let v = (y as f64 + 0.5) / size as f64;
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let texture = 0.75 + 0.25 * (2.0 * PI * latent.texture_frequency * u).sin();
            let r2 = (u - cx).powi(2) + (v - cy).powi(2);
            let shadow = 1.0 - 0.4 * latent.contact_depth * (-r2 / 0.08).exp();
            for c in color {
                pixels.push((c * texture * shadow).clamp(0.0, 1.0) as f32);
            }
        }
    }
    VisionImage {
        height: size,
        width: size,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::default_sensors;

    fn latent(depth: f64) -> LatentSample {
        LatentSample {
            material_class: 1,
            texture_frequency: 2.4,
            contact_depth: depth,
            contact_center: [0.5, 0.5],
            grasp_stable: true,
            object_id: 0,
            scene: 0,
        }
    }

    #[test]
    fn no_contact_without_noise_is_pure_background() {
        let mut p = default_sensors()[1].clone();
        p.noise_sigma = 0.0;
        let img = render_touch(&latent(0.0), &p, 9, 32);
        for px in img.pixels.chunks_exact(3) {
            for c in 0..3 {
                assert_eq!(px[c], p.background_color[c] as f32);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic_per_noise_seed() {
        let p = &default_sensors()[0];
        let a = render_touch(&latent(0.7), p, 3, 32);
        let b = render_touch(&latent(0.7), p, 3, 32);
        let c = render_touch(&latent(0.7), p, 4, 32);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        for p in default_sensors() {
            let img = render_touch(&latent(1.0), &p, 11, 32);
            assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let v = render_vision(&latent(1.0), 32);
        assert!(v.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_latent_under_two_profiles_differs_by_background() {
        let sensors = default_sensors();
        for a in 0..sensors.len() {
            for b in a + 1..sensors.len() {
                let ia = render_touch(&latent(0.8), &sensors[a], 1, 32).mean_pixel();
                let ib = render_touch(&latent(0.8), &sensors[b], 1, 32).mean_pixel();
                let l1: f64 = ia.iter().zip(&ib).map(|(x, y)| (x - y).abs()).sum();
                assert!(l1 >= 0.2, "sensors {a},{b}: {l1}");
            }
        }
    }
}
