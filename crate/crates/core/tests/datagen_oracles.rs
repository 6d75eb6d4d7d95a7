//! Rendering and prototype checks against brute-force pixel averages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_core::datagen::{
    default_sensors, generate_world, read_dataset, render_touch, write_dataset, LatentSample, SensorProfile, Split,
    WorldConfig,
};
use tactile_core::encoder::{compute_prototypes, resolve_sensor};

fn random_latent(rng: &mut ChaCha8Rng) -> LatentSample {
    let class = rng.random_range(0..4);
    LatentSample {
        material_class: class,
        texture_frequency: 1.6 * 1.5f64.powi(class as i32),
        contact_depth: rng.random(),
        contact_center: [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)],
        grasp_stable: rng.random(),
        object_id: class,
        scene: 0,
    }
}

fn batch_mean(profile: &SensorProfile, n: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = [0.0; 3];
    for _ in 0..n {
        let latent = random_latent(&mut rng);
        let img = render_touch(&latent, profile, rng.random(), 32);
        let m = img.mean_pixel();
        for c in 0..3 {
            acc[c] += m[c] / n as f64;
        }
    }
    acc
}

/// Expected image offset from the background, by brute force over an
/// independent draw. Pixels are read after the clamp, so clamp bias is included.
fn monte_carlo_offset(profile: &SensorProfile, n: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = [0.0; 3];
    let mut count = 0usize;
    for _ in 0..n {
        let latent = random_latent(&mut rng);
        let img = render_touch(&latent, profile, rng.random(), 32);
        for px in img.pixels.chunks(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64 - profile.background_color[c];
            }
            count += 1;
        }
    }
    acc.map(|a| a / count as f64)
}

fn l1(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).abs()).sum()
}

#[test]
fn batch_mean_matches_monte_carlo_oracle() {
    for (k, profile) in default_sensors().iter().enumerate() {
        let mean = batch_mean(profile, 1000, 100 + k as u64);
        let offset = monte_carlo_offset(profile, 2000, 900 + k as u64);
        let expected: [f64; 3] = std::array::from_fn(|c| profile.background_color[c] + offset[c]);
        assert!(l1(mean, expected) <= 0.05, "sensor {k}: {mean:?} vs {expected:?}");
    }
}

#[test]
fn same_latent_under_every_profile_pair_is_separated() {
    let sensors = default_sensors();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let latent = random_latent(&mut rng);
        let means: Vec<[f64; 3]> = sensors.iter().map(|p| render_touch(&latent, p, 1, 32).mean_pixel()).collect();
        for a in 0..means.len() {
            for b in a + 1..means.len() {
                assert!(l1(means[a], means[b]) >= 0.2, "{a} vs {b}");
            }
        }
    }
}

fn small_world(per_sensor: usize, seed: u64) -> tactile_core::datagen::World {
    let mut config = WorldConfig::default();
    for d in &mut config.datasets {
        d.size = per_sensor;
    }
    generate_world(&config, seed).unwrap()
}

#[test]
fn prototypes_match_pixel_average_of_written_files() {
    let world = small_world(500, 21);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&world, dir.path()).unwrap();
    let loaded = read_dataset(dir.path()).unwrap();
    let protos = compute_prototypes(loaded.samples.iter().map(|s| &s.touch), 3).unwrap();

    let mut sums = vec![[0.0f64; 3]; 3];
    let mut counts = vec![0usize; 3];
    for s in &loaded.samples {
        let k = s.touch.sensor_id;
        for px in s.touch.pixels.chunks(3) {
            for c in 0..3 {
                sums[k][c] += px[c] as f64;
            }
            counts[k] += 1;
        }
    }
    for k in 0..3 {
        let oracle = sums[k].map(|v| v / counts[k] as f64);
        assert!(l1(protos[k], oracle) <= 0.05, "sensor {k}");
        assert!(protos[k].iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn held_out_images_resolve_to_their_sensor() {
    let train = small_world(500, 22);
    let protos = compute_prototypes(train.samples.iter().map(|s| &s.touch), 3).unwrap();
    let held_out = small_world(1000, 23);
    for s in &held_out.samples {
        let k = resolve_sensor(&s.touch, &protos).unwrap();
        let exhaustive = (0..3)
            .min_by(|&a, &b| l1(s.touch.mean_pixel(), protos[a]).total_cmp(&l1(s.touch.mean_pixel(), protos[b])))
            .unwrap();
        assert_eq!(k, exhaustive);
        assert_eq!(k, s.touch.sensor_id);
    }
}

#[test]
fn default_world_holds_out_one_object_per_class() {
    let world = small_world(200, 24);
    let m = &world.manifest;
    assert_eq!(m.splits.test.len(), m.num_classes);
    let mut classes: Vec<usize> = m.splits.test.iter().map(|&o| m.object_classes[o]).collect();
    classes.sort_unstable();
    assert_eq!(classes, vec![0, 1, 2, 3]);
    for s in &world.samples {
        assert_eq!(s.latent.material_class, m.object_classes[s.latent.object_id]);
        assert!(s.touch.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        if s.split == Split::Test {
            assert!(m.splits.test.contains(&s.latent.object_id));
        }
    }
}

#[test]
fn dataset_material_coverage_is_respected() {
    let world = small_world(300, 25);
    let config = WorldConfig::default();
    for s in &world.samples {
        let allowed = &config.datasets[s.dataset].materials;
        assert!(allowed.is_empty() || allowed.contains(&s.latent.material_class));
    }
}
