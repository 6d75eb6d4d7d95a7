use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_core::encoder::{EncoderConfig, EncoderParams};
use tactile_core::objective::{loss_gradient, total_loss};
use tactile_core::encoder::{forward, normalize_rows};

pub fn tiny() -> EncoderConfig {
    EncoderConfig {
        height: 8,
        width: 8,
        patch_size: 4,
        dim: 8,
        n_blocks: 1,
        n_heads: 2,
        out_dim: 4,
        tokens_per_sensor: 2,
        num_sensors: 3,
    }
}

pub struct Case {
    pub images: Vec<Vec<f32>>,
    pub sensors: Vec<usize>,
    pub anchors: Array2<f64>,
}

pub fn case(sensors: Vec<usize>, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = sensors
        .iter()
        .map(|_| (0..8 * 8 * 3).map(|_| rng.random::<f32>()).collect())
        .collect();
    let mut anchors: Array2<f64> = Array2::from_shape_simple_fn((sensors.len(), 4), || rng.random_range(-1.0..1.0));
    for mut r in anchors.rows_mut() {
        let n: f64 = r.dot(&r).sqrt();
        r /= n;
    }
    Case {
        images,
        sensors,
        anchors,
    }
}

fn loss(params: &EncoderParams<f64>, config: &EncoderConfig, c: &Case, tau: f64) -> f64 {
    let refs: Vec<&[f32]> = c.images.iter().map(|v| v.as_slice()).collect();
    let cache = forward(params, config, &refs, &c.sensors).unwrap();
    let (unit, _) = normalize_rows(&cache.raw).unwrap();
    total_loss(unit.view(), c.anchors.view(), tau).unwrap()
}

/// Largest elementwise relative error per tensor.
pub fn check(config: &EncoderConfig, c: &Case, seed: u64) -> Vec<(String, f64)> {
    let tau = 0.07;
    let eps = 1e-4;
    let mut params = EncoderParams::<f64>::init(config, seed).unwrap();
    // Larger weights than the 0.02 init so every path carries signal.
    for (_, t) in params.tensors_mut() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t.len() as u64);
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let refs: Vec<&[f32]> = c.images.iter().map(|v| v.as_slice()).collect();
    let (_, grad) = loss_gradient(&params, config, &refs, &c.sensors, &c.anchors, tau).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_vec()))
        .collect();

    let mut report = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..a.len() {
            let mut p = params.clone();
            let orig = p.tensors()[ti].1[j];
            p.tensors_mut()[ti].1[j] = orig + eps;
            let up = loss(&p, config, c, tau);
            p.tensors_mut()[ti].1[j] = orig - eps;
            let down = loss(&p, config, c, tau);
            let fd = (up - down) / (2.0 * eps);
            let scale = a[j].abs().max(fd.abs());
            if scale > 1e-6 {
                worst = worst.max((a[j] - fd).abs() / scale);
            }
        }
        report.push((name.clone(), worst));
    }
    report
}

/// Tokens of sensors absent from the batch must get exactly zero gradient.
pub fn sensor_locality() -> bool {
    let config = tiny();
    let c = case(vec![0, 0, 0], 4);
    let params = EncoderParams::<f64>::init(&config, 1).unwrap();
    let refs: Vec<&[f32]> = c.images.iter().map(|v| v.as_slice()).collect();
    let (_, grad) = loss_gradient(&params, &config, &refs, &c.sensors, &c.anchors, 0.07).unwrap();
    let tokens = &grad.sensors.tokens;
    tokens.slice(ndarray::s![0, .., ..]).iter().any(|&v| v != 0.0)
        && tokens.slice(ndarray::s![1.., .., ..]).iter().all(|&v| v == 0.0)
}
