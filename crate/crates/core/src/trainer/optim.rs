use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;

/// Decoupled-weight-decay Adam. Moments live in `f32` like the parameters so
/// a checkpoint captures the state exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first: EncoderParams<f32>,
    pub second: EncoderParams<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &EncoderParams<f32>, weight_decay: f64) -> Self {
        Self {
            hyper: AdamHyper {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay,
            },
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    /// `theta <- theta - lr * (wd * theta + m_hat / (sqrt(v_hat) + eps))`.
    pub fn update(&mut self, params: &mut EncoderParams<f32>, grads: &EncoderParams<f32>, lr: f64) {
        let h = self.hyper;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let grads = grads.tensors();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads).zip(firsts).zip(seconds) {
            for i in 0..p.len() {
                let gi = g[i] as f64;
                let mi = h.beta1 * m[i] as f64 + (1.0 - h.beta1) * gi;
                let vi = h.beta2 * v[i] as f64 + (1.0 - h.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let theta = p[i] as f64;
                let adam = (mi / bc1) / ((vi / bc2).sqrt() + h.eps);
                p[i] = (theta - lr * (h.weight_decay * theta + adam)) as f32;
            }
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut EncoderParams<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for (_, t) in grads.tensors_mut() {
            for x in t.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn tiny() -> EncoderParams<f32> {
        let c = EncoderConfig {
            height: 8,
            width: 8,
            patch_size: 4,
            dim: 8,
            n_blocks: 1,
            n_heads: 2,
            out_dim: 4,
            tokens_per_sensor: 2,
            num_sensors: 2,
        };
        EncoderParams::init(&c, 3).unwrap()
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = tiny();
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.05);
        let g = p.zeros_like();
        opt.update(&mut p, &g, 1e-2);
        for ((_, a), (_, b)) in p.tensors().into_iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                let want = (*y as f64) * (1.0 - 1e-2 * 0.05);
                assert!((*x as f64 - want).abs() <= 1e-7 * want.abs().max(1e-30), "{x} vs {want}");
            }
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = tiny();
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.0);
        let mut g = p.zeros_like();
        for (_, t) in g.tensors_mut() {
            t.fill(0.5);
        }
        opt.update(&mut p, &g, 1e-3);
        for ((_, a), (_, b)) in p.tensors().into_iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!(((y - x) as f64 - 1e-3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = tiny();
        for (_, t) in g.tensors_mut() {
            t.fill(1.0);
        }
        let n = g.num_values() as f64;
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - n.sqrt()).abs() < 1e-9);
        let after = clip_global_norm(&mut g, 1.0);
        assert!((after - 1.0).abs() < 1e-5);
    }
}
