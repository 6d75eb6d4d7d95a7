use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EncoderConfig, Scalar};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

/// Learnable prefix tokens, one `L x D` block per sensor, plus the per-sensor
/// mean-pixel prototypes used to pick a block at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTokenBank<T> {
    /// Shape `[K, L, D]`.
    pub tokens: Array3<T>,
    /// Mean RGB per sensor; empty until computed after training.
    pub prototypes: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    /// `[D, 3D]`, columns ordered query | key | value.
    pub qkv_weight: Array2<T>,
    pub qkv_bias: Array1<T>,
    pub out_weight: Array2<T>,
    pub out_bias: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    pub fc1_weight: Array2<T>,
    pub fc1_bias: Array1<T>,
    pub fc2_weight: Array2<T>,
    pub fc2_bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    /// `[P*P*3, D]`.
    pub patch_weight: Array2<T>,
    pub patch_bias: Array1<T>,
    /// `[num_patches, D]`; prefix tokens get no positional encoding.
    pub positions: Array2<T>,
    pub sensors: SensorTokenBank<T>,
    pub blocks: Vec<Block<T>>,
    pub final_gain: Array1<T>,
    pub final_bias: Array1<T>,
    /// `[D, C]`, no bias.
    pub head_weight: Array2<T>,
}

struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn gauss2<T: Scalar>(&mut self, rows: usize, cols: usize) -> Array2<T> {
        Array2::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(self.rng);
            T::of(INIT_STD * z)
        })
    }
}

impl<T: Scalar> EncoderParams<T> {
    /// Gaussian weights (std 0.02), zero biases, unit norm gains.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let d = config.dim;
        let h = config.hidden_dim();
        let patch_weight = init.gauss2(config.patch_len(), d);
        let positions = init.gauss2(config.num_patches(), d);
        let tokens = init
            .gauss2(config.num_sensors * config.tokens_per_sensor, d)
            .into_shape_with_order((config.num_sensors, config.tokens_per_sensor, d))
            .expect("token block shape");
        let blocks = (0..config.n_blocks)
            .map(|_| Block {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                qkv_weight: init.gauss2(d, 3 * d),
                qkv_bias: Array1::zeros(3 * d),
                out_weight: init.gauss2(d, d),
                out_bias: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                fc1_weight: init.gauss2(d, h),
                fc1_bias: Array1::zeros(h),
                fc2_weight: init.gauss2(h, d),
                fc2_bias: Array1::zeros(d),
            })
            .collect();
        let head_weight = init.gauss2(d, config.out_dim);
        Ok(Self {
            patch_weight,
            patch_bias: Array1::zeros(d),
            positions,
            sensors: SensorTokenBank {
                tokens,
                prototypes: Vec::new(),
            },
            blocks,
            final_gain: Array1::ones(d),
            final_bias: Array1::zeros(d),
            head_weight,
        })
    }

    /// Same shapes, every value zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        self.zeros_like_cast()
    }

    /// Every trainable tensor with a stable name, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![
            ("patch.weight".into(), self.patch_weight.as_slice().unwrap()),
            ("patch.bias".into(), self.patch_bias.as_slice().unwrap()),
            ("positions".into(), self.positions.as_slice().unwrap()),
            ("sensor_tokens".into(), self.sensors.tokens.as_slice().unwrap()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.push((p("ln1.gain"), b.ln1_gain.as_slice().unwrap()));
            out.push((p("ln1.bias"), b.ln1_bias.as_slice().unwrap()));
            out.push((p("attn.qkv.weight"), b.qkv_weight.as_slice().unwrap()));
            out.push((p("attn.qkv.bias"), b.qkv_bias.as_slice().unwrap()));
            out.push((p("attn.out.weight"), b.out_weight.as_slice().unwrap()));
            out.push((p("attn.out.bias"), b.out_bias.as_slice().unwrap()));
            out.push((p("ln2.gain"), b.ln2_gain.as_slice().unwrap()));
            out.push((p("ln2.bias"), b.ln2_bias.as_slice().unwrap()));
            out.push((p("mlp.fc1.weight"), b.fc1_weight.as_slice().unwrap()));
            out.push((p("mlp.fc1.bias"), b.fc1_bias.as_slice().unwrap()));
            out.push((p("mlp.fc2.weight"), b.fc2_weight.as_slice().unwrap()));
            out.push((p("mlp.fc2.bias"), b.fc2_bias.as_slice().unwrap()));
        }
        out.push(("final_norm.gain".into(), self.final_gain.as_slice().unwrap()));
        out.push(("final_norm.bias".into(), self.final_bias.as_slice().unwrap()));
        out.push(("head.weight".into(), self.head_weight.as_slice().unwrap()));
        out
    }

    /// Mutable counterpart of [`Self::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = vec![
            ("patch.weight".into(), self.patch_weight.as_slice_mut().unwrap()),
            ("patch.bias".into(), self.patch_bias.as_slice_mut().unwrap()),
            ("positions".into(), self.positions.as_slice_mut().unwrap()),
            ("sensor_tokens".into(), self.sensors.tokens.as_slice_mut().unwrap()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.push((p("ln1.gain"), b.ln1_gain.as_slice_mut().unwrap()));
            out.push((p("ln1.bias"), b.ln1_bias.as_slice_mut().unwrap()));
            out.push((p("attn.qkv.weight"), b.qkv_weight.as_slice_mut().unwrap()));
            out.push((p("attn.qkv.bias"), b.qkv_bias.as_slice_mut().unwrap()));
            out.push((p("attn.out.weight"), b.out_weight.as_slice_mut().unwrap()));
            out.push((p("attn.out.bias"), b.out_bias.as_slice_mut().unwrap()));
            out.push((p("ln2.gain"), b.ln2_gain.as_slice_mut().unwrap()));
            out.push((p("ln2.bias"), b.ln2_bias.as_slice_mut().unwrap()));
            out.push((p("mlp.fc1.weight"), b.fc1_weight.as_slice_mut().unwrap()));
            out.push((p("mlp.fc1.bias"), b.fc1_bias.as_slice_mut().unwrap()));
            out.push((p("mlp.fc2.weight"), b.fc2_weight.as_slice_mut().unwrap()));
            out.push((p("mlp.fc2.bias"), b.fc2_bias.as_slice_mut().unwrap()));
        }
        out.push(("final_norm.gain".into(), self.final_gain.as_slice_mut().unwrap()));
        out.push(("final_norm.bias".into(), self.final_bias.as_slice_mut().unwrap()));
        out.push(("head.weight".into(), self.head_weight.as_slice_mut().unwrap()));
        out
    }

    /// Shape of every tensor in [`Self::tensors`] order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![
            self.patch_weight.shape().to_vec(),
            self.patch_bias.shape().to_vec(),
            self.positions.shape().to_vec(),
            self.sensors.tokens.shape().to_vec(),
        ];
        for b in &self.blocks {
            for s in [
                b.ln1_gain.shape(),
                b.ln1_bias.shape(),
                b.qkv_weight.shape(),
                b.qkv_bias.shape(),
                b.out_weight.shape(),
                b.out_bias.shape(),
                b.ln2_gain.shape(),
                b.ln2_bias.shape(),
                b.fc1_weight.shape(),
                b.fc1_bias.shape(),
                b.fc2_weight.shape(),
                b.fc2_bias.shape(),
            ] {
                out.push(s.to_vec());
            }
        }
        out.push(self.final_gain.shape().to_vec());
        out.push(self.final_bias.shape().to_vec());
        out.push(self.head_weight.shape().to_vec());
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every tensor to another float type.
    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let mut out = self.zeros_like_cast::<U>();
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::of(s.to_f64().unwrap());
            }
        }
        out.sensors.prototypes = self.sensors.prototypes.clone();
        out
    }

    fn zeros_like_cast<U: Scalar>(&self) -> EncoderParams<U> {
        let z1 = |a: &Array1<T>| Array1::<U>::zeros(a.raw_dim());
        let z2 = |a: &Array2<T>| Array2::<U>::zeros(a.raw_dim());
        EncoderParams {
            patch_weight: z2(&self.patch_weight),
            patch_bias: z1(&self.patch_bias),
            positions: z2(&self.positions),
            sensors: SensorTokenBank {
                tokens: Array3::zeros(self.sensors.tokens.raw_dim()),
                prototypes: Vec::new(),
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1_gain: z1(&b.ln1_gain),
                    ln1_bias: z1(&b.ln1_bias),
                    qkv_weight: z2(&b.qkv_weight),
                    qkv_bias: z1(&b.qkv_bias),
                    out_weight: z2(&b.out_weight),
                    out_bias: z1(&b.out_bias),
                    ln2_gain: z1(&b.ln2_gain),
                    ln2_bias: z1(&b.ln2_bias),
                    fc1_weight: z2(&b.fc1_weight),
                    fc1_bias: z1(&b.fc1_bias),
                    fc2_weight: z2(&b.fc2_weight),
                    fc2_bias: z1(&b.fc2_bias),
                })
                .collect(),
            final_gain: z1(&self.final_gain),
            final_bias: z1(&self.final_bias),
            head_weight: z2(&self.head_weight),
        }
    }

    /// Fails unless every tensor has the shape `config` implies.
    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let expected = Self::expected_shapes(config);
        let actual = self.shapes();
        if expected != actual {
            return Err(Error::Shape(format!(
                "parameter shapes do not match encoder config ({} tensors expected, {} found)",
                expected.len(),
                actual.len()
            )));
        }
        Ok(())
    }

    pub fn expected_shapes(config: &EncoderConfig) -> Vec<Vec<usize>> {
        let d = config.dim;
        let h = config.hidden_dim();
        let mut out = vec![
            vec![config.patch_len(), d],
            vec![d],
            vec![config.num_patches(), d],
            vec![config.num_sensors, config.tokens_per_sensor, d],
        ];
        for _ in 0..config.n_blocks {
            out.extend([
                vec![d],
                vec![d],
                vec![d, 3 * d],
                vec![3 * d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, h],
                vec![h],
                vec![h, d],
                vec![d],
            ]);
        }
        out.extend([vec![d], vec![d], vec![d, config.out_dim]]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let c = EncoderConfig::default();
        let a = EncoderParams::<f32>::init(&c, 5).unwrap();
        let b = EncoderParams::<f32>::init(&c, 5).unwrap();
        assert_eq!(a, b);
        let other = EncoderParams::<f32>::init(&c, 6).unwrap();
        assert_ne!(a.patch_weight, other.patch_weight);
    }

    #[test]
    fn bad_heads_are_a_config_error() {
        let c = EncoderConfig {
            dim: 65,
            n_heads: 4,
            ..EncoderConfig::default()
        };
        assert!(EncoderParams::<f32>::init(&c, 0).is_err());
    }

    #[test]
    fn patch_projection_std_is_002() {
        let c = EncoderConfig {
            dim: 128,
            ..EncoderConfig::default()
        };
        let p = EncoderParams::<f64>::init(&c, 1).unwrap();
        let w = p.patch_weight.as_slice().unwrap();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let std = var.sqrt();
        assert!((0.018..=0.022).contains(&std), "{std}");
        assert!(p.patch_bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn shapes_match_config() {
        let c = EncoderConfig::default();
        let p = EncoderParams::<f32>::init(&c, 0).unwrap();
        p.check_shapes(&c).unwrap();
        assert!(p.check_shapes(&c.without_sensor_tokens()).is_err());
        assert_eq!(p.tensors().len(), p.shapes().len());
    }

    #[test]
    fn cast_round_trip_from_f32_is_exact() {
        let c = EncoderConfig::default();
        let p = EncoderParams::<f32>::init(&c, 0).unwrap();
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}
