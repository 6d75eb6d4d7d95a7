//! Touch encoder: a small pre-norm vision transformer over image patches with
//! learnable sensor-specific prefix tokens.

mod config;
mod model;
mod params;
mod sensors;

pub use config::EncoderConfig;
pub use model::{
    backward, encode_batch, encode_touch, forward, normalize_backward, normalize_rows, ForwardCache,
};
pub use params::{Block, EncoderParams, SensorTokenBank};
pub use sensors::{compute_prototypes, resolve_sensor, resolve_sensor_pixels};

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating point type the encoder runs in: `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar:
    LinalgScalar
    + ScalarOperand
    + Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
