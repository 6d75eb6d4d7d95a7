//! Touch-to-anchor alignment toolkit.
//!
//! A synthetic multi-sensor visuo-tactile world ([`datagen`]), a frozen
//! analytic anchor space ([`anchor`]), a transformer touch encoder with
//! sensor-specific prefix tokens ([`encoder`]), the symmetric InfoNCE
//! objective ([`objective`]), a mixed-source batch sampler ([`sampler`]),
//! the training loop ([`trainer`]) and evaluation protocols ([`eval`]).

pub mod anchor;
pub mod blob;
pub mod datagen;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod objective;
pub mod prompts;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
