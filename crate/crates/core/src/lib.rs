//! Few-shot attribute translation: a conditional image-to-image GAN
//! trained with a first-order meta-learning outer loop, so that a new
//! attribute can be picked up from a handful of samples and a few
//! gradient steps.
//!
//! The crate is self-contained: it ships its own tensor engine with
//! reverse-mode differentiation, the generator/discriminator pair, the
//! adversarial and cycle objectives, the meta-training and few-shot
//! fine-tuning loops, a synthetic attribute benchmark with an
//! independently trained probe classifier, and bit-exact artifact IO.

pub mod artifacts;
pub mod data;
pub mod error;
pub mod meta;
pub mod nets;
pub mod objectives;
pub mod tensor;

pub use error::{Error, Result};
