pub mod checkpoint;
pub mod data;
pub mod discriminator;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod nn;
pub mod skeleton;
pub mod tensor;
pub mod training;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{no_grad, Tensor, TensorError};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod book_autodiff {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/skeleton.md")]
pub mod book_skeleton {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod book_corpus {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/encoder.md")]
pub mod book_encoder {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/adversarial.md")]
pub mod book_adversarial {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
pub mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod book_evaluation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}
