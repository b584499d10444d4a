//! Attention-guided unpaired image-to-image translation.
//!
//! Generators emit attention masks and content masks which are fused with
//! the input image ([`masks`]); they are trained against PatchGAN
//! discriminators with cycle-consistency, least-squares adversarial,
//! identity, pixel and total-variation objectives ([`losses`],
//! [`training`]).

pub mod data;
pub mod error;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod networks;
pub mod tensor;
pub mod training;
pub mod workflow;

pub use error::{Error, Result};

/// The guide's chapters, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/masks.md")]
    mod masks {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
