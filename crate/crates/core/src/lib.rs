//! Multi-modal survival modelling over slide, genomic and text bags.
//!
//! See the guide under `book/` for a walkthrough.

pub mod bags;
pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gmoe;
pub mod interpret;
pub mod model;
pub mod nn;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/bags.md")]
    mod bags {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/hazards.md")]
    mod hazards {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
}
