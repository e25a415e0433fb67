//! Node classification on attributed graphs from random-walk path
//! neighborhoods.
//!
//! Each node gathers short second-order random walks that end at it under
//! several walk strategies. A GRU encodes every walk, multi-head attention
//! pools the walks of one strategy, and the pooled strategy embeddings are
//! concatenated and classified. The crate carries its own reverse-mode
//! autodiff engine ([`autodiff`]) and experiment runner ([`train`]).
//!
//! The guide under `book/` is compiled into the doctests below.

pub mod autodiff;
pub mod checks;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;
pub mod walker;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/walks.md")]
    mod walks {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
