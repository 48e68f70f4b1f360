//! Species-sampling models of Gibbs type for taxonomic diversity.
//!
//! The crate covers the three Gibbs-type families with negative, zero and
//! positive discount (Dirichlet-multinomial, Dirichlet process, and the
//! Aldous-Pitman process at discount one half), their predictive and
//! combinatorial quantities, point estimators, coarsened posterior samplers for
//! the diversity parameter, and a nested model for multi-level taxonomies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apinfer;
pub mod data;
pub mod dpinfer;
pub mod draws;
pub mod error;
pub mod estimators;
pub mod gibbs;
pub mod sampling;
pub mod specfun;
pub mod taxo;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gibbs-models.md")]
    mod gibbs_models {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/dp-posterior.md")]
    mod dp_posterior {}
    #[doc = include_str!("../../../book/src/aldous-pitman.md")]
    mod aldous_pitman {}
    #[doc = include_str!("../../../book/src/taxonomies.md")]
    mod taxonomies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
