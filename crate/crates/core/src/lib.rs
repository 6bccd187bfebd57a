//! Dataset-level bias mitigation by resampling.
//!
//! A training set of `(features, target, group)` triples is indexed by
//! subgroup `(y, b)`. When one sensitive group dominates a class, a model can
//! learn to predict the class from the group instead of from the features
//! that actually define it. This crate provides:
//!
//! - [`dataset`]: the grouped dataset model, CSV I/O, a synthetic generator
//!   with controllable bias, and seeded splitting.
//! - [`samplers`]: undersampling, oversampling, upweighting and Bias
//!   Mimicking, the class-conditioned sampler that builds one binary label
//!   view per class in which the group distribution of every other class is
//!   subsampled to match that class.
//! - [`stats`]: exact residual checks for the mimicking condition and for the
//!   resulting independence of target and group.
//! - [`model`] and [`train`]: a small manually differentiated network with one
//!   binary head per class and a detached multiclass inference head, plus
//!   training loops for every method.
//! - [`metrics`]: unbiased accuracy, bias-conflict accuracy and bias
//!   amplification.
//! - [`experiment`]: config-driven pipelines used by the `mimic` binary.
//!
//! ```
//! use mimic::dataset::SubgroupTable;
//! use mimic::samplers::mimic_counts;
//!
//! let table = SubgroupTable::from_rows(&[vec![90, 10], vec![50, 50]]).unwrap();
//! let kept = mimic_counts(&table, 0).unwrap();
//! assert_eq!(kept.row(0), &[90, 10]);
//! assert_eq!(kept.row(1), &[50, 6]);
//! ```

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod stats;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/mimicking.md")]
    mod mimicking {}
    #[doc = include_str!("../../../book/src/independence.md")]
    mod independence {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
