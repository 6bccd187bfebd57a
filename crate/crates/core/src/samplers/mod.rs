//! Dataset-level bias mitigation samplers.
//!
//! All samplers work on subgroup indices only; features are never read.
//! [`undersample`], [`oversample`] and [`upweight`] balance the subgroups of
//! the whole training set. Bias Mimicking ([`build_label_views`]) instead
//! builds one binary view per class, keeping that class intact and
//! subsampling every other class until its group distribution mimics the kept
//! class.

mod baseline;
mod mimic;

use serde::{Deserialize, Serialize};

pub use self::baseline::{
    oversample, oversample_counts, undersample, undersample_counts, upweight, ResamplePlan, SampleWeights,
};
pub use self::mimic::{
    build_label_views, build_partial_views, build_views_from_counts, mimic_counts, mimic_row, partial_mimic, resample_view,
    LabelView, ViewSet,
};

/// Sampling method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Undersample,
    Oversample,
    Upweight,
    Mimic,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Undersample => "undersample",
            Method::Oversample => "oversample",
            Method::Upweight => "upweight",
            Method::Mimic => "mimic",
        }
    }
}
