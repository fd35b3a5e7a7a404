//! Repeated random-split evaluation, confusion metrics, and synthetic phantoms.

mod metrics;
mod phantom;
mod protocol;

use std::collections::HashMap;

pub use metrics::{confusion_metrics, dice, Confusion};
pub use phantom::{annotate_phantom, gen_phantom, render_phantom, Blob, Phantom, PhantomSpec, Tube};
pub use protocol::{
    evaluate_repeated, format_accuracy, sample_std, trial_split, EvalConfig, EvalReport, TrialSplit,
};

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::volume_io::AnnotationSet;

/// Label of every feature row, looked up by its voxel. Every row must be annotated.
pub fn align_labels(x: &FeatureMatrix, annotations: &AnnotationSet) -> Result<Vec<u8>> {
    let lookup: HashMap<(&str, usize, usize, usize), u8> = annotations
        .entries()
        .iter()
        .map(|a| ((a.volume_id.as_str(), a.x, a.y, a.z), a.label.as_u8()))
        .collect();
    x.voxels()
        .iter()
        .map(|v| {
            lookup
                .get(&(v.volume_id.as_str(), v.x, v.y, v.z))
                .copied()
                .ok_or_else(|| {
                    Error::Annotation(format!(
                        "feature row for ({}, {}, {}, {}) has no annotation",
                        v.volume_id, v.x, v.y, v.z
                    ))
                })
        })
        .collect()
}
