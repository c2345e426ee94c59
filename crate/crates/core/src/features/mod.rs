//! Patch feature extraction: a small conv net trained with the CutPaste
//! pretext task, gradient auditing, and `TXAF` feature interchange.

mod extractor;
mod gradcheck;
mod norm;
mod pretext;
mod txaf;

use rayon::prelude::*;

pub use extractor::{Extractor, ExtractorConfig, FeatureVector, ForwardCache};
pub use gradcheck::{
    grad_check, grad_check_with, probe_gradient, relative_error, GradCheckReport, GroupReport,
};
pub use norm::{FeatureNorm, MIN_STD};
pub use pretext::{cross_entropy, pretext_accuracy, pretext_train, PretextConfig};
pub use txaf::{export_features, import_features, PatchFeatureSet, Provenance};

use crate::error::Result;
use crate::texgen::{extract_patches, Image};

/// Features of every sliding-window patch of `img`, in row-major patch order.
pub fn image_features(ex: &Extractor, img: &Image, image_id: &str, stride: usize) -> Result<PatchFeatureSet> {
    let patches = extract_patches(img, ex.config.input_size, stride)?;
    let feats: Vec<FeatureVector> = patches
        .par_iter()
        .map(|(_, p)| ex.forward(p))
        .collect::<Result<_>>()?;
    let prov = patches
        .iter()
        .map(|(r, _)| Provenance {
            image_id: image_id.to_string(),
            rect: *r,
        })
        .collect();
    PatchFeatureSet::from_rows(ex.config.feature_dim, &feats, prov)
}
