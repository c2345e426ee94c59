//! Synthetic textures, defect injection, CutPaste, patch extraction and image I/O.

mod cutpaste;
mod dataset;
mod image;
mod patches;
mod pnm;
mod synth;

pub use cutpaste::{cutpaste, cutpaste_with, paste, sample_rects, CutPasteParams};
pub use dataset::{
    load_mvtec_category, synthetic_benchmark, write_mvtec_category, Category, Item, Label,
    LabeledDataset, SyntheticSpec,
};
pub use image::{Image, Mask, Rect};
pub use patches::{extract_patches, PatchGrid};
pub use pnm::{decode as decode_pnm, encode as encode_pnm, load_image, save_image};
pub use synth::{
    generate_texture, generate_texture_shifted, inject_defect, random_defect, DefectGeometry,
    DefectKind, DefectSpec, TextureKind,
};
