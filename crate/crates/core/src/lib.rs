//! Texture anomaly detection: CutPaste-trained patch features, an affine
//! coupling normalizing flow, and sparse dictionary reconstruction scoring.

mod binio;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod nn;
pub mod scoring;
pub mod oracle;
pub mod pipeline;
pub mod seed;
pub mod selfcheck;
pub mod texgen;

pub use error::{Error, Result};
