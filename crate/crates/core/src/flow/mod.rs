//! Affine-coupling normalizing flow over feature vectors.

mod coupling;
mod model;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub use coupling::{CouplingCache, CouplingLayer, SubNet};
pub use model::{log_normal_const, FlowConfig, FlowModel, FlowTrace, Permutation};
pub use train::{train_flow, train_flow_rows, FlowTrainConfig};

use crate::error::{Error, Result};

pub fn save_flow(f: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    FlowModel::read_from(BufReader::new(file))
}
