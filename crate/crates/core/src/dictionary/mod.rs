//! Sparse coding and dictionary learning over patch signals.

mod atoms;
mod lasso;
mod learn;
mod omp;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub use atoms::{reconstruct, Dictionary, SparseCode, UNIT_NORM_TOL};
pub use lasso::{ista, lasso_objective, lasso_solve, lasso_trace};
pub use learn::{
    dict_update, dict_update_atoms, dict_update_scaled, learning_objective, DUPLICATE_COS, initial_dictionary, learn, learn_matrix, signal_matrix,
    DictLearnConfig, MOD_RIDGE,
};
pub use omp::{omp, omp_trace};

use crate::error::{Error, Result};

pub fn save_dictionary(d: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    d.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Dictionary::read_from(BufReader::new(file))
}

/// `iteration,objective` CSV of a learning history.
pub fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("iteration,objective\n");
    for (i, v) in history.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    s
}
