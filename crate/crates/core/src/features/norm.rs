use serde::{Deserialize, Serialize};

use super::txaf::PatchFeatureSet;
use crate::error::{Error, Result};

/// Smallest standard deviation used when dividing; constant dimensions map to 0.
pub const MIN_STD: f64 = 1e-6;

/// Per-dimension standardization with statistics frozen from training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn fit(feats: &PatchFeatureSet) -> Result<Self> {
        if feats.is_empty() {
            return Err(Error::param("cannot fit feature statistics on an empty set"));
        }
        let d = feats.dim();
        let n = feats.len() as f64;
        let rows = feats.rows();
        let mut mean = vec![0.0; d];
        for r in &rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in &rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| v.sqrt().max(MIN_STD)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::param(format!("feature of dimension {} but statistics of dimension {}", x.len(), self.dim())));
        }
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
    }

    /// Standardized copy of a whole set, provenance preserved.
    pub fn apply_set(&self, feats: &PatchFeatureSet) -> Result<PatchFeatureSet> {
        let mut out = PatchFeatureSet::new(feats.dim());
        for (k, p) in feats.provenance().iter().enumerate() {
            out.push(&self.apply(&feats.row(k))?, p.clone())?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Provenance;
    use crate::texgen::Rect;

    #[test]
    fn standardizes_training_rows() {
        let p = |i: usize| Provenance { image_id: format!("{i}"), rect: Rect::new(0, 0, 1, 1) };
        let rows = vec![vec![1.0, 5.0, 2.0], vec![3.0, 5.0, 4.0], vec![5.0, 5.0, 0.0]];
        let set = PatchFeatureSet::from_rows(3, &rows, (0..3).map(p).collect()).unwrap();
        let n = FeatureNorm::fit(&set).unwrap();
        assert_eq!(n.mean, vec![3.0, 5.0, 2.0]);
        assert_eq!(n.std[1], MIN_STD);
        let z = n.apply_set(&set).unwrap();
        for j in 0..3 {
            let m: f64 = z.rows().iter().map(|r| r[j]).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-6);
        }
        assert_eq!(n.apply(&[3.0, 5.0, 2.0]).unwrap(), vec![0.0; 3]);
        assert!(n.apply(&[1.0]).is_err());
    }
}
