use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::binio::Reader;
use crate::error::{Error, Result};

/// Maximum tolerated deviation of an atom's L2 norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// `N × M` matrix whose columns (atoms) have unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("dictionary has non-finite entries"));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            let n = col.norm();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::param(format!("atom {j} has norm {n}")));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalises every column; fails on a zero column.
    pub fn normalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Numeric(format!("atom {j} cannot be normalised (norm {n})")));
            }
            col /= n;
        }
        Self::new(atoms)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            atoms: DMatrix::identity(n, n),
        }
    }

    pub fn signal_dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Largest deviation of any atom norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        self.atoms
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Estimate of the largest eigenvalue of `DᵀD` by power iteration,
    /// inflated slightly so that `1/L` is a safe ISTA step.
    pub fn lipschitz(&self) -> f64 {
        let gram = self.atoms.transpose() * &self.atoms;
        let m = gram.nrows();
        let mut v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..1000 {
            let w = &gram * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return f64::MIN_POSITIVE;
            }
            let next = v.dot(&w);
            v = w / norm;
            if (next - lambda).abs() <= 1e-13 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda * (1.0 + 1e-6)
    }

    const MAGIC: &'static [u8; 4] = b"TXDL";
    const VERSION: u16 = 1;

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.signal_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.atom_count() as u32).to_le_bytes())?;
        // column-major
        for v in self.atoms.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut rd = Reader::new(r);
        rd.magic(Self::MAGIC)?;
        rd.version(Self::VERSION)?;
        let at = rd.offset();
        let n = rd.u32()? as usize;
        let m = rd.u32()? as usize;
        if n == 0 || m == 0 || n.saturating_mul(m) > 1 << 28 {
            return Err(Error::format(at, format!("implausible dictionary shape {n}x{m}")));
        }
        let mut vals = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            vals.push(rd.f64()?);
        }
        rd.expect_eof()?;
        Self::new(DMatrix::from_vec(n, m, vals)).map_err(|e| Error::format(at, e.to_string()))
    }
}

/// Sparse coefficient vector over `dim` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub dim: usize,
    /// Sorted, unique atom indices.
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
}

impl SparseCode {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            support: Vec::new(),
            coefficients: Vec::new(),
        }
    }

    /// Keeps the nonzero entries of a dense vector.
    pub fn from_dense(x: &[f64]) -> Self {
        let (support, coefficients) = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self {
            dim: x.len(),
            support,
            coefficients,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (&i, &c) in self.support.iter().zip(&self.coefficients) {
            x[i] = c;
        }
        x
    }

    /// Number of nonzero coefficients.
    pub fn l0(&self) -> usize {
        self.coefficients.iter().filter(|c| **c != 0.0).count()
    }

    pub fn l1(&self) -> f64 {
        self.coefficients.iter().map(|c| c.abs()).sum()
    }
}

/// `D·x`.
pub fn reconstruct(d: &Dictionary, code: &SparseCode) -> Result<Vec<f64>> {
    if code.dim != d.atom_count() {
        return Err(Error::param(format!(
            "code has {} entries, dictionary has {} atoms",
            code.dim,
            d.atom_count()
        )));
    }
    let mut y = vec![0.0; d.signal_dim()];
    for (&j, &c) in code.support.iter().zip(&code.coefficients) {
        for (yi, a) in y.iter_mut().zip(d.atoms().column(j).iter()) {
            *yi += c * a;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unit_atoms() {
        assert!(Dictionary::new(DMatrix::from_element(2, 2, 1.0)).is_err());
        let d = Dictionary::normalized(DMatrix::from_element(2, 3, 1.0)).unwrap();
        assert!(d.max_norm_deviation() <= UNIT_NORM_TOL);
        assert!(Dictionary::normalized(DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn reconstruct_cases() {
        let d = Dictionary::identity(4);
        assert_eq!(reconstruct(&d, &SparseCode::empty(4)).unwrap(), vec![0.0; 4]);
        let code = SparseCode {
            dim: 4,
            support: vec![2],
            coefficients: vec![5.0],
        };
        assert_eq!(reconstruct(&d, &code).unwrap(), vec![0.0, 0.0, 5.0, 0.0]);
        assert!(reconstruct(&d, &SparseCode::empty(3)).is_err());
    }

    #[test]
    fn lipschitz_of_identity_and_duplicates() {
        assert!((Dictionary::identity(3).lipschitz() - 1.0).abs() < 1e-5);
        // two identical unit atoms: DᵀD = [[1,1],[1,1]], λmax = 2
        let d = Dictionary::normalized(DMatrix::from_element(3, 2, 1.0)).unwrap();
        let l = d.lipschitz();
        assert!(l >= 2.0 && l < 2.0 + 1e-5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = Dictionary::normalized(DMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64 - 6.5)).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(Dictionary::read_from(buf.as_slice()).unwrap(), d);
        buf[0] = b'Q';
        assert!(matches!(Dictionary::read_from(buf.as_slice()), Err(Error::Format { .. })));
    }
}
