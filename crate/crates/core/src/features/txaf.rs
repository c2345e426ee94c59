//! `TXAF` feature files: magic, `u16` version, `u32` K, `u32` D, K·D
//! little-endian `f32` values (row-major), then a provenance CSV block
//! `image_id,x0,y0,w,h` with one row per feature.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::texgen::Rect;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub image_id: String,
    pub rect: Rect,
}

/// `K × D` feature matrix stored at `f32` precision (the interchange
/// precision), with the source patch of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureSet {
    dim: usize,
    data: Vec<f32>,
    provenance: Vec<Provenance>,
}

impl PatchFeatureSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>], provenance: Vec<Provenance>) -> Result<Self> {
        let mut s = Self::new(dim);
        if rows.len() != provenance.len() {
            return Err(Error::param("row and provenance counts differ"));
        }
        for (row, p) in rows.iter().zip(provenance) {
            s.push(row, p)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, row: &[f64], provenance: Provenance) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::param(format!(
                "feature of dimension {} pushed into a set of dimension {}",
                row.len(),
                self.dim
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite feature value"));
        }
        self.data.extend(row.iter().map(|&v| v as f32));
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.data[k * self.dim..(k + 1) * self.dim].iter().map(|&v| f64::from(v)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.row(k)).collect()
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Rows whose provenance image id equals `id`, in stored order.
    pub fn subset_for(&self, id: &str) -> PatchFeatureSet {
        let mut out = PatchFeatureSet::new(self.dim);
        for (k, p) in self.provenance.iter().enumerate() {
            if p.image_id == id {
                out.data.extend_from_slice(&self.data[k * self.dim..(k + 1) * self.dim]);
                out.provenance.push(p.clone());
            }
        }
        out
    }

    pub fn extend(&mut self, other: &PatchFeatureSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::param("cannot merge feature sets of different dimension"));
        }
        self.data.extend_from_slice(&other.data);
        self.provenance.extend(other.provenance.iter().cloned());
        Ok(())
    }

    const MAGIC: &'static [u8; 4] = b"TXAF";
    const VERSION: u16 = 1;

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.is_empty() {
            return Err(Error::param("refusing to export an empty feature set (K = 0)"));
        }
        let mut out = Vec::with_capacity(14 + 4 * self.data.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut csv = String::from("image_id,x0,y0,w,h\n");
        for p in &self.provenance {
            let r = p.rect;
            let _ = writeln!(csv, "{},{},{},{},{}", p.image_id, r.x0, r.y0, r.w, r.h);
        }
        out.extend_from_slice(csv.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.magic(Self::MAGIC)?;
        rd.version(Self::VERSION)?;
        let k = rd.u32()? as usize;
        let dim = rd.u32()? as usize;
        if k == 0 || dim == 0 {
            return Err(Error::format(6, "K and D must be positive"));
        }
        let need = k.checked_mul(dim).and_then(|n| n.checked_mul(4));
        match need {
            Some(n) if bytes.len() >= 14 + n => {}
            _ => return Err(Error::format(bytes.len() as u64, format!("truncated: {k}x{dim} matrix does not fit"))),
        }
        let mut data = Vec::with_capacity(k * dim);
        for _ in 0..k * dim {
            data.push(rd.f32()?);
        }
        let csv_at = rd.offset();
        let text = String::from_utf8(rd.rest()?).map_err(|_| Error::format(csv_at, "provenance block is not UTF-8"))?;
        let mut lines = text.lines();
        if lines.next() != Some("image_id,x0,y0,w,h") {
            return Err(Error::format(csv_at, "missing provenance header"));
        }
        let mut provenance = Vec::with_capacity(k);
        for line in lines {
            let bad = || Error::format(csv_at, format!("malformed provenance row `{line}`"));
            let mut parts = line.rsplitn(5, ',');
            let mut num = || -> Result<usize> { parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad) };
            let (h, w, y0, x0) = (num()?, num()?, num()?, num()?);
            let id = parts.next().ok_or_else(bad)?;
            provenance.push(Provenance {
                image_id: id.to_string(),
                rect: Rect::new(x0, y0, w, h),
            });
        }
        if provenance.len() != k {
            return Err(Error::format(
                csv_at,
                format!("{} provenance rows for {k} features", provenance.len()),
            ));
        }
        Ok(Self { dim, data, provenance })
    }
}

pub fn export_features(fs_: &PatchFeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, fs_.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn import_features(path: impl AsRef<Path>) -> Result<PatchFeatureSet> {
    let path = path.as_ref();
    PatchFeatureSet::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PatchFeatureSet {
        let rows = vec![vec![0.1, -2.5, 3.0e-7], vec![1e10, 0.0, -0.0]];
        let prov = vec![
            Provenance {
                image_id: "test/hole/000".into(),
                rect: Rect::new(0, 8, 32, 32),
            },
            Provenance {
                image_id: "odd,id".into(),
                rect: Rect::new(16, 0, 32, 32),
            },
        ];
        PatchFeatureSet::from_rows(3, &rows, prov).unwrap()
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txaf");
        let fs_ = sample();
        export_features(&fs_, &p).unwrap();
        let back = import_features(&p).unwrap();
        assert_eq!(
            back.raw().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            fs_.raw().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back, fs_);
    }

    #[test]
    fn empty_export_rejected() {
        assert!(PatchFeatureSet::new(4).to_bytes().is_err());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(PatchFeatureSet::from_bytes(&bad), Err(Error::Format { .. })));
        bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(PatchFeatureSet::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        bytes.truncate(20);
        assert!(matches!(PatchFeatureSet::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_any_matrix(k in 1usize..6, d in 1usize..6, vals in proptest::collection::vec(-1e6f64..1e6, 36)) {
            let rows: Vec<Vec<f64>> = (0..k).map(|i| vals[i * d..(i + 1) * d].to_vec()).collect();
            let prov = (0..k).map(|i| Provenance { image_id: format!("img{i}"), rect: Rect::new(i, 0, 1, 1) }).collect();
            let fs_ = PatchFeatureSet::from_rows(d, &rows, prov).unwrap();
            prop_assert_eq!(PatchFeatureSet::from_bytes(&fs_.to_bytes().unwrap()).unwrap(), fs_);
        }
    }
}
