//! Patch anomaly scores, image scores, thresholding and top-k localization.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{omp, reconstruct, Dictionary};
use crate::error::{Error, Result};
use crate::features::PatchFeatureSet;
use crate::flow::FlowModel;
use crate::texgen::{Image, Mask, Rect};

/// Which vector is sparse-coded: the flow latent or the extractor feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Latent,
    Raw,
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(Self::Latent),
            "raw" => Ok(Self::Raw),
            _ => Err(Error::Config(format!("unknown representation {s:?} (latent|raw)"))),
        }
    }
}

/// Median and interquartile range of training negative log-likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllStats {
    pub median: f64,
    pub iqr: f64,
}

impl NllStats {
    pub fn from_training(f: &FlowModel, feats: &PatchFeatureSet) -> Result<Self> {
        let nll: Vec<f64> = feats
            .rows()
            .par_iter()
            .map(|x| f.log_likelihood(x).map(|l| -l))
            .collect::<Result<_>>()?;
        Self::from_values(&nll)
    }

    pub fn from_values(nll: &[f64]) -> Result<Self> {
        if nll.is_empty() {
            return Err(Error::param("NLL statistics need at least one value"));
        }
        let iqr = percentile(nll, 75.0)? - percentile(nll, 25.0)?;
        if !(iqr > 0.0) {
            return Err(Error::Numeric(format!("training NLL interquartile range is {iqr}")));
        }
        Ok(Self {
            median: percentile(nll, 50.0)?,
            iqr,
        })
    }

    pub fn normalize(&self, nll: f64) -> f64 {
        (nll - self.median).max(0.0) / self.iqr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Weight of the normalised flow NLL in the patch score.
    pub lambda: f64,
    pub top_k: usize,
    /// OMP residual tolerance relative to the signal norm.
    pub xi: f64,
    pub k_max: usize,
    pub representation: Representation,
    pub nll: Option<NllStats>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            top_k: 5,
            xi: 0.05,
            k_max: 10,
            representation: Representation::Latent,
            nll: None,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return Err(Error::Config(format!("xi must be >= 0, got {}", self.xi)));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be >= 1".into()));
        }
        if self.lambda > 0.0 && self.nll.is_none() {
            return Err(Error::Config("lambda > 0 needs frozen training NLL statistics".into()));
        }
        Ok(())
    }
}

/// Scores on the patch grid of one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Rect>,
    pub scores: Vec<f64>,
}

impl AnomalyMap {
    pub fn new(rows: usize, cols: usize, cells: Vec<Rect>, scores: Vec<f64>) -> Result<Self> {
        if rows * cols != cells.len() || cells.len() != scores.len() || cells.is_empty() {
            return Err(Error::param(format!(
                "anomaly map {rows}x{cols} with {} cells and {} scores",
                cells.len(),
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Numeric("anomaly scores must be finite and non-negative".into()));
        }
        Ok(Self {
            rows,
            cols,
            cells,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }

    /// Cell indices sorted by descending score, ties in row-major order.
    fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    /// Heatmap with one pixel per cell, min-max scaled to [0, 1].
    pub fn heatmap(&self) -> Image {
        let lo = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let data = self
            .scores
            .iter()
            .map(|s| if span > 0.0 { (s - lo) / span } else { 0.0 })
            .collect();
        Image::new(self.rows, self.cols, 1, data).expect("heatmap shape")
    }

    /// `row,col,x0,y0,score` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,x0,y0,score\n");
        for (i, (r, v)) in self.cells.iter().zip(&self.scores).enumerate() {
            let _ = writeln!(s, "{},{},{},{},{}", i / self.cols, i % self.cols, r.x0, r.y0, v);
        }
        s
    }
}

/// Grid shape implied by row-major patch provenance.
fn grid_shape(cells: &[Rect]) -> Result<(usize, usize)> {
    let first_row = cells[0].y0;
    let cols = cells.iter().take_while(|r| r.y0 == first_row).count();
    if cells.len() % cols != 0 {
        return Err(Error::param("patch provenance is not a complete grid"));
    }
    let rows = cells.len() / cols;
    for (i, r) in cells.iter().enumerate() {
        if r.y0 != cells[(i / cols) * cols].y0 || r.x0 != cells[i % cols].x0 {
            return Err(Error::param("patch provenance is not in row-major grid order"));
        }
    }
    Ok((rows, cols))
}

/// The vector that gets sparse-coded for feature `x`.
pub fn signal(f: &FlowModel, x: &[f64], repr: Representation) -> Result<Vec<f64>> {
    match repr {
        Representation::Latent => f.forward(x).map(|(t, _)| t),
        Representation::Raw => Ok(x.to_vec()),
    }
}

/// `‖s − D·omp(D, s)‖₂` with tolerance `xi·‖s‖`.
pub fn reconstruction_error(d: &Dictionary, s: &[f64], xi: f64, k_max: usize) -> Result<f64> {
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let code = omp(d, s, xi * norm, k_max)?;
    let rec = reconstruct(d, &code)?;
    Ok(s.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// Score of one feature vector.
pub fn feature_score(f: &FlowModel, d: &Dictionary, x: &[f64], cfg: &ScoreConfig) -> Result<f64> {
    let s = signal(f, x, cfg.representation)?;
    let rec = reconstruction_error(d, &s, cfg.xi, cfg.k_max)?;
    if cfg.lambda == 0.0 {
        return Ok(rec);
    }
    let stats = cfg
        .nll
        .ok_or_else(|| Error::Config("lambda > 0 needs frozen training NLL statistics".into()))?;
    let nll = -f.log_likelihood(x)?;
    Ok((1.0 - cfg.lambda) * rec + cfg.lambda * stats.normalize(nll))
}

/// Scores every patch of one image. `feats` must hold that image's patches
/// in row-major grid order.
pub fn patch_scores(feats: &PatchFeatureSet, f: &FlowModel, d: &Dictionary, cfg: &ScoreConfig) -> Result<AnomalyMap> {
    cfg.validate()?;
    if feats.is_empty() {
        return Err(Error::param("no patches to score"));
    }
    let expected = match cfg.representation {
        Representation::Latent => f.dim,
        Representation::Raw => feats.dim(),
    };
    if feats.dim() != f.dim || expected != d.signal_dim() {
        return Err(Error::param(format!(
            "feature dim {} / flow dim {} / dictionary signal dim {} are inconsistent",
            feats.dim(),
            f.dim,
            d.signal_dim()
        )));
    }
    let cells: Vec<Rect> = feats.provenance().iter().map(|p| p.rect).collect();
    let (rows, cols) = grid_shape(&cells)?;
    let scores = feats
        .rows()
        .par_iter()
        .map(|x| feature_score(f, d, x, cfg))
        .collect::<Result<Vec<f64>>>()?;
    AnomalyMap::new(rows, cols, cells, scores)
}

/// Mean of the `top_k` largest cell scores (all cells if fewer).
pub fn image_score(map: &AnomalyMap, top_k: usize) -> f64 {
    let ranked = map.ranked();
    let k = top_k.clamp(1, ranked.len());
    ranked[..k].iter().map(|&i| map.scores[i]).sum::<f64>() / k as f64
}

/// Union of the top-k cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    /// `(row, col)` pairs, highest score first.
    pub cells: Vec<(usize, usize)>,
    /// Pixel bounding box of the member cells' patches.
    pub bbox: Rect,
}

impl Region {
    pub fn to_csv(&self) -> String {
        format!(
            "x0,y0,w,h,cells\n{},{},{},{},{}\n",
            self.bbox.x0,
            self.bbox.y0,
            self.bbox.w,
            self.bbox.h,
            self.cells.len()
        )
    }

    /// Whether the bounding box covers any marked pixel of `mask`.
    pub fn hits(&self, mask: &Mask) -> bool {
        mask.count_in(&self.bbox) > 0
    }
}

pub fn localize(map: &AnomalyMap, top_k: usize) -> Result<Region> {
    if top_k == 0 || top_k > map.len() {
        return Err(Error::param(format!("top_k {top_k} must lie in 1..={}", map.len())));
    }
    let picked: Vec<usize> = map.ranked().into_iter().take(top_k).collect();
    let x0 = picked.iter().map(|&i| map.cells[i].x0).min().unwrap();
    let y0 = picked.iter().map(|&i| map.cells[i].y0).min().unwrap();
    let x1 = picked.iter().map(|&i| map.cells[i].x0 + map.cells[i].w).max().unwrap();
    let y1 = picked.iter().map(|&i| map.cells[i].y0 + map.cells[i].h).max().unwrap();
    Ok(Region {
        cells: picked.iter().map(|&i| (i / map.cols, i % map.cols)).collect(),
        bbox: Rect::new(x0, y0, x1 - x0, y1 - y0),
    })
}

/// Cells scoring strictly above `tau`, as a `rows × cols` mask.
pub fn threshold_map(map: &AnomalyMap, tau: f64) -> Result<Mask> {
    if !(tau >= 0.0) {
        return Err(Error::param(format!("threshold must be >= 0, got {tau}")));
    }
    let mut m = Mask::empty(map.rows, map.cols);
    for (i, s) in map.scores.iter().enumerate() {
        if *s > tau {
            m.set(i / map.cols, i % map.cols);
        }
    }
    Ok(m)
}

/// Linearly interpolated percentile (`p` in [0, 100]).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&p) {
        return Err(Error::param(format!("percentile {p} of {} values", values.len())));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::param("percentile of NaN values"));
    }
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}
