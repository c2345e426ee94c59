//! ROC curves, AUC and experiment report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texgen::Label;

/// Image-level AUCs reported for the five MVTec AD texture categories.
/// Reference values only; reproducing them needs the full dataset and a
/// pretrained backbone.
pub const PUBLISHED_TEXTURE_AUC: [(&str, f64); 5] = [
    ("carpet", 0.997),
    ("grid", 0.957),
    ("leather", 0.976),
    ("tile", 0.965),
    ("wood", 0.982),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            let _ = writeln!(s, "{f},{t}");
        }
        s
    }

    /// Plain trapezoid rule over the curve points.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

/// Score groups in descending score order: `(positives, negatives)` per
/// distinct score, plus class totals.
fn groups(scores: &[f64], labels: &[Label]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::param(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("NaN score"));
    }
    let pos = labels.iter().filter(|l| l.is_anomalous()).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::param("ROC needs both normal and anomalous items"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in idx {
        if prev != Some(scores[i]) {
            out.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = out.last_mut().unwrap();
        if labels[i].is_anomalous() {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok((out, pos, neg))
}

/// ROC with anomalous as the positive class, one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    let (gs, pos, neg) = groups(scores, labels)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in gs {
        tp += p;
        fp += n;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve { points })
}

/// Area under the ROC curve. The trapezoids are accumulated in integer
/// units of `1 / (2·P·N)`, so ties count exactly one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (gs, pos, neg) = groups(scores, labels)?;
    let mut twice_area: u128 = 0;
    let mut tp = 0u64;
    for (p, n) in gs {
        twice_area += n as u128 * (2 * tp + p) as u128;
        tp += p;
    }
    Ok(twice_area as f64 / (2 * pos as u128 * neg as u128) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

pub fn scores_csv(rows: &[ScoreRow]) -> String {
    let mut s = String::from("id,label,score\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.id, r.label.name(), r.score);
    }
    s
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("id,label,score") {
        return Err(Error::format(0, "scores CSV must start with `id,label,score`"));
    }
    let mut out = Vec::new();
    let mut offset = "id,label,score\n".len() as u64;
    for line in lines {
        let bad = || Error::format(offset, format!("malformed score row {line:?}"));
        let mut parts = line.rsplitn(3, ',');
        let score: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let label = match parts.next() {
            Some("normal") => Label::Normal,
            Some("anomalous") => Label::Anomalous,
            _ => return Err(bad()),
        };
        let id = parts.next().ok_or_else(bad)?.to_string();
        out.push(ScoreRow { id, label, score });
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryReport {
    pub name: String,
    pub auc: f64,
    pub rows: Vec<ScoreRow>,
    pub roc: RocCurve,
}

impl CategoryReport {
    pub fn from_rows(name: &str, rows: Vec<ScoreRow>) -> Result<Self> {
        let (scores, labels) = split(&rows);
        Ok(Self {
            name: name.to_string(),
            auc: auc(&scores, &labels)?,
            roc: roc_curve(&scores, &labels)?,
            rows,
        })
    }
}

fn split(rows: &[ScoreRow]) -> (Vec<f64>, Vec<Label>) {
    rows.iter().map(|r| (r.score, r.label)).unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub categories: Vec<CategoryReport>,
    /// AUC over all categories' scores pooled together.
    pub pooled_auc: f64,
    pub pooled_roc: RocCurve,
    pub config_json: String,
    pub seed: u64,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    pub fn new(categories: Vec<CategoryReport>, config_json: String, seed: u64, runtime_secs: f64) -> Result<Self> {
        let all: Vec<ScoreRow> = categories
            .iter()
            .flat_map(|c| {
                c.rows.iter().map(move |r| ScoreRow {
                    id: format!("{}/{}", c.name, r.id),
                    ..r.clone()
                })
            })
            .collect();
        let (scores, labels) = split(&all);
        Ok(Self {
            categories,
            pooled_auc: auc(&scores, &labels)?,
            pooled_roc: roc_curve(&scores, &labels)?,
            config_json,
            seed,
            runtime_secs,
        })
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from("category,auc\n");
        for c in &self.categories {
            let _ = writeln!(s, "{},{}", c.name, c.auc);
        }
        let _ = writeln!(s, "pooled,{}", self.pooled_auc);
        s
    }

    /// Writes `report.csv`, `scores.csv`, `roc.csv`, `config.json` and
    /// per-category copies. Wall-clock time goes to `runtime.txt` so the
    /// other files stay byte-identical across runs.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let put = |p: &Path, text: &str| fs::write(p, text).map_err(|e| Error::io(p, e));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        put(&dir.join("report.csv"), &self.report_csv())?;
        let all: Vec<ScoreRow> = self
            .categories
            .iter()
            .flat_map(|c| {
                c.rows.iter().map(move |r| ScoreRow {
                    id: format!("{}/{}", c.name, r.id),
                    ..r.clone()
                })
            })
            .collect();
        put(&dir.join("scores.csv"), &scores_csv(&all))?;
        put(&dir.join("roc.csv"), &self.pooled_roc.to_csv())?;
        put(&dir.join("config.json"), &self.config_json)?;
        put(&dir.join("seed.txt"), &format!("{}\n", self.seed))?;
        put(&dir.join("runtime.txt"), &format!("{:.3}\n", self.runtime_secs))?;
        for c in &self.categories {
            let sub = dir.join(&c.name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            put(&sub.join("scores.csv"), &scores_csv(&c.rows))?;
            put(&sub.join("roc.csv"), &c.roc.to_csv())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Anomalous as A, Normal as N};

    #[test]
    fn hand_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[N, N, A, A]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[N, A, N, A]).unwrap(), 0.5);
        let got = auc(&[0.1, 0.4, 0.35, 0.3, 0.8], &[N, N, N, A, A]).unwrap();
        assert_eq!(got, 4.0 / 6.0);
    }

    #[test]
    fn roc_shapes() {
        let r = roc_curve(&[0.1, 0.2, 0.8, 0.9], &[N, N, A, A]).unwrap();
        assert!(r.points.contains(&(0.0, 1.0)));
        assert_eq!(*r.points.last().unwrap(), (1.0, 1.0));
        let r = roc_curve(&[0.3; 4], &[N, A, N, A]).unwrap();
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let r = roc_curve(&[0.1, 0.4, 0.35, 0.3, 0.8], &[N, N, N, A, A]).unwrap();
        assert!((r.area() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn input_errors() {
        assert!(auc(&[0.1, 0.2], &[N, N]).is_err());
        assert!(auc(&[0.1], &[N, A]).is_err());
        assert!(roc_curve(&[f64::NAN, 0.2], &[N, A]).is_err());
    }

    #[test]
    fn scores_csv_round_trip() {
        let rows = vec![
            ScoreRow { id: "a/b,c".into(), label: N, score: 0.25 },
            ScoreRow { id: "x".into(), label: A, score: 1e-300 },
        ];
        assert_eq!(parse_scores_csv(&scores_csv(&rows)).unwrap(), rows);
        assert!(parse_scores_csv("nope\n").is_err());
    }
}
