//! Experiment orchestration: each stage reads its upstream checkpoints from
//! the output directory and writes its own, so stages can be re-run alone.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::PipelineConfig;

use crate::dictionary::{history_csv, learn, load_dictionary, save_dictionary, Dictionary, DictLearnConfig};
use crate::error::{Error, Result};
use crate::eval::{parse_scores_csv, scores_csv, CategoryReport, ExperimentReport, ScoreRow};
use crate::features::{export_features, image_features, import_features, pretext_train, Extractor, FeatureNorm, PatchFeatureSet};
use crate::flow::{load_flow, save_flow, train_flow, FlowModel};
use crate::scoring::{image_score, localize, patch_scores, percentile, signal, threshold_map, NllStats, ScoreConfig};
use crate::seed;
use crate::texgen::{LabeledDataset, load_mvtec_category, save_image, synthetic_benchmark, write_mvtec_category, Category};

pub const EXTRACTOR_FILE: &str = "extractor.txcn";
pub const FEATURES_FILE: &str = "train_features.txaf";
pub const FLOW_FILE: &str = "flow.txnf";
pub const DICTIONARY_FILE: &str = "dictionary.txdl";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const NORM_FILE: &str = "feature_norm.json";
pub const SCORES_FILE: &str = "scores.csv";

/// Values frozen at dictionary-learning time and used when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Patch-score threshold: the configured percentile of patch scores on
    /// the held-out calibration images.
    pub tau: f64,
    pub nll: NllStats,
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Vec<Category>> {
    if cfg.is_synthetic() {
        synthetic_benchmark(&cfg.synthetic(), seed::derive(cfg.seed, "data"))
    } else {
        let root = Path::new(&cfg.dataset);
        if !root.is_dir() {
            return Err(Error::Config(format!("dataset directory {} does not exist", root.display())));
        }
        Ok(vec![load_mvtec_category(root)?])
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Fails with a dependency error naming `stage` when `path` is missing.
fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Dependency { stage, path })
    }
}

fn loss_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, v) in history.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}

fn file_stem(id: &str) -> String {
    id.replace(['/', '\\'], "_")
}

fn load_extractor(path: &Path) -> Result<Extractor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Extractor::read_from(std::io::BufReader::new(file))
}

fn save_extractor(ex: &Extractor, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    ex.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Splits the training images into a fitting set and a held-out
/// calibration set (the last `calib_fraction` of them, at least one).
pub fn split_train(cat: &Category, calib_fraction: f64) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = cat.train.len();
    let n_cal = if calib_fraction > 0.0 {
        ((calib_fraction * n as f64).round() as usize).max(1)
    } else {
        0
    };
    if n_cal >= n {
        return Err(Error::param(format!(
            "category {} has {n} training images, too few to hold out {n_cal} for calibration",
            cat.name
        )));
    }
    let (fit, cal) = cat.train.items.split_at(n - n_cal);
    Ok((LabeledDataset { items: fit.to_vec() }, LabeledDataset { items: cal.to_vec() }))
}

/// Writes the dataset as MVTec-style directories under `out/data`.
pub fn stage_synth(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let root = out.join("data");
    let mut written = Vec::new();
    for cat in load_dataset(cfg)? {
        let manifest = write_mvtec_category(&cat, &root)?;
        let dir = root.join(&cat.name);
        write(&dir.join("manifest.csv"), &manifest)?;
        written.push(dir);
    }
    Ok(written)
}

pub fn stage_pretext(cfg: &PipelineConfig, out: &Path, cats: &[Category]) -> Result<()> {
    for cat in cats {
        let dir = out.join(&cat.name);
        mkdir(&dir)?;
        let (fit, _) = split_train(cat, cfg.calib_fraction)?;
        let channels = fit
            .items
            .first()
            .ok_or_else(|| Error::param(format!("category {} has no training images", cat.name)))?
            .image
            .channels();
        let init = Extractor::new(cfg.extractor(channels), seed::derive(cfg.seed, &format!("extractor/{}", cat.name)))?;
        let (ex, hist) = pretext_train(&init, &fit, &cfg.pretext(), seed::derive(cfg.seed, &format!("pretext/{}", cat.name)))?;
        log::info!("{}: pretext loss {:.4} -> {:.4}", cat.name, hist[0], hist[hist.len() - 1]);
        save_extractor(&ex, &dir.join(EXTRACTOR_FILE))?;
        write(&dir.join("pretext_loss.csv"), &loss_csv(&hist))?;
    }
    Ok(())
}

fn dataset_features(ex: &Extractor, items: &[crate::texgen::Item], stride: usize) -> Result<PatchFeatureSet> {
    let mut all = PatchFeatureSet::new(ex.config.feature_dim);
    for it in items {
        all.extend(&image_features(ex, &it.image, &it.id, stride)?)?;
    }
    Ok(all)
}

pub fn stage_flow(cfg: &PipelineConfig, out: &Path, cats: &[Category]) -> Result<()> {
    for cat in cats {
        let dir = out.join(&cat.name);
        let ex = load_extractor(&require(dir.join(EXTRACTOR_FILE), "pretext-train")?)?;
        let (fit, _) = split_train(cat, cfg.calib_fraction)?;
        export_features(&dataset_features(&ex, &fit.items, cfg.stride)?, dir.join(FEATURES_FILE))?;
        // train on exactly what a later stage will read back
        let raw = import_features(dir.join(FEATURES_FILE))?;
        let norm = FeatureNorm::fit(&raw)?;
        write_json(&dir.join(NORM_FILE), &norm)?;
        let feats = norm.apply_set(&raw)?;
        let init = FlowModel::new(feats.dim(), &cfg.flow(), seed::derive(cfg.seed, &format!("flow-init/{}", cat.name)))?;
        let (flow, hist) = train_flow(&init, &feats, &cfg.flow_train(), seed::derive(cfg.seed, &format!("flow/{}", cat.name)))?;
        log::info!("{}: flow loss {:.4} -> {:.4}", cat.name, hist[0], hist[hist.len() - 1]);
        save_flow(&flow, dir.join(FLOW_FILE))?;
        write(&dir.join("flow_loss.csv"), &loss_csv(&hist))?;
    }
    Ok(())
}

pub fn stage_dict(cfg: &PipelineConfig, out: &Path, cats: &[Category]) -> Result<()> {
    for cat in cats {
        let dir = out.join(&cat.name);
        let flow = load_flow(require(dir.join(FLOW_FILE), "flow-train")?)?;
        let norm: FeatureNorm = read_json(&require(dir.join(NORM_FILE), "flow-train")?)?;
        let feats = norm.apply_set(&import_features(require(dir.join(FEATURES_FILE), "flow-train")?)?)?;
        let rows = feats.rows();
        let mut signals = PatchFeatureSet::new(if cfg.representation == crate::scoring::Representation::Raw {
            feats.dim()
        } else {
            flow.dim
        });
        for (x, p) in rows.iter().zip(feats.provenance()) {
            signals.push(&signal(&flow, x, cfg.representation)?, p.clone())?;
        }
        let dcfg = DictLearnConfig {
            seed: seed::derive(cfg.seed, &format!("dict/{}", cat.name)),
            ..cfg.dict()
        };
        let (dict, hist) = learn(&signals, &dcfg)?;
        log::info!("{}: dictionary objective {:.4} -> {:.4}", cat.name, hist[0], hist[hist.len() - 1]);
        save_dictionary(&dict, dir.join(DICTIONARY_FILE))?;
        write(&dir.join("dict_objective.csv"), &history_csv(&hist))?;

        let nll = NllStats::from_training(&flow, &feats)?;
        let scfg = ScoreConfig {
            nll: Some(nll),
            ..cfg.score()
        };
        let (_, held_out) = split_train(cat, cfg.calib_fraction)?;
        let calib_rows = if held_out.is_empty() {
            log::warn!("{}: no calibration images, tau comes from the fitting patches", cat.name);
            rows
        } else {
            let ex = load_extractor(&require(dir.join(EXTRACTOR_FILE), "pretext-train")?)?;
            norm.apply_set(&dataset_features(&ex, &held_out.items, cfg.stride)?)?.rows()
        };
        let calib_scores = calib_rows
            .par_iter()
            .map(|x| crate::scoring::feature_score(&flow, &dict, x, &scfg))
            .collect::<Result<Vec<f64>>>()?;
        let cal = Calibration {
            tau: percentile(&calib_scores, cfg.tau_percentile)?,
            nll,
        };
        write_json(&dir.join(CALIBRATION_FILE), &cal)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("plain data serialises") + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(e.column() as u64, e.to_string()))
}

/// Scores every test image; writes per-image maps and regions, the score
/// table and a localization summary for images with ground truth.
pub fn stage_score(cfg: &PipelineConfig, out: &Path, cats: &[Category]) -> Result<()> {
    for cat in cats {
        let dir = out.join(&cat.name);
        let dict: Dictionary = load_dictionary(require(dir.join(DICTIONARY_FILE), "dict-learn")?)?;
        let cal: Calibration = read_json(&require(dir.join(CALIBRATION_FILE), "dict-learn")?)?;
        let norm: FeatureNorm = read_json(&require(dir.join(NORM_FILE), "flow-train")?)?;
        let flow = load_flow(require(dir.join(FLOW_FILE), "flow-train")?)?;
        let ex = load_extractor(&require(dir.join(EXTRACTOR_FILE), "pretext-train")?)?;
        let scfg = ScoreConfig {
            nll: Some(cal.nll),
            ..cfg.score()
        };
        let maps = dir.join("maps");
        mkdir(&maps)?;
        let mut rows = Vec::with_capacity(cat.test.len());
        let mut loc = String::from("id,x0,y0,w,h,hit,flagged_cells\n");
        for it in &cat.test.items {
            let feats = norm.apply_set(&image_features(&ex, &it.image, &it.id, cfg.stride)?)?;
            let map = patch_scores(&feats, &flow, &dict, &scfg)?;
            let score = image_score(&map, cfg.top_k);
            let region = localize(&map, cfg.top_k.min(map.len()))?;
            let flagged = threshold_map(&map, cal.tau)?.count();
            let stem = file_stem(&it.id);
            write(&maps.join(format!("{stem}.csv")), &map.to_csv())?;
            write(&maps.join(format!("{stem}_region.csv")), &region.to_csv())?;
            save_image(&map.heatmap(), maps.join(format!("{stem}.pgm")))?;
            if let Some(mask) = &it.mask {
                let b = region.bbox;
                let _ = writeln!(loc, "{},{},{},{},{},{},{flagged}", it.id, b.x0, b.y0, b.w, b.h, u8::from(region.hits(mask)));
            }
            rows.push(ScoreRow {
                id: it.id.clone(),
                label: it.label,
                score,
            });
        }
        write(&dir.join(SCORES_FILE), &scores_csv(&rows))?;
        write(&dir.join("localization.csv"), &loc)?;
    }
    Ok(())
}

/// Builds the report from the score tables and writes it into `out`.
pub fn stage_eval(cfg: &PipelineConfig, out: &Path, cats: &[Category], runtime_secs: f64) -> Result<ExperimentReport> {
    let mut reports = Vec::with_capacity(cats.len());
    for cat in cats {
        let path = require(out.join(&cat.name).join(SCORES_FILE), "score")?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        reports.push(CategoryReport::from_rows(&cat.name, parse_scores_csv(&text)?)?);
    }
    let report = ExperimentReport::new(reports, cfg.to_json(), cfg.seed, runtime_secs)?;
    report.write(out)?;
    Ok(report)
}

/// All stages in order, each error tagged with its stage name.
pub fn run_experiment(cfg: &PipelineConfig, out: &Path) -> Result<ExperimentReport> {
    let start = Instant::now();
    mkdir(out)?;
    let cats = load_dataset(cfg).map_err(|e| e.in_stage("data"))?;
    stage_pretext(cfg, out, &cats).map_err(|e| e.in_stage("pretext-train"))?;
    stage_flow(cfg, out, &cats).map_err(|e| e.in_stage("flow-train"))?;
    stage_dict(cfg, out, &cats).map_err(|e| e.in_stage("dict-learn"))?;
    stage_score(cfg, out, &cats).map_err(|e| e.in_stage("score"))?;
    stage_eval(cfg, out, &cats, start.elapsed().as_secs_f64()).map_err(|e| e.in_stage("eval"))
}

/// Loads a config file and runs the whole experiment into `out`.
pub fn run_experiment_file(config: &Path, overrides: &[String], out: &Path) -> Result<ExperimentReport> {
    let cfg = PipelineConfig::from_file(config, overrides).map_err(|e| e.in_stage("config"))?;
    run_experiment(&cfg, out)
}
