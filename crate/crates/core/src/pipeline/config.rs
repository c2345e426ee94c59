use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dictionary::DictLearnConfig;
use crate::error::{Error, Result};
use crate::features::{ExtractorConfig, PretextConfig};
use crate::flow::{FlowConfig, FlowTrainConfig};
use crate::scoring::{Representation, ScoreConfig};
use crate::texgen::{CutPasteParams, SyntheticSpec, TextureKind};

/// Flat experiment configuration. Every key except `dataset` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// `"synthetic"` or the path of an MVTec-style category directory.
    pub dataset: String,
    /// Master seed; stage seeds are derived from it by name.
    pub seed: u64,

    pub textures: Vec<TextureKind>,
    pub image_size: usize,
    pub period: usize,
    pub noise: f64,
    pub train_images: usize,
    pub test_normal_images: usize,
    pub test_defect_images: usize,

    pub patch_size: usize,
    pub stride: usize,
    pub feature_dim: usize,
    pub widths: Vec<usize>,

    pub pretext_epochs: usize,
    pub pretext_lr: f64,
    pub pretext_momentum: f64,
    pub pretext_batch: usize,
    pub cutpaste_area: (f64, f64),
    pub cutpaste_aspect: (f64, f64),

    pub flow_layers: usize,
    /// 0 means the feature dimension.
    pub flow_hidden: usize,
    pub flow_s_max: f64,
    pub flow_epochs: usize,
    pub flow_lr: f64,
    pub flow_batch: usize,

    /// 0 means twice the signal dimension.
    pub dict_atoms: usize,
    pub dict_beta: f64,
    pub dict_xi: f64,
    pub dict_k_max: usize,
    pub dict_iters: usize,
    pub dict_lasso_iters: usize,

    pub representation: Representation,
    pub lambda: f64,
    pub top_k: usize,
    pub tau_percentile: f64,
    /// Fraction of training images held out from fitting to calibrate tau.
    pub calib_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let syn = SyntheticSpec::default();
        let ex = ExtractorConfig::default();
        let pre = PretextConfig::default();
        let flow = FlowConfig::default();
        let ft = FlowTrainConfig::default();
        let dl = DictLearnConfig::default();
        let sc = ScoreConfig::default();
        Self {
            dataset: String::new(),
            seed: 0,
            textures: syn.textures,
            image_size: syn.image_size,
            period: syn.period,
            noise: syn.noise,
            train_images: syn.train_per_category,
            test_normal_images: syn.test_normal_per_category,
            test_defect_images: syn.test_defect_per_category,
            patch_size: ex.input_size,
            stride: 5,
            feature_dim: ex.feature_dim,
            widths: ex.widths,
            pretext_epochs: pre.epochs,
            pretext_lr: pre.lr,
            pretext_momentum: pre.momentum,
            pretext_batch: pre.batch,
            cutpaste_area: pre.cutpaste.area,
            cutpaste_aspect: pre.cutpaste.aspect,
            flow_layers: flow.layers,
            flow_hidden: flow.hidden,
            flow_s_max: flow.s_max,
            flow_epochs: ft.epochs,
            flow_lr: ft.lr,
            flow_batch: ft.batch,
            dict_atoms: dl.atoms,
            dict_beta: dl.beta,
            dict_xi: dl.xi,
            dict_k_max: dl.k_max,
            dict_iters: dl.iters,
            dict_lasso_iters: dl.lasso_iters,
            representation: sc.representation,
            lambda: sc.lambda,
            top_k: sc.top_k,
            tau_percentile: 95.0,
            calib_fraction: 0.2,
        }
    }
}

fn known_keys() -> Vec<String> {
    match serde_json::to_value(PipelineConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("config serialises to an object"),
    }
}

/// `--set` value: JSON if it parses, otherwise a bare string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl PipelineConfig {
    /// Parses a JSON object, applies `key=value` overrides, rejects unknown
    /// keys and validates.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            map.insert(k.trim().to_string(), override_value(v.trim()));
        }
        Self::from_map(map)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, overrides)
    }

    fn from_map(map: Map<String, Value>) -> Result<Self> {
        let known = known_keys();
        let unknown: Vec<&str> = map.keys().filter(|k| !known.contains(k)).map(String::as_str).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        if !map.contains_key("dataset") {
            return Err(Error::Config("missing required field `dataset`".into()));
        }
        let cfg: Self =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.dataset.is_empty() {
            return Err(Error::Config("field `dataset` must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.calib_fraction) {
            return Err(Error::Config("calib_fraction must lie in [0, 1)".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !(0.0..=100.0).contains(&self.tau_percentile) {
            return Err(Error::Config("tau_percentile must lie in [0, 100]".into()));
        }
        if self.pretext_epochs == 0 || self.pretext_batch == 0 || self.flow_epochs == 0 || self.flow_batch == 0 {
            return Err(Error::Config("epochs and batch sizes must be >= 1".into()));
        }
        if self.flow_layers == 0 {
            return Err(Error::Config("flow_layers must be >= 1".into()));
        }
        self.extractor(1).validate().map_err(cfg_err)?;
        self.pretext().cutpaste.validate().map_err(cfg_err)?;
        self.dict().validate(self.feature_dim).map_err(cfg_err)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == "synthetic"
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            textures: self.textures.clone(),
            image_size: self.image_size,
            period: self.period,
            noise: self.noise,
            train_per_category: self.train_images,
            test_normal_per_category: self.test_normal_images,
            test_defect_per_category: self.test_defect_images,
        }
    }

    pub fn extractor(&self, channels: usize) -> ExtractorConfig {
        ExtractorConfig {
            input_size: self.patch_size,
            channels,
            widths: self.widths.clone(),
            feature_dim: self.feature_dim,
        }
    }

    pub fn pretext(&self) -> PretextConfig {
        PretextConfig {
            epochs: self.pretext_epochs,
            lr: self.pretext_lr,
            momentum: self.pretext_momentum,
            batch: self.pretext_batch,
            cutpaste: CutPasteParams {
                area: self.cutpaste_area,
                aspect: self.cutpaste_aspect,
            },
        }
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            layers: self.flow_layers,
            hidden: self.flow_hidden,
            s_max: self.flow_s_max,
        }
    }

    pub fn flow_train(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            epochs: self.flow_epochs,
            lr: self.flow_lr,
            batch: self.flow_batch,
        }
    }

    /// Dictionary settings; `seed` is filled in per category.
    pub fn dict(&self) -> DictLearnConfig {
        DictLearnConfig {
            atoms: self.dict_atoms,
            beta: self.dict_beta,
            xi: self.dict_xi,
            k_max: self.dict_k_max,
            iters: self.dict_iters,
            lasso_iters: self.dict_lasso_iters,
            seed: 0,
        }
    }

    /// Scoring settings without NLL statistics.
    pub fn score(&self) -> ScoreConfig {
        ScoreConfig {
            lambda: self.lambda,
            top_k: self.top_k,
            xi: self.dict_xi,
            k_max: self.dict_k_max,
            representation: self.representation,
            nll: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }
}
