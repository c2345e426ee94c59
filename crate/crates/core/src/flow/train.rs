use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::FlowModel;
use crate::error::{Error, Result};
use crate::features::PatchFeatureSet;
use crate::nn::Adam;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch: 32,
        }
    }
}

/// Maximum-likelihood training with Adam on shuffled mini-batches. The
/// history holds the mean mini-batch loss of each epoch.
pub fn train_flow_rows(
    f: &FlowModel,
    rows: &[Vec<f64>],
    cfg: &FlowTrainConfig,
    seed: u64,
) -> Result<(FlowModel, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::param("flow training needs at least one feature"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite training feature"));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::param("epochs and batch must be >= 1"));
    }
    let mut model = f.clone();
    let mut opt = Adam::new(cfg.lr);
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
            let (loss, grads) = match model.loss_and_grad(&batch) {
                Ok(v) => v,
                Err(Error::Numeric(_)) => return Err(Error::TrainingDiverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            total += loss;
            batches += 1;
            opt.step(&mut model, &grads);
        }
        let mean = total / batches as f64;
        log::debug!("flow epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok((model, history))
}

pub fn train_flow(
    f: &FlowModel,
    feats: &PatchFeatureSet,
    cfg: &FlowTrainConfig,
    seed: u64,
) -> Result<(FlowModel, Vec<f64>)> {
    train_flow_rows(f, &feats.rows(), cfg, seed)
}
