use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::extractor::Extractor;
use crate::error::{Error, Result};
use crate::nn::{Params, Sgd};
use crate::seed;
use crate::texgen::{cutpaste_with, CutPasteParams, Image, LabeledDataset, Label, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Source images per step; each contributes one original and one cutpasted view.
    pub batch: usize,
    pub cutpaste: CutPasteParams,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            epochs: 270,
            lr: 1e-2,
            momentum: 0.9,
            batch: 2,
            cutpaste: CutPasteParams::default(),
        }
    }
}

/// Two-class softmax cross-entropy; returns `(loss, dL/dlogits)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / z - if i == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// Random extractor-sized window of `img` (the whole image when it already fits).
fn random_window<R: Rng>(img: &Image, size: usize, rng: &mut R) -> Result<Image> {
    if img.height() < size || img.width() < size {
        return Err(Error::param(format!(
            "training image {}x{} smaller than extractor input {size}",
            img.width(),
            img.height()
        )));
    }
    let x0 = rng.gen_range(0..=img.width() - size);
    let y0 = rng.gen_range(0..=img.height() - size);
    img.crop(&Rect::new(x0, y0, size, size))
}

/// An original window (class 0) and its cutpasted copy (class 1).
fn view_pair<R: Rng>(img: &Image, size: usize, cp: &CutPasteParams, rng: &mut R) -> Result<[(Image, usize); 2]> {
    let window = random_window(img, size, rng)?;
    let (pasted, _, _) = cutpaste_with(&window, cp, rng)?;
    Ok([(window, 0), (pasted, 1)])
}

/// Trains the extractor on the CutPaste binary task with momentum SGD.
/// Returns the trained copy and the mean loss of every epoch.
pub fn pretext_train(
    ex: &Extractor,
    images: &LabeledDataset,
    cfg: &PretextConfig,
    seed: u64,
) -> Result<(Extractor, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::param("pretext training needs at least one image"));
    }
    if images.items.iter().any(|it| it.label != Label::Normal) {
        return Err(Error::param("pretext training images must all be normal"));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::param("epochs and batch must be >= 1"));
    }
    cfg.cutpaste.validate()?;
    let mut model = ex.clone();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut rng = seed::rng(seed);
    let size = model.config.input_size;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut views = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                views.extend(view_pair(&images.items[i].image, size, &cfg.cutpaste, &mut rng)?);
            }
            let scale = 1.0 / views.len() as f64;
            let mut grads = model.zero_grads();
            for (img, label) in &views {
                let cache = model.forward_cache(model.input_tensor(img)?);
                let (loss, mut dlogits) = cross_entropy(&cache.logits, *label);
                epoch_loss += loss;
                dlogits.iter_mut().for_each(|g| *g *= scale);
                model.backward(&cache, &dlogits, None, &mut grads);
            }
            seen += views.len();
            opt.step(&mut model, &grads);
        }
        let mean = epoch_loss / seen as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: mean });
        }
        log::debug!("pretext epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok((model, history))
}

/// Fraction of correctly classified original/cutpasted views, two per image.
pub fn pretext_accuracy(ex: &Extractor, images: &LabeledDataset, cp: &CutPasteParams, seed: u64) -> Result<f64> {
    let mut rng = seed::rng(seed);
    let mut correct = 0usize;
    let mut total = 0usize;
    for item in &images.items {
        for (img, label) in view_pair(&item.image, ex.config.input_size, cp, &mut rng)? {
            let logits = ex.logits(&img)?;
            let pred = usize::from(logits[1] > logits[0]);
            correct += usize::from(pred == label);
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ExtractorConfig;
    use crate::texgen::{synthetic_benchmark, Item, SyntheticSpec, TextureKind};

    fn small() -> ExtractorConfig {
        ExtractorConfig {
            input_size: 16,
            channels: 1,
            widths: vec![4, 4, 8],
            feature_dim: 8,
        }
    }

    fn normals(n: usize) -> LabeledDataset {
        let spec = SyntheticSpec {
            textures: vec![TextureKind::SineGrid],
            train_per_category: n,
            test_normal_per_category: 0,
            test_defect_per_category: 0,
            ..SyntheticSpec::default()
        };
        synthetic_benchmark(&spec, 1).unwrap().remove(0).train
    }

    #[test]
    fn cross_entropy_gradient() {
        let (l, g) = cross_entropy(&[0.0, 0.0], 1);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
        let logits = [0.3, -1.2];
        let (_, g) = cross_entropy(&logits, 0);
        let h = 1e-6;
        for i in 0..2 {
            let mut p = logits;
            let mut m = logits;
            p[i] += h;
            m[i] -= h;
            let fd = (cross_entropy(&p, 0).0 - cross_entropy(&m, 0).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_lr_is_a_fixed_point() {
        let ex = Extractor::new(small(), 3).unwrap();
        let cfg = PretextConfig {
            epochs: 3,
            lr: 0.0,
            batch: 2,
            ..PretextConfig::default()
        };
        let (trained, hist) = pretext_train(&ex, &normals(4), &cfg, 9).unwrap();
        assert_eq!(trained, ex);
        assert_eq!(hist.len(), 3);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let ex = Extractor::new(small(), 3).unwrap();
        let cfg = PretextConfig {
            epochs: 2,
            ..PretextConfig::default()
        };
        let data = normals(4);
        let a = pretext_train(&ex, &data, &cfg, 5).unwrap();
        let b = pretext_train(&ex, &data, &cfg, 5).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ex = Extractor::new(small(), 3).unwrap();
        let cfg = PretextConfig::default();
        assert!(pretext_train(&ex, &LabeledDataset::default(), &cfg, 0).is_err());
        let mut data = normals(2);
        data.items.push(Item {
            label: Label::Anomalous,
            ..data.items[0].clone()
        });
        assert!(pretext_train(&ex, &data, &cfg, 0).is_err());
    }

    #[test]
    fn divergence_names_the_epoch() {
        let ex = Extractor::new(small(), 3).unwrap();
        let cfg = PretextConfig {
            epochs: 50,
            lr: f64::MAX,
            momentum: 0.9,
            ..PretextConfig::default()
        };
        match pretext_train(&ex, &normals(4), &cfg, 1) {
            Err(Error::TrainingDiverged { epoch, .. }) => assert!(epoch < 50),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
        }
    }
}
