use texflow::features::{
    export_features, grad_check, image_features, import_features, pretext_accuracy, pretext_train, Extractor,
    ExtractorConfig, PretextConfig,
};
use texflow::texgen::{generate_texture, synthetic_benchmark, CutPasteParams, Image, LabeledDataset, SyntheticSpec, TextureKind};

fn sine_grid(n: usize, seed: u64) -> LabeledDataset {
    let spec = SyntheticSpec {
        textures: vec![TextureKind::SineGrid],
        train_per_category: n,
        test_normal_per_category: 0,
        test_defect_per_category: 0,
        ..SyntheticSpec::default()
    };
    synthetic_benchmark(&spec, seed).unwrap().remove(0).train
}

fn rgb_patch(size: usize, seed: u64) -> Image {
    let g = generate_texture(TextureKind::Checker, 32.max(size), 8, 0.1, seed).unwrap();
    let data = g.data()[..size * size].iter().flat_map(|&v| [v, 1.0 - v, v * v]).collect();
    Image::new(size, size, 3, data).unwrap()
}

#[test]
fn every_layer_passes_gradient_check() {
    let grey = ExtractorConfig::default();
    let colour = ExtractorConfig {
        input_size: 16,
        channels: 3,
        widths: vec![4, 6, 8],
        feature_dim: 12,
    };
    for seed in 0..3 {
        let ex = Extractor::new(grey.clone(), seed).unwrap();
        let patch = generate_texture(TextureKind::SineGrid, 32, 8, 0.1, seed).unwrap();
        let r = grad_check(&ex, &patch, 1e-4, 24).unwrap();
        assert!(r.max_rel_error() <= 1e-4);

        let ex = Extractor::new(colour.clone(), seed).unwrap();
        let r = grad_check(&ex, &rgb_patch(16, seed), 1e-4, usize::MAX).unwrap();
        assert!(r.max_rel_error() <= 1e-4);
    }
}

#[test]
fn gradients_stay_correct_after_training() {
    let ex = Extractor::new(ExtractorConfig::default(), 7).unwrap();
    let cfg = PretextConfig {
        epochs: 5,
        ..PretextConfig::default()
    };
    let (trained, _) = pretext_train(&ex, &sine_grid(6, 3), &cfg, 1).unwrap();
    let patch = generate_texture(TextureKind::Checker, 32, 8, 0.05, 2).unwrap();
    assert!(grad_check(&trained, &patch, 1e-4, 24).unwrap().max_rel_error() <= 1e-4);
}

#[test]
fn pretext_loss_trends_down() {
    let ex = Extractor::new(ExtractorConfig::default(), 3).unwrap();
    let cfg = PretextConfig {
        epochs: 30,
        ..PretextConfig::default()
    };
    let (_, hist) = pretext_train(&ex, &sine_grid(20, 1), &cfg, 4).unwrap();
    assert_eq!(hist.len(), 30);
    assert!(hist[29] < hist[0], "{hist:?}");
    let windows: Vec<f64> = hist.chunks(5).map(|c| c.iter().sum::<f64>() / 5.0).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

#[test]
fn pretext_classifier_generalizes() {
    let ex = Extractor::new(ExtractorConfig::default(), 3).unwrap();
    let cfg = PretextConfig {
        epochs: 100,
        lr: 3e-2,
        ..PretextConfig::default()
    };
    let (trained, hist) = pretext_train(&ex, &sine_grid(20, 1), &cfg, 4).unwrap();
    assert!(hist[99] < 0.5 * hist[0], "{} -> {}", hist[0], hist[99]);
    let acc = pretext_accuracy(&trained, &sine_grid(20, 2), &CutPasteParams::default(), 5).unwrap();
    assert!(acc > 0.8, "held-out accuracy {acc}");
}

#[test]
fn image_features_survive_interchange() {
    let ex = Extractor::new(ExtractorConfig::default(), 5).unwrap();
    let img = generate_texture(TextureKind::SineGrid, 64, 8, 0.03, 9).unwrap();
    let feats = image_features(&ex, &img, "train/good/000", 16).unwrap();
    assert_eq!(feats.len(), 9);
    let origins: Vec<(usize, usize)> = feats.provenance().iter().map(|p| (p.rect.y0, p.rect.x0)).collect();
    let mut sorted = origins.clone();
    sorted.sort();
    assert_eq!(origins, sorted);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.txaf");
    export_features(&feats, &path).unwrap();
    let back = import_features(&path).unwrap();
    assert_eq!(back.raw(), feats.raw());
    assert_eq!(back.provenance(), feats.provenance());
    assert_eq!(image_features(&ex, &img, "train/good/000", 16).unwrap(), feats);
}
