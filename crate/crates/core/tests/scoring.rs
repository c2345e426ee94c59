use proptest::prelude::*;

use texflow::dictionary::{learn, omp, reconstruct, DictLearnConfig, Dictionary};
use texflow::features::{image_features, Extractor, ExtractorConfig, FeatureNorm, PatchFeatureSet, Provenance};
use texflow::flow::{train_flow, FlowConfig, FlowModel, FlowTrainConfig};
use texflow::scoring::{
    feature_score, image_score, localize, patch_scores, percentile, signal, threshold_map, AnomalyMap, NllStats,
    Representation, ScoreConfig,
};
use texflow::texgen::{synthetic_benchmark, Item, Rect, SyntheticSpec, TextureKind};
use texflow::Error;

fn grid(rows: usize, cols: usize, scores: Vec<f64>) -> AnomalyMap {
    let cells = (0..rows * cols).map(|i| Rect::new(8 * (i % cols), 8 * (i / cols), 8, 8)).collect();
    AnomalyMap::new(rows, cols, cells, scores).unwrap()
}

fn small_models() -> (FlowModel, Dictionary) {
    let flow = FlowModel::new(6, &FlowConfig::default(), 3).unwrap();
    let atoms = nalgebra::DMatrix::from_fn(6, 9, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * j as f64);
    (flow, Dictionary::normalized(atoms).unwrap())
}

#[test]
fn scaled_atom_scores_below_tolerance() {
    let (flow, d) = small_models();
    for repr in [Representation::Latent, Representation::Raw] {
        let cfg = ScoreConfig {
            representation: repr,
            ..ScoreConfig::default()
        };
        for j in 0..d.atom_count() {
            let s: Vec<f64> = d.atoms().column(j).iter().map(|v| -2.5 * v).collect();
            let x = match repr {
                Representation::Latent => flow.inverse(&s).unwrap(),
                Representation::Raw => s.clone(),
            };
            let score = feature_score(&flow, &d, &x, &cfg).unwrap();
            assert!(score <= cfg.xi * 2.5, "{repr:?} atom {j}: {score}");
        }
    }
}

#[test]
fn lambda_zero_is_pure_reconstruction_error() {
    let (flow, d) = small_models();
    let cfg = ScoreConfig {
        xi: 0.2,
        k_max: 2,
        ..ScoreConfig::default()
    };
    for k in 0..20 {
        let x: Vec<f64> = (0..6).map(|i| ((k * 13 + i * 5) % 11) as f64 / 5.0 - 1.0).collect();
        let s = flow.forward(&x).unwrap().0;
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rec = reconstruct(&d, &omp(&d, &s, 0.2 * norm, 2).unwrap()).unwrap();
        let direct = s.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert_eq!(feature_score(&flow, &d, &x, &cfg).unwrap(), direct);
    }
}

#[test]
fn fused_score_matches_formula_and_needs_stats() {
    let (flow, d) = small_models();
    let x = [0.3, -0.2, 0.9, 0.0, 1.1, -0.7];
    let missing = ScoreConfig {
        lambda: 0.4,
        ..ScoreConfig::default()
    };
    assert!(matches!(feature_score(&flow, &d, &x, &missing), Err(Error::Config(_))));
    let stats = NllStats { median: 2.0, iqr: 0.5 };
    let cfg = ScoreConfig {
        nll: Some(stats),
        ..missing
    };
    let rec = feature_score(&flow, &d, &x, &ScoreConfig::default()).unwrap();
    let nll = -flow.log_likelihood(&x).unwrap();
    let expect = 0.6 * rec + 0.4 * (nll - 2.0).max(0.0) / 0.5;
    assert!((feature_score(&flow, &d, &x, &cfg).unwrap() - expect).abs() <= 1e-12 * expect.abs().max(1.0));
}

#[test]
fn image_score_examples() {
    for k in [1, 5, 50] {
        assert!((image_score(&grid(3, 3, vec![0.7; 9]), k) - 0.7).abs() <= 4.0 * f64::EPSILON);
        assert_eq!(image_score(&grid(3, 3, vec![0.75; 9]), k), 0.75);
    }
    let mut spike = vec![1e-9; 9];
    spike[4] = 100.0;
    let s = image_score(&grid(3, 3, spike), 5);
    assert!((s - 20.0).abs() < 1e-8);
}

#[test]
fn localize_examples() {
    let mut one = vec![0.0; 12];
    one[7] = 3.0;
    let r = localize(&grid(3, 4, one), 1).unwrap();
    assert_eq!(r.cells, vec![(1, 3)]);
    assert_eq!(r.bbox, Rect::new(24, 8, 8, 8));

    let mut five = vec![0.0; 25];
    for (i, v) in [(0, 5.0), (4, 4.0), (12, 3.0), (20, 2.0), (24, 1.0)] {
        five[i] = v;
    }
    let r = localize(&grid(5, 5, five), 5).unwrap();
    assert_eq!(r.cells, vec![(0, 0), (0, 4), (2, 2), (4, 0), (4, 4)]);
    assert_eq!(r.bbox, Rect::new(0, 0, 40, 40));

    let r = localize(&grid(2, 2, vec![1.0; 4]), 2).unwrap();
    assert_eq!(r.cells, vec![(0, 0), (0, 1)]);
    assert!(localize(&grid(2, 2, vec![1.0; 4]), 5).is_err());
}

#[test]
fn threshold_examples() {
    let m = grid(2, 3, vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.4]);
    assert_eq!(threshold_map(&m, 1.0).unwrap().count(), 0);
    assert_eq!(threshold_map(&m, 0.0).unwrap().count(), 6);
    assert_eq!(threshold_map(&m, 0.4).unwrap().count(), 2);
    assert!(threshold_map(&m, -1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn raising_a_cell_never_lowers_image_score(
        scores in proptest::collection::vec(0.0f64..10.0, 12),
        cell in 0usize..12,
        bump in 0.0f64..5.0,
        k in 1usize..14,
    ) {
        let before = image_score(&grid(3, 4, scores.clone()), k);
        let mut raised = scores;
        raised[cell] += bump;
        prop_assert!(image_score(&grid(3, 4, raised), k) >= before);
    }

    #[test]
    fn flagged_count_non_increasing_in_tau(
        scores in proptest::collection::vec(0.0f64..10.0, 12),
        a in 0.0f64..11.0,
        b in 0.0f64..11.0,
    ) {
        let m = grid(3, 4, scores);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(threshold_map(&m, hi).unwrap().count() <= threshold_map(&m, lo).unwrap().count());
    }

    #[test]
    fn results_ignore_evaluation_order(scores in proptest::collection::vec(0.0f64..3.0, 12), k in 1usize..12) {
        let m = grid(3, 4, scores.iter().map(|s| (s * 4.0).round() / 4.0).collect());
        prop_assert_eq!(localize(&m, k).unwrap(), localize(&m.clone(), k).unwrap());
        prop_assert_eq!(image_score(&m, k).to_bits(), image_score(&m.clone(), k).to_bits());
    }
}

/// Small end-to-end fixture: random extractor, short flow training, default dictionary.
struct Fitted {
    ex: Extractor,
    norm: FeatureNorm,
    flow: FlowModel,
    dict: Dictionary,
    cfg: ScoreConfig,
}

fn features(f: &Fitted, items: &[Item]) -> Vec<PatchFeatureSet> {
    items
        .iter()
        .map(|it| f.norm.apply_set(&image_features(&f.ex, &it.image, &it.id, 5).unwrap()).unwrap())
        .collect()
}

fn fit(train: &[Item]) -> Fitted {
    let ex = Extractor::new(ExtractorConfig::default(), 21).unwrap();
    let mut raw = PatchFeatureSet::new(ex.config.feature_dim);
    for it in train {
        raw.extend(&image_features(&ex, &it.image, &it.id, 5).unwrap()).unwrap();
    }
    let norm = FeatureNorm::fit(&raw).unwrap();
    let feats = norm.apply_set(&raw).unwrap();
    let init = FlowModel::new(feats.dim(), &FlowConfig::default(), 1).unwrap();
    let tcfg = FlowTrainConfig {
        epochs: 30,
        ..FlowTrainConfig::default()
    };
    let (flow, _) = train_flow(&init, &feats, &tcfg, 2).unwrap();
    let mut signals = PatchFeatureSet::new(feats.dim());
    for (x, p) in feats.rows().iter().zip(feats.provenance()) {
        signals.push(&signal(&flow, x, Representation::Latent).unwrap(), Provenance::clone(p)).unwrap();
    }
    let (dict, _) = learn(&signals, &DictLearnConfig::default()).unwrap();
    Fitted {
        ex,
        norm,
        flow,
        dict,
        cfg: ScoreConfig::default(),
    }
}

#[test]
fn calibrated_threshold_and_defect_patches() {
    let spec = SyntheticSpec {
        textures: vec![TextureKind::Checker],
        train_per_category: 50,
        test_normal_per_category: 20,
        test_defect_per_category: 12,
        ..SyntheticSpec::default()
    };
    let cat = synthetic_benchmark(&spec, 11).unwrap().remove(0);
    let fitted = fit(&cat.train.items[..20]);
    let scores_of = |items: &[Item]| -> Vec<AnomalyMap> {
        features(&fitted, items)
            .iter()
            .map(|f| patch_scores(f, &fitted.flow, &fitted.dict, &fitted.cfg).unwrap())
            .collect()
    };

    let calib: Vec<f64> = scores_of(&cat.train.items[20..]).into_iter().flat_map(|m| m.scores).collect();
    let tau = percentile(&calib, 95.0).unwrap();
    let (normals, defects) = cat.test.items.split_at(20);
    let held: Vec<AnomalyMap> = scores_of(normals);
    let flagged: usize = held.iter().map(|m| threshold_map(m, tau).unwrap().count()).sum();
    let total: usize = held.iter().map(AnomalyMap::len).sum();
    let fpr = flagged as f64 / total as f64;
    assert!((fpr - 0.05).abs() <= 0.02, "held-out false-positive rate {fpr}");

    let (mut inside, mut outside) = (vec![], vec![]);
    for (it, map) in defects.iter().zip(scores_of(defects)) {
        let mask = it.mask.as_ref().unwrap();
        for (cell, s) in map.cells.iter().zip(&map.scores) {
            if mask.count_in(cell) > 0 { inside.push(*s) } else { outside.push(*s) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&inside) > mean(&outside), "{} vs {}", mean(&inside), mean(&outside));
}
