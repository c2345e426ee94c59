//! Fast in-process property checks behind `texflow selfcheck`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dictionary::{lasso_trace, omp, omp_trace, reconstruct, Dictionary};
use crate::eval::auc;
use crate::features::{grad_check, Extractor, ExtractorConfig};
use crate::flow::{FlowConfig, FlowModel};
use crate::nn::Params;
use crate::oracle::{best_support_residual, fd_audit_params, fd_jacobian, greedy_pursuit_residual, log_abs_det, pair_count_auc};
use crate::seed;
use crate::texgen::{cutpaste, generate_texture, CutPasteParams, Label, TextureKind};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn gaussian(n: usize, rng: &mut seed::Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_flow(dim: usize, seed_: u64, scale: f64) -> FlowModel {
    let mut f = FlowModel::new(dim, &FlowConfig::default(), seed_).expect("valid flow");
    let mut rng = seed::rng(seed_ ^ 0x5eed);
    for g in f.groups_mut() {
        g.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
    f
}

fn extractor_gradients() -> CheckResult {
    let ex = Extractor::new(ExtractorConfig::default(), 11).expect("valid extractor");
    let patch = generate_texture(TextureKind::SineGrid, 32, 8, 0.05, 3).expect("texture");
    match grad_check(&ex, &patch, 1e-4, 6) {
        Ok(r) => check("extractor gradients", true, format!("max rel error {:.2e}", r.max_rel_error())),
        Err(e) => check("extractor gradients", false, e.to_string()),
    }
}

fn flow_gradients() -> CheckResult {
    let f = random_flow(4, 3, 0.5);
    let mut rng = seed::rng(4);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| gaussian(4, &mut rng)).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let Ok((_, grads)) = f.loss_and_grad(&refs) else {
        return check("flow gradients", false, "loss_and_grad failed".into());
    };
    let audit = fd_audit_params(
        &f,
        &grads,
        |m: &FlowModel| m.nf_loss_rows(&rows).unwrap_or(f64::NAN),
        |m: &FlowModel| rows.iter().flat_map(|x| m.relu_pattern(x)).collect(),
        1e-5,
        usize::MAX,
    );
    check(
        "flow gradients",
        audit.checked > 0 && audit.max_rel_error <= 1e-4,
        format!("{} entries, max rel error {:.2e}", audit.checked, audit.max_rel_error),
    )
}

fn flow_inverse_and_logdet() -> Vec<CheckResult> {
    let f = random_flow(64, 5, 0.05);
    let mut rng = seed::rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let back = f.forward(&x).and_then(|(t, _)| f.inverse(&t));
        worst = match back {
            Ok(b) => x.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(worst, f64::max),
            Err(_) => f64::INFINITY,
        };
    }
    let mut ld_worst: f64 = 0.0;
    for dim in [2, 4, 8] {
        let f = random_flow(dim, 7 + dim as u64, 0.5);
        for _ in 0..3 {
            let x = gaussian(dim, &mut rng);
            let Ok((_, ld)) = f.forward(&x) else {
                ld_worst = f64::INFINITY;
                continue;
            };
            let fd = log_abs_det(&fd_jacobian(|v| f.forward(v).map(|r| r.0).unwrap_or_default(), &x, 1e-5));
            ld_worst = ld_worst.max((ld - fd).abs() / ld.abs().max(1.0));
        }
    }
    vec![
        check("flow inverse", worst < 1e-8, format!("max round-trip error {worst:.2e}")),
        check("flow logdet", ld_worst <= 1e-4, format!("max rel error {ld_worst:.2e}")),
    ]
}

fn sparse_coding() -> Vec<CheckResult> {
    let mut rng = seed::rng(8);
    let mut greedy_ok = true;
    let mut one_atom_ok = true;
    let mut monotone = true;
    for _ in 0..200 {
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(n..=8);
        let k = rng.gen_range(1..=2);
        let d = Dictionary::normalized(DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))).expect("atoms");
        let y = gaussian(n, &mut rng);
        let yv = DVector::from_vec(y.clone());
        let Ok((code, trace)) = omp_trace(&d, &y, 0.0, k) else {
            greedy_ok = false;
            continue;
        };
        monotone &= trace.windows(2).all(|w| w[1] <= w[0]);
        let rec = reconstruct(&d, &code).expect("shape");
        let r = y.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        greedy_ok &= (r - greedy_pursuit_residual(d.atoms(), &yv, k)).abs() <= 1e-9;
        if k == 1 {
            one_atom_ok &= r <= best_support_residual(d.atoms(), &yv, 1).0 + 1e-9;
        }
    }
    let mut ista_ok = true;
    for _ in 0..20 {
        let d = Dictionary::normalized(DMatrix::from_fn(8, 16, |_, _| StandardNormal.sample(&mut rng))).expect("atoms");
        let y = gaussian(8, &mut rng);
        match lasso_trace(&d, &y, 0.1, 200) {
            Ok((_, h)) => ista_ok &= h.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)),
            Err(_) => ista_ok = false,
        }
    }
    let d = Dictionary::identity(4);
    let exact = omp(&d, &[0.0, 0.0, 3.0, 0.0], 1e-9, 4).map(|c| c.support == vec![2]).unwrap_or(false);
    vec![
        check(
            "omp",
            greedy_ok && one_atom_ok && monotone && exact,
            format!("greedy reference {greedy_ok}, 1-atom optimal {one_atom_ok}, monotone {monotone}"),
        ),
        check("ista monotone", ista_ok, "200 iterations x 20 instances".into()),
    ]
}

fn auc_oracle() -> CheckResult {
    let mut rng = seed::rng(9);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..5u8)) / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let l: Vec<Label> = labels.iter().map(|&b| if b { Label::Anomalous } else { Label::Normal }).collect();
        if auc(&scores, &l).ok() != Some(pair_count_auc(&scores, &labels)) {
            mismatches += 1;
        }
    }
    check("auc oracle", mismatches == 0, format!("{mismatches} mismatches in 1000 sets"))
}

fn cutpaste_invariants() -> CheckResult {
    let img = generate_texture(TextureKind::Checker, 64, 8, 0.05, 1).expect("texture");
    let params = CutPasteParams::default();
    let mut bad = 0;
    for s in 0..200 {
        let Ok((out, src, dst)) = cutpaste(&img, &params, s) else {
            bad += 1;
            continue;
        };
        for row in 0..img.height() {
            for col in 0..img.width() {
                let expect = if dst.contains_point(row, col) {
                    img.get(src.y0 + row - dst.y0, src.x0 + col - dst.x0, 0)
                } else {
                    img.get(row, col, 0)
                };
                if out.get(row, col, 0) != expect {
                    bad += 1;
                }
            }
        }
    }
    check("cutpaste invariants", bad == 0, format!("{bad} violations in 200 draws"))
}

/// Every check, in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    let mut out = vec![extractor_gradients(), flow_gradients()];
    out.extend(flow_inverse_and_logdet());
    out.extend(sparse_coding());
    out.push(auc_oracle());
    out.push(cutpaste_invariants());
    out
}
