//! Central finite-difference audit of the extractor's backward pass.
//!
//! The probe objective is `½‖logits‖² + ½‖feature‖²`, which reaches every
//! layer and has a zero gradient at the all-zero network. Large groups are
//! checked on an evenly spaced subset of entries. Entries whose perturbation
//! flips a ReLU sign are retried with a smaller step and skipped if the kink
//! persists, since central differences are meaningless across a kink.

use super::extractor::{Extractor, ForwardCache};
use crate::error::{Error, Result};
use crate::nn::{Params, Tensor3};
use crate::texgen::Image;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that gradients that are both
/// ~0 compare by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn probe_loss(cache: &ForwardCache) -> f64 {
    0.5 * cache.logits.iter().map(|v| v * v).sum::<f64>() + 0.5 * cache.feature.iter().map(|v| v * v).sum::<f64>()
}

/// Analytic gradient of the probe objective.
pub fn probe_gradient(ex: &Extractor, input: &Tensor3) -> Vec<Vec<f64>> {
    let cache = ex.forward_cache(input.clone());
    let mut grads = ex.zero_grads();
    ex.backward(&cache, &cache.logits, Some(&cache.feature), &mut grads);
    grads
}

pub fn grad_check(ex: &Extractor, patch: &Image, tolerance: f64, max_per_group: usize) -> Result<GradCheckReport> {
    grad_check_with(ex, patch, tolerance, max_per_group, probe_gradient)
}

/// Same as [`grad_check`] with a caller-supplied analytic gradient.
pub fn grad_check_with<F>(
    ex: &Extractor,
    patch: &Image,
    tolerance: f64,
    max_per_group: usize,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Extractor, &Tensor3) -> Vec<Vec<f64>>,
{
    let input = ex.input_tensor(patch)?;
    let base_pattern = ex.forward_cache(input.clone()).relu_pattern();
    let grads = analytic(ex, &input);
    let names: Vec<String> = ex.groups().into_iter().map(|(n, _)| n).collect();
    let mut report = GradCheckReport { groups: Vec::new() };
    let mut probe = ex.clone();
    for (g, name) in names.iter().enumerate() {
        let len = grads[g].len();
        let picks: Vec<usize> = if len <= max_per_group {
            (0..len).collect()
        } else {
            (0..max_per_group).map(|k| k * len / max_per_group).collect()
        };
        let mut gr = GroupReport {
            name: name.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for &i in &picks {
            let orig = probe.groups()[g].1[i];
            let mut numeric = None;
            let mut step = FD_STEP;
            for _ in 0..3 {
                let mut eval = |delta: f64| {
                    probe.groups_mut()[g][i] = orig + delta;
                    let c = probe.forward_cache(input.clone());
                    (probe_loss(&c), c.relu_pattern() == base_pattern)
                };
                let (lp, okp) = eval(step);
                let (lm, okm) = eval(-step);
                probe.groups_mut()[g][i] = orig;
                if okp && okm {
                    numeric = Some((lp - lm) / (2.0 * step));
                    break;
                }
                step *= 0.1;
            }
            let Some(numeric) = numeric else {
                gr.skipped_kinks += 1;
                continue;
            };
            gr.checked += 1;
            let err = relative_error(grads[g][i], numeric);
            if err > gr.max_rel_error {
                gr.max_rel_error = err;
                gr.worst_index = i;
            }
        }
        report.groups.push(gr);
    }
    if let Some(worst) = report
        .groups
        .iter()
        .filter(|g| g.max_rel_error > tolerance)
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    {
        return Err(Error::CheckFailed {
            parameter: format!("{}[{}]", worst.name, worst.worst_index),
            rel_error: worst.max_rel_error,
            tolerance,
        });
    }
    Ok(report)
}
