//! Independent reference computations: brute force, finite differences and
//! quadrature. Nothing here calls into the code paths it is used to check.

use nalgebra::{DMatrix, DVector};

use crate::nn::Params;

/// Central-difference Jacobian `J[i][j] = ∂f_i/∂x_j`.
pub fn fd_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// `log|det M|` through an LU factorisation.
pub fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let u = lu.u();
    (0..u.nrows()).map(|i| u[(i, i)].abs().ln()).sum()
}

/// Midpoint-rule integral of `density` over the cube `[lo, hi]^dim` with `n` cells per axis.
pub fn midpoint_integral<F: Fn(&[f64]) -> f64>(density: F, dim: usize, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let cell = h.powi(dim as i32);
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        for (xi, &k) in x.iter_mut().zip(&idx) {
            *xi = lo + (k as f64 + 0.5) * h;
        }
        total += density(&x);
        let mut d = 0;
        loop {
            if d == dim {
                return total * cell;
            }
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Mann–Whitney AUC by explicit pair counting, ties weighted ½.
/// `labels[i]` is true for the positive (anomalous) class.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice_wins = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / (2 * pos * neg) as f64
}

/// Least-squares residual norm of `y` on the columns `support` of `d`.
pub fn support_residual(d: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> f64 {
    if support.is_empty() {
        return y.norm();
    }
    let sub = DMatrix::from_columns(&support.iter().map(|&j| d.column(j).into_owned()).collect::<Vec<_>>());
    let svd = sub.clone().svd(true, true);
    let coef = svd.solve(y, 1e-12).expect("svd solve");
    (y - sub * coef).norm()
}

/// Smallest least-squares residual over every support of size `1..=k`.
pub fn best_support_residual(d: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> (f64, Vec<usize>) {
    let m = d.ncols();
    let mut best = (y.norm(), Vec::new());
    let mut stack = vec![(0usize, Vec::<usize>::new())];
    while let Some((start, sup)) = stack.pop() {
        if !sup.is_empty() {
            let r = support_residual(d, y, &sup);
            if r < best.0 {
                best = (r, sup.clone());
            }
        }
        if sup.len() < k {
            for j in start..m {
                let mut s = sup.clone();
                s.push(j);
                stack.push((j + 1, s));
            }
        }
    }
    best
}

/// Residual of plain greedy pursuit: at each of `k` steps add the column most
/// correlated with the current least-squares residual.
pub fn greedy_pursuit_residual(d: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> f64 {
    let mut support: Vec<usize> = Vec::new();
    for _ in 0..k.min(d.ncols()) {
        let r = if support.is_empty() {
            y.clone()
        } else {
            let sub = DMatrix::from_columns(&support.iter().map(|&j| d.column(j).into_owned()).collect::<Vec<_>>());
            let coef = sub.clone().svd(true, true).solve(y, 1e-12).expect("svd solve");
            y - sub * coef
        };
        let next = (0..d.ncols())
            .filter(|j| !support.contains(j))
            .map(|j| (j, d.column(j).dot(&r).abs()))
            .fold((usize::MAX, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        support.push(next.0);
    }
    support_residual(d, y, &support)
}

/// Outcome of a parameter finite-difference audit.
#[derive(Debug, Clone, PartialEq)]
pub struct FdAudit {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Compares `analytic` (in [`Params::groups`] layout) against central
/// differences of `loss`, on up to `max_per_group` evenly spaced entries per
/// group. Entries whose perturbation changes `pattern` (ReLU signs) are
/// retried with smaller steps, then skipped.
pub fn fd_audit_params<P, L, K>(
    model: &P,
    analytic: &[Vec<f64>],
    loss: L,
    pattern: K,
    h: f64,
    max_per_group: usize,
) -> FdAudit
where
    P: Params + Clone,
    L: Fn(&P) -> f64,
    K: Fn(&P) -> Vec<bool>,
{
    let base = pattern(model);
    let names: Vec<String> = model.groups().into_iter().map(|(n, _)| n).collect();
    let mut probe = model.clone();
    let mut audit = FdAudit {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for (g, name) in names.iter().enumerate() {
        let len = analytic[g].len();
        let picks: Vec<usize> = if len <= max_per_group {
            (0..len).collect()
        } else {
            (0..max_per_group).map(|k| k * len / max_per_group).collect()
        };
        for i in picks {
            let orig = model.groups()[g].1[i];
            let mut step = h;
            let mut numeric = None;
            for _ in 0..3 {
                probe.groups_mut()[g][i] = orig + step;
                let (lp, kp) = (loss(&probe), pattern(&probe) == base);
                probe.groups_mut()[g][i] = orig - step;
                let (lm, km) = (loss(&probe), pattern(&probe) == base);
                probe.groups_mut()[g][i] = orig;
                if kp && km {
                    numeric = Some((lp - lm) / (2.0 * step));
                    break;
                }
                step *= 0.1;
            }
            let Some(numeric) = numeric else {
                audit.skipped_kinks += 1;
                continue;
            };
            audit.checked += 1;
            let a = analytic[g][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if err > audit.max_rel_error {
                audit.max_rel_error = err;
                audit.worst = format!("{name}[{i}]");
            }
        }
    }
    audit
}
