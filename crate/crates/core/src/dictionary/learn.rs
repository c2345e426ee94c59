use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::atoms::Dictionary;
use super::lasso::ista;
use crate::error::{Error, Result};
use crate::features::PatchFeatureSet;
use crate::seed;

/// Ridge added to `XXᵀ` in the MOD update.
pub const MOD_RIDGE: f64 = 1e-8;
/// Atoms whose absolute cosine with a kept atom exceeds this are re-seeded.
pub const DUPLICATE_COS: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictLearnConfig {
    /// Atom count; 0 means twice the signal dimension.
    pub atoms: usize,
    pub beta: f64,
    /// Residual tolerance for OMP, relative to the signal norm.
    pub xi: f64,
    pub k_max: usize,
    pub iters: usize,
    /// ISTA iterations per coefficient refit (warm started).
    pub lasso_iters: usize,
    pub seed: u64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        Self {
            atoms: 0,
            beta: 0.1,
            xi: 0.05,
            k_max: 10,
            iters: 30,
            lasso_iters: 25,
            seed: 0,
        }
    }
}

impl DictLearnConfig {
    pub fn atom_count(&self, signal_dim: usize) -> usize {
        if self.atoms == 0 {
            2 * signal_dim
        } else {
            self.atoms
        }
    }

    pub fn validate(&self, signal_dim: usize) -> Result<()> {
        let m = self.atom_count(signal_dim);
        if m < signal_dim {
            return Err(Error::param(format!("dictionary needs M >= N, got M={m}, N={signal_dim}")));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::param(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return Err(Error::param(format!("xi must be >= 0, got {}", self.xi)));
        }
        if self.k_max == 0 || self.iters == 0 || self.lasso_iters == 0 {
            return Err(Error::param("k_max, iters and lasso_iters must be >= 1"));
        }
        Ok(())
    }
}

/// Learning objective `Σ‖y_k − Dx_k‖² + β‖x_k‖₁`.
pub fn learning_objective(d: &Dictionary, y: &DMatrix<f64>, x: &DMatrix<f64>, beta: f64) -> f64 {
    let r = y - d.atoms() * x;
    r.norm_squared() + beta * x.iter().map(|v| v.abs()).sum::<f64>()
}

fn nonzero_columns(y: &DMatrix<f64>) -> Vec<usize> {
    (0..y.ncols()).filter(|&k| y.column(k).norm() > 0.0).collect()
}

/// MOD step followed by renormalisation. Returns the new dictionary and,
/// per atom, the factor by which its code row must be multiplied to keep
/// `DX` unchanged (0 for re-seeded atoms).
pub fn dict_update_scaled(
    d: &Dictionary,
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    rng: &mut seed::Rng,
) -> Result<(Dictionary, Vec<f64>)> {
    let (n, m, k) = (d.signal_dim(), d.atom_count(), y.ncols());
    if y.nrows() != n || x.nrows() != m || x.ncols() != k {
        return Err(Error::param(format!(
            "shape mismatch: D {n}x{m}, Y {}x{k}, X {}x{}",
            y.nrows(),
            x.nrows(),
            x.ncols()
        )));
    }
    let candidates = nonzero_columns(y);
    if candidates.is_empty() {
        return Err(Error::param("all training signals are zero"));
    }
    let mut xxt = x * x.transpose();
    for i in 0..m {
        xxt[(i, i)] += MOD_RIDGE;
    }
    let yxt = y * x.transpose();
    let chol = xxt
        .cholesky()
        .ok_or_else(|| Error::Numeric("MOD normal equations are singular".into()))?;
    // D·(XXᵀ + λI) = YXᵀ  ⇔  (XXᵀ + λI)·Dᵀ = XYᵀ
    let mut atoms = chol.solve(&yxt.transpose()).transpose();
    if atoms.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("MOD update produced non-finite atoms".into()));
    }
    let mut scales = vec![0.0; m];
    let mut keep = vec![false; m];
    for j in 0..m {
        let used = x.row(j).iter().any(|v| *v != 0.0);
        let norm = atoms.column(j).norm();
        if used && norm > 1e-10 {
            atoms.column_mut(j).unscale_mut(norm);
            // a near copy of an earlier atom is as good as dead
            let dup = (0..j).any(|i| keep[i] && atoms.column(i).dot(&atoms.column(j)).abs() > DUPLICATE_COS);
            if !dup {
                keep[j] = true;
                scales[j] = norm;
            }
        }
    }
    for j in (0..m).filter(|&j| !keep[j]) {
        let src = candidates[rng.gen_range(0..candidates.len())];
        let col = y.column(src);
        atoms.set_column(j, &(col / col.norm()));
    }
    Ok((Dictionary::new(atoms)?, scales))
}

/// MOD dictionary update with unit-norm atoms and dead-atom re-seeding.
pub fn dict_update(d: &Dictionary, y: &DMatrix<f64>, x: &DMatrix<f64>, rng: &mut seed::Rng) -> Result<Dictionary> {
    dict_update_scaled(d, y, x, rng).map(|(d, _)| d)
}

/// One sweep of exact per-atom updates on the unit sphere with the codes
/// held fixed: atom `j` becomes the normalised `R_j x_jᵀ`, where `R_j` is
/// the residual without atom `j`. The residual cannot grow and the code
/// norms are untouched, so unlike MOD this never raises the objective.
pub fn dict_update_atoms(d: &Dictionary, y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Dictionary> {
    let (n, m, k) = (d.signal_dim(), d.atom_count(), y.ncols());
    if y.nrows() != n || x.nrows() != m || x.ncols() != k {
        return Err(Error::param(format!(
            "shape mismatch: D {n}x{m}, Y {}x{k}, X {}x{}",
            y.nrows(),
            x.nrows(),
            x.ncols()
        )));
    }
    let mut atoms = d.atoms().clone();
    let mut r = y - &atoms * x;
    for j in 0..m {
        let xj = x.row(j).transpose();
        let energy = xj.norm_squared();
        if energy == 0.0 {
            continue;
        }
        let old = atoms.column(j).clone_owned();
        let g = &r * &xj + &old * energy;
        let norm = g.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            continue;
        }
        let new = g / norm;
        r += (&old - &new) * xj.transpose();
        atoms.set_column(j, &new);
    }
    Dictionary::new(atoms)
}

/// Picks `m` distinct nonzero training signals as initial atoms. When there
/// are fewer than `m`, the rest are random Gaussian directions.
pub fn initial_dictionary(y: &DMatrix<f64>, m: usize, rng: &mut seed::Rng) -> Result<Dictionary> {
    let candidates = nonzero_columns(y);
    if candidates.is_empty() {
        return Err(Error::param("all training signals are zero"));
    }
    let n = y.nrows();
    let take = m.min(candidates.len());
    let picks = sample(rng, candidates.len(), take).into_vec();
    let mut atoms = DMatrix::zeros(n, m);
    for (j, &p) in picks.iter().enumerate() {
        atoms.set_column(j, &y.column(candidates[p]));
    }
    for j in take..m {
        for i in 0..n {
            atoms[(i, j)] = StandardNormal.sample(rng);
        }
    }
    Dictionary::normalized(atoms)
}

/// Signals as columns of an `N × K` matrix.
pub fn signal_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = rows.first() else {
        return Err(Error::param("dictionary learning needs at least one signal"));
    };
    let n = first.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::param("signals have inconsistent dimensions"));
    }
    Ok(DMatrix::from_iterator(n, rows.len(), rows.iter().flatten().copied()))
}

/// Alternating minimisation of [`learning_objective`]: ISTA coefficient refits
/// and MOD dictionary updates. A candidate update is kept only if the
/// objective with refit codes does not increase, which makes the returned
/// history non-increasing.
pub fn learn_matrix(y: &DMatrix<f64>, cfg: &DictLearnConfig) -> Result<(Dictionary, Vec<f64>)> {
    let (n, k) = (y.nrows(), y.ncols());
    if k == 0 || n == 0 {
        return Err(Error::param("dictionary learning needs at least one signal"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("training signals contain non-finite values"));
    }
    cfg.validate(n)?;
    let m = cfg.atom_count(n);
    if k < m {
        log::warn!("dictionary learning with K={k} signals < M={m} atoms");
    }
    let mut rng = seed::rng(cfg.seed);
    let mut d = initial_dictionary(y, m, &mut rng)?;
    // ½‖r‖² + (β/2)‖x‖₁ is half the learning objective.
    let penalty = 0.5 * cfg.beta;
    let (mut x, _) = ista(&d, y, DMatrix::zeros(m, k), penalty, cfg.lasso_iters, false)?;
    let mut obj = learning_objective(&d, y, &x, cfg.beta);
    let mut history = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let (cand, scales) = dict_update_scaled(&d, y, &x, &mut rng)?;
        let mut xc = x.clone();
        for (j, s) in scales.iter().enumerate() {
            xc.row_mut(j).scale_mut(*s);
        }
        let (xc, _) = ista(&cand, y, xc, penalty, cfg.lasso_iters, false)?;
        let cand_obj = learning_objective(&cand, y, &xc, cfg.beta);
        if cand_obj <= obj {
            d = cand;
            x = xc;
            obj = cand_obj;
        } else {
            // renormalising MOD atoms can cost more in ‖x‖₁ than MOD saved
            log::debug!("dictionary iteration {it}: MOD step rejected ({cand_obj} > {obj})");
            let cand = dict_update_atoms(&d, y, &x)?;
            let (xc, _) = ista(&cand, y, x.clone(), penalty, cfg.lasso_iters, false)?;
            let cand_obj = learning_objective(&cand, y, &xc, cfg.beta);
            if cand_obj <= obj {
                d = cand;
                x = xc;
                obj = cand_obj;
            } else {
                let (xr, _) = ista(&d, y, x, penalty, cfg.lasso_iters, false)?;
                x = xr;
                obj = learning_objective(&d, y, &x, cfg.beta);
            }
        }
        if !obj.is_finite() {
            return Err(Error::Numeric(format!("dictionary objective became {obj} at iteration {it}")));
        }
        log::debug!("dictionary iteration {it}: objective {obj:.6}");
        history.push(obj);
    }
    Ok((d, history))
}

pub fn learn(y: &PatchFeatureSet, cfg: &DictLearnConfig) -> Result<(Dictionary, Vec<f64>)> {
    if y.is_empty() {
        return Err(Error::param("dictionary learning needs at least one signal"));
    }
    learn_matrix(&signal_matrix(&y.rows())?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_rejected() {
        assert!(learn(&PatchFeatureSet::new(4), &DictLearnConfig::default()).is_err());
        assert!(signal_matrix(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = DictLearnConfig::default();
        assert_eq!(c.atom_count(8), 16);
        assert!(c.validate(8).is_ok());
        c.atoms = 4;
        assert!(c.validate(8).is_err());
        c = DictLearnConfig { beta: 0.0, ..Default::default() };
        assert!(c.validate(8).is_err());
        c = DictLearnConfig { k_max: 0, ..Default::default() };
        assert!(c.validate(8).is_err());
    }

    #[test]
    fn atom_sweep_never_raises_the_residual() {
        let mut rng = seed::rng(2);
        for _ in 0..20 {
            let y = DMatrix::from_fn(6, 30, |_, _| StandardNormal.sample(&mut rng));
            let x = DMatrix::from_fn(12, 30, |_, _| if rng.gen_bool(0.3) { StandardNormal.sample(&mut rng) } else { 0.0 });
            let d = initial_dictionary(&y, 12, &mut rng).unwrap();
            let next = dict_update_atoms(&d, &y, &x).unwrap();
            assert!(next.max_norm_deviation() <= 1e-12);
            let before = learning_objective(&d, &y, &x, 0.1);
            assert!(learning_objective(&next, &y, &x, 0.1) <= before * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_codes_reseed_every_atom() {
        let mut rng = seed::rng(1);
        let y = DMatrix::from_fn(4, 10, |i, j| (i as f64 + 1.0) * (j as f64 - 4.5));
        let d0 = Dictionary::normalized(DMatrix::from_element(4, 8, 1.0)).unwrap();
        let (d, scales) = dict_update_scaled(&d0, &y, &DMatrix::zeros(8, 10), &mut rng).unwrap();
        assert!(scales.iter().all(|s| *s == 0.0));
        assert!(d.max_norm_deviation() <= 1e-12);
        for a in d.atoms().column_iter() {
            // every atom is ± the normalised direction (1,2,3,4)
            let c = a.dot(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])) / 30f64.sqrt();
            assert!((c.abs() - 1.0).abs() < 1e-12);
        }
    }
}
