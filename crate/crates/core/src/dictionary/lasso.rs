use nalgebra::DMatrix;

use super::atoms::{Dictionary, SparseCode};
use crate::error::{Error, Result};

/// `½‖Y − DX‖²_F + β‖X‖₁`, summed over the columns of `Y` and `X`.
pub fn lasso_objective(d: &Dictionary, y: &DMatrix<f64>, x: &DMatrix<f64>, beta: f64) -> f64 {
    let r = y - d.atoms() * x;
    0.5 * r.norm_squared() + beta * x.iter().map(|v| v.abs()).sum::<f64>()
}

fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// ISTA on every column of `y` at once, starting from `x`. With `trace` set
/// the objective is recorded before the first and after every iteration.
pub fn ista(
    d: &Dictionary,
    y: &DMatrix<f64>,
    mut x: DMatrix<f64>,
    beta: f64,
    iters: usize,
    trace: bool,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if y.nrows() != d.signal_dim() || x.nrows() != d.atom_count() || x.ncols() != y.ncols() {
        return Err(Error::param(format!(
            "shape mismatch: D {}x{}, Y {}x{}, X {}x{}",
            d.signal_dim(),
            d.atom_count(),
            y.nrows(),
            y.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("signal contains non-finite values"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::param(format!("L1 weight must be finite and >= 0, got {beta}")));
    }
    if iters == 0 {
        return Err(Error::param("iters must be >= 1"));
    }
    let eta = 1.0 / d.lipschitz();
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::Numeric(format!("ISTA step {eta} is not usable")));
    }
    let gram = d.atoms().transpose() * d.atoms();
    let dty = d.atoms().transpose() * y;
    let t = eta * beta;
    let mut history = Vec::new();
    if trace {
        history.push(lasso_objective(d, y, &x, beta));
    }
    for _ in 0..iters {
        let grad = &gram * &x - &dty;
        x.zip_apply(&grad, |xi, g| *xi = shrink(*xi - eta * g, t));
        if trace {
            history.push(lasso_objective(d, y, &x, beta));
        }
    }
    Ok((x, history))
}

/// L1-penalised sparse code of one signal, from a zero start.
pub fn lasso_solve(d: &Dictionary, y: &[f64], beta: f64, iters: usize) -> Result<SparseCode> {
    lasso_trace(d, y, beta, iters).map(|(c, _)| c)
}

/// As [`lasso_solve`], also returning the objective before and after every iteration.
pub fn lasso_trace(d: &Dictionary, y: &[f64], beta: f64, iters: usize) -> Result<(SparseCode, Vec<f64>)> {
    if y.len() != d.signal_dim() {
        return Err(Error::param(format!(
            "signal has {} entries, dictionary expects {}",
            y.len(),
            d.signal_dim()
        )));
    }
    let ym = DMatrix::from_column_slice(y.len(), 1, y);
    let x0 = DMatrix::zeros(d.atom_count(), 1);
    let (x, hist) = ista(d, &ym, x0, beta, iters, true)?;
    Ok((SparseCode::from_dense(x.as_slice()), hist))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_on_identity() {
        let d = Dictionary::identity(2);
        let code = lasso_solve(&d, &[2.0, 0.0], 1.0, 200).unwrap();
        let x = code.to_dense();
        assert!((x[0] - 1.0).abs() < 1e-9 && x[1] == 0.0, "{x:?}");
    }

    #[test]
    fn large_beta_kills_everything() {
        let d = Dictionary::identity(3);
        let code = lasso_solve(&d, &[0.5, -1.0, 0.2], 1.0, 50).unwrap();
        assert!(code.support.is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        let d = Dictionary::identity(2);
        assert!(lasso_solve(&d, &[1.0, f64::NAN], 0.1, 5).is_err());
        assert!(lasso_solve(&d, &[1.0, 0.0], 0.1, 0).is_err());
        assert!(lasso_solve(&d, &[1.0, 0.0], -1.0, 5).is_err());
    }
}
