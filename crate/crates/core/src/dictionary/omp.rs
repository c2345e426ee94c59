use super::atoms::{Dictionary, SparseCode};
use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonal matching pursuit: greedily adds the atom most correlated with
/// the residual and refits all coefficients by least squares, until the
/// residual norm is at most `xi` or `k_max` atoms are in use.
pub fn omp(d: &Dictionary, y: &[f64], xi: f64, k_max: usize) -> Result<SparseCode> {
    omp_trace(d, y, xi, k_max).map(|(c, _)| c)
}

/// As [`omp`], also returning the residual norm before the first step and
/// after every step.
pub fn omp_trace(d: &Dictionary, y: &[f64], xi: f64, k_max: usize) -> Result<(SparseCode, Vec<f64>)> {
    let (n, m) = (d.signal_dim(), d.atom_count());
    if y.len() != n {
        return Err(Error::param(format!("signal has {} entries, dictionary expects {n}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("signal contains non-finite values"));
    }
    if !(xi >= 0.0) {
        return Err(Error::param(format!("residual tolerance must be >= 0, got {xi}")));
    }
    if k_max == 0 {
        return Err(Error::param("k_max must be >= 1"));
    }
    let atoms = d.atoms();
    // Incremental Gram-Schmidt QR of the selected atoms.
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r: Vec<Vec<f64>> = Vec::new();
    let mut qty: Vec<f64> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut used = vec![false; m];
    let mut res = y.to_vec();
    let mut rn = norm(&res);
    let mut trace = vec![rn];
    while rn > xi && chosen.len() < k_max.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..m).filter(|&j| !used[j]) {
            let c = dot(&res, atoms.column(j).as_slice()).abs();
            if best.map_or(true, |(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        let Some((j, corr)) = best else { break };
        if corr == 0.0 {
            break;
        }
        used[j] = true;
        let mut v = atoms.column(j).as_slice().to_vec();
        let mut rc = vec![0.0; q.len() + 1];
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &v);
                rc[i] += c;
                v.iter_mut().zip(qi).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nv = norm(&v);
        if nv <= 1e-10 {
            // atom already in the span of the support
            continue;
        }
        v.iter_mut().for_each(|a| *a /= nv);
        rc[q.len()] = nv;
        let c = dot(&v, &res);
        res.iter_mut().zip(&v).for_each(|(a, b)| *a -= c * b);
        qty.push(dot(&v, y));
        q.push(v);
        r.push(rc);
        chosen.push(j);
        rn = norm(&res);
        trace.push(rn);
    }
    // Back substitution R c = Qᵀy (r[k] is column k of R).
    let s = chosen.len();
    let mut coef = vec![0.0; s];
    for i in (0..s).rev() {
        let mut acc = qty[i];
        for k in i + 1..s {
            acc -= r[k][i] * coef[k];
        }
        coef[i] = acc / r[i][i];
    }
    let mut pairs: Vec<(usize, f64)> = chosen.into_iter().zip(coef).filter(|(_, c)| *c != 0.0).collect();
    pairs.sort_by_key(|p| p.0);
    let (support, coefficients) = pairs.into_iter().unzip();
    Ok((
        SparseCode {
            dim: m,
            support,
            coefficients,
        },
        trace,
    ))
}
