use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::coupling::{CouplingCache, CouplingLayer};
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::features::PatchFeatureSet;
use crate::nn::{pairwise_sum, Params};
use crate::seed;

/// Coordinate permutation: `y[i] = x[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::param("permutation is not a bijection"));
            }
        }
        Ok(Self(perm))
    }

    pub fn identity(d: usize) -> Self {
        Self((0..d).collect())
    }

    /// Uniformly random permutation; for `d ≥ 2` the identity is redrawn so
    /// every coupling sees a different split than the previous one could.
    pub fn random<R: Rng>(d: usize, rng: &mut R) -> Self {
        let mut p: Vec<usize> = (0..d).collect();
        loop {
            p.shuffle(rng);
            if d < 2 || p.iter().enumerate().any(|(i, &v)| i != v) {
                return Self(p);
            }
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|&p| x[p]).collect()
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; y.len()];
        for (i, &p) in self.0.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }

    /// `self.compose(other).apply(x) == self.apply(&other.apply(x))`
    pub fn compose(&self, other: &Permutation) -> Self {
        Self(self.0.iter().map(|&p| other.0[p]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub layers: usize,
    /// Hidden width of the scale/shift subnets; 0 means "same as the input dimension".
    pub hidden: usize,
    pub s_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            hidden: 0,
            s_max: 3.0,
        }
    }
}

/// Blocks of (fixed permutation, affine coupling) mapping features `x` to
/// latents `t` under a standard normal base density.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub dim: usize,
    pub perms: Vec<Permutation>,
    pub layers: Vec<CouplingLayer>,
}

/// Per-block caches for backpropagation.
pub struct FlowTrace {
    pub latent: Vec<f64>,
    pub logdet: f64,
    caches: Vec<CouplingCache>,
}

pub fn log_normal_const(d: usize) -> f64 {
    0.5 * d as f64 * (2.0 * PI).ln()
}

impl FlowModel {
    pub fn new(dim: usize, cfg: &FlowConfig, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::param("flow dimension must be >= 2"));
        }
        if cfg.layers == 0 {
            return Err(Error::param("flow needs at least one coupling layer"));
        }
        if !(cfg.s_max > 0.0 && cfg.s_max.is_finite()) {
            return Err(Error::param("s_max must be positive and finite"));
        }
        let hidden = if cfg.hidden == 0 { dim } else { cfg.hidden };
        let mut rng = seed::rng(seed);
        let mut perms = Vec::with_capacity(cfg.layers);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            perms.push(Permutation::random(dim, &mut rng));
            layers.push(CouplingLayer::new(dim, hidden, cfg.s_max, &mut rng));
        }
        Ok(Self { dim, perms, layers })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::param(format!(
                "flow expects dimension {}, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<FlowTrace> {
        self.check_dim(x)?;
        let mut v = x.to_vec();
        let mut logdet = 0.0;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, (p, layer)) in self.perms.iter().zip(&self.layers).enumerate() {
            let (out, ld, cache) = layer.forward_cached(&p.apply(&v));
            if !ld.is_finite() || out.iter().any(|o| !o.is_finite()) {
                return Err(Error::Numeric(format!("non-finite value after coupling layer {i}")));
            }
            v = out;
            logdet += ld;
            caches.push(cache);
        }
        Ok(FlowTrace {
            latent: v,
            logdet,
            caches,
        })
    }

    /// `x ↦ (t, log|det ∂t/∂x|)`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let t = self.trace(x)?;
        Ok((t.latent, t.logdet))
    }

    pub fn inverse(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(t)?;
        let mut v = t.to_vec();
        for (p, layer) in self.perms.iter().zip(&self.layers).rev() {
            v = p.apply_inverse(&layer.inverse(&v)?);
        }
        Ok(v)
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        let (t, logdet) = self.forward(x)?;
        let lp = -log_normal_const(self.dim) - 0.5 * t.iter().map(|v| v * v).sum::<f64>() + logdet;
        if !lp.is_finite() {
            return Err(Error::Numeric("non-finite log-likelihood".into()));
        }
        Ok(lp)
    }

    /// Per-sample `½‖t‖² − log|det|`.
    pub fn sample_loss(&self, x: &[f64]) -> Result<f64> {
        let (t, logdet) = self.forward(x)?;
        Ok(0.5 * t.iter().map(|v| v * v).sum::<f64>() - logdet)
    }

    pub fn nf_loss_rows(&self, rows: &[Vec<f64>]) -> Result<f64> {
        if rows.is_empty() {
            return Err(Error::param("empty batch"));
        }
        let losses = rows.iter().map(|x| self.sample_loss(x)).collect::<Result<Vec<_>>>()?;
        Ok(pairwise_sum(&losses) / rows.len() as f64)
    }

    pub fn nf_loss(&self, batch: &PatchFeatureSet) -> Result<f64> {
        self.nf_loss_rows(&batch.rows())
    }

    /// Mean loss over `rows` and its gradient in [`Params::groups`] layout.
    /// Per-sample gradients are combined by pairwise summation.
    pub fn loss_and_grad(&self, rows: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
        if rows.is_empty() {
            return Err(Error::param("empty batch"));
        }
        let n = rows.len() as f64;
        let mut per_sample = Vec::with_capacity(rows.len());
        let mut losses = Vec::with_capacity(rows.len());
        for x in rows {
            let tr = self.trace(x)?;
            losses.push(0.5 * tr.latent.iter().map(|v| v * v).sum::<f64>() - tr.logdet);
            let mut grads = self.zero_grads();
            let mut g = tr.latent.clone();
            for (i, (p, layer)) in self.perms.iter().zip(&self.layers).enumerate().rev() {
                let gv = layer.backward(&tr.caches[i], &g, -1.0, &mut grads[8 * i..8 * i + 8]);
                g = p.apply_inverse(&gv);
            }
            per_sample.push(grads);
        }
        let total = reduce_grads(per_sample);
        let grads = total
            .into_iter()
            .map(|g| g.into_iter().map(|v| v / n).collect())
            .collect();
        Ok((pairwise_sum(&losses) / n, grads))
    }

    /// ReLU sign pattern of every subnet for input `x` (finite-difference kink detection).
    pub fn relu_pattern(&self, x: &[f64]) -> Vec<bool> {
        let mut out = Vec::new();
        let mut v = x.to_vec();
        for (p, layer) in self.perms.iter().zip(&self.layers) {
            let pv = p.apply(&v);
            layer.relu_pattern(&pv, &mut out);
            v = layer.forward_cached(&pv).0;
        }
        out
    }

    const MAGIC: &'static [u8; 4] = b"TXNF";
    const VERSION: u16 = 1;

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        let hidden = self.layers.first().map_or(0, |l| l.scale.first.outputs);
        let s_max = self.layers.first().map_or(0.0, |l| l.s_max);
        for v in [self.dim, self.layers.len(), hidden] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&s_max.to_le_bytes())?;
        for (p, layer) in self.perms.iter().zip(&self.layers) {
            for &i in p.indices() {
                w.write_all(&(i as u32).to_le_bytes())?;
            }
            for g in layer.groups() {
                for v in g {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut rd = Reader::new(r);
        rd.magic(Self::MAGIC)?;
        rd.version(Self::VERSION)?;
        let at = rd.offset();
        let dim = rd.u32()? as usize;
        let n = rd.u32()? as usize;
        let hidden = rd.u32()? as usize;
        let s_max = rd.f64()?;
        if dim < 2 || n == 0 || hidden == 0 || dim > 1 << 16 || n > 1024 || !(s_max > 0.0) {
            return Err(Error::format(at, "implausible flow header"));
        }
        let mut perms = Vec::with_capacity(n);
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let pat = rd.offset();
            let idx = (0..dim).map(|_| rd.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            perms.push(Permutation::new(idx).map_err(|e| Error::format(pat, e.to_string()))?);
            let mut layer = CouplingLayer::identity(dim, hidden, s_max);
            for g in layer.groups_mut() {
                for v in g.iter_mut() {
                    *v = rd.f64()?;
                }
            }
            layers.push(layer);
        }
        rd.expect_eof()?;
        Ok(Self { dim, perms, layers })
    }
}

fn reduce_grads(mut parts: Vec<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (ga, gb) in a.iter_mut().zip(b) {
                    ga.iter_mut().zip(gb).for_each(|(x, y)| *x += y);
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

impl Params for FlowModel {
    fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(8 * self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, g) in CouplingLayer::GROUP_NAMES.iter().zip(layer.groups()) {
                out.push((format!("layer{i}.{name}"), g));
            }
        }
        out
    }

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.groups_mut()).collect()
    }
}
