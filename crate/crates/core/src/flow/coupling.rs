use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_in_place, Linear};

/// Two affine layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SubNet {
    pub first: Linear,
    pub second: Linear,
}

#[derive(Debug, Clone)]
pub struct SubNetCache {
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl SubNet {
    /// Fan-in initialised first layer; the output layer is zero, so the
    /// subnet starts as the constant zero map.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            first: Linear::init(inputs, hidden, rng),
            second: Linear::zeros(hidden, outputs),
        }
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            first: Linear::zeros(inputs, hidden),
            second: Linear::zeros(hidden, outputs),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, SubNetCache) {
        let pre = self.first.apply(x);
        let mut hidden = pre.clone();
        relu_in_place(&mut hidden);
        (self.second.apply(&hidden), SubNetCache { pre, hidden })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).0
    }

    /// Accumulates parameter gradients (`grads` = [w1, b1, w2, b2]) and adds `dL/dx` into `dx`.
    fn backward(&self, x: &[f64], cache: &SubNetCache, dy: &[f64], grads: &mut [Vec<f64>], dx: &mut [f64]) {
        let [w1, b1, w2, b2] = grads else {
            panic!("subnet gradient buffer must have 4 groups");
        };
        let mut dh = vec![0.0; cache.hidden.len()];
        self.second.backward(&cache.hidden, dy, w2, b2, Some(&mut dh));
        relu_backward(&cache.pre, &mut dh);
        let mut dxi = vec![0.0; x.len()];
        self.first.backward(x, &dh, w1, b1, Some(&mut dxi));
        dx.iter_mut().zip(&dxi).for_each(|(a, b)| *a += b);
    }

    pub fn relu_pattern(&self, x: &[f64], out: &mut Vec<bool>) {
        out.extend(self.first.apply(x).iter().map(|v| *v > 0.0));
    }
}

/// Affine coupling: the first `split` coordinates pass through unchanged and
/// condition an elementwise scale and shift of the remaining ones,
/// `out₂ = b ⊙ exp(s) + n(a)` with `s = s_max·tanh(l(a)/s_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub dim: usize,
    pub split: usize,
    pub s_max: f64,
    pub scale: SubNet,
    pub shift: SubNet,
}

/// Values needed to backpropagate through one coupling.
#[derive(Debug, Clone)]
pub struct CouplingCache {
    a: Vec<f64>,
    b: Vec<f64>,
    exp_s: Vec<f64>,
    /// `tanh(l/s_max)`
    tanh: Vec<f64>,
    scale: SubNetCache,
    shift: SubNetCache,
}

impl CouplingLayer {
    pub fn new<R: Rng>(dim: usize, hidden: usize, s_max: f64, rng: &mut R) -> Self {
        let split = dim / 2;
        Self {
            dim,
            split,
            s_max,
            scale: SubNet::init(split, hidden, dim - split, rng),
            shift: SubNet::init(split, hidden, dim - split, rng),
        }
    }

    pub fn identity(dim: usize, hidden: usize, s_max: f64) -> Self {
        let split = dim / 2;
        Self {
            dim,
            split,
            s_max,
            scale: SubNet::zeros(split, hidden, dim - split),
            shift: SubNet::zeros(split, hidden, dim - split),
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::param(format!(
                "coupling expects dimension {}, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    /// Clamped log-scale and shift for the conditioning half.
    fn scale_shift(&self, a: &[f64]) -> (Vec<f64>, Vec<f64>, SubNetCache, SubNetCache) {
        let (l, scache) = self.scale.forward(a);
        let (n, ncache) = self.shift.forward(a);
        let tanh: Vec<f64> = l.iter().map(|v| (v / self.s_max).tanh()).collect();
        (tanh, n, scache, ncache)
    }

    pub fn forward_cached(&self, v: &[f64]) -> (Vec<f64>, f64, CouplingCache) {
        let (a, b) = v.split_at(self.split);
        let (tanh, n, scache, ncache) = self.scale_shift(a);
        let mut out = a.to_vec();
        let mut logdet = 0.0;
        let mut exp_s = Vec::with_capacity(b.len());
        for ((bi, ti), ni) in b.iter().zip(&tanh).zip(&n) {
            let s = self.s_max * ti;
            let e = s.exp();
            logdet += s;
            exp_s.push(e);
            out.push(bi * e + ni);
        }
        let cache = CouplingCache {
            a: a.to_vec(),
            b: b.to_vec(),
            exp_s,
            tanh,
            scale: scache,
            shift: ncache,
        };
        (out, logdet, cache)
    }

    pub fn forward(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(v)?;
        let (out, logdet, _) = self.forward_cached(v);
        Ok((out, logdet))
    }

    pub fn inverse(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        let (a, y) = w.split_at(self.split);
        let (tanh, n, _, _) = self.scale_shift(a);
        let mut out = a.to_vec();
        for ((yi, ti), ni) in y.iter().zip(&tanh).zip(&n) {
            out.push((yi - ni) * (-self.s_max * ti).exp());
        }
        Ok(out)
    }

    /// Given `dL/dout` and `dL/dlogdet`, accumulates parameter gradients into
    /// `grads` (8 groups: scale w1,b1,w2,b2 then shift w1,b1,w2,b2) and
    /// returns `dL/dv`.
    pub fn backward(&self, cache: &CouplingCache, dout: &[f64], dlogdet: f64, grads: &mut [Vec<f64>]) -> Vec<f64> {
        let (dout1, dout2) = dout.split_at(self.split);
        let mut da = dout1.to_vec();
        let mut db = Vec::with_capacity(dout2.len());
        let mut dl = Vec::with_capacity(dout2.len());
        for i in 0..dout2.len() {
            let g = dout2[i];
            db.push(g * cache.exp_s[i]);
            let ds = g * cache.b[i] * cache.exp_s[i] + dlogdet;
            dl.push(ds * (1.0 - cache.tanh[i] * cache.tanh[i]));
        }
        let (gs, gn) = grads.split_at_mut(4);
        self.scale.backward(&cache.a, &cache.scale, &dl, gs, &mut da);
        self.shift.backward(&cache.a, &cache.shift, dout2, gn, &mut da);
        da.extend(db);
        da
    }

    pub fn relu_pattern(&self, v: &[f64], out: &mut Vec<bool>) {
        let a = &v[..self.split];
        self.scale.relu_pattern(a, out);
        self.shift.relu_pattern(a, out);
    }

    pub(crate) fn groups(&self) -> [&[f64]; 8] {
        [
            &self.scale.first.weight,
            &self.scale.first.bias,
            &self.scale.second.weight,
            &self.scale.second.bias,
            &self.shift.first.weight,
            &self.shift.first.bias,
            &self.shift.second.weight,
            &self.shift.second.bias,
        ]
    }

    pub(crate) fn groups_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.scale.first.weight,
            &mut self.scale.first.bias,
            &mut self.scale.second.weight,
            &mut self.scale.second.bias,
            &mut self.shift.first.weight,
            &mut self.shift.first.bias,
            &mut self.shift.second.weight,
            &mut self.shift.second.bias,
        ]
    }

    pub(crate) const GROUP_NAMES: [&'static str; 8] = [
        "scale.w1", "scale.b1", "scale.w2", "scale.b2", "shift.w1", "shift.b1", "shift.w2", "shift.b2",
    ];
}
