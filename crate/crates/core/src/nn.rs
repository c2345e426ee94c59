//! Minimal dense and convolutional layers with hand-written backward passes,
//! shared by the feature extractor and the coupling subnets.

use rand::Rng;

/// A model whose trainable tensors can be visited as flat, named groups in a
/// fixed order. Gradients are exchanged as `Vec<Vec<f64>>` in the same order.
pub trait Params {
    fn groups(&self) -> Vec<(String, &[f64])>;
    fn groups_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.groups().iter().map(|(_, g)| vec![0.0; g.len()]).collect()
    }

    fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }
}

/// `y = W x + b` with `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform fan-in initialisation, `U(-√(6/fan_in), √(6/fan_in))`, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(inputs, outputs);
        let bound = (6.0 / inputs as f64).sqrt();
        l.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        l
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *yo = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.outputs];
        self.forward(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `gw`/`gb` and, if given, writes `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            gb[o] += g;
            if g != 0.0 {
                let row = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                row.iter_mut().zip(x).for_each(|(w, v)| *w += g * v);
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in dy.iter().enumerate() {
                if g != 0.0 {
                    let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                    dx.iter_mut().zip(row).for_each(|(d, w)| *d += g * w);
                }
            }
        }
    }
}

/// Channel-major feature map `channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// 3×3 convolution, stride 1, zero padding 1. Weight layout `out × in × 3 × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn init<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(in_ch, out_ch);
        let bound = (6.0 / (in_ch * 9) as f64).sqrt();
        c.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        c
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        let (h, w) = (x.h, x.w);
        let mut y = Tensor3::zeros(self.out_ch, h, w);
        for oc in 0..self.out_ch {
            let out = &mut y.data[oc * h * w..(oc + 1) * h * w];
            out.iter_mut().for_each(|v| *v = self.bias[oc]);
            for ic in 0..self.in_ch {
                let inp = &x.data[ic * h * w..(ic + 1) * h * w];
                let k = &self.weight[(oc * self.in_ch + ic) * 9..(oc * self.in_ch + ic + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        // output (oy, ox) reads input (oy + ky - 1, ox + kx - 1)
                        let oy_lo = 1usize.saturating_sub(ky);
                        let oy_hi = (h + 1 - ky).min(h);
                        let ox_lo = 1usize.saturating_sub(kx);
                        let ox_hi = (w + 1 - kx).min(w);
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - 1;
                            let orow = &mut out[oy * w..(oy + 1) * w];
                            let irow = &inp[iy * w..(iy + 1) * w];
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * irow[ox + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, x: &Tensor3, dy: &Tensor3, gw: &mut [f64], gb: &mut [f64], dx: Option<&mut Tensor3>) {
        let (h, w) = (x.h, x.w);
        let mut dx = dx;
        if let Some(d) = dx.as_deref_mut() {
            d.data.iter_mut().for_each(|v| *v = 0.0);
        }
        for oc in 0..self.out_ch {
            let g = &dy.data[oc * h * w..(oc + 1) * h * w];
            gb[oc] += g.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let inp = &x.data[ic * h * w..(ic + 1) * h * w];
                let base = (oc * self.in_ch + ic) * 9;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let oy_lo = 1usize.saturating_sub(ky);
                        let oy_hi = (h + 1 - ky).min(h);
                        let ox_lo = 1usize.saturating_sub(kx);
                        let ox_hi = (w + 1 - kx).min(w);
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - 1;
                            for ox in ox_lo..ox_hi {
                                acc += g[oy * w + ox] * inp[iy * w + ox + kx - 1];
                            }
                        }
                        gw[base + ky * 3 + kx] += acc;
                        if let Some(d) = dx.as_deref_mut() {
                            let wv = self.weight[base + ky * 3 + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let drow = &mut d.data[ic * h * w..(ic + 1) * h * w];
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - 1;
                                for ox in ox_lo..ox_hi {
                                    drow[iy * w + ox + kx - 1] += wv * g[oy * w + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    grad.iter_mut().zip(pre).for_each(|(g, &z)| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
}

/// 2×2 average pooling with stride 2 (odd trailing rows/columns dropped).
pub fn avg_pool2(x: &Tensor3) -> Tensor3 {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor3::zeros(x.c, oh, ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let s = x.at(c, 2 * oy, 2 * ox)
                    + x.at(c, 2 * oy, 2 * ox + 1)
                    + x.at(c, 2 * oy + 1, 2 * ox)
                    + x.at(c, 2 * oy + 1, 2 * ox + 1);
                y.data[(c * oh + oy) * ow + ox] = 0.25 * s;
            }
        }
    }
    y
}

pub fn avg_pool2_backward(x_shape: (usize, usize, usize), dy: &Tensor3) -> Tensor3 {
    let (c, h, w) = x_shape;
    let mut dx = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                let g = 0.25 * dy.at(ch, oy, ox);
                for (yy, xx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dx.data[(ch * h + 2 * oy + yy) * w + 2 * ox + xx] = g;
                }
            }
        }
    }
    dx
}

pub fn global_avg_pool(x: &Tensor3) -> Vec<f64> {
    let n = (x.h * x.w) as f64;
    x.data.chunks(x.h * x.w).map(|c| c.iter().sum::<f64>() / n).collect()
}

pub fn global_avg_pool_backward(shape: (usize, usize, usize), dy: &[f64]) -> Tensor3 {
    let (c, h, w) = shape;
    let n = (h * w) as f64;
    let mut dx = Tensor3::zeros(c, h, w);
    for (ch, g) in dy.iter().enumerate() {
        dx.data[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|v| *v = g / n);
    }
    dx
}

/// Pairwise (tree) summation; the result depends only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// SGD with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step<P: Params + ?Sized>(&mut self, model: &mut P, grads: &[Vec<f64>]) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), v) in model.groups_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Params + ?Sized>(&mut self, model: &mut P, grads: &[Vec<f64>]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in model
            .groups_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}
