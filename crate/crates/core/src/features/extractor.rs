use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward, relu_backward,
    relu_in_place, Conv3x3, Linear, Params, Tensor3,
};
use crate::seed;
use crate::texgen::Image;

/// D-dimensional patch embedding.
pub type FeatureVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Side length of the square input patch; must be divisible by 2^blocks.
    pub input_size: usize,
    pub channels: usize,
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            channels: 1,
            widths: vec![8, 16, 32],
            feature_dim: 64,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::param("extractor needs at least one non-empty conv block"));
        }
        let div = 1usize << self.widths.len();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::param(format!(
                "input size {} not divisible by {div}",
                self.input_size
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::param("extractor channels must be 1 or 3"));
        }
        if self.feature_dim == 0 {
            return Err(Error::param("feature dimension must be positive"));
        }
        Ok(())
    }
}

/// Conv blocks (3×3 conv → ReLU → 2×2 average pool), global average pool,
/// an affine map to the feature vector, and a 2-way head on `relu(feature)`
/// that is only used by the pretext task.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub config: ExtractorConfig,
    pub convs: Vec<Conv3x3>,
    pub feature: Linear,
    pub head: Linear,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Tensor3,
    /// Per block: (block input, conv pre-activation).
    pub blocks: Vec<(Tensor3, Tensor3)>,
    pub last: Tensor3,
    pub pooled: Vec<f64>,
    pub feature: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    /// Sign pattern of every ReLU input, used to detect kinks during finite differencing.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|(_, z)| z.data.iter().map(|v| *v > 0.0))
            .chain(self.feature.iter().map(|v| *v > 0.0))
            .collect()
    }
}

impl Extractor {
    pub fn new(config: ExtractorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let mut convs = Vec::with_capacity(config.widths.len());
        let mut in_ch = config.channels;
        for &w in &config.widths {
            convs.push(Conv3x3::init(in_ch, w, &mut rng));
            in_ch = w;
        }
        let feature = Linear::init(in_ch, config.feature_dim, &mut rng);
        let head = Linear::init(config.feature_dim, 2, &mut rng);
        Ok(Self {
            config,
            convs,
            feature,
            head,
        })
    }

    pub fn zeros(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut in_ch = config.channels;
        for &w in &config.widths {
            convs.push(Conv3x3::zeros(in_ch, w));
            in_ch = w;
        }
        Ok(Self {
            feature: Linear::zeros(in_ch, config.feature_dim),
            head: Linear::zeros(config.feature_dim, 2),
            convs,
            config,
        })
    }

    /// Converts a patch to a centred `C × H × W` tensor.
    pub fn input_tensor(&self, patch: &Image) -> Result<Tensor3> {
        let s = self.config.input_size;
        if patch.height() != s || patch.width() != s || patch.channels() != self.config.channels {
            return Err(Error::param(format!(
                "patch is {}x{}x{}, extractor expects {s}x{s}x{}",
                patch.height(),
                patch.width(),
                patch.channels(),
                self.config.channels
            )));
        }
        let mut t = Tensor3::zeros(patch.channels(), s, s);
        for y in 0..s {
            for x in 0..s {
                for c in 0..patch.channels() {
                    t.data[(c * s + y) * s + x] = patch.get(y, x, c) - 0.5;
                }
            }
        }
        Ok(t)
    }

    pub fn forward_cache(&self, input: Tensor3) -> ForwardCache {
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut x = input.clone();
        for conv in &self.convs {
            let z = conv.forward(&x);
            let mut a = z.clone();
            relu_in_place(&mut a.data);
            let next = avg_pool2(&a);
            blocks.push((x, z));
            x = next;
        }
        let pooled = global_avg_pool(&x);
        let feature = self.feature.apply(&pooled);
        let mut hidden = feature.clone();
        relu_in_place(&mut hidden);
        let logits = self.head.apply(&hidden);
        ForwardCache {
            input,
            blocks,
            last: x,
            pooled,
            feature,
            hidden,
            logits,
        }
    }

    pub fn forward(&self, patch: &Image) -> Result<FeatureVector> {
        let cache = self.forward_cache(self.input_tensor(patch)?);
        if cache.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite extractor output".into()));
        }
        Ok(cache.feature)
    }

    pub fn logits(&self, patch: &Image) -> Result<Vec<f64>> {
        Ok(self.forward_cache(self.input_tensor(patch)?).logits)
    }

    /// Backpropagates `dL/dlogits` (and an optional direct `dL/dfeature`) and
    /// accumulates into `grads`, laid out as [`Params::groups`].
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], dfeature: Option<&[f64]>, grads: &mut [Vec<f64>]) {
        let nb = self.convs.len();
        let (conv_grads, tail) = grads.split_at_mut(2 * nb);
        let [fw, fb, hw, hb] = tail else {
            panic!("gradient buffer has wrong group count");
        };
        let mut dhidden = vec![0.0; self.config.feature_dim];
        self.head.backward(&cache.hidden, dlogits, hw, hb, Some(&mut dhidden));
        relu_backward(&cache.feature, &mut dhidden);
        if let Some(df) = dfeature {
            dhidden.iter_mut().zip(df).for_each(|(a, b)| *a += b);
        }
        let mut dpooled = vec![0.0; cache.pooled.len()];
        self.feature.backward(&cache.pooled, &dhidden, fw, fb, Some(&mut dpooled));
        let last = &cache.last;
        let mut grad = global_avg_pool_backward((last.c, last.h, last.w), &dpooled);
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let (x, z) = &cache.blocks[i];
            let mut dz = avg_pool2_backward((z.c, z.h, z.w), &grad);
            relu_backward(&z.data, &mut dz.data);
            let (gw, rest) = conv_grads[2 * i..2 * i + 2].split_at_mut(1);
            if i > 0 {
                let mut dx = Tensor3::zeros(x.c, x.h, x.w);
                conv.backward(x, &dz, &mut gw[0], &mut rest[0], Some(&mut dx));
                grad = dx;
            } else {
                conv.backward(x, &dz, &mut gw[0], &mut rest[0], None);
            }
        }
    }

    const MAGIC: &'static [u8; 4] = b"TXCN";
    const VERSION: u16 = 1;

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        let c = &self.config;
        for v in [c.input_size, c.channels, c.widths.len(), c.feature_dim] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for &v in &c.widths {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for (_, g) in self.groups() {
            for v in g {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut rd = crate::binio::Reader::new(r);
        rd.magic(Self::MAGIC)?;
        rd.version(Self::VERSION)?;
        let input_size = rd.u32()? as usize;
        let channels = rd.u32()? as usize;
        let blocks = rd.u32()? as usize;
        let feature_dim = rd.u32()? as usize;
        if blocks > 16 {
            return Err(Error::format(rd.offset(), format!("implausible block count {blocks}")));
        }
        let widths = (0..blocks).map(|_| rd.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let config = ExtractorConfig {
            input_size,
            channels,
            widths,
            feature_dim,
        };
        let mut ex = Extractor::zeros(config).map_err(|e| Error::format(rd.offset(), e.to_string()))?;
        for g in ex.groups_mut() {
            for v in g.iter_mut() {
                *v = rd.f64()?;
            }
        }
        rd.expect_eof()?;
        Ok(ex)
    }
}

impl Params for Extractor {
    fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), c.weight.as_slice()));
            out.push((format!("conv{}.bias", i + 1), c.bias.as_slice()));
        }
        out.push(("feature.weight".into(), self.feature.weight.as_slice()));
        out.push(("feature.bias".into(), self.feature.bias.as_slice()));
        out.push(("head.weight".into(), self.head.weight.as_slice()));
        out.push(("head.bias".into(), self.head.bias.as_slice()));
        out
    }

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(c.weight.as_mut_slice());
            out.push(c.bias.as_mut_slice());
        }
        out.push(self.feature.weight.as_mut_slice());
        out.push(self.feature.bias.as_mut_slice());
        out.push(self.head.weight.as_mut_slice());
        out.push(self.head.bias.as_mut_slice());
        out
    }
}
