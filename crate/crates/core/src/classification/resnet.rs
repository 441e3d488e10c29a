//! 18-layer residual backbone (two basic blocks per stage) with a width multiplier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvBn, ConvBnCache, Grads, MaxPool2d, ParamStore, PoolCache, Tensor};

const BASE_WIDTHS: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneArch {
    pub width_mult: f64,
    /// Grayscale crops are replicated across this many input channels.
    pub in_channels: usize,
    pub input_size: usize,
}

impl Default for BackboneArch {
    fn default() -> Self {
        Self { width_mult: 0.5, in_channels: 3, input_size: 224 }
    }
}

impl BackboneArch {
    pub fn widths(&self) -> [usize; 4] {
        BASE_WIDTHS.map(|w| ((w as f64 * self.width_mult).round() as usize).max(1))
    }

    pub fn feature_channels(&self) -> usize {
        self.widths()[3]
    }

    /// Side of the last feature map.
    pub fn feature_side(&self) -> usize {
        let conv = |s: usize, k: usize, st: usize, p: usize| (s + 2 * p - k) / st + 1;
        let mut s = conv(self.input_size, 7, 2, 3);
        s = conv(s, 3, 2, 1);
        for _ in 0..3 {
            s = conv(s, 3, 2, 1);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return Err(Error::invalid(format!("width_mult {} must be positive", self.width_mult)));
        }
        if self.in_channels == 0 || self.input_size < 32 {
            return Err(Error::invalid("backbone needs >= 1 input channel and input size >= 32"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    c1: ConvBn,
    c2: ConvBn,
    down: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    c1: ConvBnCache,
    h1: Tensor,
    c2: ConvBnCache,
    down: Option<ConvBnCache>,
    out: Tensor,
}

impl BasicBlock {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let c1 = ConvBn::new(store, &format!("{name}.c1"), cin, cout, 3, stride, 1, rng);
        let c2 = ConvBn::new(store, &format!("{name}.c2"), cout, cout, 3, 1, 1, rng);
        let down = (stride != 1 || cin != cout)
            .then(|| ConvBn::new(store, &format!("{name}.down"), cin, cout, 1, stride, 0, rng));
        Self { c1, c2, down }
    }

    fn forward_eval(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut h = self.c1.forward_eval(store, x);
        h.relu_inplace();
        let mut y = self.c2.forward_eval(store, &h);
        match &self.down {
            Some(d) => y.add_inplace(&d.forward_eval(store, x)),
            None => y.add_inplace(x),
        }
        y.relu_inplace();
        y
    }

    fn forward_train(&self, store: &mut ParamStore, x: &Tensor) -> (Tensor, BlockCache) {
        let (mut h1, c1) = self.c1.forward_train(store, x);
        h1.relu_inplace();
        let (mut y, c2) = self.c2.forward_train(store, &h1);
        let down = match &self.down {
            Some(d) => {
                let (s, cache) = d.forward_train(store, x);
                y.add_inplace(&s);
                Some(cache)
            }
            None => {
                y.add_inplace(x);
                None
            }
        };
        y.relu_inplace();
        (y.clone(), BlockCache { c1, h1, c2, down, out: y })
    }

    fn backward(&self, store: &ParamStore, cache: &BlockCache, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let mut d = dy.clone();
        Tensor::relu_backward_inplace(&mut d, &cache.out);
        let mut dh = self.c2.backward(store, &cache.c2, &d, grads, true).expect("input grad");
        Tensor::relu_backward_inplace(&mut dh, &cache.h1);
        let mut dx = self.c1.backward(store, &cache.c1, &dh, grads, true).expect("input grad");
        match (&self.down, &cache.down) {
            (Some(l), Some(c)) => dx.add_inplace(&l.backward(store, c, &d, grads, true).expect("input grad")),
            _ => dx.add_inplace(&d),
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct ResNet18 {
    arch: BackboneArch,
    stem: ConvBn,
    pool: MaxPool2d,
    blocks: Vec<BasicBlock>,
}

#[derive(Debug, Clone)]
pub struct ResNetCache {
    stem: ConvBnCache,
    stem_out: Tensor,
    pool: PoolCache,
    blocks: Vec<BlockCache>,
}

impl ResNet18 {
    /// Registers parameters under `prefix`.
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, arch: &BackboneArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let w = arch.widths();
        let stem = ConvBn::new(store, &format!("{prefix}.stem"), arch.in_channels, w[0], 7, 2, 3, rng);
        let mut blocks = Vec::new();
        let mut cin = w[0];
        for (s, &c) in w.iter().enumerate() {
            for b in 0..2 {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(store, &format!("{prefix}.layer{}.{b}", s + 1), cin, c, stride, rng));
                cin = c;
            }
        }
        Ok(Self { arch: arch.clone(), stem, pool: MaxPool2d { kernel: 3, stride: 2, pad: 1 }, blocks })
    }

    pub fn arch(&self) -> &BackboneArch {
        &self.arch
    }

    /// Last feature map `[C, n, h, w]`, before pooling.
    pub fn forward_eval(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut h = self.stem.forward_eval(store, x);
        h.relu_inplace();
        let (mut h, _) = self.pool.forward(&h);
        for b in &self.blocks {
            h = b.forward_eval(store, &h);
        }
        h
    }

    pub fn forward_train(&self, store: &mut ParamStore, x: &Tensor) -> (Tensor, ResNetCache) {
        let (mut s, stem) = self.stem.forward_train(store, x);
        s.relu_inplace();
        let (mut h, pool) = self.pool.forward(&s);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_train(store, &h);
            caches.push(c);
            h = y;
        }
        (h, ResNetCache { stem, stem_out: s, pool, blocks: caches })
    }

    /// Accumulates parameter gradients; the input gradient is not needed.
    pub fn backward(&self, store: &ParamStore, cache: &ResNetCache, d_features: &Tensor, grads: &mut Grads) {
        let mut d = d_features.clone();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = b.backward(store, c, &d, grads);
        }
        let mut d = self.pool.backward(&cache.pool, &d);
        Tensor::relu_backward_inplace(&mut d, &cache.stem_out);
        self.stem.backward(store, &cache.stem, &d, grads, false);
    }
}
