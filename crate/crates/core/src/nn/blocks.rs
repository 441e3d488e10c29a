use rand::Rng;

use super::layers::{BatchNorm2d, BnCache, Conv2d};
use super::params::{Grads, ParamStore};
use super::tensor::Tensor;

/// Bias-free convolution followed by batch normalisation.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

#[derive(Debug, Clone)]
pub struct ConvBnCache {
    input: Tensor,
    bn: BnCache,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), cin, cout, kernel, stride, pad, false, rng);
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), cout);
        Self { conv, bn }
    }

    pub fn forward_eval(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        self.bn.forward_eval(store, &self.conv.forward(store, x))
    }

    pub fn forward_train(&self, store: &mut ParamStore, x: &Tensor) -> (Tensor, ConvBnCache) {
        let y = self.conv.forward(store, x);
        let (out, bn) = self.bn.forward_train(store, &y);
        (out, ConvBnCache { input: x.clone(), bn })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &ConvBnCache,
        dy: &Tensor,
        grads: &mut Grads,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let dconv = self.bn.backward(store, &cache.bn, dy, grads);
        self.conv.backward(store, &cache.input, &dconv, grads, need_input_grad)
    }
}
