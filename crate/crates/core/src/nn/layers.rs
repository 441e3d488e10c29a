use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

/// `c = a * b (+ c)` for row-major operands; `a` is `m x k` (stored `k x m` when
/// `a_t`), `b` is `k x n` (stored `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds asserted above; strides describe dense row-major buffers.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// 2-D convolution, square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Kaiming-normal (fan-out, ReLU gain) initialised convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_out = (cout * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_out).sqrt()).expect("finite std");
        let w: Vec<f32> = (0..cout * cin * kernel * kernel).map(|_| normal.sample(rng) as f32).collect();
        let weight = store.add(format!("{name}.weight"), vec![cout, cin, kernel, kernel], true, w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), vec![cout], true, vec![0.0; cout]));
        Self { weight, bias, cin, cout, kernel, stride, pad }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (out_size(h, self.kernel, self.stride, self.pad), out_size(w, self.kernel, self.stride, self.pad))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &Tensor, ho: usize, wo: usize) -> Vec<f32> {
        let k = self.kernel;
        let cols_w = x.n * ho * wo;
        let mut cols = vec![0.0f32; self.cin * k * k * cols_w];
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst_row = &mut cols[row * cols_w..(row + 1) * cols_w];
                    let (lo, hi) = valid_range(x.w, wo, kx, self.stride, self.pad);
                    for b in 0..x.n {
                        let src = x.map(ci, b);
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize || lo >= hi {
                                continue;
                            }
                            let src_row = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                            let dst = &mut dst_row[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            if self.stride == 1 {
                                let ix0 = lo + kx - self.pad;
                                dst[lo..hi].copy_from_slice(&src_row[ix0..ix0 + (hi - lo)]);
                            } else {
                                for ox in lo..hi {
                                    dst[ox] = src_row[ox * self.stride + kx - self.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Tensor {
        let k = self.kernel;
        let cols_w = n * ho * wo;
        let mut dx = Tensor::zeros(self.cin, n, h, w);
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src_row = &cols[row * cols_w..(row + 1) * cols_w];
                    let (lo, hi) = valid_range(w, wo, kx, self.stride, self.pad);
                    for b in 0..n {
                        let dst = dx.map_mut(ci, b);
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                            let src = &src_row[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            for ox in lo..hi {
                                dst_row[ox * self.stride + kx - self.pad] += src[ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = self.output_hw(x.h, x.w);
        let mut out = Tensor::zeros(self.cout, x.n, ho, wo);
        let ckk = self.cin * self.kernel * self.kernel;
        let plane = x.n * ho * wo;
        let w = store.get(self.weight);
        if self.is_pointwise() {
            gemm(self.cout, ckk, plane, w, false, &x.data, false, &mut out.data, false);
        } else {
            let cols = self.im2col(x, ho, wo);
            gemm(self.cout, ckk, plane, w, false, &cols, false, &mut out.data, false);
        }
        if let Some(b) = self.bias {
            for (co, &bv) in store.get(b).iter().enumerate() {
                out.data[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut Grads,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let (ho, wo) = (dy.h, dy.w);
        let ckk = self.cin * self.kernel * self.kernel;
        let plane = x.n * ho * wo;
        let cols_owned;
        let cols: &[f32] = if self.is_pointwise() {
            &x.data
        } else {
            cols_owned = self.im2col(x, ho, wo);
            &cols_owned
        };
        gemm(self.cout, plane, ckk, &dy.data, false, cols, true, grads.get_mut(self.weight), true);
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b);
            for (co, g) in gb.iter_mut().enumerate() {
                *g += dy.data[co * plane..(co + 1) * plane].iter().sum::<f32>();
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![0.0f32; ckk * plane];
        gemm(ckk, self.cout, plane, store.get(self.weight), true, &dy.data, false, &mut dcols, false);
        if self.is_pointwise() {
            Some(Tensor::from_vec(self.cin, x.n, x.h, x.w, dcols))
        } else {
            Some(self.col2im(&dcols, x.n, x.h, x.w, ho, wo))
        }
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad` is in range.
fn valid_range(w: usize, wo: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // largest ox with ox*stride + kx - pad <= w - 1
    let limit = w as isize - 1 + pad as isize - kx as isize;
    let hi = if limit < 0 { 0 } else { (limit as usize / stride + 1).min(wo) };
    (lo.min(hi), hi)
}

/// Per-channel batch normalisation with running statistics for inference.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), vec![channels], true, vec![1.0; channels]),
            beta: store.add(format!("{name}.beta"), vec![channels], true, vec![0.0; channels]),
            running_mean: store.add(format!("{name}.running_mean"), vec![channels], false, vec![0.0; channels]),
            running_var: store.add(format!("{name}.running_var"), vec![channels], false, vec![1.0; channels]),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_eval(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let plane = x.plane();
        let (g, b) = (store.get(self.gamma), store.get(self.beta));
        let (rm, rv) = (store.get(self.running_mean), store.get(self.running_var));
        let mut out = x.clone();
        for c in 0..self.channels {
            let scale = g[c] / (rv[c] + self.eps).sqrt();
            let shift = b[c] - rm[c] * scale;
            out.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        out
    }

    /// Normalises with batch statistics and updates the running estimates.
    pub fn forward_train(&self, store: &mut ParamStore, x: &Tensor) -> (Tensor, BnCache) {
        let plane = x.plane();
        let mut xhat = x.clone();
        let mut inv_std = vec![0.0f32; self.channels];
        let mut means = vec![0.0f32; self.channels];
        let mut vars = vec![0.0f32; self.channels];
        for c in 0..self.channels {
            let chan = &mut xhat.data[c * plane..(c + 1) * plane];
            let mean = chan.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = chan.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
            let istd = 1.0 / (var + self.eps as f64).sqrt();
            chan.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * istd) as f32);
            inv_std[c] = istd as f32;
            means[c] = mean as f32;
            vars[c] = if plane > 1 { (var * plane as f64 / (plane - 1) as f64) as f32 } else { var as f32 };
        }
        let m = self.momentum;
        for (r, &v) in store.get_mut(self.running_mean).iter_mut().zip(&means) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, &v) in store.get_mut(self.running_var).iter_mut().zip(&vars) {
            *r = (1.0 - m) * *r + m * v;
        }
        let (g, b) = (store.get(self.gamma), store.get(self.beta));
        let mut out = xhat.clone();
        for c in 0..self.channels {
            out.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = *v * g[c] + b[c]);
        }
        (out, BnCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &ParamStore, cache: &BnCache, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let plane = dy.plane();
        let mf = plane as f32;
        let gamma = store.get(self.gamma).to_vec();
        let mut dx = dy.clone();
        let mut dgamma = vec![0.0f32; self.channels];
        let mut dbeta = vec![0.0f32; self.channels];
        for c in 0..self.channels {
            let dyc = &dy.data[c * plane..(c + 1) * plane];
            let xh = &cache.xhat.data[c * plane..(c + 1) * plane];
            let sum_dy: f32 = dyc.iter().sum();
            let sum_dy_xh: f32 = dyc.iter().zip(xh).map(|(a, b)| a * b).sum();
            dgamma[c] = sum_dy_xh;
            dbeta[c] = sum_dy;
            let k = gamma[c] * cache.inv_std[c] / mf;
            let dxc = &mut dx.data[c * plane..(c + 1) * plane];
            for i in 0..plane {
                dxc[i] = k * (mf * dyc[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
        grads.get_mut(self.gamma).iter_mut().zip(&dgamma).for_each(|(g, d)| *g += d);
        grads.get_mut(self.beta).iter_mut().zip(&dbeta).for_each(|(g, d)| *g += d);
        dx
    }
}

/// Max pooling with square window.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    argmax: Vec<u32>,
    in_shape: [usize; 4],
}

impl MaxPool2d {
    pub fn forward(&self, x: &Tensor) -> (Tensor, PoolCache) {
        let ho = out_size(x.h, self.kernel, self.stride, self.pad);
        let wo = out_size(x.w, self.kernel, self.stride, self.pad);
        let mut out = Tensor::zeros(x.c, x.n, ho, wo);
        let mut argmax = vec![0u32; out.data.len()];
        let mut o = 0;
        for c in 0..x.c {
            for b in 0..x.n {
                let src = x.map(c, b);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_i = 0usize;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let i = iy as usize * x.w + ix as usize;
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                        out.data[o] = best;
                        argmax[o] = best_i as u32;
                        o += 1;
                    }
                }
            }
        }
        (out, PoolCache { argmax, in_shape: x.shape() })
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Tensor) -> Tensor {
        let [c, n, h, w] = cache.in_shape;
        let mut dx = Tensor::zeros(c, n, h, w);
        let hw_out = dy.h * dy.w;
        for ci in 0..c {
            for b in 0..n {
                let g = dy.map(ci, b);
                let idx = &cache.argmax[(ci * n + b) * hw_out..(ci * n + b + 1) * hw_out];
                let dst = dx.map_mut(ci, b);
                for (gv, &i) in g.iter().zip(idx) {
                    dst[i as usize] += gv;
                }
            }
        }
        dx
    }
}

/// Spatial mean of each map: `[c, n, h, w] -> [c, n, 1, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalAvgPool;

impl GlobalAvgPool {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let hw = (x.h * x.w) as f32;
        let data = x.data.chunks(x.h * x.w).map(|m| m.iter().sum::<f32>() / hw).collect();
        Tensor::from_vec(x.c, x.n, 1, 1, data)
    }

    pub fn backward(&self, dy: &Tensor, h: usize, w: usize) -> Tensor {
        let hw = h * w;
        let mut dx = Tensor::zeros(dy.c, dy.n, h, w);
        for (chunk, &g) in dx.data.chunks_mut(hw).zip(&dy.data) {
            chunk.iter_mut().for_each(|v| *v = g / hw as f32);
        }
        dx
    }
}

/// Fully connected layer over `[cin, n]` features.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cin as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let w: Vec<f32> = (0..cout * cin).map(|_| dist.sample(rng) as f32).collect();
        let b: Vec<f32> = (0..cout).map(|_| dist.sample(rng) as f32).collect();
        Self {
            weight: store.add(format!("{name}.weight"), vec![cout, cin], true, w),
            bias: store.add(format!("{name}.bias"), vec![cout], true, b),
            cin,
            cout,
        }
    }

    /// Re-draws weights and bias in place.
    pub fn reset<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let bound = 1.0 / (self.cin as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        store.get_mut(self.weight).iter_mut().for_each(|v| *v = dist.sample(rng) as f32);
        store.get_mut(self.bias).iter_mut().for_each(|v| *v = dist.sample(rng) as f32);
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        assert_eq!(x.c * x.h * x.w, self.cin, "linear input width");
        let n = x.n;
        let mut out = Tensor::zeros(self.cout, n, 1, 1);
        gemm(self.cout, self.cin, n, store.get(self.weight), false, &x.data, false, &mut out.data, false);
        for (o, &b) in store.get(self.bias).iter().enumerate() {
            out.data[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += b);
        }
        out
    }

    pub fn backward(&self, store: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let n = x.n;
        gemm(self.cout, n, self.cin, &dy.data, false, &x.data, true, grads.get_mut(self.weight), true);
        for (o, g) in grads.get_mut(self.bias).iter_mut().enumerate() {
            *g += dy.data[o * n..(o + 1) * n].iter().sum::<f32>();
        }
        let mut dx = Tensor::zeros(self.cin, n, 1, 1);
        gemm(self.cin, self.cout, n, store.get(self.weight), true, &dy.data, false, &mut dx.data, false);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, n: usize, h: usize, w: usize) -> Tensor {
        let d = Normal::new(0.0, 1.0).unwrap();
        Tensor::from_vec(c, n, h, w, (0..c * n * h * w).map(|_| d.sample(rng) as f32).collect())
    }

    /// Direct-summation convolution used as an oracle for the im2col path.
    fn naive_conv(conv: &Conv2d, store: &ParamStore, x: &Tensor) -> Tensor {
        let (ho, wo) = conv.output_hw(x.h, x.w);
        let w = store.get(conv.weight);
        let k = conv.kernel;
        let mut out = Tensor::zeros(conv.cout, x.n, ho, wo);
        for co in 0..conv.cout {
            for b in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.map(|id| store.get(id)[co]).unwrap_or(0.0) as f64;
                        for ci in 0..conv.cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.map(ci, b)[iy as usize * x.w + ix as usize];
                                    acc += (w[((co * conv.cin + ci) * k + ky) * k + kx] * xv) as f64;
                                }
                            }
                        }
                        out.map_mut(co, b)[oy * wo + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (7, 2, 3), (1, 2, 0), (1, 1, 0)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 3, 4, k, s, p, true, &mut rng);
            store.get_mut(conv.bias.unwrap()).copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
            let x = random_tensor(&mut rng, 3, 2, 9, 7);
            let fast = conv.forward(&store, &x);
            let slow = naive_conv(&conv, &store, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-4, "k={k} s={s} p={p}: {a} vs {b}");
            }
        }
    }

    /// Scalar objective `sum(r * f(x))` with a fixed random `r`; its gradient
    /// w.r.t. inputs/params is what `backward(r)` must return.
    fn check_grad<F>(label: &str, x: &Tensor, f: F, analytic: &Tensor)
    where
        F: Fn(&Tensor) -> f64,
    {
        let h = 1e-2f32;
        for i in (0..x.data.len()).step_by((x.data.len() / 17).max(1)) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h as f64);
            let ana = analytic.data[i] as f64;
            assert!((num - ana).abs() <= 2e-2 * (1.0 + num.abs()), "{label} grad[{i}]: numeric {num} analytic {ana}");
        }
    }

    fn dot(a: &Tensor, r: &Tensor) -> f64 {
        a.data.iter().zip(&r.data).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 2, 3, k, s, p, true, &mut rng);
            let x = random_tensor(&mut rng, 2, 2, 6, 5);
            let y = conv.forward(&store, &x);
            let r = random_tensor(&mut rng, y.c, y.n, y.h, y.w);
            let mut grads = store.zero_grads();
            let dx = conv.backward(&store, &x, &r, &mut grads, true).unwrap();
            check_grad("conv dx", &x, |xx| dot(&conv.forward(&store, xx), &r), &dx);
            let w0 = Tensor::from_vec(1, 1, 1, store.get(conv.weight).len(), store.get(conv.weight).to_vec());
            let gw = Tensor::from_vec(1, 1, 1, w0.data.len(), grads.get(conv.weight).to_vec());
            check_grad(
                "conv dw",
                &w0,
                |ww| {
                    let mut st = store.clone();
                    st.get_mut(conv.weight).copy_from_slice(&ww.data);
                    dot(&conv.forward(&st, &x), &r)
                },
                &gw,
            );
        }
    }

    #[test]
    fn batchnorm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        store.get_mut(bn.gamma).copy_from_slice(&[1.5, 0.7]);
        let x = random_tensor(&mut rng, 2, 3, 3, 3);
        let (y, cache) = bn.forward_train(&mut store.clone(), &x);
        let r = random_tensor(&mut rng, y.c, y.n, y.h, y.w);
        let mut grads = store.zero_grads();
        let dx = bn.backward(&store, &cache, &r, &mut grads);
        check_grad("bn dx", &x, |xx| dot(&bn.forward_train(&mut store.clone(), xx).0, &r), &dx);
    }

    #[test]
    fn linear_and_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let fc = Linear::new(&mut store, "fc", 4, 3, &mut rng);
        let x = random_tensor(&mut rng, 4, 2, 1, 1);
        let r = random_tensor(&mut rng, 3, 2, 1, 1);
        let mut grads = store.zero_grads();
        let dx = fc.backward(&store, &x, &r, &mut grads);
        check_grad("fc dx", &x, |xx| dot(&fc.forward(&store, xx), &r), &dx);

        let pool = MaxPool2d { kernel: 3, stride: 2, pad: 1 };
        let x = random_tensor(&mut rng, 2, 2, 7, 7);
        let (y, cache) = pool.forward(&x);
        let r = random_tensor(&mut rng, y.c, y.n, y.h, y.w);
        let dx = pool.backward(&cache, &r);
        check_grad("pool dx", &x, |xx| dot(&pool.forward(xx).0, &r), &dx);

        let gap = GlobalAvgPool;
        let y = gap.forward(&x);
        let r = random_tensor(&mut rng, y.c, y.n, 1, 1);
        let dx = gap.backward(&r, x.h, x.w);
        check_grad("gap dx", &x, |xx| dot(&gap.forward(xx), &r), &dx);
    }

    #[test]
    fn valid_range_covers_in_bounds_columns() {
        for w in 1..9 {
            for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (7, 2, 3), (1, 2, 0)] {
                let wo = out_size(w, k, s, p);
                for kx in 0..k {
                    let (lo, hi) = valid_range(w, wo, kx, s, p);
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p as isize;
                        let inside = ix >= 0 && ix < w as isize;
                        assert_eq!(inside, ox >= lo && ox < hi, "w={w} k={k} s={s} p={p} kx={kx} ox={ox}");
                    }
                }
            }
        }
    }
}
