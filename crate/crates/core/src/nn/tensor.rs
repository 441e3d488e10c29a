use crate::imaging::ImageF32;

/// Batch of feature maps stored as `[c][n][h][w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![0.0; c * n * h * w] }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "tensor shape does not match buffer");
        Self { c, n, h, w, data }
    }

    /// Stacks same-sized grayscale images into a batch, replicating the
    /// luminance plane across `channels`.
    pub fn from_images<'a, I>(images: I, channels: usize) -> Self
    where
        I: IntoIterator<Item = &'a ImageF32>,
    {
        let images: Vec<&ImageF32> = images.into_iter().collect();
        assert!(!images.is_empty(), "empty image batch");
        let (w, h) = (images[0].width(), images[0].height());
        let n = images.len();
        let plane = h * w;
        let mut data = vec![0.0; channels * n * plane];
        for (b, img) in images.iter().enumerate() {
            assert!(img.width() == w && img.height() == h, "mixed image sizes in batch");
            for c in 0..channels {
                let off = (c * n + b) * plane;
                data[off..off + plane].copy_from_slice(img.data());
            }
        }
        Self { c: channels, n, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.n, self.h, self.w]
    }

    /// Elements per channel (`n * h * w`).
    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    /// The `h x w` map of channel `c`, sample `b`.
    pub fn map(&self, c: usize, b: usize) -> &[f32] {
        let hw = self.h * self.w;
        let off = (c * self.n + b) * hw;
        &self.data[off..off + hw]
    }

    pub fn map_mut(&mut self, c: usize, b: usize) -> &mut [f32] {
        let hw = self.h * self.w;
        let off = (c * self.n + b) * hw;
        &mut self.data[off..off + hw]
    }

    pub fn relu_inplace(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Zeroes `grad` wherever the forward ReLU output was clamped.
    pub fn relu_backward_inplace(grad: &mut Tensor, output: &Tensor) {
        debug_assert_eq!(grad.data.len(), output.data.len());
        for (g, &y) in grad.data.iter_mut().zip(&output.data) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
    }

    pub fn add_inplace(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Selects batch entries `idx` into a new tensor.
    pub fn select_batch(&self, idx: &[usize]) -> Tensor {
        let hw = self.h * self.w;
        let mut out = Tensor::zeros(self.c, idx.len(), self.h, self.w);
        for c in 0..self.c {
            for (nb, &b) in idx.iter().enumerate() {
                let src = (c * self.n + b) * hw;
                let dst = (c * idx.len() + nb) * hw;
                out.data[dst..dst + hw].copy_from_slice(&self.data[src..src + hw]);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
