//! Layer implementations: convolution (im2col + GEMM), pooling, dense,
//! activations and the composite blocks (sequential, residual, multi-branch).

use rayon::prelude::*;

use super::tensor::Tensor;
use super::{gemm, Param};
use crate::rng::SplitMix64;

pub trait Layer: Send {
    /// Run the layer on an NCHW batch. `train` enables activation caching
    /// for a subsequent `backward` call.
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor;

    /// Consume the gradient w.r.t. this layer's output, accumulate parameter
    /// gradients, and return the gradient w.r.t. the input.
    fn backward(&mut self, dy: &Tensor) -> Tensor;

    fn for_each_param(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    fn for_each_param_ref(&self, _f: &mut dyn FnMut(&Param)) {}
}

fn he_normal(rng: &mut SplitMix64, len: usize, fan_in: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..len).map(|_| (rng.next_gaussian() * std) as f32).collect()
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

pub struct Conv2d {
    pub weight: Param, // [out_ch, in_ch, k, k]
    pub bias: Param,   // [out_ch]
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_ch, in_ch, kernel, kernel],
            he_normal(rng, out_ch * fan_in, fan_in),
        );
        let bias = Param::new(format!("{name}.bias"), vec![out_ch], vec![0.0; out_ch]);
        Conv2d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            cached_input: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    /// Unfold one (c, h, w) sample into a [in_ch*k*k, oh*ow] column matrix.
    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f32]) {
        let k = self.kernel;
        let (s, p) = (self.stride, self.pad);
        for ic in 0..self.in_ch {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ic * k + ki) * k + kj) * oh * ow;
                    for out_r in 0..oh {
                        let ih = (out_r * s + ki) as isize - p as isize;
                        let base = row + out_r * ow;
                        if ih < 0 || ih >= h as isize {
                            cols[base..base + ow].fill(0.0);
                            continue;
                        }
                        let in_row = (ic * h + ih as usize) * w;
                        for out_c in 0..ow {
                            let iw = (out_c * s + kj) as isize - p as isize;
                            cols[base + out_c] = if iw < 0 || iw >= w as isize {
                                0.0
                            } else {
                                x[in_row + iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Fold a column-matrix gradient back onto one input sample (scatter-add).
    fn col2im(&self, cols: &[f32], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f32]) {
        let k = self.kernel;
        let (s, p) = (self.stride, self.pad);
        for ic in 0..self.in_ch {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ic * k + ki) * k + kj) * oh * ow;
                    for out_r in 0..oh {
                        let ih = (out_r * s + ki) as isize - p as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let in_row = (ic * h + ih as usize) * w;
                        let base = row + out_r * ow;
                        for out_c in 0..ow {
                            let iw = (out_c * s + kj) as isize - p as isize;
                            if iw >= 0 && iw < w as isize {
                                dx[in_row + iw as usize] += cols[base + out_c];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv {}: channel mismatch", self.weight.name);
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor::zeros(x.n, self.out_ch, oh, ow);
        let ckk = self.in_ch * self.kernel * self.kernel;
        let spatial = oh * ow;
        let out_len = out.sample_len();
        out.data
            .par_chunks_mut(out_len)
            .enumerate()
            .for_each(|(i, out_s)| {
                let mut cols = vec![0.0f32; ckk * spatial];
                self.im2col(x.sample(i), x.h, x.w, oh, ow, &mut cols);
                gemm(self.out_ch, ckk, spatial, &self.weight.data, &cols, out_s);
                for oc in 0..self.out_ch {
                    let b = self.bias.data[oc];
                    for v in &mut out_s[oc * spatial..(oc + 1) * spatial] {
                        *v += b;
                    }
                }
            });
        if train {
            self.cached_input = Some(x.clone());
        }
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .take()
            .expect("conv backward without forward");
        let (oh, ow) = (dy.h, dy.w);
        let ckk = self.in_ch * self.kernel * self.kernel;
        let spatial = oh * ow;

        // Per-sample weight-gradient partials, reduced in fixed order.
        let partials: Vec<Vec<f32>> = (0..x.n)
            .into_par_iter()
            .map(|i| {
                let mut cols = vec![0.0f32; ckk * spatial];
                self.im2col(x.sample(i), x.h, x.w, oh, ow, &mut cols);
                let mut dw = vec![0.0f32; self.out_ch * ckk];
                // dW = dY_s [oc, spatial] x cols^T [spatial, ckk]
                unsafe {
                    matrixmultiply::sgemm(
                        self.out_ch,
                        spatial,
                        ckk,
                        1.0,
                        dy.sample(i).as_ptr(),
                        spatial as isize,
                        1,
                        cols.as_ptr(),
                        1,
                        spatial as isize,
                        0.0,
                        dw.as_mut_ptr(),
                        ckk as isize,
                        1,
                    );
                }
                dw
            })
            .collect();
        for dw in &partials {
            for (g, d) in self.weight.grad.iter_mut().zip(dw) {
                *g += d;
            }
        }
        for i in 0..x.n {
            let dy_s = dy.sample(i);
            for oc in 0..self.out_ch {
                self.bias.grad[oc] += dy_s[oc * spatial..(oc + 1) * spatial].iter().sum::<f32>();
            }
        }

        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let dx_len = dx.sample_len();
        let (h, w) = (x.h, x.w);
        dx.data
            .par_chunks_mut(dx_len)
            .enumerate()
            .for_each(|(i, dx_s)| {
                // dcols = W^T [ckk, oc] x dY_s [oc, spatial]
                let mut dcols = vec![0.0f32; ckk * spatial];
                unsafe {
                    matrixmultiply::sgemm(
                        ckk,
                        self.out_ch,
                        spatial,
                        1.0,
                        self.weight.data.as_ptr(),
                        1,
                        ckk as isize,
                        dy.sample(i).as_ptr(),
                        spatial as isize,
                        1,
                        0.0,
                        dcols.as_mut_ptr(),
                        spatial as isize,
                        1,
                    );
                }
                self.col2im(&dcols, h, w, oh, ow, dx_s);
            });
        dx
    }

    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn for_each_param_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// 2x2 max pooling with stride 2 (floor semantics: trailing row/column that
/// does not fill a window is dropped).
#[derive(Default)]
pub struct MaxPool2 {
    cached: Option<([usize; 4], Vec<u32>)>, // input shape + argmax per output element
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2::default()
    }
}

impl Layer for MaxPool2 {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        let mut argmax = vec![0u32; out.data.len()];
        let out_len = out.sample_len();
        out.data
            .par_chunks_mut(out_len)
            .zip(argmax.par_chunks_mut(out_len))
            .enumerate()
            .for_each(|(i, (out_s, arg_s))| {
                let xs = x.sample(i);
                for c in 0..x.c {
                    for r in 0..oh {
                        for q in 0..ow {
                            let mut best = f32::NEG_INFINITY;
                            let mut best_idx = 0usize;
                            for dr in 0..2 {
                                for dq in 0..2 {
                                    let idx = (c * x.h + r * 2 + dr) * x.w + q * 2 + dq;
                                    if xs[idx] > best {
                                        best = xs[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            let o = (c * oh + r) * ow + q;
                            out_s[o] = best;
                            arg_s[o] = best_idx as u32;
                        }
                    }
                }
            });
        if train {
            self.cached = Some(([x.n, x.c, x.h, x.w], argmax));
        }
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let ([n, c, h, w], argmax) = self.cached.take().expect("pool backward without forward");
        let mut dx = Tensor::zeros(n, c, h, w);
        let out_len = dy.sample_len();
        let dx_len = dx.sample_len();
        dx.data
            .par_chunks_mut(dx_len)
            .enumerate()
            .for_each(|(i, dx_s)| {
                let dy_s = dy.sample(i);
                let arg_s = &argmax[i * out_len..(i + 1) * out_len];
                for (o, &src) in arg_s.iter().enumerate() {
                    dx_s[src as usize] += dy_s[o];
                }
            });
        dx
    }
}

/// Global average pooling: (n, c, h, w) -> (n, c, 1, 1).
#[derive(Default)]
pub struct GlobalAvgPool {
    cached_hw: Option<(usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let area = (x.h * x.w) as f32;
        let mut out = Tensor::zeros(x.n, x.c, 1, 1);
        for i in 0..x.n {
            let xs = x.sample(i);
            let os = out.sample_mut(i);
            for (c, o) in os.iter_mut().enumerate() {
                *o = xs[c * x.h * x.w..(c + 1) * x.h * x.w].iter().sum::<f32>() / area;
            }
        }
        if train {
            self.cached_hw = Some((x.h, x.w));
        }
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (h, w) = self.cached_hw.take().expect("gap backward without forward");
        let area = (h * w) as f32;
        let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
        for i in 0..dy.n {
            let dy_s = dy.sample(i);
            let dx_s = dx.sample_mut(i);
            for c in 0..dy.c {
                let g = dy_s[c] / area;
                dx_s[c * h * w..(c + 1) * h * w].fill(g);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Fully connected layer on (n, c, 1, 1) feature vectors.
pub struct Dense {
    pub weight: Param, // [out, in]
    pub bias: Param,   // [out]
    in_dim: usize,
    out_dim: usize,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        Dense {
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_dim, in_dim],
                he_normal(rng, out_dim * in_dim, in_dim),
            ),
            bias: Param::new(format!("{name}.bias"), vec![out_dim], vec![0.0; out_dim]),
            in_dim,
            out_dim,
            cached_input: None,
        }
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.in_dim, "dense {}: input dim mismatch", self.weight.name);
        assert_eq!(x.h * x.w, 1, "dense expects (n, c, 1, 1) input");
        let mut out = Tensor::zeros(x.n, self.out_dim, 1, 1);
        // Y [n, out] = X [n, in] x W^T [in, out]
        unsafe {
            matrixmultiply::sgemm(
                x.n,
                self.in_dim,
                self.out_dim,
                1.0,
                x.data.as_ptr(),
                self.in_dim as isize,
                1,
                self.weight.data.as_ptr(),
                1,
                self.in_dim as isize,
                0.0,
                out.data.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
        for i in 0..x.n {
            for (o, b) in out.sample_mut(i).iter_mut().zip(&self.bias.data) {
                *o += *b;
            }
        }
        if train {
            self.cached_input = Some(x.clone());
        }
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .take()
            .expect("dense backward without forward");
        // dW [out, in] += dY^T [out, n] x X [n, in]
        unsafe {
            matrixmultiply::sgemm(
                self.out_dim,
                x.n,
                self.in_dim,
                1.0,
                dy.data.as_ptr(),
                1,
                self.out_dim as isize,
                x.data.as_ptr(),
                self.in_dim as isize,
                1,
                1.0,
                self.weight.grad.as_mut_ptr(),
                self.in_dim as isize,
                1,
            );
        }
        for i in 0..dy.n {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.sample(i)) {
                *g += *d;
            }
        }
        // dX [n, in] = dY [n, out] x W [out, in]
        let mut dx = Tensor::zeros(x.n, self.in_dim, 1, 1);
        gemm(x.n, self.out_dim, self.in_dim, &dy.data, &self.weight.data, &mut dx.data);
        dx
    }

    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn for_each_param_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct ReLU {
    cached_output: Option<Tensor>,
}

impl ReLU {
    pub fn new() -> Self {
        ReLU::default()
    }
}

impl Layer for ReLU {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        if train {
            self.cached_output = Some(out.clone());
        }
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self
            .cached_output
            .take()
            .expect("relu backward without forward");
        let mut dx = dy.clone();
        for (g, v) in dx.data.iter_mut().zip(&y.data) {
            if *v <= 0.0 {
                *g = 0.0;
            }
        }
        dx
    }
}

/// SiLU (swish): x * sigmoid(x).
#[derive(Default)]
pub struct SiLU {
    cached_input: Option<Tensor>,
}

impl SiLU {
    pub fn new() -> Self {
        SiLU::default()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Layer for SiLU {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| *v *= sigmoid(*v));
        if train {
            self.cached_input = Some(x.clone());
        }
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .take()
            .expect("silu backward without forward");
        let mut dx = dy.clone();
        for (g, v) in dx.data.iter_mut().zip(&x.data) {
            let s = sigmoid(*v);
            *g *= s + *v * s * (1.0 - s);
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Composite blocks
// ---------------------------------------------------------------------------

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Sequential { layers }
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut cur = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.for_each_param(f);
        }
    }

    fn for_each_param_ref(&self, f: &mut dyn FnMut(&Param)) {
        for layer in &self.layers {
            layer.for_each_param_ref(f);
        }
    }
}

/// y = main(x) + shortcut(x), with an identity shortcut when none is given.
/// Used by the residual-family backbone.
pub struct Residual {
    pub main: Sequential,
    pub shortcut: Option<Sequential>,
}

impl Residual {
    pub fn new(main: Sequential, shortcut: Option<Sequential>) -> Self {
        Residual { main, shortcut }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = self.main.forward(x, train);
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x, train),
            None => x.clone(),
        };
        assert!(out.same_shape(&skip), "residual branch shape mismatch");
        for (o, s) in out.data.iter_mut().zip(&skip.data) {
            *o += *s;
        }
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = self.main.backward(dy);
        let skip_grad = match &mut self.shortcut {
            Some(s) => s.backward(dy),
            None => dy.clone(),
        };
        for (g, s) in dx.data.iter_mut().zip(&skip_grad.data) {
            *g += *s;
        }
        dx
    }

    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.main.for_each_param(f);
        if let Some(s) = &mut self.shortcut {
            s.for_each_param(f);
        }
    }

    fn for_each_param_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.main.for_each_param_ref(f);
        if let Some(s) = &self.shortcut {
            s.for_each_param_ref(f);
        }
    }
}

/// Parallel branches over the same input, concatenated along channels.
/// Used by the multi-branch (inception-family) backbone.
pub struct MultiBranch {
    pub branches: Vec<Sequential>,
    cached_channels: Vec<usize>,
}

impl MultiBranch {
    pub fn new(branches: Vec<Sequential>) -> Self {
        MultiBranch {
            branches,
            cached_channels: Vec::new(),
        }
    }
}

impl Layer for MultiBranch {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let outs: Vec<Tensor> = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x, train))
            .collect();
        let (h, w) = (outs[0].h, outs[0].w);
        assert!(outs.iter().all(|o| o.h == h && o.w == w), "branch spatial mismatch");
        let total_c: usize = outs.iter().map(|o| o.c).sum();
        let mut out = Tensor::zeros(x.n, total_c, h, w);
        for i in 0..x.n {
            let os = out.sample_mut(i);
            let mut offset = 0;
            for branch_out in &outs {
                let len = branch_out.sample_len();
                os[offset..offset + len].copy_from_slice(branch_out.sample(i));
                offset += len;
            }
        }
        self.cached_channels = outs.iter().map(|o| o.c).collect();
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (h, w) = (dy.h, dy.w);
        let mut dx: Option<Tensor> = None;
        let mut channel_offset = 0;
        for (branch, &bc) in self.branches.iter_mut().zip(&self.cached_channels) {
            let mut branch_dy = Tensor::zeros(dy.n, bc, h, w);
            for i in 0..dy.n {
                let src = dy.sample(i);
                let start = channel_offset * h * w;
                branch_dy
                    .sample_mut(i)
                    .copy_from_slice(&src[start..start + bc * h * w]);
            }
            let branch_dx = branch.backward(&branch_dy);
            match &mut dx {
                None => dx = Some(branch_dx),
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(&branch_dx.data) {
                        *a += *b;
                    }
                }
            }
            channel_offset += bc;
        }
        dx.expect("multibranch has no branches")
    }

    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.branches {
            b.for_each_param(f);
        }
    }

    fn for_each_param_ref(&self, f: &mut dyn FnMut(&Param)) {
        for b in &self.branches {
            b.for_each_param_ref(f);
        }
    }
}
