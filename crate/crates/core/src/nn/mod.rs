//! Compute backend: a small, deterministic CNN engine.
//!
//! Layers own their parameters and activation caches; `forward` runs the
//! layer on an NCHW batch, `backward` consumes the output gradient and
//! returns the input gradient while accumulating parameter gradients.
//! Everything is single-threaded GEMM plus rayon over samples with
//! fixed-order reductions, so identical inputs produce bitwise-identical
//! outputs run to run.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use layers::{
    Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2, MultiBranch, ReLU, Residual, Sequential, SiLU,
};
pub use optim::Adam;
pub use tensor::Tensor;

/// A named, trainable parameter tensor with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(data.len(), len, "param data length mismatch");
        Param {
            name: name.into(),
            shape,
            grad: vec![0.0; len],
            data,
            trainable: true,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Row-major C[m,n] = A[m,k] * B[k,n].
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// FNV-1a 64 over the little-endian bytes of the given f32 slices, in order.
/// Used as the parameter/checkpoint checksum.
pub fn fnv1a64_f32(chunks: impl IntoIterator<Item = impl AsRef<[f32]>>) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for chunk in chunks {
        for v in chunk.as_ref() {
            for byte in v.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
    }
    hash
}
