//! Minimal CPU tensor engine with explicit reverse passes.
//!
//! Feature maps use a channel-major batch layout `[C, B, H, W]` so that a
//! convolution over the whole batch is a single GEMM against an im2col
//! buffer. Vector activations are row-major `[B, F]` matrices.
//!
//! Everything is generic over [`Scalar`] so the same network runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod attention;
mod conv;
mod linear;
mod norm;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use attention::{Attention, AttentionCache};
pub use conv::{Conv2d, ConvCache};
pub use linear::{Linear, LinearCache};
pub use norm::{LayerNorm, NormCache};

use crate::rng::Rng;

pub trait Scalar:
    num_traits::Float + Default + Debug + Send + Sync + core::iter::Sum + core::ops::AddAssign + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// Row-major `C = alpha * A * B + beta * C` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline(always)]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline(always)]
            fn f64(self) -> f64 {
                self as f64
            }

            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every index the kernel
                // touches for the dense strides used by `gemm`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
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
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major `C[m, n] = op(A) op(B) (+ C when accumulate)`, where
/// `op(A)` is `[m, k]` and `op(B)` is `[k, n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_strided(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c);
}

/// Feature map in `[C, B, H, W]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            b,
            h,
            w,
            data: vec![T::zero(); c * b * h * w],
        }
    }

    #[inline]
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Slice of channel `c` for batch item `b`.
    #[inline]
    pub fn plane(&self, c: usize, b: usize) -> &[T] {
        let hw = self.hw();
        let start = (c * self.b + b) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize, b: usize) -> &mut [T] {
        let hw = self.hw();
        let start = (c * self.b + b) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn add_assign(&mut self, other: &Act<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Global average pool to a `[B, C]` matrix.
    pub fn global_avg_pool(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.b, self.c);
        let inv = T::one() / T::of(self.hw() as f64);
        for c in 0..self.c {
            for b in 0..self.b {
                let s: T = self.plane(c, b).iter().copied().sum();
                out.data[b * self.c + c] = s * inv;
            }
        }
        out
    }
}

/// Reverse of [`Act::global_avg_pool`].
pub fn global_avg_pool_backward<T: Scalar>(d: &Mat<T>, c: usize, b: usize, h: usize, w: usize) -> Act<T> {
    let mut out = Act::zeros(c, b, h, w);
    let inv = T::one() / T::of((h * w) as f64);
    for ci in 0..c {
        for bi in 0..b {
            let g = d.data[bi * c + ci] * inv;
            out.plane_mut(ci, bi).iter_mut().for_each(|v| *v = g);
        }
    }
    out
}

/// Row-major `[rows, cols]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::of(v))).collect();
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.f64()).collect())
            .collect()
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn hcat(parts: &[&Mat<T>]) -> Mat<T> {
        let rows = parts[0].rows;
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                out.data[r * cols + off..r * cols + off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        out
    }

    /// Splits columns into consecutive blocks of the given widths.
    pub fn hsplit(&self, widths: &[usize]) -> Vec<Mat<T>> {
        let mut off = 0;
        widths
            .iter()
            .map(|&w| {
                let mut m = Mat::zeros(self.rows, w);
                for r in 0..self.rows {
                    m.data[r * w..(r + 1) * w]
                        .copy_from_slice(&self.data[r * self.cols + off..r * self.cols + off + w]);
                }
                off += w;
                m
            })
            .collect()
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

#[inline(always)]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Scalar>(xs: &[T]) -> Vec<T> {
    xs.iter().map(|&x| x * sigmoid(x)).collect()
}

/// Gradient of SiLU given its input and the upstream gradient.
pub fn silu_backward<T: Scalar>(input: &[T], d: &[T]) -> Vec<T> {
    input
        .iter()
        .zip(d)
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * (s + x * s * (T::one() - s))
        })
        .collect()
}

/// Index into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named, ordered parameter tensors. Names are stable across runs and form
/// the keys of saved weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub params: Vec<Param<T>>,
}

pub enum Init {
    Zeros,
    /// Uniform in `±scale / sqrt(fan_in)`.
    Uniform { fan_in: usize, scale: f64 },
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let len = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Uniform { fan_in, scale } => {
                let bound = scale / (fan_in.max(1) as f64).sqrt();
                (0..len).map(|_| T::of(rng.random_range(-bound..=bound))).collect()
            }
        };
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.params[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads<T> {
        Grads {
            data: self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers laid out like the owning [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub data: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.data[id.0]
    }

    pub fn scale(&mut self, s: T) {
        for g in self.data.iter_mut().flatten() {
            *g = *g * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|g| g.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]], B = [[1,0],[0,1],[1,1]]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        gemm(false, false, 2, 3, 2, &a, &b, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // A^T stored as [3,2]
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c2 = [1.0f64; 4];
        gemm(true, false, 2, 3, 2, &at, &b, &mut c2, true);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
        // B^T stored as [2,3]
        let bt = [1.0f64, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c3 = [0.0f64; 4];
        gemm(false, true, 2, 3, 2, &a, &bt, &mut c3, false);
        assert_eq!(c3, [4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn silu_gradient_matches_difference() {
        let xs = [-3.0f64, -0.5, 0.0, 0.7, 4.0];
        let g = silu_backward(&xs, &[1.0; 5]);
        for (i, &x) in xs.iter().enumerate() {
            let h = 1e-6;
            let fd = (silu(&[x + h])[0] - silu(&[x - h])[0]) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn pool_and_split() {
        let mut a = Act::<f64>::zeros(2, 1, 2, 2);
        a.data = vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 8.0];
        let p = a.global_avg_pool();
        assert_eq!(p.data, vec![2.5, 2.0]);
        let m = Mat::<f64>::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let parts = m.hsplit(&[1, 2]);
        assert_eq!(parts[1].data, vec![2.0, 3.0, 5.0, 6.0]);
        assert_eq!(Mat::hcat(&[&parts[0], &parts[1]]), m);
    }
}
