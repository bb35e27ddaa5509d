use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Act, Grads, Init, ParamId, ParamStore, Scalar};
use crate::rng::Rng;

/// Square-kernel 2-D convolution with zero padding `kernel / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = store.add(
            alloc::format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            Init::Uniform { fan_in, scale: 1.0 },
            rng,
        );
        let bias = store.add(
            alloc::format!("{name}.bias"),
            &[c_out],
            Init::Uniform { fan_in, scale: 1.0 },
            rng,
        );
        Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        (
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col<T: Scalar>(&self, x: &Act<T>, ho: usize, wo: usize) -> Vec<T> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let n = x.b * ho * wo;
        let mut cols = vec![T::zero(); self.c_in * k * k * n];
        for c in 0..self.c_in {
            for b in 0..x.b {
                let plane = x.plane(c, b);
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (c * k + ky) * k + kx;
                        let dst = &mut cols[row * n + b * ho * wo..row * n + (b + 1) * ho * wo];
                        for oy in 0..ho {
                            let iy = (oy * self.stride) as isize + ky as isize - pad;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                            for ox in 0..wo {
                                let ix = (ox * self.stride) as isize + kx as isize - pad;
                                if ix >= 0 && ix < x.w as isize {
                                    dst[oy * wo + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], out: &mut Act<T>, ho: usize, wo: usize) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let n = out.b * ho * wo;
        let (h, w) = (out.h, out.w);
        for c in 0..self.c_in {
            for b in 0..out.b {
                let plane = out.plane_mut(c, b);
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (c * k + ky) * k + kx;
                        let src = &cols[row * n + b * ho * wo..row * n + (b + 1) * ho * wo];
                        for oy in 0..ho {
                            let iy = (oy * self.stride) as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..wo {
                                let ix = (ox * self.stride) as isize + kx as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] += src[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Act<T>) -> (Act<T>, ConvCache<T>) {
        assert_eq!(x.c, self.c_in, "conv input channels");
        let (ho, wo) = self.out_hw(x.h, x.w);
        let n = x.b * ho * wo;
        let kk = self.c_in * self.kernel * self.kernel;
        let cols = self.im2col(x, ho, wo);
        let mut out = Act::zeros(self.c_out, x.b, ho, wo);
        let bias = store.get(self.bias);
        for (co, chunk) in out.data.chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        gemm(false, false, self.c_out, kk, n, store.get(self.weight), &cols, &mut out.data, true);
        let cache = ConvCache {
            cols,
            in_shape: (x.c, x.b, x.h, x.w),
            out_hw: (ho, wo),
        };
        (out, cache)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &ConvCache<T>,
        d_out: &Act<T>,
    ) -> Act<T> {
        let (c, b, h, w) = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let n = b * ho * wo;
        let kk = self.c_in * self.kernel * self.kernel;
        {
            let db = grads.get_mut(self.bias);
            for (co, chunk) in d_out.data.chunks(n).enumerate() {
                db[co] += chunk.iter().copied().sum();
            }
        }
        gemm(false, true, self.c_out, n, kk, &d_out.data, &cache.cols, grads.get_mut(self.weight), true);
        let mut d_cols = vec![T::zero(); kk * n];
        gemm(true, false, kk, self.c_out, n, store.get(self.weight), &d_out.data, &mut d_cols, false);
        let mut d_in = Act::zeros(c, b, h, w);
        self.col2im(&d_cols, &mut d_in, ho, wo);
        d_in
    }
}
