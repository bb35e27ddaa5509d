use alloc::vec;
use alloc::vec::Vec;

use super::{Act, Mat, Scalar};

pub const NORM_EPS: f64 = 1e-5;

/// Per-sample normalisation over all channels and positions followed by a
/// per-(sample, channel) modulation `n * (1 + gamma) + beta`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LayerNorm;

pub struct NormCache<T> {
    normed: Act<T>,
    inv_std: Vec<T>,
    gamma: Mat<T>,
}

impl LayerNorm {
    pub fn forward<T: Scalar>(x: &Act<T>, gamma: &Mat<T>, beta: &Mat<T>) -> (Act<T>, NormCache<T>) {
        assert_eq!((gamma.rows, gamma.cols), (x.b, x.c), "modulation shape");
        let m = T::of((x.c * x.hw()) as f64);
        let mut normed = x.clone();
        let mut inv_std = vec![T::zero(); x.b];
        for b in 0..x.b {
            let mut sum = T::zero();
            for c in 0..x.c {
                sum += x.plane(c, b).iter().copied().sum();
            }
            let mean = sum / m;
            let mut var = T::zero();
            for c in 0..x.c {
                var += x.plane(c, b).iter().map(|&v| (v - mean) * (v - mean)).sum();
            }
            let is = T::one() / (var / m + T::of(NORM_EPS)).sqrt();
            inv_std[b] = is;
            for c in 0..x.c {
                normed.plane_mut(c, b).iter_mut().for_each(|v| *v = (*v - mean) * is);
            }
        }
        let mut out = normed.clone();
        for c in 0..x.c {
            for b in 0..x.b {
                let (g, s) = (T::one() + gamma.data[b * x.c + c], beta.data[b * x.c + c]);
                out.plane_mut(c, b).iter_mut().for_each(|v| *v = *v * g + s);
            }
        }
        let cache = NormCache {
            normed,
            inv_std,
            gamma: gamma.clone(),
        };
        (out, cache)
    }

    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward<T: Scalar>(cache: &NormCache<T>, d_out: &Act<T>) -> (Act<T>, Mat<T>, Mat<T>) {
        let n = &cache.normed;
        let (c_n, b_n) = (n.c, n.b);
        let mut d_gamma = Mat::zeros(b_n, c_n);
        let mut d_beta = Mat::zeros(b_n, c_n);
        let mut d_norm = Act::zeros(c_n, b_n, n.h, n.w);
        for c in 0..c_n {
            for b in 0..b_n {
                let (dy, nn) = (d_out.plane(c, b), n.plane(c, b));
                let g = T::one() + cache.gamma.data[b * c_n + c];
                let mut dg = T::zero();
                let mut db = T::zero();
                for (o, (&d, &v)) in d_norm.plane_mut(c, b).iter_mut().zip(dy.iter().zip(nn)) {
                    dg += d * v;
                    db += d;
                    *o = d * g;
                }
                d_gamma.data[b * c_n + c] = dg;
                d_beta.data[b * c_n + c] = db;
            }
        }
        let m = T::of((c_n * n.hw()) as f64);
        let mut d_in = Act::zeros(c_n, b_n, n.h, n.w);
        for b in 0..b_n {
            let mut sum_d = T::zero();
            let mut sum_dn = T::zero();
            for c in 0..c_n {
                for (&d, &v) in d_norm.plane(c, b).iter().zip(n.plane(c, b)) {
                    sum_d += d;
                    sum_dn += d * v;
                }
            }
            let (mean_d, mean_dn) = (sum_d / m, sum_dn / m);
            let is = cache.inv_std[b];
            for c in 0..c_n {
                let src: Vec<T> = d_norm
                    .plane(c, b)
                    .iter()
                    .zip(n.plane(c, b))
                    .map(|(&d, &v)| is * (d - mean_d - v * mean_dn))
                    .collect();
                d_in.plane_mut(c, b).copy_from_slice(&src);
            }
        }
        (d_in, d_gamma, d_beta)
    }
}
