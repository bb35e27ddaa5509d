use super::{gemm, Grads, Init, Mat, ParamId, ParamStore, Scalar};
use crate::rng::Rng;

/// Fully connected layer `y = x W^T + b` on `[B, in]` rows.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

pub struct LinearCache<T> {
    input: Mat<T>,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        Self::with_init(store, name, n_in, n_out, false, rng)
    }

    /// Same layout as [`Linear::new`] with weight and bias starting at zero.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        Self::with_init(store, name, n_in, n_out, true, rng)
    }

    fn with_init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        n_in: usize,
        n_out: usize,
        zero: bool,
        rng: &mut Rng,
    ) -> Self {
        let init = || {
            if zero {
                Init::Zeros
            } else {
                Init::Uniform {
                    fan_in: n_in,
                    scale: 1.0,
                }
            }
        };
        let weight = store.add(alloc::format!("{name}.weight"), &[n_out, n_in], init(), rng);
        let bias = store.add(alloc::format!("{name}.bias"), &[n_out], init(), rng);
        Self {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Mat<T>) -> (Mat<T>, LinearCache<T>) {
        assert_eq!(x.cols, self.n_in, "linear input width");
        let mut y = Mat::zeros(x.rows, self.n_out);
        let bias = store.get(self.bias);
        for r in 0..x.rows {
            y.data[r * self.n_out..(r + 1) * self.n_out].copy_from_slice(bias);
        }
        gemm(false, true, x.rows, self.n_in, self.n_out, &x.data, store.get(self.weight), &mut y.data, true);
        (y, LinearCache { input: x.clone() })
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &LinearCache<T>,
        d_out: &Mat<T>,
    ) -> Mat<T> {
        let rows = d_out.rows;
        {
            let db = grads.get_mut(self.bias);
            for r in 0..rows {
                for (g, d) in db.iter_mut().zip(d_out.row(r)) {
                    *g += *d;
                }
            }
        }
        gemm(true, false, self.n_out, rows, self.n_in, &d_out.data, &cache.input.data, grads.get_mut(self.weight), true);
        let mut dx = Mat::zeros(rows, self.n_in);
        gemm(false, false, rows, self.n_out, self.n_in, &d_out.data, store.get(self.weight), &mut dx.data, false);
        dx
    }
}
