use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Act, Grads, Init, ParamId, ParamStore, Scalar};
use crate::rng::Rng;

/// Single-head self-attention over the spatial positions of a feature map.
/// Returns only the attention branch; callers add the residual.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub channels: usize,
    /// Query, key, value and output projections, each `(weight, bias)`.
    pub proj: [(ParamId, ParamId); 4],
}

pub struct AttentionCache<T> {
    input: Act<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Softmax weights per batch item, `[S, S]` with rows as queries.
    attn: Vec<T>,
    mixed: Vec<T>,
}

fn project<T: Scalar>(store: &ParamStore<T>, (w, b): (ParamId, ParamId), c: usize, x: &[T]) -> Vec<T> {
    let n = x.len() / c;
    let mut out = vec![T::zero(); c * n];
    let bias = store.get(b);
    for (ci, row) in out.chunks_mut(n).enumerate() {
        row.iter_mut().for_each(|v| *v = bias[ci]);
    }
    gemm(false, false, c, c, n, store.get(w), x, &mut out, true);
    out
}

fn project_backward<T: Scalar>(
    store: &ParamStore<T>,
    grads: &mut Grads<T>,
    (w, b): (ParamId, ParamId),
    c: usize,
    x: &[T],
    d_out: &[T],
    d_x: &mut [T],
) {
    let n = x.len() / c;
    {
        let db = grads.get_mut(b);
        for (ci, row) in d_out.chunks(n).enumerate() {
            db[ci] += row.iter().copied().sum();
        }
    }
    gemm(false, true, c, n, c, d_out, x, grads.get_mut(w), true);
    gemm(true, false, c, c, n, store.get(w), d_out, d_x, true);
}

/// Copies batch item `b` out of a `[C, B*S]` buffer into a dense `[C, S]`.
fn gather<T: Scalar>(x: &[T], c: usize, batch: usize, s: usize, b: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(c * s);
    for ci in 0..c {
        let start = (ci * batch + b) * s;
        out.extend_from_slice(&x[start..start + s]);
    }
    out
}

fn scatter_add<T: Scalar>(dst: &mut [T], src: &[T], c: usize, batch: usize, s: usize, b: usize) {
    for ci in 0..c {
        let start = (ci * batch + b) * s;
        for (d, v) in dst[start..start + s].iter_mut().zip(&src[ci * s..(ci + 1) * s]) {
            *d += *v;
        }
    }
}

impl Attention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let proj = ["q", "k", "v", "out"].map(|p| {
            let init = || Init::Uniform {
                fan_in: channels,
                scale: 1.0,
            };
            let w = store.add(alloc::format!("{name}.{p}.weight"), &[channels, channels], init(), rng);
            let b = store.add(alloc::format!("{name}.{p}.bias"), &[channels], init(), rng);
            (w, b)
        });
        Self { channels, proj }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Act<T>) -> (Act<T>, AttentionCache<T>) {
        let c = self.channels;
        assert_eq!(x.c, c, "attention channels");
        let (batch, s) = (x.b, x.hw());
        let q = project(store, self.proj[0], c, &x.data);
        let k = project(store, self.proj[1], c, &x.data);
        let v = project(store, self.proj[2], c, &x.data);
        let scale = T::one() / T::of(c as f64).sqrt();
        let mut attn = vec![T::zero(); batch * s * s];
        let mut mixed = vec![T::zero(); c * batch * s];
        for b in 0..batch {
            let (qb, kb, vb) = (gather(&q, c, batch, s, b), gather(&k, c, batch, s, b), gather(&v, c, batch, s, b));
            let a = &mut attn[b * s * s..(b + 1) * s * s];
            gemm(true, false, s, c, s, &qb, &kb, a, false);
            for row in a.chunks_mut(s) {
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v * scale));
                let mut sum = T::zero();
                for v in row.iter_mut() {
                    *v = (*v * scale - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v = *v / sum);
            }
            let mut ob = vec![T::zero(); c * s];
            gemm(false, true, c, s, s, &vb, a, &mut ob, false);
            scatter_add(&mut mixed, &ob, c, batch, s, b);
        }
        let out_data = project(store, self.proj[3], c, &mixed);
        let out = Act {
            c,
            b: batch,
            h: x.h,
            w: x.w,
            data: out_data,
        };
        let cache = AttentionCache {
            input: x.clone(),
            q,
            k,
            v,
            attn,
            mixed,
        };
        (out, cache)
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &AttentionCache<T>,
        d_out: &Act<T>,
    ) -> Act<T> {
        let c = self.channels;
        let x = &cache.input;
        let (batch, s) = (x.b, x.hw());
        let scale = T::one() / T::of(c as f64).sqrt();
        let mut d_mixed = vec![T::zero(); c * batch * s];
        project_backward(store, grads, self.proj[3], c, &cache.mixed, &d_out.data, &mut d_mixed);

        let mut dq = vec![T::zero(); c * batch * s];
        let mut dk = vec![T::zero(); c * batch * s];
        let mut dv = vec![T::zero(); c * batch * s];
        for b in 0..batch {
            let qb = gather(&cache.q, c, batch, s, b);
            let kb = gather(&cache.k, c, batch, s, b);
            let vb = gather(&cache.v, c, batch, s, b);
            let dob = gather(&d_mixed, c, batch, s, b);
            let a = &cache.attn[b * s * s..(b + 1) * s * s];
            // O = V A^T
            let mut dvb = vec![T::zero(); c * s];
            gemm(false, false, c, s, s, &dob, a, &mut dvb, false);
            let mut da = vec![T::zero(); s * s];
            gemm(true, false, s, c, s, &dob, &vb, &mut da, false);
            for i in 0..s {
                let (ar, dr) = (&a[i * s..(i + 1) * s], &mut da[i * s..(i + 1) * s]);
                let dot: T = ar.iter().zip(dr.iter()).map(|(&p, &g)| p * g).sum();
                for (g, &p) in dr.iter_mut().zip(ar) {
                    *g = p * (*g - dot) * scale;
                }
            }
            // scores = Q^T K
            let mut dqb = vec![T::zero(); c * s];
            gemm(false, true, c, s, s, &kb, &da, &mut dqb, false);
            let mut dkb = vec![T::zero(); c * s];
            gemm(false, false, c, s, s, &qb, &da, &mut dkb, false);
            scatter_add(&mut dq, &dqb, c, batch, s, b);
            scatter_add(&mut dk, &dkb, c, batch, s, b);
            scatter_add(&mut dv, &dvb, c, batch, s, b);
        }
        let mut d_in = Act::zeros(c, batch, x.h, x.w);
        for (proj, d) in self.proj[..3].iter().zip([&dq, &dk, &dv]) {
            project_backward(store, grads, *proj, c, &x.data, d, &mut d_in.data);
        }
        d_in
    }
}
