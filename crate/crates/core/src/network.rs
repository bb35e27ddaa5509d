//! Conditional x0 denoiser: a convolutional depth encoder whose
//! normalisation layers are modulated by the timestep and the noisy
//! parameter vector, plus a regression head over pooled block outputs.
//!
//! Parameter names follow `stem.*`, `time_mlp.{0,1}.*`, `smpl_mlp.{0,1}.*`,
//! `blocks.{i}.{norm1,norm2}.*`, `blocks.{i}.{conv1,conv2,skip}.*`,
//! `attn.{i}.{norm,q,k,v,out}.*` and `head.{0,1}.*`.

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::body_model::{Gender, PARAM_DIM};
use crate::nn::{
    global_avg_pool_backward, silu, silu_backward, Act, Attention, AttentionCache, Conv2d, ConvCache, Grads,
    Init, LayerNorm, Linear, LinearCache, Mat, NormCache, ParamId, ParamStore, Scalar,
};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub n_down_blocks: usize,
    pub n_attention_blocks: usize,
    pub base_channels: usize,
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub include_gender_in_condition: bool,
    /// Adds two normalised pixel-coordinate channels to the depth input.
    pub coord_channels: bool,
    /// Depth is fed as `(input_offset - depth) / input_scale`.
    pub input_offset: f64,
    pub input_scale: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            image_h: 64,
            image_w: 32,
            n_down_blocks: 6,
            n_attention_blocks: 3,
            base_channels: 16,
            latent_dim: 64,
            head_hidden: 128,
            include_gender_in_condition: false,
            coord_channels: true,
            input_offset: 2.0,
            input_scale: 0.1,
        }
    }
}

impl DenoiserConfig {
    /// Image size after zero padding up to a multiple of `2^n_down_blocks`.
    pub fn padded_size(&self) -> (usize, usize) {
        let m = 1usize << self.n_down_blocks;
        (self.image_h.div_ceil(m) * m, self.image_w.div_ceil(m) * m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("base_channels", self.base_channels),
            ("latent_dim", self.latent_dim),
            ("head_hidden", self.head_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(alloc::format!("{name} must be positive")));
        }
        if self.n_down_blocks > 12 {
            return Err(Error::arg("n_down_blocks must be at most 12"));
        }
        if self.n_attention_blocks > self.n_down_blocks {
            return Err(Error::arg(alloc::format!(
                "n_attention_blocks ({}) exceeds n_down_blocks ({})",
                self.n_attention_blocks,
                self.n_down_blocks
            )));
        }
        if !self.latent_dim.is_multiple_of(2) {
            return Err(Error::arg("latent_dim must be even"));
        }
        if !(self.input_scale > 0.0) || !self.input_offset.is_finite() {
            return Err(Error::arg("input_scale must be positive and input_offset finite"));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        if self.coord_channels {
            3
        } else {
            1
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_down_blocks + 2
    }

    /// Output channels of residual block `i`: doubling per downsampling
    /// block, capped at eight times the base width.
    pub fn block_channels(&self, i: usize) -> usize {
        if self.n_down_blocks == 0 {
            return self.base_channels;
        }
        let level = i.min(self.n_down_blocks - 1) + 1;
        self.base_channels << level.min(3)
    }

    fn smpl_input_dim(&self) -> usize {
        PARAM_DIM + if self.include_gender_in_condition { 2 } else { 0 }
    }
}

/// Sinusoidal timestep embedding: `latent_dim / 2` sines followed by the
/// matching cosines over geometric frequencies.
pub fn embed_time(t: usize, latent_dim: usize) -> Vec<f64> {
    let half = latent_dim / 2;
    let freq = |k: usize| (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
    let mut out = Vec::with_capacity(latent_dim);
    out.extend((0..half).map(|k| (t as f64 * freq(k)).sin()));
    out.extend((0..half).map(|k| (t as f64 * freq(k)).cos()));
    out
}

/// Scale/shift source for one normalisation layer.
#[derive(Debug, Clone, Copy)]
enum Modulation {
    /// Zero-initialised projection of the conditioning vector to `2C`.
    Cond(Linear),
    /// Learned per-channel scale and shift, also starting at zero.
    Affine { gamma: ParamId, beta: ParamId },
}

enum ModCache<T> {
    Cond(LinearCache<T>),
    Affine,
}

impl Modulation {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        conditioned: bool,
        latent: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        if conditioned {
            Modulation::Cond(Linear::zeroed(store, name, latent, 2 * channels, rng))
        } else {
            let gamma = store.add(alloc::format!("{name}.gamma"), &[channels], Init::Zeros, rng);
            let beta = store.add(alloc::format!("{name}.beta"), &[channels], Init::Zeros, rng);
            Modulation::Affine { gamma, beta }
        }
    }

    fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cond_act: &Mat<T>,
        channels: usize,
    ) -> (Mat<T>, Mat<T>, ModCache<T>) {
        match self {
            Modulation::Cond(lin) => {
                let (out, cache) = lin.forward(store, cond_act);
                let mut parts = out.hsplit(&[channels, channels]);
                let beta = parts.pop().unwrap();
                let gamma = parts.pop().unwrap();
                (gamma, beta, ModCache::Cond(cache))
            }
            Modulation::Affine { gamma, beta } => {
                let b = cond_act.rows;
                let tile = |id: ParamId| {
                    let row = store.get(id);
                    let mut m = Mat::zeros(b, channels);
                    for r in 0..b {
                        m.data[r * channels..(r + 1) * channels].copy_from_slice(row);
                    }
                    m
                };
                (tile(*gamma), tile(*beta), ModCache::Affine)
            }
        }
    }

    fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &ModCache<T>,
        d_gamma: &Mat<T>,
        d_beta: &Mat<T>,
        d_cond_act: &mut Mat<T>,
    ) {
        match (self, cache) {
            (Modulation::Cond(lin), ModCache::Cond(c)) => {
                let d = Mat::hcat(&[d_gamma, d_beta]);
                let dc = lin.backward(store, grads, c, &d);
                d_cond_act.add_assign(&dc);
            }
            (Modulation::Affine { gamma, beta }, ModCache::Affine) => {
                for (id, d) in [(*gamma, d_gamma), (*beta, d_beta)] {
                    let g = grads.get_mut(id);
                    for r in 0..d.rows {
                        for (a, b) in g.iter_mut().zip(d.row(r)) {
                            *a += *b;
                        }
                    }
                }
            }
            _ => unreachable!("modulation cache kind mismatch"),
        }
    }
}

/// Normalise features and modulate them with scale and shift projected
/// from `cond`: `norm(x) * (1 + gamma) + beta`. `proj` maps `SiLU(cond)` to
/// `[gamma | beta]`.
pub fn adaln_zero<T: Scalar>(store: &ParamStore<T>, proj: &Linear, features: &Act<T>, cond: &Mat<T>) -> Act<T> {
    let act = Mat {
        rows: cond.rows,
        cols: cond.cols,
        data: silu(&cond.data),
    };
    let (gamma, beta, _) = Modulation::Cond(*proj).forward(store, &act, features.c);
    LayerNorm::forward(features, &gamma, &beta).0
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: Modulation,
    conv1: Conv2d,
    norm2: Modulation,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

struct ResCache<T> {
    mod1: ModCache<T>,
    norm1: NormCache<T>,
    pre1: Vec<T>,
    conv1: ConvCache<T>,
    mod2: ModCache<T>,
    norm2: NormCache<T>,
    pre2: Vec<T>,
    conv2: ConvCache<T>,
    skip: Option<ConvCache<T>>,
}

impl ResBlock {
    fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Act<T>, cond_act: &Mat<T>) -> (Act<T>, ResCache<T>) {
        let (g1, b1, mod1) = self.norm1.forward(store, cond_act, x.c);
        let (n1, norm1) = LayerNorm::forward(x, &g1, &b1);
        let pre1 = n1.data.clone();
        let a1 = Act { data: silu(&n1.data), ..n1 };
        let (h1, conv1) = self.conv1.forward(store, &a1);
        let (g2, b2, mod2) = self.norm2.forward(store, cond_act, h1.c);
        let (n2, norm2) = LayerNorm::forward(&h1, &g2, &b2);
        let pre2 = n2.data.clone();
        let a2 = Act { data: silu(&n2.data), ..n2 };
        let (mut out, conv2) = self.conv2.forward(store, &a2);
        let skip = match &self.skip {
            Some(conv) => {
                let (s, c) = conv.forward(store, x);
                out.add_assign(&s);
                Some(c)
            }
            None => {
                out.add_assign(x);
                None
            }
        };
        let cache = ResCache {
            mod1,
            norm1,
            pre1,
            conv1,
            mod2,
            norm2,
            pre2,
            conv2,
            skip,
        };
        (out, cache)
    }

    fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &ResCache<T>,
        d_out: &Act<T>,
        d_cond_act: &mut Mat<T>,
    ) -> Act<T> {
        let d_a2 = self.conv2.backward(store, grads, &cache.conv2, d_out);
        let d_n2 = Act {
            data: silu_backward(&cache.pre2, &d_a2.data),
            ..d_a2
        };
        let (d_h1, dg2, db2) = LayerNorm::backward(&cache.norm2, &d_n2);
        self.norm2.backward(store, grads, &cache.mod2, &dg2, &db2, d_cond_act);
        let d_a1 = self.conv1.backward(store, grads, &cache.conv1, &d_h1);
        let d_n1 = Act {
            data: silu_backward(&cache.pre1, &d_a1.data),
            ..d_a1
        };
        let (mut d_x, dg1, db1) = LayerNorm::backward(&cache.norm1, &d_n1);
        self.norm1.backward(store, grads, &cache.mod1, &dg1, &db1, d_cond_act);
        match (&self.skip, &cache.skip) {
            (Some(conv), Some(c)) => d_x.add_assign(&conv.backward(store, grads, c, d_out)),
            _ => d_x.add_assign(d_out),
        }
        d_x
    }
}

#[derive(Debug, Clone)]
struct AttnBlock {
    norm: Modulation,
    attn: Attention,
}

struct AttnCache<T> {
    modc: ModCache<T>,
    norm: NormCache<T>,
    attn: AttentionCache<T>,
}

/// Per-item conditioning inputs besides the noisy latent.
#[derive(Debug, Clone, Copy)]
pub struct Condition<'a> {
    /// Row-major `image_h x image_w` depth in metres.
    pub depth: &'a [f32],
    pub gender: Gender,
}

#[derive(Debug, Clone)]
pub struct Denoiser<T> {
    pub config: DenoiserConfig,
    pub store: ParamStore<T>,
    stem: Conv2d,
    time_mlp: [Linear; 2],
    smpl_mlp: [Linear; 2],
    blocks: Vec<ResBlock>,
    attn: Vec<Option<AttnBlock>>,
    head: [Linear; 2],
}

pub struct ForwardCache<T> {
    stem: ConvCache<T>,
    time: [LinearCache<T>; 2],
    time_hidden: Vec<T>,
    smpl: [LinearCache<T>; 2],
    smpl_hidden: Vec<T>,
    cond: Vec<T>,
    attn: Vec<Option<AttnCache<T>>>,
    blocks: Vec<ResCache<T>>,
    block_shapes: Vec<(usize, usize, usize, usize)>,
    head: [LinearCache<T>; 2],
    head_hidden: Vec<T>,
}

impl<T: Scalar> Denoiser<T> {
    /// Builds the network with weights drawn from `seed`.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, 0x4e7);
        let mut store = ParamStore::default();
        let l = config.latent_dim;
        let stem = Conv2d::new(&mut store, "stem", config.input_channels(), config.base_channels, 3, 1, &mut rng);
        let time_mlp = [
            Linear::new(&mut store, "time_mlp.0", l, l, &mut rng),
            Linear::new(&mut store, "time_mlp.1", l, l, &mut rng),
        ];
        let smpl_mlp = [
            Linear::new(&mut store, "smpl_mlp.0", config.smpl_input_dim(), l, &mut rng),
            Linear::new(&mut store, "smpl_mlp.1", l, l, &mut rng),
        ];
        let n_blocks = config.n_blocks();
        let first_attn = n_blocks - config.n_attention_blocks;
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut attn = Vec::with_capacity(n_blocks);
        let mut c_in = config.base_channels;
        for i in 0..n_blocks {
            let c_out = config.block_channels(i);
            let conditioned = i + 1 < n_blocks;
            attn.push((i >= first_attn).then(|| {
                let name = alloc::format!("attn.{i}");
                AttnBlock {
                    norm: Modulation::new(&mut store, &alloc::format!("{name}.norm"), c_in, true, l, &mut rng),
                    attn: Attention::new(&mut store, &name, c_in, &mut rng),
                }
            }));
            let stride = if i < config.n_down_blocks { 2 } else { 1 };
            let name = alloc::format!("blocks.{i}");
            let norm1 = Modulation::new(&mut store, &alloc::format!("{name}.norm1"), c_in, conditioned, l, &mut rng);
            let conv1 = Conv2d::new(&mut store, &alloc::format!("{name}.conv1"), c_in, c_out, 3, stride, &mut rng);
            let norm2 = Modulation::new(&mut store, &alloc::format!("{name}.norm2"), c_out, conditioned, l, &mut rng);
            let conv2 = Conv2d::new(&mut store, &alloc::format!("{name}.conv2"), c_out, c_out, 3, 1, &mut rng);
            let skip = (stride != 1 || c_in != c_out)
                .then(|| Conv2d::new(&mut store, &alloc::format!("{name}.skip"), c_in, c_out, 1, stride, &mut rng));
            blocks.push(ResBlock {
                norm1,
                conv1,
                norm2,
                conv2,
                skip,
            });
            c_in = c_out;
        }
        let pooled: usize = (0..n_blocks).map(|i| config.block_channels(i)).sum();
        let head = [
            Linear::new(&mut store, "head.0", pooled, config.head_hidden, &mut rng),
            Linear::new(&mut store, "head.1", config.head_hidden, PARAM_DIM, &mut rng),
        ];
        Ok(Self {
            config,
            store,
            stem,
            time_mlp,
            smpl_mlp,
            blocks,
            attn,
            head,
        })
    }

    /// Replaces the weights with `store`, which must match names and shapes.
    pub fn with_weights(mut self, store: ParamStore<T>) -> Result<Self> {
        if store.params.len() != self.store.params.len() {
            return Err(Error::IncompatibleCheckpoint(alloc::format!(
                "expected {} tensors, found {}",
                self.store.params.len(),
                store.params.len()
            )));
        }
        for (a, b) in self.store.params.iter().zip(&store.params) {
            if a.name != b.name || a.shape != b.shape || b.data.len() != a.data.len() {
                return Err(Error::IncompatibleCheckpoint(alloc::format!(
                    "tensor {} {:?} does not match {} {:?}",
                    b.name,
                    b.shape,
                    a.name,
                    a.shape
                )));
            }
        }
        self.store = store;
        Ok(self)
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.store.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Depth images to the padded network input.
    pub fn prepare_images(&self, conds: &[Condition]) -> Result<Act<T>> {
        let cfg = &self.config;
        let (h, w) = (cfg.image_h, cfg.image_w);
        let (hp, wp) = cfg.padded_size();
        let mut x = Act::zeros(cfg.input_channels(), conds.len(), hp, wp);
        for (b, c) in conds.iter().enumerate() {
            if c.depth.len() != h * w {
                return Err(Error::shape("depth image", h * w, c.depth.len()));
            }
            let plane = x.plane_mut(0, b);
            for r in 0..h {
                for col in 0..w {
                    let d = c.depth[r * w + col] as f64;
                    plane[r * wp + col] = T::of((cfg.input_offset - d) / cfg.input_scale);
                }
            }
            if cfg.coord_channels {
                for r in 0..hp {
                    for col in 0..wp {
                        x.plane_mut(1, b)[r * wp + col] = T::of((2 * r + 1) as f64 / hp as f64 - 1.0);
                        x.plane_mut(2, b)[r * wp + col] = T::of((2 * col + 1) as f64 / wp as f64 - 1.0);
                    }
                }
            }
        }
        Ok(x)
    }

    fn time_input(&self, t: &[usize]) -> Mat<T> {
        let l = self.config.latent_dim;
        let mut m = Mat::zeros(t.len(), l);
        for (r, &ti) in t.iter().enumerate() {
            for (d, v) in m.data[r * l..(r + 1) * l].iter_mut().zip(embed_time(ti, l)) {
                *d = T::of(v);
            }
        }
        m
    }

    fn smpl_input(&self, x_t: &Mat<T>, genders: impl Iterator<Item = Gender>) -> Mat<T> {
        if !self.config.include_gender_in_condition {
            return x_t.clone();
        }
        let d = self.config.smpl_input_dim();
        let mut m = Mat::zeros(x_t.rows, d);
        for (r, g) in genders.enumerate() {
            m.data[r * d..r * d + PARAM_DIM].copy_from_slice(x_t.row(r));
            let oh = g.one_hot();
            m.data[r * d + PARAM_DIM] = T::of(oh[0]);
            m.data[r * d + PARAM_DIM + 1] = T::of(oh[1]);
        }
        m
    }

    /// Two-layer perceptron over the noisy latent (and optionally gender).
    pub fn encode_smpl_latent(&self, x_t: &Mat<T>, genders: &[Gender]) -> Mat<T> {
        let inp = self.smpl_input(x_t, genders.iter().copied());
        let (h, _) = self.smpl_mlp[0].forward(&self.store, &inp);
        let h = Mat { data: silu(&h.data), ..h };
        self.smpl_mlp[1].forward(&self.store, &h).0
    }

    /// Predicts clean standardised parameters for a batch.
    pub fn forward(&self, x_t: &Mat<T>, t: &[usize], conds: &[Condition]) -> Result<(Mat<T>, ForwardCache<T>)> {
        let b = conds.len();
        if x_t.rows != b || t.len() != b {
            return Err(Error::shape("batch size", b, x_t.rows.max(t.len())));
        }
        if x_t.cols != PARAM_DIM {
            return Err(Error::shape("latent width", PARAM_DIM, x_t.cols));
        }
        let s = &self.store;
        let image = self.prepare_images(conds)?;

        let (th, tc0) = self.time_mlp[0].forward(s, &self.time_input(t));
        let time_hidden = th.data.clone();
        let (te, tc1) = self.time_mlp[1].forward(s, &Mat { data: silu(&th.data), ..th });
        let smpl_in = self.smpl_input(x_t, conds.iter().map(|c| c.gender));
        let (sh, sc0) = self.smpl_mlp[0].forward(s, &smpl_in);
        let smpl_hidden = sh.data.clone();
        let (mut cond, sc1) = self.smpl_mlp[1].forward(s, &Mat { data: silu(&sh.data), ..sh });
        cond.add_assign(&te);
        let cond_act = Mat {
            rows: cond.rows,
            cols: cond.cols,
            data: silu(&cond.data),
        };

        let (mut x, stem) = self.stem.forward(s, &image);
        let mut attn_caches = Vec::with_capacity(self.blocks.len());
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut block_shapes = Vec::with_capacity(self.blocks.len());
        let mut pooled = Vec::with_capacity(self.blocks.len());
        for (block, attn) in self.blocks.iter().zip(&self.attn) {
            let ac = match attn {
                Some(a) => {
                    let (g, be, modc) = a.norm.forward(s, &cond_act, x.c);
                    let (n, norm) = LayerNorm::forward(&x, &g, &be);
                    let (y, attn) = a.attn.forward(s, &n);
                    x.add_assign(&y);
                    Some(AttnCache { modc, norm, attn })
                }
                None => None,
            };
            attn_caches.push(ac);
            let (y, cache) = block.forward(s, &x, &cond_act);
            block_shapes.push((y.c, y.b, y.h, y.w));
            pooled.push(y.global_avg_pool());
            block_caches.push(cache);
            x = y;
        }
        let pooled_refs: Vec<&Mat<T>> = pooled.iter().collect();
        let feats = Mat::hcat(&pooled_refs);
        let (hh, hc0) = self.head[0].forward(s, &feats);
        let head_hidden = hh.data.clone();
        let (out, hc1) = self.head[1].forward(s, &Mat { data: silu(&hh.data), ..hh });

        let cache = ForwardCache {
            stem,
            time: [tc0, tc1],
            time_hidden,
            smpl: [sc0, sc1],
            smpl_hidden,
            cond: cond.data,
            attn: attn_caches,
            blocks: block_caches,
            block_shapes,
            head: [hc0, hc1],
            head_hidden,
        };
        Ok((out, cache))
    }

    /// Forward pass without keeping intermediate tensors for training.
    pub fn predict(&self, x_t: &Mat<T>, t: &[usize], conds: &[Condition]) -> Result<Mat<T>> {
        self.forward(x_t, t, conds).map(|(out, _)| out)
    }

    /// Gradients of `sum(d_out * output)` with respect to every weight.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &Mat<T>) -> Grads<T> {
        let s = &self.store;
        let mut grads = s.zeros_like();
        let d_h = self.head[1].backward(s, &mut grads, &cache.head[1], d_out);
        let d_h = Mat {
            data: silu_backward(&cache.head_hidden, &d_h.data),
            ..d_h
        };
        let d_feats = self.head[0].backward(s, &mut grads, &cache.head[0], &d_h);
        let widths: Vec<usize> = cache.block_shapes.iter().map(|sh| sh.0).collect();
        let d_pooled = d_feats.hsplit(&widths);

        let b = d_out.rows;
        let mut d_cond_act = Mat::zeros(b, self.config.latent_dim);
        let mut d_x: Option<Act<T>> = None;
        for i in (0..self.blocks.len()).rev() {
            let (c, bb, h, w) = cache.block_shapes[i];
            let mut d_y = global_avg_pool_backward(&d_pooled[i], c, bb, h, w);
            if let Some(d) = d_x.take() {
                d_y.add_assign(&d);
            }
            let mut d_in = self.blocks[i].backward(s, &mut grads, &cache.blocks[i], &d_y, &mut d_cond_act);
            if let (Some(a), Some(ac)) = (&self.attn[i], &cache.attn[i]) {
                let d_n = a.attn.backward(s, &mut grads, &ac.attn, &d_in);
                let (d_x_norm, dg, db) = LayerNorm::backward(&ac.norm, &d_n);
                a.norm.backward(s, &mut grads, &ac.modc, &dg, &db, &mut d_cond_act);
                d_in.add_assign(&d_x_norm);
            }
            d_x = Some(d_in);
        }
        if let Some(d) = d_x {
            self.stem.backward(s, &mut grads, &cache.stem, &d);
        }

        let d_cond = Mat {
            data: silu_backward(&cache.cond, &d_cond_act.data),
            ..d_cond_act
        };
        for (mlp, caches, hidden) in [
            (&self.time_mlp, &cache.time, &cache.time_hidden),
            (&self.smpl_mlp, &cache.smpl, &cache.smpl_hidden),
        ] {
            let d_h = mlp[1].backward(s, &mut grads, &caches[1], &d_cond);
            let d_h = Mat {
                data: silu_backward(hidden, &d_h.data),
                ..d_h
            };
            mlp[0].backward(s, &mut grads, &caches[0], &d_h);
        }
        grads
    }
}

/// Number of weights of the network described by `config`.
pub fn param_count(config: &DenoiserConfig) -> Result<usize> {
    Ok(Denoiser::<f32>::new(config.clone(), 0)?.param_count())
}
