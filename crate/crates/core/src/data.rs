//! Synthetic in-bed depth scenes.
//!
//! The world frame is the body frame: `+x` towards the head of the bed,
//! `+y` to the subject's left, `+z` up, with the mattress surface at
//! `bed_surface_height` and the bed centred on the origin. An orthographic
//! camera looks straight down from `camera_height`; image row 0 is the head
//! end and column 0 the `-y` side.

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::body_model::{
    forward, BodyMesh, Gender, SmplParams, TemplateSet, N_BETAS, N_BODY_JOINTS, PARAM_DIM,
};
use crate::diffusion::{LatentStandardizer, STD_FLOOR};
use crate::{rng, Error, Result};

/// Single-channel overhead depth in metres, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
}

impl DepthImage {
    pub fn filled(h: usize, w: usize, value: f32) -> Self {
        Self {
            h,
            w,
            pixels: vec![value; h * w],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.pixels[r * self.w + c]
    }

    pub fn is_valid(&self, camera_height: f64) -> bool {
        self.pixels.len() == self.h * self.w
            && self
                .pixels
                .iter()
                .all(|&p| p.is_finite() && p > 0.0 && p as f64 <= camera_height + 1e-6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cover {
    Uncover,
    Cover1,
    Cover2,
}

impl Cover {
    pub const ALL: [Cover; 3] = [Cover::Uncover, Cover::Cover1, Cover::Cover2];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::arg(alloc::format!("unknown cover code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Cover::Uncover => "uncover",
            Cover::Cover1 => "cover1",
            Cover::Cover2 => "cover2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Synthetic,
    PseudoReal,
}

impl Domain {
    pub fn code(self) -> u8 {
        match self {
            Domain::Synthetic => 0,
            Domain::PseudoReal => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Domain::Synthetic),
            1 => Ok(Domain::PseudoReal),
            _ => Err(Error::arg(alloc::format!("unknown domain code {code}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub camera_height: f64,
    pub bed_length: f64,
    pub bed_width: f64,
    pub bed_surface_height: f64,
    pub pixel_pitch: f64,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            camera_height: 2.0,
            bed_length: 2.0,
            bed_width: 1.0,
            bed_surface_height: 0.0,
            pixel_pitch: 0.035,
            image_h: 64,
            image_w: 32,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.camera_height,
            self.bed_length,
            self.bed_width,
            self.pixel_pitch,
        ];
        if dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) || self.image_h == 0 || self.image_w == 0 {
            return Err(Error::arg("scene dimensions must be positive"));
        }
        if self.bed_length > self.image_h as f64 * self.pixel_pitch + 1e-9
            || self.bed_width > self.image_w as f64 * self.pixel_pitch + 1e-9
        {
            return Err(Error::arg("bed does not fit inside the image footprint"));
        }
        if !(self.bed_surface_height < self.camera_height) {
            return Err(Error::arg("bed surface must lie below the camera"));
        }
        Ok(())
    }

    /// World `(x, y)` of the centre of pixel `(r, c)`.
    #[inline]
    pub fn pixel_center(&self, r: usize, c: usize) -> (f64, f64) {
        self.pixel_to_world(r as f64, c as f64)
    }

    /// World position of fractional pixel coordinates (centres at integers).
    #[inline]
    pub fn pixel_to_world(&self, r: f64, c: f64) -> (f64, f64) {
        let x = self.image_h as f64 * self.pixel_pitch / 2.0 - (r + 0.5) * self.pixel_pitch;
        let y = (c + 0.5) * self.pixel_pitch - self.image_w as f64 * self.pixel_pitch / 2.0;
        (x, y)
    }

    /// Fractional pixel coordinates `(r, c)` of a world point.
    #[inline]
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let r = (self.image_h as f64 * self.pixel_pitch / 2.0 - x) / self.pixel_pitch - 0.5;
        let c = (y + self.image_w as f64 * self.pixel_pitch / 2.0) / self.pixel_pitch - 0.5;
        (r, c)
    }

    pub fn bed_depth(&self) -> f64 {
        self.camera_height - self.bed_surface_height
    }

    pub fn inside_bed(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.bed_length / 2.0 && y.abs() <= self.bed_width / 2.0
    }

    pub fn empty_image(&self) -> DepthImage {
        DepthImage::filled(self.image_h, self.image_w, self.bed_depth() as f32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub depth: DepthImage,
    /// Some vertex projected outside the image and was clipped.
    pub clipped: bool,
}

/// Orthographic top-surface rasterisation: each pixel centre takes the
/// highest triangle covering it, floored at the mattress.
pub fn render_depth(mesh: &BodyMesh, faces: &[[u32; 3]], scene: &SceneConfig) -> Result<Rendered> {
    if !mesh.is_finite() {
        return Err(Error::arg("cannot render a non-finite mesh"));
    }
    let (h, w) = (scene.image_h, scene.image_w);
    let mut top = vec![scene.bed_surface_height; h * w];
    let mut clipped = false;
    for v in &mesh.vertices {
        let (r, c) = scene.world_to_pixel(v[0], v[1]);
        if r < -0.5 || c < -0.5 || r > h as f64 - 0.5 || c > w as f64 - 0.5 {
            clipped = true;
        }
    }
    for f in faces {
        let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
        let pa = scene.world_to_pixel(a[0], a[1]);
        let pb = scene.world_to_pixel(b[0], b[1]);
        let pc = scene.world_to_pixel(c[0], c[1]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det.abs() < 1e-18 {
            continue;
        }
        let r_lo = pa.0.min(pb.0).min(pc.0).ceil().max(0.0);
        let r_hi = pa.0.max(pb.0).max(pc.0).floor().min(h as f64 - 1.0);
        let c_lo = pa.1.min(pb.1).min(pc.1).ceil().max(0.0);
        let c_hi = pa.1.max(pb.1).max(pc.1).floor().min(w as f64 - 1.0);
        if r_lo > r_hi || c_lo > c_hi {
            continue;
        }
        for r in r_lo as usize..=r_hi as usize {
            for col in c_lo as usize..=c_hi as usize {
                let (x, y) = scene.pixel_center(r, col);
                let l1 = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
                let l2 = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
                let l0 = 1.0 - l1 - l2;
                if l0 >= 0.0 && l1 >= 0.0 && l2 >= 0.0 {
                    let z = l0 * a[2] + l1 * b[2] + l2 * c[2];
                    let t = &mut top[r * w + col];
                    if z > *t {
                        *t = z;
                    }
                }
            }
        }
    }
    let pixels = top.iter().map(|z| (scene.camera_height - z) as f32).collect();
    Ok(Rendered {
        depth: DepthImage { h, w, pixels },
        clipped,
    })
}

/// Separable Gaussian smoothing with edge replication; the kernel is cut at
/// `ceil(2 sigma)` pixels.
pub fn gaussian_blur(values: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return values.to_vec();
    }
    let radius = (2.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * values[r * w + clamp(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

fn dilate(values: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let mut tmp = vec![f64::NEG_INFINITY; h * w];
    for r in 0..h {
        for c in 0..w {
            let (lo, hi) = (c.saturating_sub(radius), (c + radius).min(w - 1));
            tmp[r * w + c] = values[r * w + lo..=r * w + hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut out = vec![f64::NEG_INFINITY; h * w];
    for r in 0..h {
        let (lo, hi) = (r.saturating_sub(radius), (r + radius).min(h - 1));
        for c in 0..w {
            out[r * w + c] = (lo..=hi).map(|rr| tmp[rr * w + c]).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverConfig {
    /// Smoothing width in pixels for thin and thick blankets.
    pub cover1_sigma: f64,
    pub cover2_sigma: f64,
    /// Blanket thickness added on top of the envelope, metres.
    pub cover1_offset: f64,
    pub cover2_offset: f64,
    /// The blanket edge is drawn uniformly within this many rows of the chest.
    pub edge_jitter_rows: usize,
}

impl Default for CoverConfig {
    fn default() -> Self {
        Self {
            cover1_sigma: 1.0,
            cover2_sigma: 2.5,
            cover1_offset: 0.005,
            cover2_offset: 0.015,
            edge_jitter_rows: 2,
        }
    }
}

/// Drapes a blanket over rows `start_row..` of the image. The covered
/// surface is the Gaussian-smoothed dilation of the height field (which
/// never lies below it) raised by the blanket thickness.
pub fn apply_cover(depth: &DepthImage, cover: Cover, start_row: usize, scene: &SceneConfig, cfg: &CoverConfig) -> DepthImage {
    let (sigma, offset) = match cover {
        Cover::Uncover => return depth.clone(),
        Cover::Cover1 => (cfg.cover1_sigma, cfg.cover1_offset),
        Cover::Cover2 => (cfg.cover2_sigma, cfg.cover2_offset),
    };
    let (h, w) = (depth.h, depth.w);
    let height: Vec<f64> = depth.pixels.iter().map(|&d| scene.camera_height - d as f64).collect();
    let radius = (2.0 * sigma).ceil() as usize;
    let envelope = gaussian_blur(&dilate(&height, h, w, radius), h, w, sigma);
    let mut out = depth.clone();
    for r in start_row.min(h)..h {
        for c in 0..w {
            let i = r * w + c;
            let top = envelope[i].max(height[i]) + offset;
            out.pixels[i] = (scene.camera_height - top) as f32;
        }
    }
    out
}

/// Blanket edge row: the chest (spine joint 9) projected into the image,
/// jittered by up to `edge_jitter_rows`.
pub fn sample_blanket_start(mesh: &BodyMesh, scene: &SceneConfig, cfg: &CoverConfig, rng: &mut rng::Rng) -> usize {
    let chest = mesh.joints[9];
    let (r, _) = scene.world_to_pixel(chest[0], chest[1]);
    let j = cfg.edge_jitter_rows as i64;
    let jitter = if j > 0 { rng.random_range(-j..=j) } else { 0 };
    (r.round() as i64 + jitter).clamp(0, scene.image_h as i64 - 1) as usize
}

/// Magnitudes of the sensor/mattress shift applied to one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftProfile {
    pub noise_std: f64,
    /// Constant depth offset, metres.
    pub bias: f64,
    pub blur_sigma: f64,
    /// Extra depth at the bed centre from mattress sag, falling off
    /// quadratically to zero at the bed edges.
    pub sag: f64,
}

impl ShiftProfile {
    pub fn identity() -> Self {
        Self {
            noise_std: 0.0,
            bias: 0.0,
            blur_sigma: 0.0,
            sag: 0.0,
        }
    }
}

/// Pseudo-real domain parameters; each participant draws its own bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub noise_std: f64,
    pub bias_min: f64,
    pub bias_max: f64,
    pub blur_sigma: f64,
    pub sag: f64,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.005,
            bias_min: -0.06,
            bias_max: -0.02,
            blur_sigma: 1.0,
            sag: 0.03,
            seed: 0x5107,
        }
    }
}

impl ShiftConfig {
    pub fn participant_profile(&self, participant: u64) -> ShiftProfile {
        let mut r = rng::stream(self.seed, participant);
        let bias = if self.bias_max > self.bias_min {
            r.random_range(self.bias_min..self.bias_max)
        } else {
            self.bias_min
        };
        ShiftProfile {
            noise_std: self.noise_std,
            bias,
            blur_sigma: self.blur_sigma,
            sag: self.sag,
        }
    }
}

/// Applies sag, blur, bias and noise in that order.
pub fn domain_shift(depth: &DepthImage, profile: &ShiftProfile, scene: &SceneConfig, rng: &mut rng::Rng) -> DepthImage {
    let (h, w) = (depth.h, depth.w);
    let mut d: Vec<f64> = depth.pixels.iter().map(|&p| p as f64).collect();
    if profile.sag != 0.0 {
        for r in 0..h {
            for c in 0..w {
                let (x, y) = scene.pixel_center(r, c);
                let rho2 = (2.0 * x / scene.bed_length).powi(2) + (2.0 * y / scene.bed_width).powi(2);
                d[r * w + c] += profile.sag * (1.0 - rho2).max(0.0);
            }
        }
    }
    if profile.blur_sigma > 0.0 {
        d = gaussian_blur(&d, h, w, profile.blur_sigma);
    }
    let pixels = d
        .iter()
        .map(|&v| {
            let mut v = v + profile.bias;
            if profile.noise_std > 0.0 {
                v += profile.noise_std * rng::normal(rng);
            }
            v.clamp(1e-3, scene.camera_height) as f32
        })
        .collect();
    DepthImage { h, w, pixels }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub p_rotate: f64,
    pub max_rotation_deg: f64,
    pub p_erase: f64,
    pub max_erase_fraction: f64,
    pub p_noise: f64,
    pub max_noise_std: f64,
    /// Rotate the ground-truth body together with the image.
    pub label_consistent: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_rotate: 0.5,
            max_rotation_deg: 15.0,
            p_erase: 0.5,
            max_erase_fraction: 0.2,
            p_noise: 0.5,
            max_noise_std: 0.01,
            label_consistent: false,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            p_rotate: 0.0,
            p_erase: 0.0,
            p_noise: 0.0,
            ..Self::default()
        }
    }
}

/// Axis-aligned pixel rectangle `rows x cols` starting at `(r0, c0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRect {
    pub r0: usize,
    pub c0: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentRecord {
    /// Counter-clockwise rotation about `+z` through the image centre, radians.
    pub rotation: Option<f64>,
    pub erase: Option<EraseRect>,
    pub noise_std: Option<f64>,
}

/// Rotates image content by `angle` about the image centre, resampling
/// bilinearly; samples from outside the image read as bare mattress.
pub fn rotate_image(depth: &DepthImage, angle: f64, scene: &SceneConfig) -> DepthImage {
    let (h, w) = (depth.h, depth.w);
    let (s, c) = angle.sin_cos();
    let bed = scene.bed_depth();
    let fetch = |r: isize, col: isize| {
        if r < 0 || col < 0 || r >= h as isize || col >= w as isize {
            bed
        } else {
            depth.at(r as usize, col as usize) as f64
        }
    };
    let mut out = depth.clone();
    for r in 0..h {
        for col in 0..w {
            let (x, y) = scene.pixel_center(r, col);
            let (sx, sy) = (c * x + s * y, -s * x + c * y);
            let (fr, fc) = scene.world_to_pixel(sx, sy);
            let (r0, c0) = (fr.floor(), fc.floor());
            let (tr, tc) = (fr - r0, fc - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            let v = (1.0 - tr) * ((1.0 - tc) * fetch(r0, c0) + tc * fetch(r0, c0 + 1))
                + tr * ((1.0 - tc) * fetch(r0 + 1, c0) + tc * fetch(r0 + 1, c0 + 1));
            out.pixels[r * w + col] = v as f32;
        }
    }
    out
}

/// Fills `rect` with bare-mattress depth.
pub fn erase_rect(depth: &DepthImage, rect: EraseRect, scene: &SceneConfig) -> DepthImage {
    let mut out = depth.clone();
    let bed = scene.bed_depth() as f32;
    for r in rect.r0..(rect.r0 + rect.rows).min(depth.h) {
        for c in rect.c0..(rect.c0 + rect.cols).min(depth.w) {
            out.pixels[r * depth.w + c] = bed;
        }
    }
    out
}

/// Random rotation, erase and noise, each applied with its own probability.
pub fn augment(depth: &DepthImage, policy: &AugmentPolicy, scene: &SceneConfig, rng: &mut rng::Rng) -> (DepthImage, AugmentRecord) {
    let mut rec = AugmentRecord::default();
    let mut out = depth.clone();
    if rng.random_bool(policy.p_rotate.clamp(0.0, 1.0)) {
        let max = policy.max_rotation_deg.to_radians();
        let a = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        out = rotate_image(&out, a, scene);
        rec.rotation = Some(a);
    }
    if rng.random_bool(policy.p_erase.clamp(0.0, 1.0)) {
        let (h, w) = (out.h, out.w);
        let frac = rng.random_range(0.0..=policy.max_erase_fraction.clamp(0.0, 1.0));
        let aspect: f64 = rng.random_range(0.5..2.0);
        let area = frac * (h * w) as f64;
        let rows = ((area * aspect).sqrt().floor() as usize).clamp(0, h);
        let cols = if rows == 0 { 0 } else { ((area / rows as f64).floor() as usize).min(w) };
        let rect = EraseRect {
            r0: rng.random_range(0..=h - rows),
            c0: rng.random_range(0..=w - cols),
            rows,
            cols,
        };
        out = erase_rect(&out, rect, scene);
        rec.erase = Some(rect);
    }
    if rng.random_bool(policy.p_noise.clamp(0.0, 1.0)) {
        let std = rng.random_range(0.0..=policy.max_noise_std.max(0.0));
        for p in out.pixels.iter_mut() {
            *p = (*p as f64 + std * rng::normal(rng)).clamp(1e-3, scene.camera_height) as f32;
        }
        rec.noise_std = Some(std);
    }
    (out, rec)
}

/// Uniform bounds for sampled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub beta: (f64, f64),
    /// Per body joint, per axis `(lo, hi)` in radians.
    pub theta: Vec<[(f64, f64); 3]>,
    pub transl_x: (f64, f64),
    pub transl_y: (f64, f64),
    pub transl_z: (f64, f64),
    /// Global Euler angles about x (roll), y and z (in-bed heading).
    pub global: [(f64, f64); 3],
    pub p_female: f64,
}

/// Anatomical limits for the 23 body joints, radians.
pub fn default_theta_limits() -> Vec<[(f64, f64); 3]> {
    let sym = |a: f64| (-a, a);
    let mut t = vec![[sym(0.1); 3]; N_BODY_JOINTS];
    let mut set = |joint: usize, v: [(f64, f64); 3]| t[joint - 1] = v;
    for hip in [1, 2] {
        set(hip, [sym(0.25), (-0.1, 0.6), sym(0.35)]);
    }
    for knee in [4, 5] {
        set(knee, [sym(0.05), (-1.0, 0.0), sym(0.05)]);
    }
    for spine in [3, 6, 9] {
        set(spine, [sym(0.12), sym(0.12), sym(0.12)]);
    }
    for ankle in [7, 8] {
        set(ankle, [sym(0.25), sym(0.3), sym(0.25)]);
    }
    for neck in [12, 15] {
        set(neck, [sym(0.3), sym(0.3), sym(0.4)]);
    }
    for collar in [13, 14] {
        set(collar, [sym(0.15); 3]);
    }
    for shoulder in [16, 17] {
        set(shoulder, [sym(0.4), (-0.3, 0.6), sym(0.6)]);
    }
    for elbow in [18, 19] {
        set(elbow, [sym(0.3), (-1.2, 0.0), sym(0.6)]);
    }
    for wrist in [20, 21] {
        set(wrist, [sym(0.3); 3]);
    }
    for hand in [22, 23] {
        set(hand, [sym(0.2); 3]);
    }
    t
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            beta: (-2.0, 2.0),
            theta: default_theta_limits(),
            transl_x: (-0.1, 0.1),
            transl_y: (-0.15, 0.15),
            transl_z: (0.0, 0.0),
            global: [(-0.3, 0.3), (-0.1, 0.1), (-0.3, 0.3)],
            p_female: 0.5,
        }
    }
}

fn uniform(rng: &mut rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub const MAX_FOOTPRINT_TRIES: usize = 100;

/// Draws parameters and gender until the posed mesh lies inside the bed
/// outline, giving up after [`MAX_FOOTPRINT_TRIES`] attempts.
pub fn sample_params(
    rng: &mut rng::Rng,
    ranges: &ParamRanges,
    templates: &TemplateSet,
    scene: &SceneConfig,
) -> Result<(SmplParams, Gender)> {
    if ranges.theta.len() != N_BODY_JOINTS {
        return Err(Error::shape("theta limits", N_BODY_JOINTS, ranges.theta.len()));
    }
    for _ in 0..MAX_FOOTPRINT_TRIES {
        let mut p = SmplParams::identity();
        for b in p.beta.iter_mut() {
            *b = uniform(rng, ranges.beta);
        }
        for (joint, limits) in p.theta.iter_mut().zip(&ranges.theta) {
            for (v, lim) in joint.iter_mut().zip(limits) {
                *v = uniform(rng, *lim);
            }
        }
        p.transl = [
            uniform(rng, ranges.transl_x),
            uniform(rng, ranges.transl_y),
            uniform(rng, ranges.transl_z),
        ];
        let phi = ranges.global.map(|r| uniform(rng, r));
        p.set_global_euler(phi);
        let gender = if rng.random_bool(ranges.p_female.clamp(0.0, 1.0)) {
            Gender::Female
        } else {
            Gender::Male
        };
        let mesh = forward(&p, gender, templates)?;
        if mesh.vertices.iter().all(|v| scene.inside_bed(v[0], v[1])) {
            return Ok((p, gender));
        }
    }
    Err(Error::FootprintRejected {
        tries: MAX_FOOTPRINT_TRIES,
    })
}

/// Rounds every parameter to the nearest `f32`, the stored precision.
pub fn round_to_f32(p: &SmplParams) -> SmplParams {
    let x = p.pack().map(|v| v as f32 as f64);
    SmplParams::unpack(&x).expect("packed length is fixed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub depth: DepthImage,
    pub params: SmplParams,
    pub gender: Gender,
    pub cover: Cover,
    pub domain: Domain,
}

/// Population statistics of a training set, used to normalise the losses
/// and the diffusion latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub sigma_beta: f64,
    pub sigma_theta: f64,
    pub sigma_psi: f64,
    pub sigma_j: f64,
    pub sigma_v: f64,
    pub latent: LatentStandardizer,
}

/// Root of the mean per-dimension population variance over a group of
/// columns, floored.
fn pooled_std(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut total = 0.0;
    for d in 0..dim {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        total += rows.iter().map(|r| (r[d] - mean) * (r[d] - mean)).sum::<f64>() / n;
    }
    (total / dim as f64).sqrt().max(STD_FLOOR)
}

pub fn compute_norm_stats(samples: &[Sample], templates: &TemplateSet) -> Result<NormStats> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let packed: Vec<[f64; PARAM_DIM]> = samples.iter().map(|s| s.params.pack()).collect();
    let cols = |range: core::ops::Range<usize>| -> Vec<Vec<f64>> { packed.iter().map(|x| x[range.clone()].to_vec()).collect() };
    let mut joints = Vec::with_capacity(samples.len());
    let mut verts = Vec::with_capacity(samples.len());
    for s in samples {
        let mesh = forward(&s.params, s.gender, templates)?;
        joints.push(mesh.joints.iter().flatten().copied().collect::<Vec<f64>>());
        verts.push(mesh.vertices.iter().flatten().copied().collect::<Vec<f64>>());
    }
    use crate::body_model::{ROT_U_OFFSET, THETA_OFFSET, TRANSL_OFFSET};
    Ok(NormStats {
        sigma_beta: pooled_std(&cols(0..N_BETAS)),
        sigma_theta: pooled_std(&cols(THETA_OFFSET..TRANSL_OFFSET)),
        sigma_psi: pooled_std(&cols(ROT_U_OFFSET..PARAM_DIM)),
        sigma_j: pooled_std(&joints),
        sigma_v: pooled_std(&verts),
        latent: LatentStandardizer::fit(packed.iter().map(|x| x.as_slice()), PARAM_DIM)?,
    })
}

/// Recipe for a dataset; sample `i` depends only on `(seed, i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub ranges: ParamRanges,
    pub covers: CoverConfig,
    /// Relative frequencies of uncover, cover1 and cover2.
    pub cover_weights: [f64; 3],
    pub domain: Domain,
    pub shift: ShiftConfig,
    /// Pseudo-real participants, assigned round-robin by sample index.
    pub participants: (u64, u64),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            seed: 0,
            scene: SceneConfig::default(),
            ranges: ParamRanges::default(),
            covers: CoverConfig::default(),
            cover_weights: [1.0, 1.0, 1.0],
            domain: Domain::Synthetic,
            shift: ShiftConfig::default(),
            participants: (1, 80),
        }
    }
}

impl DatasetConfig {
    pub fn participant(&self, index: usize) -> u64 {
        let (lo, hi) = self.participants;
        lo + index as u64 % (hi - lo + 1)
    }
}

/// Builds sample `index` of the dataset described by `cfg`.
pub fn generate_sample(cfg: &DatasetConfig, templates: &TemplateSet, index: usize) -> Result<Sample> {
    let mut r = rng::stream(cfg.seed, index as u64);
    let (params, gender) = sample_params(&mut r, &cfg.ranges, templates, &cfg.scene)?;
    let params = round_to_f32(&params);
    let mesh = forward(&params, gender, templates)?;
    let rendered = render_depth(&mesh, &templates.get(gender).faces, &cfg.scene)?;
    let total: f64 = cfg.cover_weights.iter().sum();
    let mut pick = r.random_range(0.0..total.max(f64::MIN_POSITIVE));
    let mut cover = Cover::Cover2;
    for (c, wgt) in Cover::ALL.iter().zip(cfg.cover_weights) {
        if pick < wgt {
            cover = *c;
            break;
        }
        pick -= wgt;
    }
    let start = sample_blanket_start(&mesh, &cfg.scene, &cfg.covers, &mut r);
    let mut depth = apply_cover(&rendered.depth, cover, start, &cfg.scene, &cfg.covers);
    if cfg.domain == Domain::PseudoReal {
        let profile = cfg.shift.participant_profile(cfg.participant(index));
        depth = domain_shift(&depth, &profile, &cfg.scene, &mut r);
    }
    Ok(Sample {
        depth,
        params,
        gender,
        cover,
        domain: cfg.domain,
    })
}

pub fn generate_dataset(cfg: &DatasetConfig, templates: &TemplateSet) -> Result<Vec<Sample>> {
    cfg.scene.validate()?;
    if cfg.participants.1 < cfg.participants.0 {
        return Err(Error::arg("participant range is empty"));
    }
    (0..cfg.n_samples).map(|i| generate_sample(cfg, templates, i)).collect()
}
