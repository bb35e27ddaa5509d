//! Gaussian diffusion over parameter vectors with an x0-predicting denoiser.
//!
//! Timesteps are indexed `0..T`. With `alpha_t = 1 - sigma_t^2` and
//! `alpha_bar_t = prod_{i<=t} alpha_i`, the forward marginal is
//! `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Per-step noise standard deviation `sigma_t = sqrt(1 - alpha_t)`.
    pub sigma: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear `sigma_t^2` from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::arg("schedule needs at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::arg(alloc::format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut alpha = Vec::with_capacity(steps);
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut sigma = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for t in 0..steps {
            let beta = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64
            };
            let a = 1.0 - beta;
            prod *= a;
            alpha.push(a);
            alpha_bar.push(prod);
            sigma.push(beta.sqrt());
        }
        Ok(Self {
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::StepOutOfRange {
                step: t,
                total: self.steps() - 1,
            });
        }
        Ok(())
    }

    /// Coefficients `(c_z, c_x)` of the posterior mean
    /// `mu = c_z * z_t + c_x * x_t` for `t >= 1`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        if t == 0 {
            return Err(Error::arg("posterior is undefined at t = 0"));
        }
        let (a, ab, ab_prev) = (self.alpha[t], self.alpha_bar[t], self.alpha_bar[t - 1]);
        let cz = ab_prev.sqrt() * (1.0 - a) / (1.0 - ab);
        let cx = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok((cz, cx))
    }

    /// Standard deviation of the true posterior `q(x_{t-1} | x_t, x0)`.
    pub fn posterior_std(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        if t == 0 {
            return Err(Error::arg("posterior is undefined at t = 0"));
        }
        let (a, ab, ab_prev) = (self.alpha[t], self.alpha_bar[t], self.alpha_bar[t - 1]);
        Ok(((1.0 - ab_prev) / (1.0 - ab) * (1.0 - a)).sqrt())
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    DiffusionSchedule::linear(steps, beta_start, beta_end)
}

pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if eps.len() != x0.len() {
        return Err(Error::shape("noise", x0.len(), eps.len()));
    }
    let ab = sched.alpha_bar[t];
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| s * x + n * e).collect())
}

pub fn posterior_mean(z_t: &[f64], x_t: &[f64], t: usize, sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    if z_t.len() != x_t.len() {
        return Err(Error::shape("posterior input", x_t.len(), z_t.len()));
    }
    let (cz, cx) = sched.posterior_coefficients(t)?;
    Ok(z_t.iter().zip(x_t).map(|(z, x)| cz * z + cx * x).collect())
}

/// One ancestral step `x_{t-1} = mu + sigma_post * eps`; the step into
/// `t = 0` adds no noise.
pub fn ddpm_step(z_t: &[f64], x_t: &[f64], t: usize, eps: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    let mut mu = posterior_mean(z_t, x_t, t, sched)?;
    if eps.len() != mu.len() {
        return Err(Error::shape("noise", mu.len(), eps.len()));
    }
    if t > 1 {
        let s = sched.posterior_std(t)?;
        for (m, e) in mu.iter_mut().zip(eps) {
            *m += s * e;
        }
    }
    Ok(mu)
}

/// Uniform-stride descending timesteps, starting from `T - 1`.
pub fn ddim_timesteps(steps: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > steps {
        return Err(Error::arg(alloc::format!(
            "DDIM needs 1..={steps} steps, got {n_steps}"
        )));
    }
    let stride = steps / n_steps;
    Ok((0..n_steps).map(|k| steps - 1 - k * stride).collect())
}

/// Deterministic (eta = 0) DDIM update from `t` to `t_prev` given the
/// current x0 estimate. `t_prev = None` lands on the clean sample.
pub fn ddim_update(z_t: &[f64], x_t: &[f64], t: usize, t_prev: Option<usize>, sched: &DiffusionSchedule) -> Vec<f64> {
    let ab = sched.alpha_bar[t];
    let ab_prev = t_prev.map_or(1.0, |p| sched.alpha_bar[p]);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sa_prev, sn_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    z_t.iter()
        .zip(x_t)
        .map(|(z, x)| sa_prev * z + sn_prev * (x - sa * z) / sn)
        .collect()
}

/// DDIM sampling for a batch of independent items.
///
/// `denoise` receives the current latents of every item and the shared
/// timestep and returns one x0 estimate per item. Each item starts from
/// standard normal noise drawn from its own seed. Returns the final x0
/// estimates.
pub fn ddim_sample_batch<F>(
    mut denoise: F,
    seeds: &[u64],
    dim: usize,
    n_steps: usize,
    sched: &DiffusionSchedule,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[Vec<f64>], usize) -> Result<Vec<Vec<f64>>>,
{
    let timesteps = ddim_timesteps(sched.steps(), n_steps)?;
    let mut x: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&s| rng::normals(&mut rng::stream(s, 0xdd1), dim))
        .collect();
    let mut z = Vec::new();
    for (i, &t) in timesteps.iter().enumerate() {
        z = denoise(&x, t)?;
        if z.len() != x.len() {
            return Err(Error::shape("denoiser batch", x.len(), z.len()));
        }
        let t_prev = timesteps.get(i + 1).copied();
        x = z
            .iter()
            .zip(&x)
            .map(|(zi, xi)| ddim_update(zi, xi, t, t_prev, sched))
            .collect();
    }
    Ok(z)
}

/// Single-item convenience wrapper over [`ddim_sample_batch`].
pub fn ddim_sample<F>(mut denoise: F, seed: u64, dim: usize, n_steps: usize, sched: &DiffusionSchedule) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let mut out = ddim_sample_batch(
        |xs, t| xs.iter().map(|x| denoise(x, t)).collect(),
        &[seed],
        dim,
        n_steps,
        sched,
    )?;
    Ok(out.pop().unwrap())
}

/// Per-dimension z-scoring of raw parameter vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl LatentStandardizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::shape("standardizer std", mean.len(), std.len()));
        }
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; dim],
            std: alloc::vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation of each dimension.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut sum = alloc::vec![0.0; dim];
        let mut sum_sq = alloc::vec![0.0; dim];
        let mut count = 0usize;
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for row in &rows {
            if row.len() != dim {
                return Err(Error::shape("standardizer row", dim, row.len()));
            }
            for (s, v) in sum.iter_mut().zip(row.iter()) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for row in &rows {
            for ((s, v), m) in sum_sq.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = sum_sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Self::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn destandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn default_schedule() -> DiffusionSchedule {
        make_schedule(100, 1e-4, 0.2).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha, vec![0.5]);
        assert_eq!(s.alpha_bar, vec![0.5]);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn default_schedule_destroys_signal() {
        let s = default_schedule();
        // independent product in log space
        let log_prod: f64 = (0..100)
            .map(|t| (1.0 - (1e-4 + (0.2 - 1e-4) * t as f64 / 99.0)).ln())
            .sum();
        assert!((s.alpha_bar[99] - log_prod.exp()).abs() < 1e-12);
        assert!(s.alpha_bar[99] < 0.05);
        for w in s.alpha_bar.windows(2) {
            assert!(w[1] < w[0]);
        }
        for &a in &s.alpha {
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn q_sample_branches() {
        let s = default_schedule();
        let x0 = vec![1.0, -2.0, 3.0];
        let xt = q_sample(&x0, 40, &[0.0; 3], &s).unwrap();
        for (a, b) in xt.iter().zip(&x0) {
            assert_eq!(*a, s.alpha_bar[40].sqrt() * b);
        }
        let eps = vec![0.5, 0.25, -1.0];
        let xt = q_sample(&[0.0; 3], 40, &eps, &s).unwrap();
        for (a, e) in xt.iter().zip(&eps) {
            assert_eq!(*a, (1.0 - s.alpha_bar[40]).sqrt() * e);
        }
        assert!(q_sample(&x0, 100, &eps, &s).is_err());
    }

    #[test]
    fn posterior_mean_noiseless_identity() {
        let s = default_schedule();
        let x0 = vec![0.7, -1.3, 2.2, 0.0];
        for t in 1..100 {
            let xt: Vec<f64> = x0.iter().map(|v| s.alpha_bar[t].sqrt() * v).collect();
            let mu = posterior_mean(&x0, &xt, t, &s).unwrap();
            for (m, v) in mu.iter().zip(&x0) {
                assert!((m - s.alpha_bar[t - 1].sqrt() * v).abs() < 1e-12, "t={t}");
            }
        }
        assert_eq!(posterior_mean(&[0.0; 4], &[0.0; 4], 5, &s).unwrap(), vec![0.0; 4]);
        assert!(posterior_mean(&x0, &x0, 0, &s).is_err());
    }

    #[test]
    fn ddpm_step_edges() {
        let s = default_schedule();
        let z = vec![0.3, -0.4];
        let x = vec![1.0, 2.0];
        let mu = posterior_mean(&z, &x, 7, &s).unwrap();
        assert_eq!(ddpm_step(&z, &x, 7, &[0.0, 0.0], &s).unwrap(), mu);
        let mu1 = posterior_mean(&z, &x, 1, &s).unwrap();
        assert_eq!(ddpm_step(&z, &x, 1, &[5.0, -5.0], &s).unwrap(), mu1);
        assert!(ddpm_step(&z, &x, 0, &[0.0, 0.0], &s).is_err());
    }

    #[test]
    fn ddim_timestep_sequences() {
        assert_eq!(ddim_timesteps(100, 5).unwrap(), vec![99, 79, 59, 39, 19]);
        let full = ddim_timesteps(100, 100).unwrap();
        assert_eq!(full, (0..100).rev().collect::<Vec<_>>());
        assert!(ddim_timesteps(100, 0).is_err());
        assert!(ddim_timesteps(100, 101).is_err());
    }

    #[test]
    fn ddim_constant_denoiser_is_fixed_point() {
        let s = default_schedule();
        let target = vec![0.25, -1.5, 3.0];
        for n in [1, 2, 5, 17, 100] {
            let out = ddim_sample(|_, _| Ok(target.clone()), 9, 3, n, &s).unwrap();
            assert_eq!(out, target);
        }
    }

    #[test]
    fn ddim_is_deterministic() {
        let s = default_schedule();
        let f = |x: &[f64], t: usize| Ok(x.iter().map(|v| 0.5 * v + t as f64 * 1e-3).collect());
        let a = ddim_sample(f, 42, 8, 5, &s).unwrap();
        let b = ddim_sample(f, 42, 8, 5, &s).unwrap();
        assert_eq!(a, b);
        let c = ddim_sample(f, 43, 8, 5, &s).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn standardizer_roundtrip_and_floor() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let st = LatentStandardizer::fit(rows.iter().map(|r| r.as_slice()), 2).unwrap();
        assert_eq!(st.mean, vec![2.0, 5.0]);
        assert_eq!(st.std, vec![1.0, STD_FLOOR]);
        assert_eq!(st.standardize(&[2.0, 5.0]), vec![0.0, 0.0]);
        let x = [1.7, 5.000_000_3];
        let back = st.destandardize(&st.standardize(&x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-6 * b.abs());
        }
        assert!(matches!(
            LatentStandardizer::fit(core::iter::empty::<&[f64]>(), 2),
            Err(Error::EmptyDataset)
        ));
    }
}
