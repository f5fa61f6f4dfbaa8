//! DDPM noise schedule and the forward/reverse step formulas.
//!
//! Timesteps are 1-based: `t ∈ 1..=T`, with `ᾱ_0 = 1`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::ResourceGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_var: Vec<f64>,
    /// Trained-network timestep evaluated at each schedule index.
    model_timesteps: Vec<usize>,
}

impl NoiseSchedule {
    /// β linearly spaced from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "schedule needs 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(betas, (1..=steps).collect())
    }

    fn from_betas(betas: Vec<f64>, model_timesteps: Vec<usize>) -> Result<Self> {
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let posterior_var = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])
            })
            .collect();
        Ok(Self {
            betas,
            alpha_bars,
            posterior_var,
            model_timesteps,
        })
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.len() {
            return Err(Error::Usage(format!(
                "timestep {t} outside [{lo}, {}]",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `σ_t² = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    pub fn model_timestep(&self, t: usize) -> usize {
        self.model_timesteps[t - 1]
    }

    /// Schedule over `steps` trained timesteps spread uniformly across
    /// `1..=T` (both ends included when `steps >= 2`), with
    /// `β'_i = 1 − ᾱ_{τ_i}/ᾱ_{τ_{i−1}}` so the step formulas apply unchanged.
    pub fn respace(&self, steps: usize) -> Result<Self> {
        let taus = strided_timesteps(self.len(), steps)?;
        let mut prev = 1.0;
        let betas = taus
            .iter()
            .map(|&tau| {
                let ab = self.alpha_bar(tau);
                let b = 1.0 - ab / prev;
                prev = ab;
                b
            })
            .collect();
        let model = taus.iter().map(|&tau| self.model_timestep(tau)).collect();
        Self::from_betas(betas, model)
    }
}

/// Parameters of a linear schedule, as stored in configs and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

/// Uniformly strided subset of `1..=t_max`, ascending.
pub fn strided_timesteps(t_max: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_max {
        return Err(Error::Config(format!(
            "inference steps {steps} outside [1, {t_max}]"
        )));
    }
    if steps == 1 {
        return Ok(vec![t_max]);
    }
    Ok((0..steps)
        .map(|i| 1 + ((i * (t_max - 1)) as f64 / (steps - 1) as f64).round() as usize)
        .collect())
}

/// Grid whose real and imaginary planes are independent standard normals.
pub fn standard_normal_grid<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> ResourceGrid {
    let n = k * m;
    let re = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let im = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    ResourceGrid::from_planes(k, m, re, im).expect("sizes match")
}

fn affine(a: &ResourceGrid, wa: f64, b: &ResourceGrid, wb: f64) -> ResourceGrid {
    let (k, m) = a.dims();
    let re = a.re().iter().zip(b.re()).map(|(x, y)| wa * x + wb * y).collect();
    let im = a.im().iter().zip(b.im()).map(|(x, y)| wa * x + wb * y).collect();
    ResourceGrid::from_planes(k, m, re, im).expect("sizes match")
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`; `t = 0` returns `x0`.
pub fn q_sample(x0: &ResourceGrid, t: usize, eps: &ResourceGrid, sched: &NoiseSchedule) -> Result<ResourceGrid> {
    sched.check(t, 0)?;
    x0.check_same(eps, "q_sample")?;
    let ab = sched.alpha_bar(t);
    Ok(affine(x0, ab.sqrt(), eps, (1.0 - ab).sqrt()))
}

/// Ancestral step `x_{t−1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·z`.
/// `z` must be absent at `t = 1`; absent elsewhere means zero.
pub fn reverse_step(
    x_t: &ResourceGrid,
    eps_hat: &ResourceGrid,
    t: usize,
    sched: &NoiseSchedule,
    z: Option<&ResourceGrid>,
) -> Result<ResourceGrid> {
    sched.check(t, 1)?;
    x_t.check_same(eps_hat, "reverse_step")?;
    if t == 1 && z.is_some() {
        return Err(Error::Usage("reverse_step: no noise may be injected at t = 1".into()));
    }
    let a = sched.alpha(t);
    let c = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let mean = affine(x_t, 1.0 / a.sqrt(), eps_hat, -c / a.sqrt());
    match z {
        Some(z) => {
            mean.check_same(z, "reverse_step noise")?;
            Ok(affine(&mean, 1.0, z, sched.posterior_variance(t).sqrt()))
        }
        None => Ok(mean),
    }
}

/// One forward step `x_t = √(1−β_t)·x_{t−1} + √β_t·ε`, for `t >= 2`.
pub fn forward_renoise(
    x_prev: &ResourceGrid,
    sched: &NoiseSchedule,
    t: usize,
    eps: &ResourceGrid,
) -> Result<ResourceGrid> {
    sched.check(t, 2)?;
    x_prev.check_same(eps, "forward_renoise")?;
    let b = sched.beta(t);
    Ok(affine(x_prev, (1.0 - b).sqrt(), eps, b.sqrt()))
}
