//! Synthetic tapped-delay-line channel frequency responses, AWGN, and
//! dataset generation.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ResourceGrid;
use crate::seeding::derived_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModelConfig {
    pub num_paths: usize,
    /// RMS delay spread of the exponential power-delay profile, seconds.
    pub delay_spread: f64,
    /// Hz.
    pub max_doppler: f64,
    /// Hz.
    pub subcarrier_spacing: f64,
    pub num_subcarriers: usize,
    pub num_symbols: usize,
    /// Seconds, including cyclic prefix.
    pub symbol_duration: f64,
    pub seed: u64,
}

impl Default for ChannelModelConfig {
    fn default() -> Self {
        Self {
            num_paths: 8,
            delay_spread: 100e-9,
            max_doppler: 0.0,
            subcarrier_spacing: 30e3,
            num_subcarriers: 128,
            num_symbols: 1,
            symbol_duration: 1.0 / 30e3 * (15.0 / 14.0),
            seed: 0,
        }
    }
}

impl ChannelModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("channel: {m}")));
        if self.num_paths < 1 {
            return bad("num_paths must be >= 1");
        }
        if !(self.delay_spread > 0.0 && self.delay_spread.is_finite()) {
            return bad("delay_spread must be positive");
        }
        if !(self.max_doppler >= 0.0 && self.max_doppler.is_finite()) {
            return bad("max_doppler must be non-negative");
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.symbol_duration > 0.0) {
            return bad("subcarrier_spacing and symbol_duration must be positive");
        }
        if self.num_subcarriers < 2 {
            return bad("num_subcarriers must be >= 2");
        }
        if self.num_symbols < 1 {
            return bad("num_symbols must be >= 1");
        }
        Ok(())
    }
}

/// One propagation path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    /// Seconds.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Draws path delays, Dopplers and gains. Gains are complex Gaussian with
/// powers following `exp(-τ/delay_spread)`, normalised to unit total power.
pub fn draw_paths<R: Rng + ?Sized>(cfg: &ChannelModelConfig, rng: &mut R) -> Result<Vec<Path>> {
    cfg.validate()?;
    let delay = Exp::new(1.0 / cfg.delay_spread)
        .map_err(|e| Error::Config(format!("channel: delay distribution: {e}")))?;
    let mut paths: Vec<Path> = (0..cfg.num_paths)
        .map(|_| {
            let tau = delay.sample(rng);
            let nu = if cfg.max_doppler > 0.0 {
                rng.gen_range(-cfg.max_doppler..cfg.max_doppler)
            } else {
                0.0
            };
            Path {
                gain: Complex64::new(0.0, 0.0),
                delay: tau,
                doppler: nu,
            }
        })
        .collect();
    let weights: Vec<f64> = paths
        .iter()
        .map(|p| (-p.delay / cfg.delay_spread).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for (p, w) in paths.iter_mut().zip(&weights) {
        p.gain = complex_normal(rng, w / total);
    }
    Ok(paths)
}

/// `H[k,m] = Σ g·exp(-j2π f_k τ)·exp(j2π ν t_m)`.
pub fn cfr_from_paths(cfg: &ChannelModelConfig, paths: &[Path]) -> ResourceGrid {
    ResourceGrid::from_fn(cfg.num_subcarriers, cfg.num_symbols, |k, m| {
        let f = k as f64 * cfg.subcarrier_spacing;
        let t = m as f64 * cfg.symbol_duration;
        paths
            .iter()
            .map(|p| p.gain * Complex64::from_polar(1.0, 2.0 * PI * (p.doppler * t - f * p.delay)))
            .sum()
    })
}

pub fn draw_channel<R: Rng + ?Sized>(cfg: &ChannelModelConfig, rng: &mut R) -> Result<ResourceGrid> {
    let paths = draw_paths(cfg, rng)?;
    Ok(cfr_from_paths(cfg, &paths))
}

/// Noise variance for a unit-power signal at `snr_db`; zero at +∞.
pub fn noise_var_for_snr(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Adds i.i.d. circular complex Gaussian noise of per-element variance `noise_var`.
pub fn add_noise<R: Rng + ?Sized>(grid: &ResourceGrid, noise_var: f64, rng: &mut R) -> ResourceGrid {
    if noise_var == 0.0 {
        return grid.clone();
    }
    let mut out = grid.clone();
    for i in 0..out.len() {
        out.set_at(i, grid.at(i) + complex_normal(rng, noise_var));
    }
    out
}

/// AWGN at `snr_db` relative to the grid's own mean power. `+∞` is the identity.
pub fn awgn<R: Rng + ?Sized>(grid: &ResourceGrid, snr_db: f64, rng: &mut R) -> ResourceGrid {
    let var = grid.mean_power() * noise_var_for_snr(snr_db);
    add_noise(grid, var, rng)
}

/// `Y = H ⊙ X + N` with noise variance referenced to unit signal power.
pub fn transmit<R: Rng + ?Sized>(
    h: &ResourceGrid,
    x: &ResourceGrid,
    snr_db: f64,
    rng: &mut R,
) -> Result<ResourceGrid> {
    let y = h.hadamard(x)?;
    Ok(add_noise(&y, noise_var_for_snr(snr_db), rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ResourceGrid>,
    /// Divisor already applied to every sample (1 for raw data).
    pub normalization: f64,
    pub config: Option<ChannelModelConfig>,
}

impl Dataset {
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.dims())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        let e: f64 = self.samples.iter().map(|s| s.energy()).sum();
        let n: usize = self.samples.iter().map(|s| s.len()).sum();
        e / n as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Raw (unnormalised) splits. Sample `i` of split `s` is drawn from its own
/// stream derived from `cfg.seed`, so the result does not depend on thread count.
pub fn build_dataset(
    cfg: &ChannelModelConfig,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> Result<DatasetSplits> {
    cfg.validate()?;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "dataset: split sizes must be positive (train={n_train}, val={n_val}, test={n_test})"
        )));
    }
    let split = |stream: u64, n: usize| -> Result<Dataset> {
        let samples = (0..n)
            .into_par_iter()
            .map(|i| draw_channel(cfg, &mut derived_rng(cfg.seed, stream, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            normalization: 1.0,
            config: Some(cfg.clone()),
        })
    };
    Ok(DatasetSplits {
        train: split(1, n_train)?,
        val: split(2, n_val)?,
        test: split(3, n_test)?,
    })
}

/// Divides every split by √(mean train power).
pub fn normalize_dataset(splits: DatasetSplits) -> Result<DatasetSplits> {
    let p = splits.train.mean_power();
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Numerical(format!("train split mean power is {p}")));
    }
    let scale = p.sqrt();
    let norm = |d: Dataset| Dataset {
        samples: d.samples.iter().map(|s| s.scale(1.0 / scale)).collect(),
        normalization: d.normalization * scale,
        config: d.config,
    };
    Ok(DatasetSplits {
        train: norm(splits.train),
        val: norm(splits.val),
        test: norm(splits.test),
    })
}

pub const DATASET_MAGIC: &[u8; 8] = b"DIFFRXDS";

/// `DIFFRXDS`, `u32` count, `u32` K, `u32` M, `f32` normalisation, then per
/// sample interleaved re/im `f32` in row-major order; all little-endian.
pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    let (k, m) = ds.dims().unwrap_or((0, 0));
    let mut buf = Vec::with_capacity(24 + ds.len() * k * m * 8);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(k as u32).to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.normalization as f32).to_le_bytes());
    for s in &ds.samples {
        if s.dims() != (k, m) {
            return Err(Error::shape("dataset sample", &[k, m], &[s.dims().0, s.dims().1]));
        }
        for (r, i) in s.re().iter().zip(s.im()) {
            buf.extend_from_slice(&(*r as f32).to_le_bytes());
            buf.extend_from_slice(&(*i as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Header fields `(count, K, M, normalisation)` of an encoded dataset.
pub fn read_dataset_header(bytes: &[u8]) -> Result<(usize, usize, usize, f64)> {
    if bytes.len() < 24 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format("not a DIFFRXDS dataset".into()));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let norm = f32::from_le_bytes(bytes[20..24].try_into().unwrap()) as f64;
    Ok((u(8), u(12), u(16), norm))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (count, k, m, normalization) = read_dataset_header(&bytes)?;
    let need = 24 + count * k * m * 8;
    if bytes.len() != need {
        return Err(Error::Format(format!(
            "dataset body is {} bytes, header implies {need}",
            bytes.len()
        )));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let samples = (0..count)
        .map(|s| {
            let base = 24 + s * k * m * 8;
            let re = (0..k * m).map(|i| f(base + 8 * i)).collect();
            let im = (0..k * m).map(|i| f(base + 8 * i + 4)).collect();
            ResourceGrid::from_planes(k, m, re, im)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        normalization,
        config: None,
    })
}
