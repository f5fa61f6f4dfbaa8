//! Equalization, hard demodulation and end-to-end link simulation, plus the
//! blind constellation score used to rank channel candidates.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::chansim::{noise_var_for_snr, transmit, Dataset};
use crate::denoiser::DenoiserParams;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::estimators::{linear_interp, lmmse_interp, nmse, CovarianceModel};
use crate::grid::ResourceGrid;
use crate::pilots::{comb_mask, ls_estimate, pilot_symbol, PilotMask, PilotObservation};
use crate::sampler::{argmin_score, sample_candidates, Pipeline, SamplerConfig};
use crate::seeding::{derive_seed, derived_rng};

const STREAM_FRAME: u64 = 0x30;
const STREAM_DM: u64 = 0x31;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl Modulation {
    pub fn name(self) -> &'static str {
        match self {
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "16QAM",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QPSK" => Ok(Modulation::Qpsk),
            "16QAM" | "QAM16" => Ok(Modulation::Qam16),
            _ => Err(Error::Config(format!("unknown modulation {s:?} (QPSK|16QAM)"))),
        }
    }
}

/// Gray-labelled unit-power constellation; `points[label]` is the symbol
/// carrying the bits of `label`, most significant bit first.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstellationSpec {
    pub modulation: Modulation,
    pub points: Vec<Complex64>,
    pub bits_per_symbol: usize,
}

/// Gray-coded PAM level for `bits` bits per axis, before scaling.
fn gray_level(label: u32, bits: usize) -> f64 {
    // Gray decode, then map index i to 2i − (2^bits − 1).
    let mut i = label;
    let mut shift = label >> 1;
    while shift != 0 {
        i ^= shift;
        shift >>= 1;
    }
    let n = 1u32 << bits;
    2.0 * i as f64 - (n - 1) as f64
}

impl ConstellationSpec {
    pub fn new(modulation: Modulation) -> Self {
        let (bps, scale) = match modulation {
            Modulation::Qpsk => (2, 1.0 / 2f64.sqrt()),
            Modulation::Qam16 => (4, 1.0 / 10f64.sqrt()),
        };
        let half = bps / 2;
        let mask = (1u32 << half) - 1;
        let points = (0..1u32 << bps)
            .map(|label| {
                let i_bits = label >> half;
                let q_bits = label & mask;
                Complex64::new(gray_level(i_bits, half), gray_level(q_bits, half)) * scale
            })
            .collect();
        Self {
            modulation,
            points,
            bits_per_symbol: bps,
        }
    }

    pub fn qpsk() -> Self {
        Self::new(Modulation::Qpsk)
    }

    pub fn qam16() -> Self {
        Self::new(Modulation::Qam16)
    }

    pub fn nearest(&self, y: Complex64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    pub fn distance_sqr(&self, y: Complex64) -> f64 {
        (y - self.points[self.nearest(y)]).norm_sqr()
    }

    /// Symbols for a bit stream whose length is a multiple of `bits_per_symbol`.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let b = self.bits_per_symbol;
        if bits.len() % b != 0 {
            return Err(Error::Config(format!(
                "{} bits is not a multiple of {b} bits per symbol",
                bits.len()
            )));
        }
        bits.chunks(b)
            .map(|c| {
                let mut label = 0usize;
                for &bit in c {
                    if bit > 1 {
                        return Err(Error::Config(format!("bit value {bit} is not 0 or 1")));
                    }
                    label = (label << 1) | bit as usize;
                }
                Ok(self.points[label])
            })
            .collect()
    }

    /// Minimum-distance hard decisions.
    pub fn demodulate_hard(&self, symbols: &[Complex64]) -> Vec<u8> {
        let b = self.bits_per_symbol;
        let mut out = Vec::with_capacity(symbols.len() * b);
        for &y in symbols {
            let label = self.nearest(y);
            for k in (0..b).rev() {
                out.push(((label >> k) & 1) as u8);
            }
        }
        out
    }
}

/// Data resource elements are those with a zero mask value.
pub fn data_indices(mask: &PilotMask) -> Vec<usize> {
    mask.values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Transmit grid: pilot symbols on the mask, data symbols (in row-major order)
/// everywhere else. `bits` must fill every data element exactly.
pub fn build_frame(bits: &[u8], mask: &PilotMask, spec: &ConstellationSpec) -> Result<ResourceGrid> {
    let (k, m) = mask.dims();
    let data = data_indices(mask);
    let need = data.len() * spec.bits_per_symbol;
    if bits.len() != need {
        return Err(Error::Config(format!(
            "frame needs {need} bits for {} data elements, got {}",
            data.len(),
            bits.len()
        )));
    }
    let symbols = spec.modulate(bits)?;
    let mut x = ResourceGrid::zeros(k, m);
    for i in 0..x.len() {
        if mask.is_pilot(i) {
            x.set_at(i, pilot_symbol());
        }
    }
    for (&i, s) in data.iter().zip(symbols) {
        x.set_at(i, s);
    }
    Ok(x)
}

/// `Y_eq = conj(Ĥ)·Y / (|Ĥ|² + σ²)` per element; `σ² = 0` is zero forcing.
pub fn equalize_mmse(y: &ResourceGrid, h_hat: &ResourceGrid, noise_var: f64) -> Result<ResourceGrid> {
    y.check_same(h_hat, "equalize_mmse")?;
    if !(noise_var >= 0.0) {
        return Err(Error::Config(format!("noise variance {noise_var} is negative")));
    }
    let mut out = ResourceGrid::zeros(y.dims().0, y.dims().1);
    for i in 0..y.len() {
        let h = h_hat.at(i);
        let den = h.norm_sqr() + noise_var;
        if den == 0.0 {
            return Err(Error::Numerical(format!(
                "zero channel estimate with zero noise variance at element {i}"
            )));
        }
        out.set_at(i, h.conj() * y.at(i) / den);
    }
    Ok(out)
}

/// Mean squared distance from the equalized data elements to their nearest
/// constellation points. Needs no knowledge of the transmitted data.
pub fn constellation_score(
    h_hat: &ResourceGrid,
    y: &ResourceGrid,
    noise_var: f64,
    spec: &ConstellationSpec,
    mask: &PilotMask,
) -> Result<f64> {
    let data = data_indices(mask);
    if data.is_empty() {
        return Err(Error::Metric("constellation score over an empty data set".into()));
    }
    let eq = equalize_mmse(y, h_hat, noise_var)?;
    Ok(data.iter().map(|&i| spec.distance_sqr(eq.at(i))).sum::<f64>() / data.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Perfect,
    LsLinear,
    Lmmse,
    DmVanilla,
    DmRepaint,
    DmBestOfN,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Perfect,
        EstimatorKind::LsLinear,
        EstimatorKind::Lmmse,
        EstimatorKind::DmVanilla,
        EstimatorKind::DmRepaint,
        EstimatorKind::DmBestOfN,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Perfect => "perfect",
            EstimatorKind::LsLinear => "ls-linear",
            EstimatorKind::Lmmse => "lmmse",
            EstimatorKind::DmVanilla => "dm-vanilla",
            EstimatorKind::DmRepaint => "dm-repaint",
            EstimatorKind::DmBestOfN => "dm-best-of-n",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|e| e.name()).collect();
                Error::Config(format!("unknown estimator {s:?} ({})", names.join("|")))
            })
    }

    pub fn needs_model(self) -> bool {
        matches!(
            self,
            EstimatorKind::DmVanilla | EstimatorKind::DmRepaint | EstimatorKind::DmBestOfN
        )
    }
}

/// Resources an estimator may draw on.
#[derive(Clone, Copy)]
pub struct EstimatorContext<'a> {
    pub covariance: Option<&'a CovarianceModel>,
    pub model: Option<(&'a DenoiserParams, &'a NoiseSchedule)>,
    /// Step count, resampling and candidate settings for the DM estimators.
    pub sampler: &'a SamplerConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkConfig {
    pub spacing: usize,
    pub snr_db: Vec<f64>,
    pub modulation: Modulation,
    /// Frames per SNR point; frame `i` uses test channel `i mod len`.
    pub frames: usize,
    pub seed: u64,
}

/// One transmitted frame: channel, transmit grid, received grid and pilots.
#[derive(Clone, Debug)]
pub struct Frame {
    pub h: ResourceGrid,
    pub bits: Vec<u8>,
    pub y: ResourceGrid,
    pub obs: PilotObservation,
    pub noise_var: f64,
}

/// Frame `index` at `snr_db`; depends only on (seed, snr slot, index).
pub fn draw_frame(
    h: &ResourceGrid,
    spacing: usize,
    spec: &ConstellationSpec,
    snr_db: f64,
    seed: u64,
    index: u64,
) -> Result<Frame> {
    let mut rng = derived_rng(seed, STREAM_FRAME, index);
    let (k, m) = h.dims();
    let mask = comb_mask(k, m, spacing, true, &mut rng)?;
    let n_bits = data_indices(&mask).len() * spec.bits_per_symbol;
    let bits: Vec<u8> = (0..n_bits).map(|_| rng.gen_range(0..=1u8)).collect();
    let x = build_frame(&bits, &mask, spec)?;
    let y = transmit(h, &x, snr_db, &mut rng)?;
    let noise_var = noise_var_for_snr(snr_db);
    let obs = ls_estimate(&y, &x, &mask, noise_var)?;
    Ok(Frame {
        h: h.clone(),
        bits,
        y,
        obs,
        noise_var,
    })
}

fn estimate_all(
    kind: EstimatorKind,
    frames: &[Frame],
    ctx: &EstimatorContext,
    spec: &ConstellationSpec,
    seed: u64,
) -> Result<Vec<ResourceGrid>> {
    match kind {
        EstimatorKind::Perfect => Ok(frames.iter().map(|f| f.h.clone()).collect()),
        EstimatorKind::LsLinear => Ok(frames.iter().map(|f| linear_interp(&f.obs).grid).collect()),
        EstimatorKind::Lmmse => {
            let cov = ctx
                .covariance
                .ok_or_else(|| Error::Config("lmmse estimator needs a covariance model".into()))?;
            frames.par_iter().map(|f| lmmse_interp(&f.obs, cov)).collect()
        }
        EstimatorKind::DmVanilla | EstimatorKind::DmRepaint | EstimatorKind::DmBestOfN => {
            let (params, sched) = ctx
                .model
                .ok_or_else(|| Error::Config(format!("{} needs a trained checkpoint", kind.name())))?;
            let cfg = SamplerConfig {
                pipeline: if kind == EstimatorKind::DmVanilla {
                    Pipeline::Vanilla
                } else {
                    Pipeline::Repaint
                },
                candidates: if kind == EstimatorKind::DmBestOfN {
                    ctx.sampler.candidates
                } else {
                    1
                },
                ..ctx.sampler.clone()
            };
            let problems: Vec<(&PilotObservation, u64)> = frames
                .iter()
                .enumerate()
                .map(|(i, f)| (&f.obs, derive_seed(seed, STREAM_DM, i as u64)))
                .collect();
            let cands = sample_candidates(params, sched, &cfg, &problems)?;
            frames
                .iter()
                .zip(cands)
                .map(|(f, mut c)| {
                    let scores = c
                        .iter()
                        .map(|h| constellation_score(h, &f.y, f.noise_var, spec, &f.obs.mask))
                        .collect::<Result<Vec<_>>>()?;
                    let best = argmin_score(&scores).expect("at least one candidate");
                    Ok(c.swap_remove(best))
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkPoint {
    pub snr_db: f64,
    pub bit_errors: u64,
    pub n_bits: u64,
    pub ber: f64,
    pub nmse_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkResult {
    pub estimator: EstimatorKind,
    pub spacing: usize,
    pub seed: u64,
    pub points: Vec<LinkPoint>,
    pub bit_errors: u64,
    pub n_bits: u64,
    pub ber: f64,
    pub nmse: f64,
}

impl LinkResult {
    pub const CSV_HEADER: &'static str = "estimator,snr_db,density,ber,nmse_mean,n_bits,seed";

    pub fn csv_lines(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{},{}",
                    self.estimator.name(),
                    p.snr_db,
                    1.0 / self.spacing as f64,
                    p.ber,
                    p.nmse_mean,
                    p.n_bits,
                    self.seed
                )
            })
            .collect()
    }
}

/// Simulates `cfg.frames` frames per SNR over the channels of `channels`:
/// pilots and data are sent, the channel is estimated from pilots only, and
/// data elements are MMSE-equalized and hard-demodulated. Frames are shared
/// across estimators for the same seed.
pub fn end_to_end_ber(
    cfg: &LinkConfig,
    channels: &Dataset,
    kind: EstimatorKind,
    ctx: &EstimatorContext,
) -> Result<LinkResult> {
    if channels.is_empty() || cfg.frames == 0 {
        return Err(Error::Config("link simulation needs channels and frames".into()));
    }
    let spec = ConstellationSpec::new(cfg.modulation);
    let mut points = Vec::with_capacity(cfg.snr_db.len());
    for (slot, &snr) in cfg.snr_db.iter().enumerate() {
        let seed = derive_seed(cfg.seed, slot as u64, 0);
        let frames = (0..cfg.frames)
            .into_par_iter()
            .map(|i| {
                let h = &channels.samples[i % channels.len()];
                draw_frame(h, cfg.spacing, &spec, snr, seed, i as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        let est = estimate_all(kind, &frames, ctx, &spec, seed)?;
        let mut errors = 0u64;
        let mut n_bits = 0u64;
        let mut nmse_sum = 0.0;
        for (f, h_hat) in frames.iter().zip(&est) {
            let eq = equalize_mmse(&f.y, h_hat, f.noise_var)?;
            let data: Vec<Complex64> = data_indices(&f.obs.mask).iter().map(|&i| eq.at(i)).collect();
            let rx = spec.demodulate_hard(&data);
            errors += rx.iter().zip(&f.bits).filter(|(a, b)| a != b).count() as u64;
            n_bits += f.bits.len() as u64;
            nmse_sum += nmse(h_hat, &f.h)?;
        }
        points.push(LinkPoint {
            snr_db: snr,
            bit_errors: errors,
            n_bits,
            ber: errors as f64 / n_bits as f64,
            nmse_mean: nmse_sum / frames.len() as f64,
        });
    }
    let bit_errors = points.iter().map(|p| p.bit_errors).sum();
    let n_bits = points.iter().map(|p| p.n_bits).sum();
    let nmse = points.iter().map(|p| p.nmse_mean).sum::<f64>() / points.len().max(1) as f64;
    Ok(LinkResult {
        estimator: kind,
        spacing: cfg.spacing,
        seed: cfg.seed,
        bit_errors,
        n_bits,
        ber: if n_bits > 0 {
            bit_errors as f64 / n_bits as f64
        } else {
            0.0
        },
        nmse,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_counts_and_power() {
        for (spec, n) in [(ConstellationSpec::qpsk(), 4), (ConstellationSpec::qam16(), 16)] {
            assert_eq!(spec.points.len(), n);
            let p = spec.points.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for spec in [ConstellationSpec::qpsk(), ConstellationSpec::qam16()] {
            let d_min = spec.points[..]
                .iter()
                .enumerate()
                .flat_map(|(i, a)| spec.points.iter().skip(i + 1).map(move |b| (a - b).norm()))
                .fold(f64::INFINITY, f64::min);
            for (i, a) in spec.points.iter().enumerate() {
                for (j, b) in spec.points.iter().enumerate() {
                    if i != j && ((a - b).norm() - d_min).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "{i} {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_bits_repeat_one_corner() {
        let s = ConstellationSpec::qam16();
        let syms = s.modulate(&[0; 16]).unwrap();
        assert!(syms.iter().all(|&x| x == syms[0]));
        let corner = syms[0].re.abs().max(syms[0].im.abs());
        assert!((corner - 3.0 / 10f64.sqrt()).abs() < 1e-12);
        assert!(s.modulate(&[0, 1, 1]).is_err());
    }

    #[test]
    fn equalizer_limits() {
        let h = ResourceGrid::from_fn(2, 1, |k, _| Complex64::new(1.0 + k as f64, -0.5));
        let x = ResourceGrid::from_fn(2, 1, |k, _| Complex64::new(0.7, k as f64 * 0.3));
        let y = h.hadamard(&x).unwrap();
        let eq = equalize_mmse(&y, &h, 0.0).unwrap();
        assert!(eq.sub(&x).unwrap().energy() < 1e-24);
        let eq = equalize_mmse(&y, &h, 1e12).unwrap();
        assert!(eq.energy() < 1e-20);
        assert!(equalize_mmse(&y, &ResourceGrid::zeros(2, 1), 0.0).is_err());
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in EstimatorKind::ALL {
            assert_eq!(EstimatorKind::parse(e.name()).unwrap(), e);
        }
        assert!(EstimatorKind::parse("magic").is_err());
    }
}
