//! Pilot placement masks and least-squares observation at pilot positions.

use num_complex::Complex64;
use rand::Rng;

use crate::chansim::{noise_var_for_snr, transmit};
use crate::error::{Error, Result};
use crate::grid::ResourceGrid;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PilotScheme {
    /// One pilot per run of `spacing` subcarriers at a shared `offset`, on every symbol.
    Comb { spacing: usize, offset: usize },
    /// Every subcarrier on the listed symbols.
    Block { symbols: Vec<usize> },
    /// Rectangular sub-lattice anchored at (0, 0).
    Lattice {
        freq_stride: usize,
        time_stride: usize,
    },
    Custom,
}

impl PilotScheme {
    pub fn name(&self) -> &'static str {
        match self {
            PilotScheme::Comb { .. } => "comb",
            PilotScheme::Block { .. } => "block",
            PilotScheme::Lattice { .. } => "lattice",
            PilotScheme::Custom => "custom",
        }
    }
}

/// Per-resource-element pilot indicator: `{0,1}` in binary mode, `[0,1]`
/// confidence weights in soft mode.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotMask {
    k: usize,
    m: usize,
    values: Vec<f64>,
    scheme: PilotScheme,
    soft: bool,
}

impl PilotMask {
    pub fn from_values(k: usize, m: usize, values: Vec<f64>, soft: bool) -> Result<Self> {
        if values.len() != k * m {
            return Err(Error::shape("pilot mask", &[k, m], &[values.len()]));
        }
        let ok = if soft {
            values.iter().all(|v| (0.0..=1.0).contains(v))
        } else {
            values.iter().all(|&v| v == 0.0 || v == 1.0)
        };
        if !ok {
            return Err(Error::Config(format!(
                "pilot mask values outside {}",
                if soft { "[0,1]" } else { "{0,1}" }
            )));
        }
        Ok(Self {
            k,
            m,
            values,
            scheme: PilotScheme::Custom,
            soft,
        })
    }

    pub fn full(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            values: vec![1.0; k * m],
            scheme: PilotScheme::Custom,
            soft: false,
        }
    }

    pub fn empty(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            values: vec![0.0; k * m],
            scheme: PilotScheme::Custom,
            soft: false,
        }
    }

    fn from_predicate(k: usize, m: usize, scheme: PilotScheme, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut values = vec![0.0; k * m];
        for i in 0..k {
            for j in 0..m {
                if f(i, j) {
                    values[i * m + j] = 1.0;
                }
            }
        }
        Self {
            k,
            m,
            values,
            scheme,
            soft: false,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.k, self.m)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.values[k * self.m + m]
    }

    #[inline]
    pub fn is_pilot(&self, i: usize) -> bool {
        self.values[i] > 0.0
    }

    pub fn scheme(&self) -> &PilotScheme {
        &self.scheme
    }

    pub fn is_soft(&self) -> bool {
        self.soft
    }

    pub fn pilot_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Fraction of resource elements carrying a pilot.
    pub fn density(&self) -> f64 {
        self.pilot_count() as f64 / self.values.len() as f64
    }

    /// Pilot subcarrier indices on symbol `m`.
    pub fn pilots_in_column(&self, m: usize) -> Vec<usize> {
        (0..self.k).filter(|&k| self.get(k, m) > 0.0).collect()
    }

    /// Binary indicator of pilot positions, dropping soft weights.
    pub fn support(&self) -> PilotMask {
        PilotMask {
            k: self.k,
            m: self.m,
            values: self.values.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
            scheme: self.scheme.clone(),
            soft: false,
        }
    }

    /// `grid ⊙ mask`.
    pub fn apply(&self, grid: &ResourceGrid) -> Result<ResourceGrid> {
        if grid.dims() != (self.k, self.m) {
            return Err(Error::shape("mask apply", &[self.k, self.m], &[grid.dims().0, grid.dims().1]));
        }
        let mut out = grid.clone();
        for (i, &w) in self.values.iter().enumerate() {
            out.set_at(i, grid.at(i) * w);
        }
        Ok(out)
    }
}

fn check_dims(k: usize, m: usize) -> Result<()> {
    if k == 0 || m == 0 {
        return Err(Error::Config(format!("pilot grid {k}x{m} is empty")));
    }
    Ok(())
}

/// Comb pattern with a fixed offset.
pub fn comb_mask_with_offset(k: usize, m: usize, spacing: usize, offset: usize) -> Result<PilotMask> {
    check_dims(k, m)?;
    if spacing == 0 || spacing > k {
        return Err(Error::Config(format!(
            "comb spacing {spacing} outside [1, {k}]"
        )));
    }
    if offset >= spacing {
        return Err(Error::Config(format!("comb offset {offset} >= spacing {spacing}")));
    }
    Ok(PilotMask::from_predicate(
        k,
        m,
        PilotScheme::Comb { spacing, offset },
        |i, _| i % spacing == offset,
    ))
}

/// Comb pattern; with `randomize_offset` a single offset in `[0, spacing)` is
/// drawn and shared by every interval.
pub fn comb_mask<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    spacing: usize,
    randomize_offset: bool,
    rng: &mut R,
) -> Result<PilotMask> {
    if spacing == 0 || spacing > k {
        return Err(Error::Config(format!(
            "comb spacing {spacing} outside [1, {k}]"
        )));
    }
    let offset = if randomize_offset {
        rng.gen_range(0..spacing)
    } else {
        0
    };
    comb_mask_with_offset(k, m, spacing, offset)
}

pub fn block_mask(k: usize, m: usize, symbols: &[usize]) -> Result<PilotMask> {
    check_dims(k, m)?;
    if m < 2 {
        return Err(Error::Config("block pilots need more than one symbol".into()));
    }
    if let Some(&bad) = symbols.iter().find(|&&s| s >= m) {
        return Err(Error::Config(format!("block pilot symbol {bad} >= {m}")));
    }
    let mut syms = symbols.to_vec();
    syms.sort_unstable();
    syms.dedup();
    Ok(PilotMask::from_predicate(
        k,
        m,
        PilotScheme::Block {
            symbols: syms.clone(),
        },
        |_, j| syms.contains(&j),
    ))
}

pub fn lattice_mask(k: usize, m: usize, freq_stride: usize, time_stride: usize) -> Result<PilotMask> {
    check_dims(k, m)?;
    if freq_stride == 0 || freq_stride > k || time_stride == 0 || time_stride > m {
        return Err(Error::Config(format!(
            "lattice strides ({freq_stride},{time_stride}) outside grid {k}x{m}"
        )));
    }
    Ok(PilotMask::from_predicate(
        k,
        m,
        PilotScheme::Lattice {
            freq_stride,
            time_stride,
        },
        |i, j| i % freq_stride == 0 && j % time_stride == 0,
    ))
}

/// Unit-modulus QPSK corner used on every pilot resource element.
pub fn pilot_symbol() -> Complex64 {
    Complex64::new(1.0, 1.0) / 2f64.sqrt()
}

pub fn pilot_grid(k: usize, m: usize) -> ResourceGrid {
    ResourceGrid::from_fn(k, m, |_, _| pilot_symbol())
}

/// Least-squares channel values at pilots (zero elsewhere) plus the mask
/// and the per-element noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotObservation {
    pub ls: ResourceGrid,
    pub mask: PilotMask,
    pub noise_var: f64,
}

impl PilotObservation {
    pub fn dims(&self) -> (usize, usize) {
        self.ls.dims()
    }
}

/// `Ĥ = Y / X` at pilot positions; zero elsewhere.
pub fn ls_estimate(
    y: &ResourceGrid,
    x_pilot: &ResourceGrid,
    mask: &PilotMask,
    noise_var: f64,
) -> Result<PilotObservation> {
    y.check_same(x_pilot, "ls_estimate")?;
    if y.dims() != mask.dims() {
        return Err(Error::shape(
            "ls_estimate mask",
            &[y.dims().0, y.dims().1],
            &[mask.dims().0, mask.dims().1],
        ));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Config(format!("noise variance {noise_var} is negative")));
    }
    let (k, m) = y.dims();
    let mut ls = ResourceGrid::zeros(k, m);
    let mut pilot_power = 0.0;
    let mut n = 0usize;
    for i in 0..y.len() {
        if !mask.is_pilot(i) {
            continue;
        }
        let x = x_pilot.at(i);
        if x.norm_sqr() == 0.0 {
            return Err(Error::Numerical(format!(
                "zero pilot symbol at resource element {i}"
            )));
        }
        ls.set_at(i, y.at(i) / x);
        pilot_power += x.norm_sqr();
        n += 1;
    }
    let mean_pilot_power = if n > 0 { pilot_power / n as f64 } else { 1.0 };
    Ok(PilotObservation {
        ls,
        mask: mask.clone(),
        noise_var: noise_var / mean_pilot_power,
    })
}

/// Sends the pilot grid through `h` at `snr_db` and returns the LS observation.
pub fn observe<R: Rng + ?Sized>(
    h: &ResourceGrid,
    mask: &PilotMask,
    snr_db: f64,
    rng: &mut R,
) -> Result<PilotObservation> {
    let (k, m) = h.dims();
    let x = pilot_grid(k, m);
    let y = transmit(h, &x, snr_db, rng)?;
    ls_estimate(&y, &x, mask, noise_var_for_snr(snr_db))
}

/// Confidence weights `P/(P+σ²)` at pilots, zero elsewhere.
pub fn soft_mask_from_confidence(mask: &PilotMask, noise_var: f64, signal_power: f64) -> Result<PilotMask> {
    if !(noise_var >= 0.0) || !(signal_power > 0.0) {
        return Err(Error::Config(format!(
            "soft mask needs noise_var >= 0 and signal_power > 0 (got {noise_var}, {signal_power})"
        )));
    }
    let w = if noise_var.is_infinite() {
        0.0
    } else {
        signal_power / (signal_power + noise_var)
    };
    Ok(PilotMask {
        k: mask.k,
        m: mask.m,
        values: mask.values.iter().map(|&v| if v > 0.0 { w } else { 0.0 }).collect(),
        scheme: mask.scheme.clone(),
        soft: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn comb_positions() {
        let m = comb_mask_with_offset(8, 1, 4, 0).unwrap();
        assert_eq!(m.pilots_in_column(0), vec![0, 4]);
        assert_eq!(m.density(), 0.25);
        let all = comb_mask_with_offset(8, 2, 1, 0).unwrap();
        assert!(all.values().iter().all(|&v| v == 1.0));
        assert!(matches!(comb_mask_with_offset(8, 1, 9, 0), Err(Error::Config(_))));
        assert!(comb_mask_with_offset(8, 1, 0, 0).is_err());
    }

    #[test]
    fn wide_comb_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let m = comb_mask(128, 1, 32, true, &mut rng).unwrap();
            let p = m.pilots_in_column(0);
            assert_eq!(p.len(), 4);
            assert!(p.windows(2).all(|w| w[1] - w[0] == 32));
        }
    }

    #[test]
    fn block_and_lattice() {
        let b = block_mask(6, 4, &[0]).unwrap();
        assert_eq!(b.density(), 0.25);
        assert!(block_mask(6, 1, &[0]).is_err());
        assert!(block_mask(6, 4, &[4]).is_err());
        let l = lattice_mask(8, 4, 4, 2).unwrap();
        assert_eq!(l.pilot_count(), 4);
        let full = lattice_mask(8, 4, 1, 1).unwrap();
        assert_eq!(full.pilot_count(), 32);
        assert!(lattice_mask(8, 4, 9, 1).is_err());
        assert!(lattice_mask(8, 4, 1, 5).is_err());
    }

    #[test]
    fn ls_is_exact_without_noise() {
        let h = ResourceGrid::from_fn(8, 2, |k, m| Complex64::new(k as f64, m as f64 - 0.5));
        let mask = comb_mask_with_offset(8, 2, 2, 1).unwrap();
        let obs = observe(&h, &mask, f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for i in 0..h.len() {
            if mask.is_pilot(i) {
                assert!((obs.ls.at(i) - h.at(i)).norm() < 1e-12);
            } else {
                assert_eq!(obs.ls.at(i), Complex64::new(0.0, 0.0));
            }
        }
        assert_eq!(obs.noise_var, 0.0);
        assert_eq!(mask.apply(&obs.ls).unwrap(), obs.ls);
    }

    #[test]
    fn ls_with_unit_pilots_everywhere() {
        let h = ResourceGrid::from_fn(4, 1, |k, _| Complex64::new(1.0, k as f64));
        let ones = ResourceGrid::from_fn(4, 1, |_, _| Complex64::new(1.0, 0.0));
        let obs = ls_estimate(&h, &ones, &PilotMask::full(4, 1), 0.0).unwrap();
        assert_eq!(obs.ls, h);
    }

    #[test]
    fn ls_rejects_zero_pilot() {
        let y = ResourceGrid::zeros(4, 1);
        let x = ResourceGrid::zeros(4, 1);
        assert!(matches!(
            ls_estimate(&y, &x, &PilotMask::full(4, 1), 0.0),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn soft_mask_limits() {
        let mask = comb_mask_with_offset(8, 1, 2, 0).unwrap();
        let s0 = soft_mask_from_confidence(&mask, 0.0, 1.0).unwrap();
        assert_eq!(s0.values(), mask.values());
        assert!(s0.is_soft());
        let s1 = soft_mask_from_confidence(&mask, 1.0, 1.0).unwrap();
        assert_eq!(s1.get(0, 0), 0.5);
        assert_eq!(s1.get(1, 0), 0.0);
        let big = soft_mask_from_confidence(&mask, 1e12, 1.0).unwrap();
        assert!(big.values().iter().all(|&v| v < 1e-11));
        let inf = soft_mask_from_confidence(&mask, f64::INFINITY, 1.0).unwrap();
        assert!(inf.values().iter().all(|&v| v == 0.0));
    }
}
