//! Classical pilot-based channel estimators and the NMSE metric.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::chansim::{complex_normal, Dataset};
use crate::error::{Error, Result};
use crate::grid::ResourceGrid;
use crate::pilots::PilotObservation;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceSource {
    AnalyticPdp,
    Empirical,
    Given,
}

/// Frequency-domain channel covariance `R[a,b] = E[H_a H_b*]`, stored as two
/// real `K×K` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceModel {
    k: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    pub source: CovarianceSource,
}

impl CovarianceModel {
    pub fn from_matrix(r: &DMatrix<Complex64>, source: CovarianceSource) -> Result<Self> {
        if r.nrows() != r.ncols() || r.nrows() == 0 {
            return Err(Error::shape("covariance", &[r.nrows()], &[r.ncols()]));
        }
        let k = r.nrows();
        let mut re = vec![0.0; k * k];
        let mut im = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                re[a * k + b] = r[(a, b)].re;
                im[a * k + b] = r[(a, b)].im;
            }
        }
        Ok(Self { k, re, im, source })
    }

    /// Continuous exponential power-delay profile:
    /// `R[a,b] = 1 / (1 + j2π (a-b) Δf τ_rms)`.
    pub fn exponential_pdp(k: usize, subcarrier_spacing: f64, delay_spread: f64) -> Result<Self> {
        let r = DMatrix::from_fn(k, k, |a, b| {
            let d = (a as f64 - b as f64) * subcarrier_spacing * delay_spread;
            Complex64::new(1.0, 0.0) / Complex64::new(1.0, 2.0 * std::f64::consts::PI * d)
        });
        Self::from_matrix(&r, CovarianceSource::AnalyticPdp)
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        Complex64::new(self.re[a * self.k + b], self.im[a * self.k + b])
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.k, self.k, |a, b| self.get(a, b))
    }

    pub fn hermitian_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.k {
            for b in 0..self.k {
                worst = worst.max((self.get(a, b) - self.get(b, a).conj()).norm());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.matrix();
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermitian_error();
        if herm > 1e-10 {
            return Err(Error::Numerical(format!("covariance not Hermitian (error {herm:e})")));
        }
        let floor = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if floor < -1e-8 {
            return Err(Error::Numerical(format!(
                "covariance not positive semidefinite (min eigenvalue {floor:e})"
            )));
        }
        Ok(())
    }

    /// Square-root factor `L` with `L Lᴴ = R`, for drawing matched Gaussian channels.
    pub fn factor(&self) -> CovarianceFactor {
        let m = self.matrix();
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let mut l = eig.eigenvectors.clone();
        for (j, lam) in eig.eigenvalues.iter().enumerate() {
            let s = Complex64::new(lam.max(0.0).sqrt(), 0.0);
            for i in 0..self.k {
                l[(i, j)] *= s;
            }
        }
        CovarianceFactor { l }
    }
}

pub struct CovarianceFactor {
    l: DMatrix<Complex64>,
}

impl CovarianceFactor {
    /// One draw `h ~ CN(0, R)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        let k = self.l.nrows();
        let z = DVector::from_fn(k, |_, _| complex_normal(rng, 1.0));
        (&self.l * z).iter().copied().collect()
    }
}

/// `R = (1/N) Σ h hᴴ` over every subcarrier column of every sample, then
/// Hermitian-symmetrised.
pub fn empirical_covariance(train: &Dataset) -> Result<CovarianceModel> {
    let (k, m) = train
        .dims()
        .ok_or_else(|| Error::Config("empirical covariance of an empty dataset".into()))?;
    if train.len() < 2 {
        return Err(Error::Config("empirical covariance needs at least 2 samples".into()));
    }
    let mut acc = DMatrix::<Complex64>::zeros(k, k);
    let mut n = 0usize;
    for s in &train.samples {
        for col in 0..m {
            let h = DVector::from_vec(s.column(col));
            acc += &h * h.adjoint();
            n += 1;
        }
    }
    acc /= Complex64::new(n as f64, 0.0);
    let sym = (&acc + acc.adjoint()) * Complex64::new(0.5, 0.0);
    CovarianceModel::from_matrix(&sym, CovarianceSource::Empirical)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interpolated {
    pub grid: ResourceGrid,
    /// Set when some column had fewer than two pilots and was nearest-filled.
    pub nearest_fallback: bool,
}

/// Fills non-pilot symbols of every subcarrier row that carries pilots with
/// the value of the nearest pilot symbol in time (earlier wins ties).
fn time_nearest_fill(obs: &PilotObservation) -> (ResourceGrid, Vec<bool>) {
    let (k, m) = obs.dims();
    let mut grid = obs.ls.clone();
    let mut known = vec![false; k * m];
    for row in 0..k {
        let pilots: Vec<usize> = (0..m).filter(|&j| obs.mask.get(row, j) > 0.0).collect();
        if pilots.is_empty() {
            continue;
        }
        for j in 0..m {
            let src = *pilots
                .iter()
                .min_by_key(|&&p| (p as isize - j as isize).unsigned_abs())
                .unwrap();
            grid.set(row, j, obs.ls.get(row, src));
            known[row * m + j] = true;
        }
    }
    (grid, known)
}

/// Piecewise-linear complex interpolation along subcarriers between pilot
/// values, holding the nearest pilot value beyond the outermost pilots.
pub fn linear_interp(obs: &PilotObservation) -> Interpolated {
    let (k, m) = obs.dims();
    let (filled, known) = time_nearest_fill(obs);
    let mut out = ResourceGrid::zeros(k, m);
    let mut fallback = false;
    for j in 0..m {
        let p: Vec<usize> = (0..k).filter(|&i| known[i * m + j]).collect();
        match p.len() {
            0 => fallback = true,
            1 => {
                fallback = true;
                let v = filled.get(p[0], j);
                for i in 0..k {
                    out.set(i, j, v);
                }
            }
            _ => {
                for i in 0..k {
                    let v = match p.binary_search(&i) {
                        Ok(_) => filled.get(i, j),
                        Err(0) => filled.get(p[0], j),
                        Err(pos) if pos == p.len() => filled.get(p[p.len() - 1], j),
                        Err(pos) => {
                            let (a, b) = (p[pos - 1], p[pos]);
                            let w = (i - a) as f64 / (b - a) as f64;
                            filled.get(a, j) * (1.0 - w) + filled.get(b, j) * w
                        }
                    };
                    out.set(i, j, v);
                }
            }
        }
    }
    Interpolated {
        grid: out,
        nearest_fallback: fallback,
    }
}

/// Per-column LMMSE: `Ĥ = R[:,P] (R[P,P] + (σ² + δ) I)⁻¹ Ĥ_LS[P]` with
/// `δ = 1e-9·tr(R[P,P])/|P|`. Columns without pilots copy the nearest column
/// that has them. The solve is complex LU with partial pivoting.
pub fn lmmse_interp(obs: &PilotObservation, cov: &CovarianceModel) -> Result<ResourceGrid> {
    let (k, m) = obs.dims();
    if cov.dim() != k {
        return Err(Error::shape("lmmse covariance", &[cov.dim()], &[k]));
    }
    if obs.noise_var.is_infinite() {
        return Ok(ResourceGrid::zeros(k, m));
    }
    let mut out = ResourceGrid::zeros(k, m);
    let mut solved = vec![false; m];
    for j in 0..m {
        let p = obs.mask.pilots_in_column(j);
        if p.is_empty() {
            continue;
        }
        let n = p.len();
        let trace: f64 = p.iter().map(|&a| cov.get(a, a).re).sum();
        let delta = 1e-9 * trace / n as f64;
        let a = DMatrix::from_fn(n, n, |r, c| {
            let mut v = cov.get(p[r], p[c]);
            if r == c {
                v += obs.noise_var + delta;
            }
            v
        });
        let y = DVector::from_fn(n, |r, _| obs.ls.get(p[r], j));
        let lu = a.clone().lu();
        let x = lu.solve(&y).filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        let Some(x) = x else {
            let diag: Vec<f64> = lu.u().diagonal().iter().map(|v| v.norm()).collect();
            let hi = diag.iter().cloned().fold(0.0, f64::max);
            let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(Error::Numerical(format!(
                "LMMSE system on symbol {j} is singular (condition estimate {:e})",
                hi / lo
            )));
        };
        for i in 0..k {
            let v: Complex64 = p.iter().zip(x.iter()).map(|(&q, xv)| cov.get(i, q) * xv).sum();
            out.set(i, j, v);
        }
        solved[j] = true;
    }
    let have: Vec<usize> = (0..m).filter(|&j| solved[j]).collect();
    if have.is_empty() {
        return Err(Error::Config("LMMSE needs at least one pilot".into()));
    }
    for j in (0..m).filter(|&j| !solved[j]) {
        let src = *have
            .iter()
            .min_by_key(|&&s| (s as isize - j as isize).unsigned_abs())
            .unwrap();
        let col = out.column(src);
        out.set_column(j, &col);
    }
    Ok(out)
}

/// `‖est − truth‖² / ‖truth‖²`.
pub fn nmse(est: &ResourceGrid, truth: &ResourceGrid) -> Result<f64> {
    est.check_same(truth, "nmse")?;
    let p = truth.energy();
    if p == 0.0 {
        return Err(Error::Metric("NMSE against a zero-power reference".into()));
    }
    Ok(est.sub(truth)?.energy() / p)
}
