//! Complex values over a (subcarrier × OFDM-symbol) grid, stored as two real
//! planes in row-major `[k][m]` order.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ResourceGrid {
    k: usize,
    m: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ResourceGrid {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            re: vec![0.0; k * m],
            im: vec![0.0; k * m],
        }
    }

    pub fn from_planes(k: usize, m: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != k * m || im.len() != k * m {
            return Err(Error::shape("resource grid", &[k, m], &[re.len(), im.len()]));
        }
        Ok(Self { k, m, re, im })
    }

    pub fn from_fn(k: usize, m: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut g = Self::zeros(k, m);
        for i in 0..k {
            for j in 0..m {
                g.set(i, j, f(i, j));
            }
        }
        g
    }

    pub fn from_values(k: usize, m: usize, values: &[Complex64]) -> Result<Self> {
        if values.len() != k * m {
            return Err(Error::shape("resource grid", &[k, m], &[values.len()]));
        }
        Ok(Self {
            k,
            m,
            re: values.iter().map(|c| c.re).collect(),
            im: values.iter().map(|c| c.im).collect(),
        })
    }

    pub fn num_subcarriers(&self) -> usize {
        self.k
    }

    pub fn num_symbols(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.k, self.m)
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    #[inline]
    pub fn get(&self, k: usize, m: usize) -> Complex64 {
        let i = k * self.m + m;
        Complex64::new(self.re[i], self.im[i])
    }

    #[inline]
    pub fn set(&mut self, k: usize, m: usize, v: Complex64) {
        let i = k * self.m + m;
        self.re[i] = v.re;
        self.im[i] = v.im;
    }

    #[inline]
    pub fn at(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }

    #[inline]
    pub fn set_at(&mut self, i: usize, v: Complex64) {
        self.re[i] = v.re;
        self.im[i] = v.im;
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn values(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.re.iter().zip(&self.im).map(|(&r, &i)| Complex64::new(r, i))
    }

    /// Subcarrier column at symbol `m`.
    pub fn column(&self, m: usize) -> Vec<Complex64> {
        (0..self.k).map(|k| self.get(k, m)).collect()
    }

    pub fn set_column(&mut self, m: usize, col: &[Complex64]) {
        for (k, v) in col.iter().enumerate() {
            self.set(k, m, *v);
        }
    }

    /// Mean of |x|² over all elements.
    pub fn mean_power(&self) -> f64 {
        self.energy() / self.len() as f64
    }

    /// Sum of |x|².
    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            k: self.k,
            m: self.m,
            re: self.re.iter().map(|v| v * s).collect(),
            im: self.im.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            out.set_at(i, f(self.at(i)));
        }
        out
    }

    pub fn zip_map(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.check_same(other, op)?;
        let mut out = self.clone();
        for i in 0..self.len() {
            out.set_at(i, f(self.at(i), other.at(i)));
        }
        Ok(out)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(op, &[self.k, self.m], &[other.k, other.m]));
        }
        Ok(())
    }
}
