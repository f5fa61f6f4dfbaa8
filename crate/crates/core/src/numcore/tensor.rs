use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values with up to four axes.
///
/// An empty shape denotes a scalar holding exactly one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > 4 || shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("unsupported tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Usage(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Extents as `(batch, channel, height, width)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Usage(format!(
                "expected a 4-axis tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Zero-pads the two spatial axes of a 4-axis tensor to `(h, w)`, keeping
    /// the original content in the top-left corner.
    pub fn pad_spatial(&self, h: usize, w: usize) -> Result<Self> {
        let (b, c, h0, w0) = self.dims4()?;
        if h < h0 || w < w0 {
            return Err(Error::shape("pad_spatial", &self.shape, &[b, c, h, w]));
        }
        if (h, w) == (h0, w0) {
            return Ok(self.clone());
        }
        let mut out = Tensor::zeros(&[b, c, h, w]);
        for bc in 0..b * c {
            for i in 0..h0 {
                let src = &self.data[(bc * h0 + i) * w0..(bc * h0 + i + 1) * w0];
                out.data[(bc * h + i) * w..(bc * h + i) * w + w0].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Keeps the top-left `(h, w)` spatial window of a 4-axis tensor.
    pub fn crop_spatial(&self, h: usize, w: usize) -> Result<Self> {
        let (b, c, h0, w0) = self.dims4()?;
        if h > h0 || w > w0 || h == 0 || w == 0 {
            return Err(Error::shape("crop_spatial", &self.shape, &[b, c, h, w]));
        }
        let mut out = Tensor::zeros(&[b, c, h, w]);
        for bc in 0..b * c {
            for i in 0..h {
                let src = &self.data[(bc * h0 + i) * w0..(bc * h0 + i) * w0 + w];
                out.data[(bc * h + i) * w..(bc * h + i + 1) * w].copy_from_slice(src);
            }
        }
        Ok(out)
    }
}
