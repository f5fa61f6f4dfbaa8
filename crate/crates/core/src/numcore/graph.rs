//! Tape-based reverse-mode differentiation.
//!
//! Operations are appended to a [`Graph`] in execution order; `backward`
//! walks the tape once in exact reverse order. A graph built with
//! [`Graph::inference`] stores values only.

use crate::error::{Error, Result};

use super::kernels::{self, ConvCache, NormCache};
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is broadcast against the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// `[C]` against `[B, C, H, W]`.
    Channel,
    /// `[B, C]` against `[B, C, H, W]`.
    BatchChannel,
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let nb: usize = b.iter().product();
        if a == b {
            Ok(Bcast::Same)
        } else if nb == 1 {
            Ok(Bcast::Scalar)
        } else if a.len() == 4 && b == [a[1]] {
            Ok(Bcast::Channel)
        } else if a.len() == 4 && b == [a[0], a[1]] {
            Ok(Bcast::BatchChannel)
        } else {
            Err(Error::shape(op, a, b))
        }
    }

    #[inline]
    fn index(self, i: usize, shape: &[usize]) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Channel => (i / (shape[2] * shape[3])) % shape[1],
            Bcast::BatchChannel => i / (shape[2] * shape[3]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    Binary(Binary, Var, Var, Bcast),
    Scale(Var, f64),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cache: ConvCache,
    },
    Relu(Var),
    Silu(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        cache: NormCache,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    AvgPool(Var, usize, usize),
    Upsample(Var, usize, usize),
    Concat(Vec<Var>),
    Crop(Var),
    Mse(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    recording: bool,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A recording graph.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording: true,
            backward_done: false,
        }
    }

    /// A graph that only evaluates values; `backward` is unavailable.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let rg = self.recording;
        self.push(value, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if self.recording && requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad: self.recording && requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bc = Bcast::resolve(name, av.shape(), bv.shape())?;
        let shape = av.shape().to_vec();
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[bc.index(i, &shape)];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::new(&shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Binary(kind, a, b, bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.nodes[a.0].value.map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Same-padded 2-D cross-correlation, `x: [B,Cin,H,W]`, `w: [Cout,Cin,k,k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let rg = self.rg(&[x, w, b]);
        let (out, cache) = kernels::conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            self.recording && rg,
        )?;
        let op = match cache {
            Some(cache) => Op::Conv2d { x, w, b, cache },
            None => Op::Leaf,
        };
        Ok(self.push(out, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v * sigmoid(v));
        let rg = self.rg(&[x]);
        self.push(out, Op::Silu(x), rg)
    }

    pub fn groupnorm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (out, cache) = kernels::groupnorm_forward(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
            groups,
        )?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            },
            rg,
        ))
    }

    /// `y = x·Wᵀ + b` with `x: [B,In]`, `W: [Out,In]`, `b: [Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        let (bs, nin) = match xv.shape() {
            [bs, nin] => (*bs, *nin),
            s => return Err(Error::shape("linear", s, wv.shape())),
        };
        let nout = match wv.shape() {
            [o, i] if *i == nin => *o,
            s => return Err(Error::shape("linear", xv.shape(), s)),
        };
        if bv.shape() != [nout] {
            return Err(Error::shape("linear bias", wv.shape(), bv.shape()));
        }
        let mut out = vec![0.0; bs * nout];
        for r in 0..bs {
            let xr = &xv.data()[r * nin..(r + 1) * nin];
            for o in 0..nout {
                let wr = &wv.data()[o * nin..(o + 1) * nin];
                out[r * nout + o] = bv.data()[o] + dot(xr, wr);
            }
        }
        let out = Tensor::new(&[bs, nout], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    pub fn avg_pool(&mut self, x: Var, fh: usize, fw: usize) -> Result<Var> {
        let out = kernels::avg_pool(&self.nodes[x.0].value, fh, fw)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::AvgPool(x, fh, fw), rg))
    }

    /// Nearest-neighbour upsampling by integer factors.
    pub fn upsample(&mut self, x: Var, fh: usize, fw: usize) -> Result<Var> {
        let out = kernels::upsample(&self.nodes[x.0].value, fh, fw)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Upsample(x, fh, fw), rg))
    }

    /// Concatenation along the channel axis of 4-axis tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.nodes[parts[0].0].value.dims4()?;
        let mut channels = 0;
        for p in parts {
            let (b, c, h, w) = self.nodes[p.0].value.dims4()?;
            if (b, h, w) != (first.0, first.2, first.3) {
                return Err(Error::shape(
                    "concat",
                    self.nodes[parts[0].0].value.shape(),
                    self.nodes[p.0].value.shape(),
                ));
            }
            channels += c;
        }
        let (b, _, h, w) = first;
        let hw = h * w;
        let mut data = Vec::with_capacity(b * channels * hw);
        for bi in 0..b {
            for p in parts {
                let v = &self.nodes[p.0].value;
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let out = Tensor::new(&[b, channels, h, w], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Top-left spatial window `(h, w)` of a 4-axis tensor.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = self.nodes[x.0].value.crop_spatial(h, w)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Crop(x), rg))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::shape("mse", av.shape(), bv.shape()));
        }
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let out = Tensor::scalar(s / av.len() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mse(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.nodes[x.0].value.sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// Populates gradients of every recorded value with respect to `loss`.
    /// May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::Usage("backward on an inference graph".into()));
        }
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; build a new graph per step".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g)?;
            self.grads[i] = Some(g);
            for (v, dv) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(&dv) {
                            *a += d;
                        }
                    }
                    slot @ None => {
                        *slot = Some(Tensor::new(self.nodes[v.0].value.shape(), dv)?);
                    }
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b, bc) => {
                let shape = node.value.shape();
                if needs(*a) {
                    let da = match kind {
                        Binary::Add => gd.to_vec(),
                        Binary::Sub => gd.to_vec(),
                        Binary::Mul => {
                            let bd = val(*b).data();
                            gd.iter()
                                .enumerate()
                                .map(|(j, g)| g * bd[bc.index(j, shape)])
                                .collect()
                        }
                    };
                    out.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; val(*b).len()];
                    let ad = val(*a).data();
                    for (j, g) in gd.iter().enumerate() {
                        let k = bc.index(j, shape);
                        db[k] += match kind {
                            Binary::Add => *g,
                            Binary::Sub => -*g,
                            Binary::Mul => g * ad[j],
                        };
                    }
                    out.push((*b, db));
                }
            }
            Op::Scale(a, s) => out.push((*a, gd.iter().map(|g| g * s).collect())),
            Op::Conv2d { x, w, b, cache } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    val(*x).shape(),
                    val(*w).shape(),
                    cache,
                    gd,
                    needs(*x),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*w, dw));
                out.push((*b, db));
            }
            Op::Relu(x) => {
                let xd = val(*x).data();
                out.push((
                    *x,
                    gd.iter()
                        .zip(xd)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                ));
            }
            Op::Silu(x) => {
                let xd = val(*x).data();
                out.push((
                    *x,
                    gd.iter()
                        .zip(xd)
                        .map(|(g, v)| {
                            let s = sigmoid(*v);
                            g * (s + v * s * (1.0 - s))
                        })
                        .collect(),
                ));
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            } => {
                let (dx, dg, db) = kernels::groupnorm_backward(
                    val(*x).shape(),
                    val(*gamma).data(),
                    *groups,
                    cache,
                    gd,
                );
                out.push((*x, dx));
                out.push((*gamma, dg));
                out.push((*beta, db));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (bs, nin) = (xv.shape()[0], xv.shape()[1]);
                let nout = wv.shape()[0];
                let mut dx = vec![0.0; bs * nin];
                let mut dw = vec![0.0; nout * nin];
                let mut db = vec![0.0; nout];
                for r in 0..bs {
                    for o in 0..nout {
                        let go = gd[r * nout + o];
                        db[o] += go;
                        for k in 0..nin {
                            dx[r * nin + k] += go * wv.data()[o * nin + k];
                            dw[o * nin + k] += go * xv.data()[r * nin + k];
                        }
                    }
                }
                out.push((*x, dx));
                out.push((*w, dw));
                out.push((*b, db));
            }
            Op::AvgPool(x, fh, fw) => {
                out.push((*x, kernels::avg_pool_backward(val(*x).shape(), *fh, *fw, gd)));
            }
            Op::Upsample(x, fh, fw) => {
                out.push((*x, kernels::upsample_backward(val(*x).shape(), *fh, *fw, gd)));
            }
            Op::Concat(parts) => {
                let (b, total, h, w) = node.value.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).shape()[1];
                    if needs(*p) {
                        let mut dp = Vec::with_capacity(b * c * hw);
                        for bi in 0..b {
                            let s = (bi * total + offset) * hw;
                            dp.extend_from_slice(&gd[s..s + c * hw]);
                        }
                        out.push((*p, dp));
                    }
                    offset += c;
                }
            }
            Op::Crop(x) => {
                let xs = val(*x).shape();
                let g4 = Tensor::new(node.value.shape(), gd.to_vec())?;
                out.push((*x, g4.pad_spatial(xs[2], xs[3])?.into_data()));
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let k = 2.0 * gd[0] / ad.len() as f64;
                let da: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| k * (x - y)).collect();
                if needs(*b) {
                    out.push((*b, da.iter().map(|v| -v).collect()));
                }
                out.push((*a, da));
            }
            Op::Sum(x) => out.push((*x, vec![gd[0]; val(*x).len()])),
            Op::Mean(x) => {
                let n = val(*x).len();
                out.push((*x, vec![gd[0] / n as f64; n]));
            }
        }
        Ok(out)
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
