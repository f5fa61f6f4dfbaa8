//! Conditional encoder–decoder noise predictor `ε_θ(x_t, t, condition)`.
//!
//! Input channels are `[x_t.re, x_t.im, ls.re, ls.im, 1 − mask]`; the output is
//! the predicted noise on the two planes of `x_t`.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::ResourceGrid;
use crate::numcore::{Graph, Tensor, TensorMap, Var};
use crate::pilots::PilotObservation;

pub const IN_CHANNELS: usize = 5;
pub const OUT_CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    /// Number of down/up levels.
    pub depth: usize,
    pub kernel: usize,
    pub time_embed_dim: usize,
    pub norm_groups: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            depth: 2,
            kernel: 3,
            time_embed_dim: 64,
            norm_groups: 8,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("denoiser: {m}")));
        if self.base_channels == 0 || self.depth == 0 {
            return bad("base_channels and depth must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return bad(format!("time_embed_dim {} must be even", self.time_embed_dim));
        }
        for l in 0..self.depth {
            if self.norm_groups == 0 || self.channels(l) % self.norm_groups != 0 {
                return bad(format!(
                    "{} channels at level {l} not divisible into {} groups",
                    self.channels(l),
                    self.norm_groups
                ));
            }
        }
        Ok(())
    }

    /// Feature width at encoder level `l`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Padded spatial dims accepted by the network: each axis longer than
    /// one is rounded up to a multiple of `2^depth`.
    pub fn padded_dims(&self, k: usize, m: usize) -> (usize, usize) {
        let q = 1usize << self.depth;
        let up = |d: usize| if d <= 1 { d } else { d.div_ceil(q) * q };
        (up(k), up(m))
    }

    fn check_dims(&self, k: usize, m: usize) -> Result<()> {
        if self.padded_dims(k, m) != (k, m) {
            return Err(Error::Config(format!(
                "grid {k}x{m} not divisible by 2^{} (pad at the call site)",
                self.depth
            )));
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<(String, usize, usize)> {
        let mut b = Vec::new();
        let mut cin = IN_CHANNELS;
        for l in 0..self.depth {
            b.push((format!("enc{l}"), cin, self.channels(l)));
            cin = self.channels(l);
        }
        b.push(("mid".into(), cin, cin));
        for l in (0..self.depth).rev() {
            b.push((format!("dec{l}"), cin + self.channels(l), self.channels(l)));
            cin = self.channels(l);
        }
        b
    }
}

/// Network weights together with the architecture they instantiate.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub tensors: TensorMap,
}

impl DenoiserParams {
    pub fn num_parameters(&self) -> usize {
        self.tensors.numel()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.tensors().all(|t| t.all_finite())
    }

    /// Rebuilds params from a tensor map, checking names and shapes against `config`.
    pub fn from_tensors(config: DenoiserConfig, tensors: &TensorMap) -> Result<Self> {
        config.validate()?;
        let mut out = TensorMap::new();
        for (name, shape) in param_shapes(&config) {
            let t = tensors.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("checkpoint tensor", &shape, t.shape()));
            }
            out.insert(name, t.clone());
        }
        Ok(Self {
            config,
            tensors: out,
        })
    }
}

fn param_shapes(cfg: &DenoiserConfig) -> Vec<(String, Vec<usize>)> {
    let k = cfg.kernel;
    let d = cfg.time_embed_dim;
    let mut v = vec![
        ("time.weight".to_string(), vec![d, d]),
        ("time.bias".to_string(), vec![d]),
    ];
    for (name, cin, c) in cfg.blocks() {
        v.push((format!("{name}.conv1.weight"), vec![c, cin, k, k]));
        v.push((format!("{name}.conv1.bias"), vec![c]));
        v.push((format!("{name}.norm1.gamma"), vec![c]));
        v.push((format!("{name}.norm1.beta"), vec![c]));
        v.push((format!("{name}.temb.weight"), vec![c, d]));
        v.push((format!("{name}.temb.bias"), vec![c]));
        v.push((format!("{name}.conv2.weight"), vec![c, c, k, k]));
        v.push((format!("{name}.conv2.bias"), vec![c]));
        v.push((format!("{name}.norm2.gamma"), vec![c]));
        v.push((format!("{name}.norm2.beta"), vec![c]));
        if cin != c {
            v.push((format!("{name}.skip.weight"), vec![c, cin, 1, 1]));
            v.push((format!("{name}.skip.bias"), vec![c]));
        }
    }
    v.push(("out.weight".to_string(), vec![OUT_CHANNELS, cfg.channels(0), k, k]));
    v.push(("out.bias".to_string(), vec![OUT_CHANNELS]));
    v
}

/// Fan-in uniform init for conv and linear weights; zeros for biases, unit
/// norm scales, and the whole output layer.
pub fn init_params<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Result<DenoiserParams> {
    config.validate()?;
    let mut tensors = TensorMap::new();
    for (name, shape) in param_shapes(config) {
        let t = if name.starts_with("out.") || name.ends_with(".bias") || name.ends_with(".beta") {
            Tensor::zeros(&shape)
        } else if name.ends_with(".gamma") {
            Tensor::full(&shape, 1.0)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
        };
        tensors.insert(name, t);
    }
    Ok(DenoiserParams {
        config: config.clone(),
        tensors,
    })
}

/// Sinusoidal embedding `[sin(tω_0..), cos(tω_0..)]`, `ω_i = 10000^(−2i/dim)`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dim {dim} must be even")));
    }
    if !(t >= 0.0) {
        return Err(Error::Config(format!("time embedding of negative t {t}")));
    }
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let w = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        e[i] = (t * w).sin();
        e[half + i] = (t * w).cos();
    }
    Ok(e)
}

/// Stacks `[x_t.re, x_t.im, ls.re, ls.im, 1 − mask]` into a `[5, K, M]` tensor.
pub fn build_condition(obs: &PilotObservation, x_t: &ResourceGrid) -> Result<Tensor> {
    let (k, m) = x_t.dims();
    obs.ls.check_same(x_t, "build_condition")?;
    let n = k * m;
    let mut data = Vec::with_capacity(IN_CHANNELS * n);
    data.extend_from_slice(x_t.re());
    data.extend_from_slice(x_t.im());
    data.extend_from_slice(obs.ls.re());
    data.extend_from_slice(obs.ls.im());
    data.extend(obs.mask.values().iter().map(|v| 1.0 - v));
    Tensor::new(&[IN_CHANNELS, k, m], data)
}

/// Stacks per-sample `[C, K, M]` tensors into `[B, C, K, M]`.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::Usage("stack of zero tensors".into()))?
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(items.len() * items[0].len());
    for t in items {
        if t.shape() != first.as_slice() {
            return Err(Error::shape("stack", &first, t.shape()));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(&first);
    Tensor::new(&shape, data)
}

/// Splits a `[B, 2, K, M]` prediction into per-sample grids.
pub fn unstack_grids(t: &Tensor) -> Result<Vec<ResourceGrid>> {
    let (b, c, k, m) = t.dims4()?;
    if c != OUT_CHANNELS {
        return Err(Error::shape("unstack_grids", t.shape(), &[b, OUT_CHANNELS, k, m]));
    }
    let n = k * m;
    (0..b)
        .map(|i| {
            let base = i * 2 * n;
            ResourceGrid::from_planes(
                k,
                m,
                t.data()[base..base + n].to_vec(),
                t.data()[base + n..base + 2 * n].to_vec(),
            )
        })
        .collect()
}

/// Parameter handles recorded on one graph.
pub struct BoundParams {
    vars: HashMap<String, Var>,
    order: Vec<(String, Var)>,
}

impl BoundParams {
    /// Records every tensor as a trainable leaf (or a constant on inference graphs).
    pub fn bind(g: &mut Graph, params: &DenoiserParams) -> Self {
        let mut vars = HashMap::new();
        let mut order = Vec::new();
        for (name, t) in params.tensors.iter() {
            let v = if g.is_recording() {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            vars.insert(name.to_string(), v);
            order.push((name.to_string(), v));
        }
        Self { vars, order }
    }

    fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    /// `(name, var)` in parameter order.
    pub fn iter(&self) -> impl Iterator<Item = &(String, Var)> {
        self.order.iter()
    }
}

fn block(
    g: &mut Graph,
    p: &BoundParams,
    name: &str,
    x: Var,
    temb: Var,
    groups: usize,
) -> Result<Var> {
    let v = |s: &str| p.get(&format!("{name}.{s}"));
    let h = g.conv2d(x, v("conv1.weight"), v("conv1.bias"))?;
    let h = g.groupnorm(h, v("norm1.gamma"), v("norm1.beta"), groups)?;
    let h = g.silu(h);
    let t = g.linear(temb, v("temb.weight"), v("temb.bias"))?;
    let h = g.add(h, t)?;
    let h = g.conv2d(h, v("conv2.weight"), v("conv2.bias"))?;
    let h = g.groupnorm(h, v("norm2.gamma"), v("norm2.beta"), groups)?;
    let h = g.silu(h);
    let skip = match p.vars.get(&format!("{name}.skip.weight")) {
        Some(&w) => g.conv2d(x, w, v("skip.bias"))?,
        None => x,
    };
    g.add(h, skip)
}

/// Records the network on `g`. `cond` is `[B, 5, K, M]` with K and M
/// already divisible by `2^depth` (or equal to 1); `timesteps` has one entry
/// per batch item.
pub fn forward_graph(
    g: &mut Graph,
    p: &BoundParams,
    config: &DenoiserConfig,
    cond: Var,
    timesteps: &[usize],
) -> Result<Var> {
    let (b, c, k, m) = g.value(cond).dims4()?;
    if c != IN_CHANNELS {
        return Err(Error::shape("denoiser input", &[b, c, k, m], &[b, IN_CHANNELS, k, m]));
    }
    if timesteps.len() != b {
        return Err(Error::shape("denoiser timesteps", &[b], &[timesteps.len()]));
    }
    config.check_dims(k, m)?;
    let d = config.time_embed_dim;
    let mut emb = Vec::with_capacity(b * d);
    for &t in timesteps {
        emb.extend(time_embedding(t as f64, d)?);
    }
    let emb = g.constant(Tensor::new(&[b, d], emb)?);
    let temb = g.linear(emb, p.get("time.weight"), p.get("time.bias"))?;
    let temb = g.silu(temb);

    let fh = if k > 1 { 2 } else { 1 };
    let fw = if m > 1 { 2 } else { 1 };
    let groups = config.norm_groups;
    let mut h = cond;
    let mut skips = Vec::with_capacity(config.depth);
    for l in 0..config.depth {
        h = block(g, p, &format!("enc{l}"), h, temb, groups)?;
        skips.push(h);
        h = g.avg_pool(h, fh, fw)?;
    }
    h = block(g, p, "mid", h, temb, groups)?;
    for l in (0..config.depth).rev() {
        h = g.upsample(h, fh, fw)?;
        h = g.concat(&[h, skips[l]])?;
        h = block(g, p, &format!("dec{l}"), h, temb, groups)?;
    }
    g.conv2d(h, p.get("out.weight"), p.get("out.bias"))
}

/// Noise prediction for a batch of conditions `[B, 5, K, M]`. K and M must
/// already be divisible by `2^depth` (or equal 1).
pub fn forward(params: &DenoiserParams, cond: &Tensor, timesteps: &[usize]) -> Result<Tensor> {
    let mut g = Graph::inference();
    let bound = BoundParams::bind(&mut g, params);
    let x = g.constant(cond.clone());
    let y = forward_graph(&mut g, &bound, &params.config, x, timesteps)?;
    Ok(g.take_value(y))
}

/// As [`forward`] for any grid size: spatial axes are zero-padded up to
/// [`DenoiserConfig::padded_dims`] and the output is cropped back.
pub fn forward_padded(params: &DenoiserParams, cond: &Tensor, timesteps: &[usize]) -> Result<Tensor> {
    let (_, _, k, m) = cond.dims4()?;
    let (pk, pm) = params.config.padded_dims(k, m);
    if (pk, pm) == (k, m) {
        return forward(params, cond, timesteps);
    }
    forward(params, &cond.pad_spatial(pk, pm)?, timesteps)?.crop_spatial(k, m)
}

/// Recorded ε-prediction loss, mean squared error per complex element,
/// for `cond: [B,5,K,M]` and target noise `eps: [B,2,K,M]`.
pub fn loss_graph(
    g: &mut Graph,
    p: &BoundParams,
    config: &DenoiserConfig,
    cond: &Tensor,
    eps: &Tensor,
    timesteps: &[usize],
) -> Result<Var> {
    let (_, _, k, m) = cond.dims4()?;
    let (pk, pm) = config.padded_dims(k, m);
    let x = g.constant(cond.pad_spatial(pk, pm)?);
    let mut y = forward_graph(g, p, config, x, timesteps)?;
    if (pk, pm) != (k, m) {
        y = g.crop(y, k, m)?;
    }
    let target = g.constant(eps.clone());
    let mse = g.mse(y, target)?;
    // two real planes per complex element
    Ok(g.scale(mse, OUT_CHANNELS as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::{comb_mask_with_offset, PilotMask};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_at_zero() {
        let e = time_embedding(0.0, 8).unwrap();
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
        assert!(time_embedding(1.0, 7).is_err());
    }

    #[test]
    fn embedding_norm_bound() {
        for t in [1.0, 17.0, 999.0] {
            let e = time_embedding(t, 64).unwrap();
            assert!(e.iter().map(|v| v * v).sum::<f64>().sqrt() <= 8.0 + 1e-12);
        }
    }

    #[test]
    fn condition_layout() {
        let x = ResourceGrid::from_fn(4, 1, |k, _| Complex64::new(k as f64, -(k as f64)));
        let h = ResourceGrid::from_fn(4, 1, |k, _| Complex64::new(10.0 + k as f64, 1.0));
        let mask = comb_mask_with_offset(4, 1, 2, 0).unwrap();
        let obs = PilotObservation {
            ls: mask.apply(&h).unwrap(),
            mask,
            noise_var: 0.0,
        };
        let c = build_condition(&obs, &x).unwrap();
        assert_eq!(c.shape(), &[5, 4, 1]);
        let d = c.data();
        assert_eq!(&d[0..4], x.re());
        assert_eq!(&d[4..8], x.im());
        assert_eq!(&d[8..12], &[10.0, 0.0, 12.0, 0.0]);
        assert_eq!(&d[12..16], &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(&d[16..20], &[0.0, 1.0, 0.0, 1.0]);

        let full = PilotObservation {
            ls: h.clone(),
            mask: PilotMask::full(4, 1),
            noise_var: 0.0,
        };
        let c = build_condition(&full, &x).unwrap();
        assert!(c.data()[16..].iter().all(|&v| v == 0.0));
        assert!(build_condition(&full, &ResourceGrid::zeros(3, 1)).is_err());
    }

    #[test]
    fn default_size_is_desk_scale() {
        let p = init_params(&DenoiserConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.num_parameters() < 500_000, "{}", p.num_parameters());
    }

    #[test]
    fn shape_contract_and_zero_output_at_init() {
        let cfg = DenoiserConfig {
            base_channels: 8,
            time_embed_dim: 16,
            norm_groups: 4,
            ..Default::default()
        };
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (k, m) in [(16, 1), (8, 4), (12, 1), (10, 3)] {
            let cond = Tensor::zeros(&[2, 5, k, m]);
            let y = forward_padded(&p, &cond, &[1, 500]).unwrap();
            assert_eq!(y.shape(), &[2, 2, k, m]);
            assert!(y.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn strict_forward_rejects_unpadded_grids() {
        let cfg = DenoiserConfig {
            base_channels: 8,
            time_embed_dim: 16,
            norm_groups: 4,
            ..Default::default()
        };
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Tensor::zeros(&[1, 5, 10, 1]);
        assert!(matches!(forward(&p, &x, &[3]), Err(Error::Config(_))));
        assert!(forward(&p, &Tensor::zeros(&[1, 5, 16, 1]), &[3]).is_ok());
    }

    #[test]
    fn config_validation() {
        let bad = DenoiserConfig {
            norm_groups: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let odd = DenoiserConfig {
            time_embed_dim: 63,
            ..Default::default()
        };
        assert!(odd.validate().is_err());
        assert_eq!(DenoiserConfig::default().padded_dims(128, 1), (128, 1));
        assert_eq!(DenoiserConfig::default().padded_dims(64, 14), (64, 16));
    }
}
