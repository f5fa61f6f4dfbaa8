//! ε-prediction training of the denoiser.
//!
//! All randomness is drawn from streams derived from `TrainConfig::seed`, so a
//! run is fully determined by (seed, config, dataset) and resuming from an
//! epoch-boundary state reproduces the uninterrupted run.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::chansim::Dataset;
use crate::denoiser::{
    build_condition, forward_padded, init_params, loss_graph, stack, BoundParams, DenoiserConfig,
    DenoiserParams,
};
use crate::diffusion::{q_sample, standard_normal_grid, NoiseSchedule, ScheduleSpec};
use crate::error::{Error, Result};
use crate::grid::ResourceGrid;
use crate::numcore::{adam_step, AdamConfig, AdamState, Graph, Tensor, TensorMap};
use crate::pilots::{comb_mask, observe, PilotMask, PilotObservation};
use crate::seeding::{derive_seed, derived_rng};

const STREAM_INIT: u64 = 0x10;
const STREAM_VAL: u64 = 0x11;
const STREAM_SHUFFLE: u64 = 0x12;
const STREAM_OBS: u64 = 0x13;
const STREAM_STEP: u64 = 0x14;

const VAL_BATCH: usize = 64;
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_CHECKS: usize = 3;

/// Pilot layout used to build training observations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PilotSpec {
    /// One comb spacing; the offset is redrawn per observation.
    Comb { spacing: usize },
    /// A spacing drawn uniformly per observation (one model for all densities).
    Joint { spacings: Vec<usize> },
}

impl PilotSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        let spacings = self.spacings();
        if spacings.is_empty() {
            return Err(Error::Config("pilot spec lists no spacings".into()));
        }
        for &s in spacings {
            if s == 0 || s > k {
                return Err(Error::Config(format!("comb spacing {s} outside [1, {k}]")));
            }
        }
        Ok(())
    }

    pub fn spacings(&self) -> &[usize] {
        match self {
            PilotSpec::Comb { spacing } => std::slice::from_ref(spacing),
            PilotSpec::Joint { spacings } => spacings,
        }
    }

    /// Short tag for file names, e.g. `comb16` or `joint-4-16-32`.
    pub fn tag(&self) -> String {
        match self {
            PilotSpec::Comb { spacing } => format!("comb{spacing}"),
            PilotSpec::Joint { spacings } => {
                let parts: Vec<String> = spacings.iter().map(|s| s.to_string()).collect();
                format!("joint-{}", parts.join("-"))
            }
        }
    }

    pub fn draw_mask<R: Rng + ?Sized>(&self, k: usize, m: usize, rng: &mut R) -> Result<PilotMask> {
        let spacing = match self {
            PilotSpec::Comb { spacing } => *spacing,
            PilotSpec::Joint { spacings } => *spacings
                .choose(rng)
                .ok_or_else(|| Error::Config("pilot spec lists no spacings".into()))?,
        };
        comb_mask(k, m, spacing, true, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub snr_range_db: (f64, f64),
    pub pilots: PilotSpec,
    pub schedule: ScheduleSpec,
    /// Epochs between checkpoint callbacks; the final epoch always triggers one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            snr_range_db: (0.0, 30.0),
            pilots: PilotSpec::Comb { spacing: 16 },
            schedule: ScheduleSpec::default(),
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("trainer: epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("trainer: batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("trainer: lr must be > 0, got {}", self.lr)));
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "trainer: snr_range_db needs finite low <= high, got [{lo}, {hi}]"
            )));
        }
        self.schedule.build().map(|_| ())
    }

    /// Learning rate for a 0-based epoch: halved at 60% and again at 85% of the run.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let e = epoch as f64;
        let n = self.epochs as f64;
        let mut lr = self.lr;
        for frac in [0.6, 0.85] {
            if e >= (frac * n).floor() && (frac * n).floor() > 0.0 {
                lr *= 0.5;
            }
        }
        lr
    }

    fn draw_snr<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.snr_range_db;
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    }

    /// Fresh pilot observation of `h` with a random comb offset and SNR.
    pub fn draw_observation<R: Rng + ?Sized>(&self, h: &ResourceGrid, rng: &mut R) -> Result<PilotObservation> {
        let (k, m) = h.dims();
        let mask = self.pilots.draw_mask(k, m, rng)?;
        let snr = self.draw_snr(rng);
        observe(h, &mask, snr, rng)
    }
}

/// A clean channel and the pilot observation conditioning it.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub h: ResourceGrid,
    pub obs: PilotObservation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub loss: f64,
    pub grad_norm: f64,
}

fn grid_tensor(g: &ResourceGrid) -> Tensor {
    let (k, m) = g.dims();
    let mut data = Vec::with_capacity(2 * g.len());
    data.extend_from_slice(g.re());
    data.extend_from_slice(g.im());
    Tensor::new(&[2, k, m], data).expect("two planes")
}

/// Noised inputs for one batch: condition tensor, target noise and timesteps.
fn noised_batch<R: Rng + ?Sized>(
    batch: &[TrainingPair],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let mut conds = Vec::with_capacity(batch.len());
    let mut eps = Vec::with_capacity(batch.len());
    let mut ts = Vec::with_capacity(batch.len());
    for pair in batch {
        let (k, m) = pair.h.dims();
        let t = rng.gen_range(1..=sched.len());
        let e = standard_normal_grid(k, m, rng);
        let x_t = q_sample(&pair.h, t, &e, sched)?;
        conds.push(build_condition(&pair.obs, &x_t)?);
        eps.push(grid_tensor(&e));
        ts.push(t);
    }
    Ok((stack(&conds)?, stack(&eps)?, ts))
}

/// One Adam step on a batch: each sample gets `t ~ U{1..T}` and fresh `ε`
/// drawn from `rng`; the loss is the mean squared noise error per complex element.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut DenoiserParams,
    adam: &mut AdamState,
    batch: &[TrainingPair],
    sched: &NoiseSchedule,
    lr: f64,
    rng: &mut R,
) -> Result<StepResult> {
    if batch.is_empty() {
        return Err(Error::Usage("train_step on an empty batch".into()));
    }
    let (cond, eps, ts) = noised_batch(batch, sched, rng)?;
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params);
    let loss = loss_graph(&mut g, &bound, &params.config, &cond, &eps, &ts)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "loss is {value} (last t = {}, lr = {lr})",
            ts.last().copied().unwrap_or(0)
        )));
    }
    g.backward(loss)?;
    let grads: Vec<Tensor> = bound
        .iter()
        .map(|(name, v)| {
            g.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(params.tensors.require(name).expect("bound").shape()))
        })
        .collect();
    let grad_norm = grads
        .iter()
        .map(|t| t.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::Numerical(format!("gradient norm is {grad_norm} (lr = {lr})")));
    }
    let grad_refs: Vec<&Tensor> = grads.iter().collect();
    let mut param_refs: Vec<&mut Tensor> = params.tensors.tensors_mut().collect();
    adam_step(&mut param_refs, &grad_refs, adam, &AdamConfig::with_lr(lr))?;
    Ok(StepResult {
        loss: value,
        grad_norm,
    })
}

/// Validation inputs with noise, timesteps and pilot draws fixed once, so the
/// loss is comparable across epochs.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    batches: Vec<(Tensor, Tensor, Vec<usize>)>,
    n: usize,
}

impl ValidationSet {
    pub fn new(cfg: &TrainConfig, val: &Dataset, sched: &NoiseSchedule) -> Result<Self> {
        let pairs = (0..val.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = derived_rng(cfg.seed, STREAM_VAL, i as u64);
                let h = &val.samples[i];
                let obs = cfg.draw_observation(h, &mut rng)?;
                let pair = TrainingPair { h: h.clone(), obs };
                noised_batch(std::slice::from_ref(&pair), sched, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut batches = Vec::new();
        for chunk in pairs.chunks(VAL_BATCH) {
            let conds: Vec<Tensor> = chunk.iter().map(|c| unbatch(&c.0)).collect();
            let eps: Vec<Tensor> = chunk.iter().map(|c| unbatch(&c.1)).collect();
            let ts: Vec<usize> = chunk.iter().map(|c| c.2[0]).collect();
            batches.push((stack(&conds)?, stack(&eps)?, ts));
        }
        Ok(Self {
            batches,
            n: val.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Mean loss per complex element over the whole set.
    pub fn loss(&self, params: &DenoiserParams) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (cond, eps, ts) in &self.batches {
            let y = forward_padded(params, cond, ts)?;
            total += y
                .data()
                .iter()
                .zip(eps.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += eps.len() / 2;
        }
        Ok(total / count as f64)
    }
}

fn unbatch(t: &Tensor) -> Tensor {
    let s = t.shape()[1..].to_vec();
    t.clone().reshape(&s).expect("leading unit axis")
}

/// Everything needed to continue training from an epoch boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_params: DenoiserParams,
    pub best_val: f64,
    pub init_val: f64,
    pub bad_checks: usize,
}

impl TrainState {
    pub fn new(params: DenoiserParams, init_val: f64) -> Self {
        let adam = AdamState::new(params.tensors.tensors());
        Self {
            best_params: params.clone(),
            params,
            adam,
            epoch: 0,
            step: 0,
            best_val: init_val,
            init_val,
            bad_checks: 0,
        }
    }

    /// Serialises the full state next to the model header of `cfg`.
    pub fn to_tensors(&self, cfg: &TrainConfig) -> TensorMap {
        let mut map = model_header(&self.params.config, &cfg.schedule, &cfg.pilots);
        map.insert(
            "__state__",
            Tensor::new(
                &[6],
                vec![
                    self.epoch as f64,
                    self.step as f64,
                    self.best_val,
                    self.init_val,
                    self.bad_checks as f64,
                    self.adam.step as f64,
                ],
            )
            .expect("six values"),
        );
        for (name, t) in self.params.tensors.iter() {
            map.insert(name, t.clone());
        }
        for ((name, _), (m, v)) in self
            .params
            .tensors
            .iter()
            .zip(self.adam.m.iter().zip(&self.adam.v))
        {
            map.insert(format!("adam.m.{name}"), m.clone());
            map.insert(format!("adam.v.{name}"), v.clone());
        }
        for (name, t) in self.best_params.tensors.iter() {
            map.insert(format!("best.{name}"), t.clone());
        }
        map
    }

    pub fn from_tensors(map: &TensorMap) -> Result<Self> {
        let model = ModelCheckpoint::from_tensors(map)?;
        let st = map.require("__state__")?.data();
        if st.len() != 6 {
            return Err(Error::Format(format!("__state__ has {} values, expected 6", st.len())));
        }
        let config = model.params.config.clone();
        let mut m = Vec::new();
        let mut v = Vec::new();
        let mut best = TensorMap::new();
        for name in model.params.tensors.names() {
            m.push(map.require(&format!("adam.m.{name}"))?.clone());
            v.push(map.require(&format!("adam.v.{name}"))?.clone());
            best.insert(name, map.require(&format!("best.{name}"))?.clone());
        }
        Ok(Self {
            best_params: DenoiserParams::from_tensors(config, &best)?,
            params: model.params,
            adam: AdamState {
                step: st[5] as u64,
                m,
                v,
            },
            epoch: st[0] as usize,
            step: st[1] as u64,
            best_val: st[2],
            init_val: st[3],
            bad_checks: st[4] as usize,
        })
    }
}

/// Trained weights with the schedule and pilot layout they were trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub params: DenoiserParams,
    pub schedule: ScheduleSpec,
    pub pilots: PilotSpec,
}

fn model_header(cfg: &DenoiserConfig, sched: &ScheduleSpec, pilots: &PilotSpec) -> TensorMap {
    let mut map = TensorMap::new();
    let c = [
        cfg.base_channels,
        cfg.depth,
        cfg.kernel,
        cfg.time_embed_dim,
        cfg.norm_groups,
    ];
    map.insert(
        "__config__",
        Tensor::new(&[5], c.iter().map(|&x| x as f64).collect()).expect("five values"),
    );
    map.insert(
        "__schedule__",
        Tensor::new(&[3], vec![sched.steps as f64, sched.beta_min, sched.beta_max]).expect("three values"),
    );
    let mut p = vec![match pilots {
        PilotSpec::Comb { .. } => 0.0,
        PilotSpec::Joint { .. } => 1.0,
    }];
    p.extend(pilots.spacings().iter().map(|&s| s as f64));
    map.insert("__pilots__", Tensor::new(&[p.len()], p).expect("non-empty"));
    map
}

fn as_count(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e12 {
        Ok(x as usize)
    } else {
        Err(Error::Format(format!("{what}: {x} is not a count")))
    }
}

impl ModelCheckpoint {
    pub fn to_tensors(&self) -> TensorMap {
        let mut map = model_header(&self.params.config, &self.schedule, &self.pilots);
        for (name, t) in self.params.tensors.iter() {
            map.insert(name, t.clone());
        }
        map
    }

    /// Reads the header tensors and the parameters they describe; other
    /// entries (optimizer state, best copy) are ignored.
    pub fn from_tensors(map: &TensorMap) -> Result<Self> {
        let c = map.require("__config__")?.data();
        if c.len() != 5 {
            return Err(Error::Format(format!("__config__ has {} values, expected 5", c.len())));
        }
        let config = DenoiserConfig {
            base_channels: as_count(c[0], "base_channels")?,
            depth: as_count(c[1], "depth")?,
            kernel: as_count(c[2], "kernel")?,
            time_embed_dim: as_count(c[3], "time_embed_dim")?,
            norm_groups: as_count(c[4], "norm_groups")?,
        };
        let s = map.require("__schedule__")?.data();
        if s.len() != 3 {
            return Err(Error::Format(format!("__schedule__ has {} values, expected 3", s.len())));
        }
        let schedule = ScheduleSpec {
            steps: as_count(s[0], "schedule steps")?,
            beta_min: s[1],
            beta_max: s[2],
        };
        let p = map.require("__pilots__")?.data();
        let spacings = p[1..]
            .iter()
            .map(|&x| as_count(x, "pilot spacing"))
            .collect::<Result<Vec<_>>>()?;
        let pilots = match (p[0], spacings.as_slice()) {
            (k, [s]) if k == 0.0 => PilotSpec::Comb { spacing: *s },
            (k, _) if k == 1.0 => PilotSpec::Joint { spacings },
            _ => return Err(Error::Format("__pilots__ header is malformed".into())),
        };
        Ok(Self {
            params: DenoiserParams::from_tensors(config, map)?,
            schedule,
            pilots,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,epoch,train_loss,val_loss,lr,wall_ms";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.epoch, self.train_loss, self.val_loss, self.lr, self.wall_ms
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    /// Validation loss stayed above ten times its initial value for three checks.
    Diverged { epoch: usize },
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn best_model(&self, cfg: &TrainConfig) -> ModelCheckpoint {
        ModelCheckpoint {
            params: self.state.best_params.clone(),
            schedule: cfg.schedule,
            pilots: cfg.pilots.clone(),
        }
    }
}

fn check_datasets(train: &Dataset, val: &Dataset) -> Result<(usize, usize)> {
    let dims = train
        .dims()
        .ok_or_else(|| Error::Config("training split is empty".into()))?;
    let vdims = val
        .dims()
        .ok_or_else(|| Error::Config("validation split is empty".into()))?;
    if dims != vdims {
        return Err(Error::shape("validation split", &[dims.0, dims.1], &[vdims.0, vdims.1]));
    }
    for s in train.samples.iter().chain(&val.samples) {
        if s.dims() != dims {
            return Err(Error::shape("dataset sample", &[dims.0, dims.1], &[s.dims().0, s.dims().1]));
        }
    }
    Ok(dims)
}

/// Fresh initial state: seeded weights and the validation loss they give.
pub fn initial_state(cfg: &TrainConfig, model: &DenoiserConfig, valset: &ValidationSet) -> Result<TrainState> {
    let params = init_params(model, &mut derived_rng(cfg.seed, STREAM_INIT, 0))?;
    let init_val = valset.loss(&params)?;
    Ok(TrainState::new(params, init_val))
}

/// Runs epochs `state.epoch..cfg.epochs`. `on_checkpoint` sees the state
/// after every `checkpoint_every` epochs and after the last one.
pub fn train(
    cfg: &TrainConfig,
    model: &DenoiserConfig,
    train: &Dataset,
    val: &Dataset,
    resume: Option<TrainState>,
    on_checkpoint: &mut dyn FnMut(&TrainState, &MetricsRow) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    model.validate()?;
    let (k, _) = check_datasets(train, val)?;
    cfg.pilots.validate(k)?;
    let sched = cfg.schedule.build()?;
    let valset = ValidationSet::new(cfg, val, &sched)?;
    let mut state = match resume {
        Some(s) => {
            if &s.params.config != model {
                return Err(Error::Config(
                    "resume state was trained with a different network config".into(),
                ));
            }
            s
        }
        None => initial_state(cfg, model, &valset)?,
    };
    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut stop = StopReason::Completed;
    let n = train.len();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let lr = cfg.lr_at(epoch);
        let obs_seed = derive_seed(cfg.seed, STREAM_OBS, epoch as u64);
        let pairs = (0..n)
            .into_par_iter()
            .map(|i| {
                let h = &train.samples[i];
                let obs = cfg.draw_observation(h, &mut derived_rng(obs_seed, 0, i as u64))?;
                Ok(TrainingPair { h: h.clone(), obs })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derived_rng(cfg.seed, STREAM_SHUFFLE, epoch as u64));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
            let mut rng = derived_rng(cfg.seed, STREAM_STEP, state.step);
            let r = train_step(&mut state.params, &mut state.adam, &batch, &sched, lr, &mut rng)?;
            state.step += 1;
            loss_sum += r.loss;
            batches += 1;
        }

        let val_loss = valset.loss(&state.params)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "validation loss is {val_loss} after epoch {} (lr = {lr})",
                epoch + 1
            )));
        }
        if val_loss < state.best_val {
            state.best_val = val_loss;
            state.best_params = state.params.clone();
        }
        if val_loss > DIVERGENCE_FACTOR * state.init_val {
            state.bad_checks += 1;
        } else {
            state.bad_checks = 0;
        }
        state.epoch += 1;
        let row = MetricsRow {
            step: state.step,
            epoch: state.epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            lr,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        metrics.push(row.clone());
        let diverged = state.bad_checks >= DIVERGENCE_CHECKS;
        let due = cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0;
        if due || diverged || state.epoch == cfg.epochs {
            on_checkpoint(&state, &row)?;
        }
        if diverged {
            stop = StopReason::Diverged { epoch: state.epoch };
            break;
        }
    }
    Ok(TrainReport {
        state,
        metrics,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_milestones() {
        let cfg = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(11), 1e-3);
        assert_eq!(cfg.lr_at(12), 5e-4);
        assert_eq!(cfg.lr_at(16), 5e-4);
        assert_eq!(cfg.lr_at(17), 2.5e-4);
        let one = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert_eq!(one.lr_at(0), 1e-3);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        c = TrainConfig {
            snr_range_db: (20.0, 10.0),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(PilotSpec::Comb { spacing: 0 }.validate(16).is_err());
        assert!(PilotSpec::Joint { spacings: vec![] }.validate(16).is_err());
    }

    #[test]
    fn tags() {
        assert_eq!(PilotSpec::Comb { spacing: 16 }.tag(), "comb16");
        assert_eq!(
            PilotSpec::Joint {
                spacings: vec![4, 16, 32]
            }
            .tag(),
            "joint-4-16-32"
        );
    }

    #[test]
    fn metrics_line() {
        let r = MetricsRow {
            step: 10,
            epoch: 2,
            train_loss: 0.5,
            val_loss: 0.25,
            lr: 1e-3,
            wall_ms: 7,
        };
        assert_eq!(r.csv_line(), "10,2,0.5,0.25,0.001,7");
    }
}
