//! Channel estimation by conditional reverse diffusion: vanilla ancestral
//! sampling and RePaint-style known-region replacement with resampling jumps.
//!
//! Every grid carries its own RNG seeded per item, and grids are advanced in
//! lockstep batches, so results do not depend on batch size or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chansim::Dataset;
use crate::denoiser::{build_condition, forward_padded, stack, unstack_grids, DenoiserParams};
use crate::diffusion::{forward_renoise, reverse_step, standard_normal_grid, NoiseSchedule};
use crate::error::{Error, Result};
use crate::estimators::nmse;
use crate::grid::ResourceGrid;
use crate::pilots::{comb_mask, observe, PilotObservation};
use crate::seeding::{derive_seed, derived_rng};

const STREAM_CANDIDATE: u64 = 0x20;
const STREAM_SWEEP_OBS: u64 = 0x21;
const STREAM_SWEEP_SAMPLE: u64 = 0x22;

/// Grids advanced together through one network call.
const BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pipeline {
    Vanilla,
    Repaint,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Vanilla => "vanilla",
            Pipeline::Repaint => "repaint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Pipeline::Vanilla),
            "repaint" => Ok(Pipeline::Repaint),
            _ => Err(Error::Config(format!("unknown pipeline {s:?} (vanilla|repaint)"))),
        }
    }
}

/// How pilot observations enter the RePaint merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnownMode {
    /// Pilots replace the sample outright and are written back at the end.
    Binary,
    /// The merge weight at each element is its soft-mask value.
    Soft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Inference steps strided over the training schedule; 0 returns the initial noise.
    pub steps: usize,
    pub pipeline: Pipeline,
    pub resample_count: usize,
    pub jump_length: usize,
    pub candidates: usize,
    pub seed: u64,
    pub known: KnownMode,
    /// Write LS values back at pilots after the last step (binary repaint only).
    pub terminal_overwrite: bool,
}

impl SamplerConfig {
    /// Defaults: `U = 3, j = 10` for at least 100 steps, else `U = 2, j = 5`.
    pub fn new(steps: usize, pipeline: Pipeline) -> Self {
        let (u, j) = if steps >= 100 { (3, 10) } else { (2, 5) };
        Self {
            steps,
            pipeline,
            resample_count: u,
            jump_length: j,
            candidates: 1,
            seed: 0,
            known: KnownMode::Binary,
            terminal_overwrite: true,
        }
    }

    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.steps > t_max {
            return Err(Error::Config(format!(
                "sampler: {} steps exceed the trained schedule length {t_max}",
                self.steps
            )));
        }
        if self.resample_count == 0 || self.jump_length == 0 || self.candidates == 0 {
            return Err(Error::Config(
                "sampler: resample_count, jump_length and candidates must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Network evaluations per grid (per candidate).
    pub fn nfe(&self) -> usize {
        match self.pipeline {
            Pipeline::Vanilla => self.steps,
            Pipeline::Repaint => {
                let s = self.steps;
                let j = self.jump_length;
                let jumps = (1..=s).filter(|&x| x % j == 0 && x + j <= s).count();
                s + jumps * (self.resample_count - 1) * j
            }
        }
    }
}

/// Ordered step plan: `Denoise(s)` maps state `s` to `s − 1`; `Renoise(s)`
/// maps `s − 1` to `s` with one forward step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Denoise(usize),
    Renoise(usize),
}

fn plan(cfg: &SamplerConfig) -> Vec<Op> {
    let total = cfg.steps;
    let jumps = cfg.pipeline == Pipeline::Repaint && cfg.resample_count > 1;
    let j = cfg.jump_length;
    let mut done = vec![0usize; total + 1];
    let mut ops = Vec::new();
    let mut s = total;
    while s > 0 {
        ops.push(Op::Denoise(s));
        s -= 1;
        if jumps && s >= 1 && s % j == 0 && s + j <= total && done[s] + 1 < cfg.resample_count {
            done[s] += 1;
            for t in s + 1..=s + j {
                ops.push(Op::Renoise(t));
            }
            s += j;
        }
    }
    ops
}

struct Item<'a> {
    obs: &'a PilotObservation,
    weights: Vec<f64>,
    has_known: bool,
    rng: ChaCha8Rng,
    x: ResourceGrid,
}

fn merge_weights(obs: &PilotObservation, mode: KnownMode) -> Vec<f64> {
    match mode {
        KnownMode::Binary => obs
            .mask
            .values()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect(),
        KnownMode::Soft => obs.mask.values().to_vec(),
    }
}

fn run_batch(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    ops: &[Op],
    problems: &[(&PilotObservation, u64)],
) -> Result<Vec<ResourceGrid>> {
    let rs = if cfg.steps > 0 {
        Some(sched.respace(cfg.steps)?)
    } else {
        None
    };
    let repaint = cfg.pipeline == Pipeline::Repaint;
    let mut items: Vec<Item> = problems
        .iter()
        .map(|&(obs, seed)| {
            let (k, m) = obs.dims();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = standard_normal_grid(k, m, &mut rng);
            let weights = merge_weights(obs, cfg.known);
            let has_known = repaint && weights.iter().any(|&w| w > 0.0);
            Item {
                obs,
                weights,
                has_known,
                rng,
                x,
            }
        })
        .collect();
    for op in ops {
        let rs = rs.as_ref().expect("steps > 0 when ops exist");
        match *op {
            Op::Denoise(s) => {
                let conds = items
                    .iter()
                    .map(|it| build_condition(it.obs, &it.x))
                    .collect::<Result<Vec<_>>>()?;
                let ts = vec![rs.model_timestep(s); items.len()];
                let eps = unstack_grids(&forward_padded(params, &stack(&conds)?, &ts)?)?;
                for (it, e) in items.iter_mut().zip(&eps) {
                    let (k, m) = it.x.dims();
                    let z = (s > 1).then(|| standard_normal_grid(k, m, &mut it.rng));
                    let unknown = reverse_step(&it.x, e, s, rs, z.as_ref())?;
                    it.x = if it.has_known {
                        let ab = rs.alpha_bar(s - 1);
                        let e2 = standard_normal_grid(k, m, &mut it.rng);
                        let known = it.obs.ls.zip_map(&e2, "repaint known", |l, n| l * ab.sqrt() + n * (1.0 - ab).sqrt())?;
                        let mut out = unknown;
                        for (i, &w) in it.weights.iter().enumerate() {
                            if w > 0.0 {
                                out.set_at(i, known.at(i) * w + out.at(i) * (1.0 - w));
                            }
                        }
                        out
                    } else {
                        unknown
                    };
                }
            }
            Op::Renoise(t) => {
                for it in items.iter_mut() {
                    let (k, m) = it.x.dims();
                    let e = standard_normal_grid(k, m, &mut it.rng);
                    it.x = forward_renoise(&it.x, rs, t, &e)?;
                }
            }
        }
    }
    let overwrite = repaint && cfg.known == KnownMode::Binary && cfg.terminal_overwrite;
    Ok(items
        .into_iter()
        .map(|mut it| {
            if overwrite {
                for i in 0..it.x.len() {
                    if it.obs.mask.is_pilot(i) {
                        it.x.set_at(i, it.obs.ls.at(i));
                    }
                }
            }
            it.x
        })
        .collect())
}

/// Runs `cfg.pipeline` for every `(observation, seed)` pair. Item `i` depends
/// only on its own observation and seed.
pub fn sample_many(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    problems: &[(&PilotObservation, u64)],
) -> Result<Vec<ResourceGrid>> {
    cfg.validate(sched.len())?;
    let ops = plan(cfg);
    let chunks = problems
        .par_chunks(BATCH)
        .map(|chunk| run_batch(params, sched, cfg, &ops, chunk))
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn sample_one<R: Rng + ?Sized>(
    params: &DenoiserParams,
    obs: &PilotObservation,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    pipeline: Pipeline,
    rng: &mut R,
) -> Result<ResourceGrid> {
    let cfg = SamplerConfig {
        pipeline,
        ..cfg.clone()
    };
    let seed = rng.gen();
    Ok(sample_many(params, sched, &cfg, &[(obs, seed)])?.remove(0))
}

/// `x_T ~ N(0, I)` followed by conditional ancestral steps.
pub fn sample_vanilla<R: Rng + ?Sized>(
    params: &DenoiserParams,
    obs: &PilotObservation,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ResourceGrid> {
    sample_one(params, obs, sched, cfg, Pipeline::Vanilla, rng)
}

/// Ancestral steps with the known region replaced by noised LS values, and
/// `U − 1` forward jumps of `j` steps at every `j`-th state.
pub fn sample_repaint<R: Rng + ?Sized>(
    params: &DenoiserParams,
    obs: &PilotObservation,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ResourceGrid> {
    sample_one(params, obs, sched, cfg, Pipeline::Repaint, rng)
}

/// Per-candidate seeds; candidate 0 reuses `seed`, so `N = 1` matches a
/// single draw with the same seed.
pub fn candidate_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|c| {
            if c == 0 {
                seed
            } else {
                derive_seed(seed, STREAM_CANDIDATE, c as u64)
            }
        })
        .collect()
}

/// Index of the lowest score; ties go to the lowest index and NaN never wins.
pub fn argmin_score(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        let s = if s.is_nan() { f64::INFINITY } else { s };
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Draws `cfg.candidates` estimates per problem.
pub fn sample_candidates(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    problems: &[(&PilotObservation, u64)],
) -> Result<Vec<Vec<ResourceGrid>>> {
    let n = cfg.candidates;
    let flat: Vec<(&PilotObservation, u64)> = problems
        .iter()
        .flat_map(|&(obs, seed)| candidate_seeds(seed, n).into_iter().map(move |s| (obs, s)))
        .collect();
    let mut grids = sample_many(params, sched, cfg, &flat)?.into_iter();
    Ok((0..problems.len())
        .map(|_| grids.by_ref().take(n).collect())
        .collect())
}

/// Draws `cfg.candidates` estimates and returns the one with the lowest
/// score (and its index).
pub fn sample_best_of_n<R: Rng + ?Sized>(
    params: &DenoiserParams,
    obs: &PilotObservation,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    scorer: &dyn Fn(&ResourceGrid) -> Result<f64>,
    rng: &mut R,
) -> Result<(usize, ResourceGrid)> {
    let seed = rng.gen();
    let mut cands = sample_candidates(params, sched, cfg, &[(obs, seed)])?.remove(0);
    let scores = cands.iter().map(scorer).collect::<Result<Vec<_>>>()?;
    let best = argmin_score(&scores).expect("at least one candidate");
    Ok((best, cands.swap_remove(best)))
}

/// One checkpoint entry of a sweep; `params = None` marks a missing model.
#[derive(Clone, Copy, Debug)]
pub struct SweepModel<'a> {
    pub spacing: usize,
    pub params: Option<&'a DenoiserParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub steps: Vec<usize>,
    pub pipelines: Vec<Pipeline>,
    pub snr_db: f64,
    pub seed: u64,
    pub known: KnownMode,
    /// Overrides of the step-dependent repaint defaults.
    pub resample_count: Option<usize>,
    pub jump_length: Option<usize>,
    pub terminal_overwrite: bool,
}

impl SweepConfig {
    pub fn new(steps: Vec<usize>, pipelines: Vec<Pipeline>, snr_db: f64, seed: u64) -> Self {
        Self {
            steps,
            pipelines,
            snr_db,
            seed,
            known: KnownMode::Binary,
            resample_count: None,
            jump_length: None,
            terminal_overwrite: true,
        }
    }

    pub fn sampler(&self, steps: usize, pipeline: Pipeline) -> SamplerConfig {
        let d = SamplerConfig::new(steps, pipeline);
        SamplerConfig {
            resample_count: self.resample_count.unwrap_or(d.resample_count),
            jump_length: self.jump_length.unwrap_or(d.jump_length),
            known: self.known,
            seed: self.seed,
            terminal_overwrite: self.terminal_overwrite,
            ..d
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub spacing: usize,
    pub steps: usize,
    pub pipeline: String,
    /// `None` when the model for this density is missing.
    pub nmse_mean: Option<f64>,
    pub nmse_std: Option<f64>,
    pub n_grids: usize,
    pub seed: u64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "density,steps,pipeline,nmse_mean,nmse_std,n_grids,seed";

    pub fn density(&self) -> f64 {
        1.0 / self.spacing as f64
    }

    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.density(),
            self.steps,
            self.pipeline,
            f(self.nmse_mean),
            f(self.nmse_std),
            self.n_grids,
            self.seed
        )
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Comb observations of every test grid at `snr_db`; grid `i` uses a stream
/// derived from `(seed, spacing, i)`, shared by every pipeline and step count.
pub fn sweep_observations(
    test: &Dataset,
    spacing: usize,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<PilotObservation>> {
    let base = derive_seed(seed, STREAM_SWEEP_OBS, spacing as u64);
    test.samples
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut rng = derived_rng(base, 0, i as u64);
            let (k, m) = h.dims();
            let mask = comb_mask(k, m, spacing, true, &mut rng)?;
            observe(h, &mask, snr_db, &mut rng)
        })
        .collect()
}

/// Per-grid sampler seeds for a sweep.
pub fn sweep_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|i| derive_seed(seed, STREAM_SWEEP_SAMPLE, i as u64))
        .collect()
}

/// Mean/std NMSE for every (model, steps, pipeline) cell over the whole test set.
pub fn nmse_vs_steps_sweep(
    models: &[SweepModel],
    test: &Dataset,
    sched: &NoiseSchedule,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if test.is_empty() {
        return Err(Error::Config("sweep needs a non-empty test set".into()));
    }
    let mut rows = Vec::new();
    let seeds = sweep_seeds(cfg.seed, test.len());
    for model in models {
        let obs = match model.params {
            Some(_) => sweep_observations(test, model.spacing, cfg.snr_db, cfg.seed)?,
            None => Vec::new(),
        };
        for &steps in &cfg.steps {
            for &pipeline in &cfg.pipelines {
                let mut row = SweepRow {
                    spacing: model.spacing,
                    steps,
                    pipeline: pipeline.name().to_string(),
                    nmse_mean: None,
                    nmse_std: None,
                    n_grids: 0,
                    seed: cfg.seed,
                };
                if let Some(params) = model.params {
                    let sc = cfg.sampler(steps, pipeline);
                    let problems: Vec<_> = obs.iter().zip(&seeds).map(|(o, &s)| (o, s)).collect();
                    let est = sample_many(params, sched, &sc, &problems)?;
                    let errs = est
                        .iter()
                        .zip(&test.samples)
                        .map(|(e, h)| nmse(e, h))
                        .collect::<Result<Vec<_>>>()?;
                    let (m, s) = mean_std(&errs);
                    row.nmse_mean = Some(m);
                    row.nmse_std = Some(s);
                    row.n_grids = errs.len();
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}
