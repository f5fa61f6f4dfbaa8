//! Experiment configuration (TOML) and its canonical hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use diffrx_core::chansim::ChannelModelConfig;
use diffrx_core::denoiser::DenoiserConfig;
use diffrx_core::diffusion::ScheduleSpec;
use diffrx_core::receiver::{EstimatorKind, Modulation};
use diffrx_core::sampler::{KnownMode, Pipeline};
use diffrx_core::trainer::{PilotSpec, TrainConfig};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub num_paths: usize,
    pub delay_spread_ns: f64,
    pub max_doppler_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub num_subcarriers: usize,
    pub num_symbols: usize,
    /// Defaults to `15 / (14 · subcarrier_spacing)` (normal cyclic prefix).
    pub symbol_duration_us: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            num_paths: 8,
            delay_spread_ns: 100.0,
            max_doppler_hz: 0.0,
            subcarrier_spacing_hz: 30e3,
            num_subcarriers: 128,
            num_symbols: 1,
            symbol_duration_us: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_val: 200,
            n_test: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = ScheduleSpec::default();
        Self {
            steps: s.steps,
            beta_min: s.beta_min,
            beta_max: s.beta_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub base_channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub time_embed_dim: usize,
    pub norm_groups: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        Self {
            base_channels: d.base_channels,
            depth: d.depth,
            kernel: d.kernel,
            time_embed_dim: d.time_embed_dim,
            norm_groups: d.norm_groups,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub snr_range_db: [f64; 2],
    /// Pilot densities as fractions (`"1/16"`) or decimals (`"0.0625"`).
    pub densities: Vec<String>,
    /// Train a single model over all densities instead of one per density.
    pub joint: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            snr_range_db: [t.snr_range_db.0, t.snr_range_db.1],
            densities: vec!["1/4".into(), "1/16".into(), "1/32".into()],
            joint: false,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub steps: Vec<usize>,
    /// Overrides of the step-dependent defaults.
    pub resample_count: Option<usize>,
    pub jump_length: Option<usize>,
    pub candidates: usize,
    /// `"binary"` or `"soft"`.
    pub known: String,
    pub terminal_overwrite: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: vec![50, 370],
            resample_count: None,
            jump_length: None,
            candidates: 8,
            known: "binary".into(),
            terminal_overwrite: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// SNR of the NMSE sweep and baseline table.
    pub snr_db: f64,
    pub ber_snr_db: Vec<f64>,
    pub modulation: String,
    pub frames: usize,
    /// Inference steps used by the DM estimators in the BER sweep.
    pub ber_steps: usize,
    pub estimators: Vec<String>,
    /// `"empirical"` (train split) or `"pdp"` (analytic exponential profile).
    pub lmmse_covariance: String,
    /// Cap on the number of test grids used; all when absent.
    pub max_test_grids: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            ber_snr_db: vec![0.0, 10.0, 20.0],
            modulation: "QPSK".into(),
            frames: 200,
            ber_steps: 50,
            estimators: ["ls-linear", "lmmse", "dm-vanilla", "dm-repaint"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            lmmse_covariance: "empirical".into(),
            max_test_grids: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub channel: ChannelSection,
    pub dataset: DatasetSection,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
}

fn field<T>(name: &str, r: diffrx_core::Result<T>) -> Result<T> {
    r.map_err(|e| HarnessError::Config(format!("{name}: {e}")))
}

fn bad<T>(name: &str, msg: impl std::fmt::Display) -> Result<T> {
    Err(HarnessError::Config(format!("{name}: {msg}")))
}

/// Parses `"1/16"`, `"0.0625"` or `"1"` into a comb spacing.
pub fn parse_density(s: &str) -> Result<usize> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| HarnessError::Config(format!("density {s:?} is not a fraction")))?;
            let b: f64 = b.trim().parse().map_err(|_| HarnessError::Config(format!("density {s:?} is not a fraction")))?;
            a / b
        }
        None => s
            .parse()
            .map_err(|_| HarnessError::Config(format!("density {s:?} is not a number")))?,
    };
    if !(value > 0.0 && value <= 1.0) {
        return bad("density", format!("{s:?} must lie in (0, 1]"));
    }
    let spacing = (1.0 / value).round();
    if ((1.0 / spacing) - value).abs() > 1e-9 {
        return bad("density", format!("{s:?} is not 1/n for an integer n"));
    }
    Ok(spacing as usize)
}

pub fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| f(p.trim())).collect()
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn channel_config(&self) -> ChannelModelConfig {
        let c = &self.channel;
        let symbol_duration = match c.symbol_duration_us {
            Some(us) => us * 1e-6,
            None => 15.0 / (14.0 * c.subcarrier_spacing_hz),
        };
        ChannelModelConfig {
            num_paths: c.num_paths,
            delay_spread: c.delay_spread_ns * 1e-9,
            max_doppler: c.max_doppler_hz,
            subcarrier_spacing: c.subcarrier_spacing_hz,
            num_subcarriers: c.num_subcarriers,
            num_symbols: c.num_symbols,
            symbol_duration,
            seed: self.seed(),
        }
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.schedule.steps,
            beta_min: self.schedule.beta_min,
            beta_max: self.schedule.beta_max,
        }
    }

    pub fn model_config(&self) -> DenoiserConfig {
        let m = &self.model;
        DenoiserConfig {
            base_channels: m.base_channels,
            depth: m.depth,
            kernel: m.kernel,
            time_embed_dim: m.time_embed_dim,
            norm_groups: m.norm_groups,
        }
    }

    pub fn spacings(&self) -> Result<Vec<usize>> {
        let s = self
            .train
            .densities
            .iter()
            .map(|d| parse_density(d))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| HarnessError::Config(format!("train.densities: {e}")))?;
        if s.is_empty() {
            return bad("train.densities", "must list at least one density");
        }
        Ok(s)
    }

    /// One pilot spec per model to train.
    pub fn pilot_specs(&self) -> Result<Vec<PilotSpec>> {
        let s = self.spacings()?;
        Ok(if self.train.joint {
            vec![PilotSpec::Joint { spacings: s }]
        } else {
            s.into_iter().map(|spacing| PilotSpec::Comb { spacing }).collect()
        })
    }

    pub fn train_config(&self, pilots: PilotSpec) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: self.seed(),
            snr_range_db: (t.snr_range_db[0], t.snr_range_db[1]),
            pilots,
            schedule: self.schedule_spec(),
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn known_mode(&self) -> Result<KnownMode> {
        match self.sampler.known.as_str() {
            "binary" => Ok(KnownMode::Binary),
            "soft" => Ok(KnownMode::Soft),
            other => bad("sampler.known", format!("{other:?} is not binary|soft")),
        }
    }

    pub fn estimators(&self) -> Result<Vec<EstimatorKind>> {
        self.eval
            .estimators
            .iter()
            .map(|s| EstimatorKind::parse(s).map_err(|e| HarnessError::Config(format!("eval.estimators: {e}"))))
            .collect()
    }

    pub fn modulation(&self) -> Result<Modulation> {
        field("eval.modulation", Modulation::parse(&self.eval.modulation))
    }

    /// Pipelines of the NMSE sweep implied by the requested estimators.
    pub fn sweep_pipelines(&self) -> Result<Vec<Pipeline>> {
        let mut p = Vec::new();
        for e in self.estimators()? {
            match e {
                EstimatorKind::DmVanilla => p.push(Pipeline::Vanilla),
                EstimatorKind::DmRepaint => p.push(Pipeline::Repaint),
                _ => {}
            }
        }
        Ok(p)
    }

    /// Checks every section, reporting the first offending field.
    pub fn validate(&self) -> Result<()> {
        field("channel", self.channel_config().validate())?;
        let d = &self.dataset;
        for (name, n) in [("dataset.n_train", d.n_train), ("dataset.n_val", d.n_val), ("dataset.n_test", d.n_test)] {
            if n == 0 {
                return bad(name, "must be >= 1");
            }
        }
        field("schedule", self.schedule_spec().build().map(|_| ()))?;
        field("model", self.model_config().validate())?;
        for spec in self.pilot_specs()? {
            let tc = self.train_config(spec.clone());
            field("train", tc.validate())?;
            field("train.densities", spec.validate(self.channel.num_subcarriers))?;
        }
        if self.sampler.steps.is_empty() {
            return bad("sampler.steps", "must list at least one step count");
        }
        for &s in &self.sampler.steps {
            if s == 0 || s > self.schedule.steps {
                return bad("sampler.steps", format!("{s} outside [1, {}]", self.schedule.steps));
            }
        }
        if self.eval.ber_steps == 0 || self.eval.ber_steps > self.schedule.steps {
            return bad("eval.ber_steps", format!("{} outside [1, {}]", self.eval.ber_steps, self.schedule.steps));
        }
        if self.sampler.candidates == 0 {
            return bad("sampler.candidates", "must be >= 1");
        }
        if self.sampler.resample_count == Some(0) {
            return bad("sampler.resample_count", "must be >= 1");
        }
        if self.sampler.jump_length == Some(0) {
            return bad("sampler.jump_length", "must be >= 1");
        }
        self.known_mode()?;
        self.estimators()?;
        self.modulation()?;
        if self.eval.frames == 0 {
            return bad("eval.frames", "must be >= 1");
        }
        match self.eval.lmmse_covariance.as_str() {
            "empirical" | "pdp" => {}
            other => return bad("eval.lmmse_covariance", format!("{other:?} is not empirical|pdp")),
        }
        if self.eval.max_test_grids == Some(0) {
            return bad("eval.max_test_grids", "must be >= 1");
        }
        Ok(())
    }

    /// Key-order-independent JSON rendering used for hashing.
    pub fn canonical_json(&self) -> String {
        // serde_json::Map keeps keys sorted, so the value form is canonical.
        let v = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string(&v).expect("value serialises")
    }

    pub fn hash(&self) -> String {
        hex_digest(self.canonical_json().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
