//! The `generate`, `train`, `evaluate`, `baseline` and `plotdata` commands.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use diffrx_core::chansim::{build_dataset, normalize_dataset, read_dataset, write_dataset, Dataset};
use diffrx_core::estimators::{empirical_covariance, linear_interp, lmmse_interp, nmse, CovarianceModel};
use diffrx_core::numcore::{read_checkpoint, write_checkpoint, TensorMap};
use diffrx_core::receiver::{end_to_end_ber, EstimatorContext, EstimatorKind, LinkConfig, LinkResult};
use diffrx_core::sampler::{
    mean_std, nmse_vs_steps_sweep, sweep_observations, Pipeline, SamplerConfig, SweepConfig, SweepModel, SweepRow,
};
use diffrx_core::trainer::{train, ModelCheckpoint, MetricsRow, PilotSpec, StopReason, TrainState};

use crate::config::HarnessConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::{Padding, RunManifest};
use crate::plotdata::{self, BASELINE_HEADER};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn train_dir(out: &Path, tag: &str) -> PathBuf {
    out.join("train").join(tag)
}

pub fn eval_dir(out: &Path) -> PathBuf {
    out.join("eval")
}

pub fn baseline_dir(out: &Path) -> PathBuf {
    out.join("baseline")
}

fn is_nonempty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Creates `dir`, clearing it first under `force`; refuses a non-empty one otherwise.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if is_nonempty_dir(dir) {
        if !force {
            return Err(HarnessError::Exists(format!(
                "{} already exists (pass --force to overwrite)",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn csv_text(header: &str, lines: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for l in lines {
        s.push_str(&l);
        s.push('\n');
    }
    s
}

fn padding(cfg: &HarnessConfig) -> Padding {
    let (k, m) = (cfg.channel.num_subcarriers, cfg.channel.num_symbols);
    let (padded_k, padded_m) = cfg.model_config().padded_dims(k, m);
    Padding { k, m, padded_k, padded_m }
}

pub fn load_split(out: &Path, name: &str) -> Result<Dataset> {
    let path = data_dir(out).join(format!("{name}.bin"));
    if !path.exists() {
        return Err(HarnessError::Missing(format!(
            "{} not found (run `generate` first)",
            path.display()
        )));
    }
    let f = File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
    let ds = read_dataset(BufReader::new(f))?;
    Ok(ds)
}

fn check_dims(cfg: &HarnessConfig, ds: &Dataset, name: &str) -> Result<()> {
    let want = (cfg.channel.num_subcarriers, cfg.channel.num_symbols);
    match ds.dims() {
        Some(d) if d == want => Ok(()),
        Some(d) => Err(HarnessError::Config(format!(
            "{name} split holds {}x{} grids but the config asks for {}x{}",
            d.0, d.1, want.0, want.1
        ))),
        None => Err(HarnessError::Config(format!("{name} split is empty"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub counts: [usize; 3],
    pub normalization: f64,
}

/// Draws, normalises and writes the three dataset splits.
pub fn generate(cfg: &HarnessConfig, out: &Path, force: bool) -> Result<GenerateSummary> {
    cfg.validate()?;
    let dir = data_dir(out);
    prepare_dir(&dir, force)?;
    let mut manifest = RunManifest::new("generate", cfg);
    let d = &cfg.dataset;
    let splits = normalize_dataset(build_dataset(&cfg.channel_config(), d.n_train, d.n_val, d.n_test)?)?;
    for (name, ds) in SPLITS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        let file = format!("{name}.bin");
        let path = dir.join(&file);
        let f = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        write_dataset(BufWriter::new(f), ds)?;
        manifest.files.push(file);
    }
    manifest.padding = Some(padding(cfg));
    manifest.write(&dir)?;
    Ok(GenerateSummary {
        counts: [splits.train.len(), splits.val.len(), splits.test.len()],
        normalization: splits.train.normalization,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub tag: String,
    pub epochs: usize,
    pub final_val: f64,
    pub best_val: f64,
    pub stop: StopReason,
}

fn save_checkpoint(path: &Path, map: &TensorMap) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let f = File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    write_checkpoint(BufWriter::new(f), map)?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

fn load_tensors(path: &Path) -> Result<TensorMap> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(read_checkpoint(BufReader::new(f))?)
}

/// Trains one model per pilot spec into `out/train/<tag>/`.
pub fn train_models(
    cfg: &HarnessConfig,
    out: &Path,
    force: bool,
    resume: bool,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    if force && resume {
        return Err(HarnessError::Usage("--force and --resume are mutually exclusive".into()));
    }
    let train_set = load_split(out, "train")?;
    let val_set = load_split(out, "val")?;
    check_dims(cfg, &train_set, "train")?;
    check_dims(cfg, &val_set, "val")?;
    let model = cfg.model_config();
    let mut summaries = Vec::new();
    for spec in cfg.pilot_specs()? {
        let tag = spec.tag();
        let tc = cfg.train_config(spec.clone());
        let dir = train_dir(out, &tag);
        let last = dir.join("last.ckpt");
        let metrics_path = dir.join("metrics.csv");
        let state = if resume {
            if !last.exists() {
                return Err(HarnessError::Missing(format!("{} not found, nothing to resume", last.display())));
            }
            let st = TrainState::from_tensors(&load_tensors(&last)?)?;
            log(&format!("{tag}: resuming after epoch {}", st.epoch));
            Some(st)
        } else {
            prepare_dir(&dir, force)?;
            write_text(&metrics_path, &format!("{}\n", MetricsRow::CSV_HEADER))?;
            None
        };
        let best_path = dir.join("best.ckpt");
        let mut hook = |st: &TrainState, row: &MetricsRow| -> Result<(), diffrx_core::Error> {
            let mut f = OpenOptions::new().append(true).open(&metrics_path)?;
            writeln!(f, "{}", row.csv_line())?;
            let best = ModelCheckpoint {
                params: st.best_params.clone(),
                schedule: tc.schedule,
                pilots: tc.pilots.clone(),
            };
            let io = |e: HarnessError| diffrx_core::Error::Io(std::io::Error::other(e.to_string()));
            save_checkpoint(&last, &st.to_tensors(&tc)).map_err(io)?;
            save_checkpoint(&best_path, &best.to_tensors()).map_err(io)?;
            Ok(())
        };
        let report = train(&tc, &model, &train_set, &val_set, state, &mut hook)?;
        let final_val = report.metrics.last().map(|m| m.val_loss).unwrap_or(report.state.best_val);
        if let StopReason::Diverged { epoch } = report.stop {
            log(&format!("{tag}: stopped at epoch {epoch}: validation loss diverged"));
        }
        log(&format!(
            "{tag}: final val loss {final_val:.6} (best {:.6})",
            report.state.best_val
        ));
        let mut manifest = RunManifest::new("train", cfg);
        manifest.add_input(&data_dir(out).join("train.bin"))?;
        manifest.add_input(&data_dir(out).join("val.bin"))?;
        manifest.files = vec!["best.ckpt".into(), "last.ckpt".into(), "metrics.csv".into()];
        manifest.padding = Some(padding(cfg));
        manifest.write(&dir)?;
        summaries.push(TrainSummary {
            tag,
            epochs: report.state.epoch,
            final_val,
            best_val: report.state.best_val,
            stop: report.stop,
        });
    }
    Ok(summaries)
}

/// Best checkpoint serving `spacing`: the dedicated comb model, else a joint
/// model covering it.
pub fn find_checkpoint(cfg: &HarnessConfig, out: &Path, spacing: usize) -> Result<Option<(PathBuf, ModelCheckpoint)>> {
    let mut candidates = vec![PilotSpec::Comb { spacing }.tag()];
    if let Ok(s) = cfg.spacings() {
        candidates.push(PilotSpec::Joint { spacings: s }.tag());
    }
    for tag in candidates {
        let path = train_dir(out, &tag).join("best.ckpt");
        if !path.exists() {
            continue;
        }
        let ck = ModelCheckpoint::from_tensors(&load_tensors(&path)?)?;
        if !ck.pilots.spacings().contains(&spacing) {
            continue;
        }
        if ck.params.config != cfg.model_config() {
            return Err(HarnessError::Config(format!(
                "{} was trained with a different [model] section",
                path.display()
            )));
        }
        if ck.schedule != cfg.schedule_spec() {
            return Err(HarnessError::Config(format!(
                "{} was trained with a different [schedule] section",
                path.display()
            )));
        }
        return Ok(Some((path, ck)));
    }
    Ok(None)
}

fn covariance(cfg: &HarnessConfig, out: &Path, inputs: &mut Vec<PathBuf>) -> Result<CovarianceModel> {
    if cfg.eval.lmmse_covariance == "pdp" {
        let c = &cfg.channel;
        return Ok(CovarianceModel::exponential_pdp(
            c.num_subcarriers,
            c.subcarrier_spacing_hz,
            c.delay_spread_ns * 1e-9,
        )?);
    }
    let train_set = load_split(out, "train")?;
    check_dims(cfg, &train_set, "train")?;
    inputs.push(data_dir(out).join("train.bin"));
    Ok(empirical_covariance(&train_set)?)
}

fn test_split(cfg: &HarnessConfig, out: &Path) -> Result<Dataset> {
    let mut test = load_split(out, "test")?;
    check_dims(cfg, &test, "test")?;
    if let Some(n) = cfg.eval.max_test_grids {
        test.samples.truncate(n);
    }
    Ok(test)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub spacing: usize,
    pub estimator: String,
    pub steps: Option<usize>,
    pub nmse_mean: Option<f64>,
    pub nmse_std: Option<f64>,
    pub n_grids: usize,
    pub seed: u64,
}

impl BaselineRow {
    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            1.0 / self.spacing as f64,
            self.estimator,
            self.steps.map(|s| s.to_string()).unwrap_or_default(),
            f(self.nmse_mean),
            f(self.nmse_std),
            self.n_grids,
            self.seed
        )
    }
}

/// NMSE of the classical estimators on the sweep observations.
fn classical_rows(
    cfg: &HarnessConfig,
    test: &Dataset,
    kinds: &[EstimatorKind],
    cov: Option<&CovarianceModel>,
) -> Result<Vec<BaselineRow>> {
    let seed = cfg.seed();
    let mut rows = Vec::new();
    for spacing in cfg.spacings()? {
        let obs = sweep_observations(test, spacing, cfg.eval.snr_db, seed)?;
        for &kind in kinds {
            let errs = obs
                .iter()
                .zip(&test.samples)
                .map(|(o, h)| {
                    let est = match kind {
                        EstimatorKind::LsLinear => linear_interp(o).grid,
                        EstimatorKind::Lmmse => lmmse_interp(o, cov.expect("covariance loaded"))?,
                        _ => unreachable!("classical estimators only"),
                    };
                    nmse(&est, h)
                })
                .collect::<diffrx_core::Result<Vec<_>>>()?;
            let (m, s) = mean_std(&errs);
            rows.push(BaselineRow {
                spacing,
                estimator: kind.name().to_string(),
                steps: None,
                nmse_mean: Some(m),
                nmse_std: Some(s),
                n_grids: errs.len(),
                seed,
            });
        }
    }
    Ok(rows)
}

/// Ordered classical estimators among `kinds`.
fn classical(kinds: &[EstimatorKind]) -> Vec<EstimatorKind> {
    [EstimatorKind::LsLinear, EstimatorKind::Lmmse]
        .into_iter()
        .filter(|k| kinds.contains(k))
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct EvalOutput {
    pub sweep: Vec<SweepRow>,
    pub ber: Vec<LinkResult>,
    pub baseline: Vec<BaselineRow>,
}

fn sweep_config(cfg: &HarnessConfig) -> Result<SweepConfig> {
    Ok(SweepConfig {
        known: cfg.known_mode()?,
        resample_count: cfg.sampler.resample_count,
        jump_length: cfg.sampler.jump_length,
        terminal_overwrite: cfg.sampler.terminal_overwrite,
        ..SweepConfig::new(cfg.sampler.steps.clone(), cfg.sweep_pipelines()?, cfg.eval.snr_db, cfg.seed())
    })
}

fn ber_sampler(cfg: &HarnessConfig, sweep: &SweepConfig) -> SamplerConfig {
    SamplerConfig {
        candidates: cfg.sampler.candidates,
        ..sweep.sampler(cfg.eval.ber_steps, Pipeline::Repaint)
    }
}

/// NMSE-vs-steps sweep, baseline table and BER-vs-SNR sweep into `out/eval/`.
pub fn evaluate(cfg: &HarnessConfig, out: &Path, force: bool, log: &mut dyn FnMut(&str)) -> Result<EvalOutput> {
    cfg.validate()?;
    let kinds = cfg.estimators()?;
    let test = test_split(cfg, out)?;
    let mut inputs = vec![data_dir(out).join("test.bin")];
    let spacings = cfg.spacings()?;

    let wants_model = kinds.iter().any(|k| k.needs_model());
    let mut models = Vec::new();
    if wants_model {
        for &s in &spacings {
            let found = find_checkpoint(cfg, out, s)?;
            match &found {
                Some((path, _)) => {
                    if !inputs.contains(path) {
                        inputs.push(path.clone());
                    }
                }
                None => log(&format!("no checkpoint for density 1/{s}; its rows are left empty")),
            }
            models.push((s, found.map(|(_, c)| c)));
        }
        if models.iter().all(|(_, m)| m.is_none()) {
            return Err(HarnessError::Missing(format!(
                "no trained checkpoints under {} (run `train` or drop the dm-* estimators)",
                out.join("train").display()
            )));
        }
    }
    let cov = if kinds.contains(&EstimatorKind::Lmmse) {
        Some(covariance(cfg, out, &mut inputs)?)
    } else {
        None
    };

    let dir = eval_dir(out);
    prepare_dir(&dir, force)?;
    let sched = cfg.schedule_spec().build()?;
    let sweep_cfg = sweep_config(cfg)?;

    let sweep = if sweep_cfg.pipelines.is_empty() {
        Vec::new()
    } else {
        let sm: Vec<SweepModel> = models
            .iter()
            .map(|(s, m)| SweepModel {
                spacing: *s,
                params: m.as_ref().map(|c| &c.params),
            })
            .collect();
        log(&format!("nmse sweep over {} test grids", test.len()));
        nmse_vs_steps_sweep(&sm, &test, &sched, &sweep_cfg)?
    };
    write_text(
        &dir.join("nmse_vs_steps.csv"),
        &csv_text(SweepRow::CSV_HEADER, sweep.iter().map(|r| r.csv_line())),
    )?;

    let mut baseline = classical_rows(cfg, &test, &classical(&kinds), cov.as_ref())?;
    let max_steps = cfg.sampler.steps.iter().copied().max().unwrap_or(0);
    for r in sweep.iter().filter(|r| r.steps == max_steps) {
        baseline.push(BaselineRow {
            spacing: r.spacing,
            estimator: format!("dm-{}", r.pipeline),
            steps: Some(r.steps),
            nmse_mean: r.nmse_mean,
            nmse_std: r.nmse_std,
            n_grids: r.n_grids,
            seed: r.seed,
        });
    }
    write_text(
        &dir.join("baseline.csv"),
        &csv_text(BASELINE_HEADER, baseline.iter().map(|r| r.csv_line())),
    )?;

    let sampler = ber_sampler(cfg, &sweep_cfg);
    let mut ber = Vec::new();
    for &spacing in &spacings {
        let link = LinkConfig {
            spacing,
            snr_db: cfg.eval.ber_snr_db.clone(),
            modulation: cfg.modulation()?,
            frames: cfg.eval.frames,
            seed: cfg.seed(),
        };
        let model = models
            .iter()
            .find(|(s, _)| *s == spacing)
            .and_then(|(_, m)| m.as_ref())
            .map(|c| (&c.params, &sched));
        for &kind in &kinds {
            if kind.needs_model() && model.is_none() {
                continue;
            }
            log(&format!("ber: {} at density 1/{spacing}", kind.name()));
            let ctx = EstimatorContext {
                covariance: cov.as_ref(),
                model,
                sampler: &sampler,
            };
            ber.push(end_to_end_ber(&link, &test, kind, &ctx)?);
        }
    }
    write_text(
        &dir.join("ber_vs_snr.csv"),
        &csv_text(LinkResult::CSV_HEADER, ber.iter().flat_map(|r| r.csv_lines())),
    )?;

    let mut manifest = RunManifest::new("evaluate", cfg);
    for p in &inputs {
        manifest.add_input(p)?;
    }
    manifest.files = vec!["nmse_vs_steps.csv".into(), "baseline.csv".into(), "ber_vs_snr.csv".into()];
    manifest.padding = Some(padding(cfg));
    manifest.write(&dir)?;
    Ok(EvalOutput { sweep, ber, baseline })
}

/// Classical-estimator NMSE table into `out/baseline/baseline.csv`.
pub fn baseline(cfg: &HarnessConfig, out: &Path, force: bool) -> Result<Vec<BaselineRow>> {
    cfg.validate()?;
    let test = test_split(cfg, out)?;
    let mut inputs = vec![data_dir(out).join("test.bin")];
    let cov = covariance(cfg, out, &mut inputs)?;
    let dir = baseline_dir(out);
    prepare_dir(&dir, force)?;
    let rows = classical_rows(
        cfg,
        &test,
        &[EstimatorKind::LsLinear, EstimatorKind::Lmmse],
        Some(&cov),
    )?;
    write_text(
        &dir.join("baseline.csv"),
        &csv_text(BASELINE_HEADER, rows.iter().map(|r| r.csv_line())),
    )?;
    let mut manifest = RunManifest::new("baseline", cfg);
    for p in &inputs {
        manifest.add_input(p)?;
    }
    manifest.files = vec!["baseline.csv".into()];
    manifest.write(&dir)?;
    Ok(rows)
}

/// Converts a sweep CSV to long format; returns the text written.
pub fn plotdata(input: &Path, output: Option<&Path>) -> Result<String> {
    let text = fs::read_to_string(input).map_err(|e| HarnessError::io(input, e))?;
    let long = plotdata::convert(&text)
        .map_err(|e| HarnessError::Parse(format!("{}: {e}", input.display())))?;
    if let Some(path) = output {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        write_text(path, &long)?;
    }
    Ok(long)
}
