use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diffrx::commands;
use diffrx::config::{parse_density, parse_list};
use diffrx::{HarnessConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "diffrx", version, about = "Diffusion-based OFDM channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (or output file for `plotdata`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    resume: bool,
    /// Refuse to run without an explicit seed.
    #[arg(long, global = true)]
    reproducible: bool,
    /// Comma-separated estimator names.
    #[arg(long, global = true)]
    estimators: Option<String>,
    /// Comma-separated pilot densities, e.g. `1/4,1/16`.
    #[arg(long, global = true)]
    densities: Option<String>,
    /// Comma-separated sampler step counts.
    #[arg(long, global = true)]
    steps: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw and normalise the train/val/test channel datasets.
    Generate,
    /// Train one denoiser per pilot density (or a joint one).
    Train,
    /// NMSE-vs-steps, baseline and BER-vs-SNR sweeps.
    Evaluate,
    /// Convert a sweep CSV to long plotting format.
    Plotdata { input: PathBuf },
    /// NMSE table of the classical estimators.
    Baseline,
}

fn load_config(o: &Opts) -> Result<HarnessConfig> {
    let mut cfg = match &o.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if o.seed.is_some() {
        cfg.seed = o.seed;
    }
    if o.reproducible && cfg.seed.is_none() {
        return Err(HarnessError::Usage(
            "--reproducible needs a seed (--seed or `seed` in the config)".into(),
        ));
    }
    if let Some(s) = &o.densities {
        parse_list(s, parse_density)?;
        cfg.train.densities = parse_list(s, |d| Ok(d.to_string()))?;
    }
    if let Some(s) = &o.estimators {
        cfg.eval.estimators = parse_list(s, |e| Ok(e.to_string()))?;
    }
    if let Some(s) = &o.steps {
        cfg.sampler.steps = parse_list(s, |x| {
            x.parse()
                .map_err(|_| HarnessError::Usage(format!("--steps: {x:?} is not an integer")))
        })?;
    }
    Ok(cfg)
}

fn out_root(o: &Opts, cfg: &HarnessConfig) -> PathBuf {
    o.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("DIFFRX_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Usage(format!("DIFFRX_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Usage(format!("DIFFRX_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let o = &cli.opts;
    let mut log = |s: &str| eprintln!("{s}");
    match &cli.command {
        Command::Plotdata { input } => {
            let text = commands::plotdata(input, o.out.as_deref())?;
            if o.out.is_none() {
                print!("{text}");
            }
        }
        Command::Generate => {
            let cfg = load_config(o)?;
            let out = out_root(o, &cfg);
            let s = commands::generate(&cfg, &out, o.force)?;
            println!(
                "wrote {} train, {} val, {} test grids to {} (normalisation {:.6})",
                s.counts[0],
                s.counts[1],
                s.counts[2],
                commands::data_dir(&out).display(),
                s.normalization
            );
        }
        Command::Train => {
            let cfg = load_config(o)?;
            let out = out_root(o, &cfg);
            for s in commands::train_models(&cfg, &out, o.force, o.resume, &mut log)? {
                println!("{}: final val loss {} after {} epochs", s.tag, s.final_val, s.epochs);
            }
        }
        Command::Evaluate => {
            let cfg = load_config(o)?;
            let out = out_root(o, &cfg);
            let r = commands::evaluate(&cfg, &out, o.force, &mut log)?;
            println!(
                "wrote {} sweep rows, {} baseline rows, {} ber curves to {}",
                r.sweep.len(),
                r.baseline.len(),
                r.ber.len(),
                commands::eval_dir(&out).display()
            );
        }
        Command::Baseline => {
            let cfg = load_config(o)?;
            let out = out_root(o, &cfg);
            let rows = commands::baseline(&cfg, &out, o.force)?;
            print!("{}", diffrx::plotdata::BASELINE_HEADER.to_string() + "\n");
            for r in rows {
                println!("{}", r.csv_line());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error[usage]: {}", e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
