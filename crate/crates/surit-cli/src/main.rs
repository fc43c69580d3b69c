//! `surit`: command-line driver for the two-speaker streaming
//! transducer pipeline. Subcommands generate the synthetic dataset,
//! train, evaluate, self-verify against brute-force oracles, and sweep
//! the latency-shaping grid. Every output file is written atomically
//! and is byte-reproducible from the same config and seed.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 verification
//! failure, 3 training divergence (the last finite checkpoint is still
//! written).

mod config;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::ExperimentConfig;
use surit_core::data::{load_dataset, write_dataset};
use surit_core::{
    evaluate, train, Dataset, Error, EvalReport, ModelParams, Result, Split, TrainLogRow, TrainMode,
};

/// Keeps parameter initialization on its own seed stream, apart from
/// the data and shuffle streams that use the config seed directly.
const PARAM_SEED_SALT: u64 = 0x7072_6d73;

#[derive(Parser)]
#[command(name = "surit", version, about = "Overlapped-speech transducer workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigOpts {
    /// Config file (`[section]` headers, `key = value` lines); defaults
    /// cover anything not set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key after the file, e.g. --set train.lambda=10 or
    /// --set seed=7. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Parse {
                    file: path.display().to_string(),
                    what: e.to_string(),
                })?;
                ExperimentConfig::parse(&text).map_err(|e| Error::Parse {
                    file: path.display().to_string(),
                    what: e.to_string(),
                })?
            }
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("--set expects KEY=VALUE, got '{kv}'"))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

impl SplitArg {
    fn split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Regime {
    /// Fine-tune the speaker head per grid cell from --base; the
    /// front-end and token head stay fixed.
    Frozen,
    /// Train the whole model from scratch per grid cell.
    Retrain,
}

impl Regime {
    fn name(self) -> &'static str {
        match self {
            Regime::Frozen => "frozen",
            Regime::Retrain => "retrain",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic two-speaker dataset (train + eval splits).
    Generate {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Directory for manifests, feature payloads and the config echo.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint, loss log and config echo.
    Train {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one split and report token, speaker and latency metrics.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
        /// Optional directory for eval_report.json and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Value of the `system` column in the CSV summary.
        #[arg(long, default_value = "eval")]
        system: String,
    },
    /// Check losses, gradients and invariants against brute-force
    /// oracles; exits 2 if anything fails.
    Verify {
        /// Randomized instances per check.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
    /// Train or fine-tune one model per (alpha, beta) grid cell and
    /// tabulate speaker error against emission latency.
    SweepLatency {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated blank-gradient scales, e.g. 1.0,0.8,0.6.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        /// Comma-separated late-emission penalty slopes, e.g. 0.0,1.0.
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Regime::Frozen)]
        regime: Regime,
        /// Trained checkpoint to start from (frozen regime only).
        #[arg(long)]
        base: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep clap's rendering but remap its usage-error exit code
            // (2) to 1; 2 is reserved for verification failures.
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage_error));
        }
    };
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Diverged { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Generate { cfg, out } => cmd_generate(&cfg.resolve()?, &out).map(|()| ExitCode::SUCCESS),
        Cmd::Train { cfg, data, out } => {
            cmd_train(&cfg.resolve()?, &data, &out).map(|()| ExitCode::SUCCESS)
        }
        Cmd::Eval { model, data, split, out, system } => {
            cmd_eval(&model, &data, split.split(), out.as_deref(), &system)
                .map(|()| ExitCode::SUCCESS)
        }
        Cmd::Verify { trials, seed } => cmd_verify(trials, seed),
        Cmd::SweepLatency { cfg, data, out, alphas, betas, regime, base } => {
            cmd_sweep(&cfg.resolve()?, &data, &out, &alphas, &betas, regime, base.as_deref())
                .map(|()| ExitCode::SUCCESS)
        }
    }
}

/// Write-then-rename so a crash never leaves a half-written artifact.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Prefixes IO errors with the path they came from; the raw OS message
/// alone does not say which file was missing.
fn at_path<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => {
            Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))
        }
        other => other,
    })
}

fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dcfg = cfg.data_config();
    // Both splits draw from the one pool that the seed determines.
    let train_ds = Dataset::generate(&dcfg, Split::Train)?;
    let eval_ds = Dataset::generate(&dcfg, Split::Eval)?;
    fs::create_dir_all(out)?;
    write_dataset(
        out,
        &train_ds.speakers,
        &[(Split::Train, &train_ds.samples), (Split::Eval, &eval_ds.samples)],
    )?;
    atomic_write(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    println!(
        "wrote {} train and {} eval mixtures over a pool of {} speakers to {}",
        train_ds.samples.len(),
        eval_ds.samples.len(),
        train_ds.speakers.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = at_path(load_dataset(data_dir, Split::Train), data_dir)?;
    let mut params = ModelParams::init(&cfg.architecture(), cfg.seed ^ PARAM_SEED_SALT)?;
    let mut log = Vec::new();
    let started = Instant::now();
    let outcome = train(&mut params, &data, &cfg.train_config(), &mut log);

    // Written even on divergence: `train` leaves the last finite state
    // in `params` and the rows gathered so far in `log`.
    fs::create_dir_all(out)?;
    params.save(&out.join("checkpoint.bin"))?;
    let mut csv = String::from(TrainLogRow::CSV_HEADER);
    csv.push('\n');
    for row in &log {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    atomic_write(&out.join("train_log.csv"), csv.as_bytes())?;
    atomic_write(&out.join("config.txt"), cfg.to_text().as_bytes())?;

    match &outcome {
        Ok(()) => println!(
            "trained {} steps in {:.1}s, final joint loss {:.4}; wrote {}",
            log.len(),
            started.elapsed().as_secs_f64(),
            log.last().map_or(f64::NAN, |r| r.l_joint),
            out.join("checkpoint.bin").display()
        ),
        Err(_) => eprintln!(
            "training diverged after {} steps; checkpoint holds the last finite state",
            log.len()
        ),
    }
    outcome
}

fn cmd_eval(
    model: &Path,
    data_dir: &Path,
    split: Split,
    out: Option<&Path>,
    system: &str,
) -> Result<()> {
    let params = at_path(ModelParams::load(model), model)?;
    let data = at_path(load_dataset(data_dir, split), data_dir)?;
    let report = evaluate(&params, &data)?;
    println!("utterances     {}", report.utts.len());
    println!("token error    {:.4}", report.wer);
    println!("speaker error  {:.4}", report.ser);
    println!("mean t_e       {:.2} frames", report.latency.mean_t_e);
    println!("mean t_e / T   {:.4}", report.latency.mean_ratio);
    println!("p50 / p90 t_e  {:.0} / {:.0} frames", report.latency.p50_t_e, report.latency.p90_t_e);
    println!("{}", EvalReport::CSV_HEADER);
    println!("{}", report.csv_row(system));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        atomic_write(&dir.join("eval_report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
        let summary = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(system));
        atomic_write(&dir.join("summary.csv"), summary.as_bytes())?;
        println!("wrote {}", dir.join("eval_report.json").display());
    }
    Ok(())
}

fn cmd_verify(trials: usize, seed: u64) -> Result<ExitCode> {
    let started = Instant::now();
    let checks = verify::run(trials, seed);
    let failed = checks.iter().filter(|c| c.outcome.is_err()).count();
    for c in &checks {
        match &c.outcome {
            Ok(detail) => println!("ok   {}: {detail}", c.name),
            Err(what) => println!("FAIL {}: {what}", c.name),
        }
    }
    println!(
        "{} of {} checks passed in {:.1}s",
        checks.len() - failed,
        checks.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_sweep(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out: &Path,
    alphas: &[f64],
    betas: &[f64],
    regime: Regime,
    base: Option<&Path>,
) -> Result<()> {
    let base = match (regime, base) {
        (Regime::Frozen, Some(path)) => Some(at_path(ModelParams::load(path), path)?),
        (Regime::Frozen, None) => {
            return Err(Error::InvalidConfig(
                "--regime frozen needs --base CHECKPOINT".into(),
            ))
        }
        (Regime::Retrain, _) => None,
    };
    let train_ds = at_path(load_dataset(data_dir, Split::Train), data_dir)?;
    let eval_ds = at_path(load_dataset(data_dir, Split::Eval), data_dir)?;
    fs::create_dir_all(out)?;

    let header = "system,alpha,beta,ser,t_e,t_e_over_T";
    let mut csv = format!("{header}\n");
    println!("{header}");
    for &alpha in alphas {
        for &beta in betas {
            let mut tc = cfg.train_config();
            tc.loss.latency.alpha = alpha;
            tc.loss.latency.beta = beta;
            let mut params = match &base {
                Some(b) => {
                    // Stepwise with zero first-phase epochs runs only
                    // the speaker-head phase on the cloned base model.
                    tc.mode = TrainMode::Stepwise;
                    tc.epochs = 0;
                    b.clone()
                }
                None => ModelParams::init(&cfg.architecture(), cfg.seed ^ PARAM_SEED_SALT)?,
            };
            tc.validate()?;
            let mut log = Vec::new();
            train(&mut params, &train_ds, &tc, &mut log)?;
            let report = evaluate(&params, &eval_ds)?;
            let row = format!(
                "{}-a{alpha}-b{beta},{alpha},{beta},{:.6},{:.3},{:.4}",
                regime.name(),
                report.ser,
                report.latency.mean_t_e,
                report.latency.mean_ratio
            );
            println!("{row}");
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    atomic_write(&out.join("sweep.csv"), csv.as_bytes())?;
    atomic_write(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}
