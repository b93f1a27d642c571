use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vitlab::data::{Split, SplitCounts, SynthSpec};
use vitlab::harness::{
    cmd_benchmark, cmd_compare, cmd_evaluate, cmd_synth, cmd_train, cmd_validate_manifest, expected_counts,
    load_config, CompareArgs, EvaluateArgs, ExperimentConfig, Overrides,
};
use vitlab::metrics::TABLE_HEADER;
use vitlab::models::Precision;
use vitlab::{Error, Result};

/// Vision Transformer experiments: train, evaluate, compare, benchmark.
///
/// Config keys can be overridden with trailing `--section.key=value` flags,
/// e.g. `--train.learning_rate=3e-4`.
#[derive(Debug, Parser)]
#[command(name = "vitlab", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parameter storage precision in bits.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured model and save a checkpoint.
    Train,
    /// Evaluate a checkpoint on one split.
    Evaluate(EvaluateCli),
    /// Evaluate several checkpoints and test the best against the rest.
    Compare(CompareCli),
    /// Measure inference throughput.
    Benchmark(BenchmarkCli),
    /// Check manifest split sizes against expected counts.
    ValidateManifest(ValidateCli),
    /// Write a synthetic stripe-pattern dataset.
    SynthData(SynthCli),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Defaults to `dataset.manifest` from the config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Defaults to `eval.split` from the config, else `test`.
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also time inference; the result goes to run_meta.toml.
    #[arg(long)]
    fps: bool,
}

#[derive(Debug, Args)]
struct CompareCli {
    /// Repeat for each model.
    #[arg(long = "checkpoint", required = true, num_args = 1)]
    checkpoints: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Bootstrap resamples; defaults to `eval.bootstrap_resamples`.
    #[arg(long)]
    resamples: Option<usize>,
    /// Also time inference for the FPS column of the printed table.
    #[arg(long)]
    fps: bool,
}

#[derive(Debug, Args)]
struct BenchmarkCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
}

#[derive(Debug, Args)]
struct ValidateCli {
    #[arg(long)]
    manifest: PathBuf,
    /// chest-xray, kvasir or kvasir-capsule.
    #[arg(long, conflicts_with = "expected")]
    preset: Option<String>,
    /// `train,valid,test` counts.
    #[arg(long, value_parser = parse_counts)]
    expected: Option<SplitCounts>,
}

#[derive(Debug, Args)]
struct SynthCli {
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    /// Per-class count multipliers, e.g. `10,1`.
    #[arg(long, value_delimiter = ',')]
    imbalance: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.parse::<u32>().ok().and_then(|b| Precision::from_bits(b).ok()).ok_or_else(|| "expected 32 or 64".into())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_counts(s: &str) -> std::result::Result<SplitCounts, String> {
    let v: Vec<usize> =
        s.split(',').map(|p| p.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|e| format!("{e}"))?;
    match v[..] {
        [train, valid, test] => Ok(SplitCounts { train, valid, test }),
        _ => Err("expected train,valid,test".into()),
    }
}

type Dotted = Vec<(String, String)>;

/// Pulls `--a.b=value` and `--a.b value` pairs out of the argument list.
fn split_dotted(args: Vec<String>) -> Result<(Vec<String>, Dotted)> {
    let mut rest = Vec::new();
    let mut dotted = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => dotted.push((k.to_string(), v.to_string())),
            None => {
                let v = iter.next().ok_or_else(|| Error::Config(format!("override --{flag} needs a value")))?;
                dotted.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, dotted))
}

struct Context {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Context {
    fn require_config(&self, command: &str) -> Result<&ExperimentConfig> {
        self.config.as_ref().ok_or_else(|| Error::Config(format!("{command} needs --config")))
    }

    fn manifest(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.config.as_ref().map(|c| c.dataset.manifest.clone()))
            .ok_or_else(|| Error::Config("give --manifest or a --config with dataset.manifest".into()))
    }

    fn split(&self, flag: Option<Split>) -> Split {
        flag.or_else(|| self.config.as_ref().map(|c| c.eval.split)).unwrap_or(Split::Test)
    }

    fn batch_size(&self, flag: Option<usize>) -> usize {
        flag.or_else(|| self.config.as_ref().map(|c| c.eval.batch_size)).unwrap_or(32)
    }

    fn fps(&self, enabled: bool) -> Option<(usize, usize, usize)> {
        let eval = self.config.as_ref().map(|c| c.eval.clone()).unwrap_or_default();
        enabled.then_some((eval.fps_batch, eval.fps_warmup, eval.fps_iters))
    }

    fn out(&self, fallback: impl FnOnce() -> PathBuf) -> PathBuf {
        self.out.clone().or_else(|| self.config.as_ref().map(|c| c.output.clone())).unwrap_or_else(fallback)
    }
}

fn run(cli: Cli, dotted: Vec<(String, String)>) -> Result<()> {
    let overrides = Overrides { seed: cli.seed, out: cli.out.clone(), precision: cli.precision, dotted };
    let config = match &cli.config {
        Some(path) => Some(load_config(path, &overrides)?),
        None if !overrides.dotted.is_empty() => {
            return Err(Error::Config("dotted overrides need --config".into()));
        }
        None => None,
    };
    let ctx = Context { config, seed: cli.seed, out: cli.out };

    match cli.command {
        Command::Train => {
            let config = ctx.require_config("train")?;
            let outcome = cmd_train(config)?;
            for e in &outcome.epochs {
                let valid = e.valid_accuracy.map_or(String::new(), |a| format!(" valid_accuracy={a:.4}"));
                println!("epoch {} lr={:.3e} train_loss={:.6}{valid}", e.epoch, e.lr, e.train_loss);
            }
            println!("checkpoint: {}", outcome.checkpoint.display());
        }
        Command::Evaluate(a) => {
            let split = ctx.split(a.data.split);
            let args = EvaluateArgs {
                manifest: ctx.manifest(a.data.manifest)?,
                split,
                out: ctx.out(|| a.checkpoint.join(format!("eval-{split}"))),
                batch_size: ctx.batch_size(a.data.batch_size),
                expected_resolution: ctx.config.as_ref().map(|c| c.dataset.resolution.dims()),
                fps: ctx.fps(a.fps),
                checkpoint: a.checkpoint,
            };
            let mut outcome = cmd_evaluate(&args)?;
            outcome.report.fps = outcome.fps.map(|f| f.fps);
            println!("{TABLE_HEADER}\n{}", outcome.report.table_row());
        }
        Command::Compare(a) => {
            let args = CompareArgs {
                manifest: ctx.manifest(a.data.manifest)?,
                split: ctx.split(a.data.split),
                seed: ctx.seed.or_else(|| ctx.config.as_ref().map(|c| c.seed)).unwrap_or(0),
                resamples: a
                    .resamples
                    .or_else(|| ctx.config.as_ref().map(|c| c.eval.bootstrap_resamples))
                    .unwrap_or(1000),
                batch_size: ctx.batch_size(a.data.batch_size),
                out: ctx.out(|| PathBuf::from("compare")),
                fps: ctx.fps(a.fps),
                checkpoints: a.checkpoints,
            };
            let rows = cmd_compare(&args)?;
            println!("{TABLE_HEADER}");
            for row in rows {
                println!("{}", row.report.table_row());
            }
        }
        Command::Benchmark(a) => {
            let outcome = cmd_benchmark(&a.checkpoint, a.batch, a.warmup, a.iters)?;
            println!("model,batch,fps\n{}", outcome.csv_line());
        }
        Command::ValidateManifest(a) => {
            let expected = expected_counts(a.preset.as_deref(), a.expected)?;
            let diff = cmd_validate_manifest(&a.manifest, expected)?;
            let c = diff.actual;
            println!("{}: ok (train {}, valid {}, test {})", a.manifest.display(), c.train, c.valid, c.test);
        }
        Command::SynthData(a) => {
            let spec = SynthSpec {
                classes: a.classes,
                per_class: a.per_class,
                resolution: a.resolution,
                seed: ctx.seed.unwrap_or(0),
                imbalance: a.imbalance,
                valid_fraction: a.valid_fraction,
                test_fraction: a.test_fraction,
            };
            let out = ctx.out(|| PathBuf::from("synth-data"));
            println!("{}", cmd_synth(&spec, Path::new(&out))?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, dotted) = match split_dotted(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, dotted) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
