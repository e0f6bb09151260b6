use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rground::{
    cmd_bench, cmd_cog, cmd_eval, cmd_gen, cmd_iou, cmd_scenes, cmd_validate, report_for, BackendKind, CliError, CliResult, CogArgs,
    EvalArgs, GenArgs,
};
use rground_core::annotation::GenConfig;
use rground_core::cog::{CoGConfig, DEFAULT_TIMEOUT};
use rground_core::geometry::IouMode;
use rground_core::metrics::{EvalConfig, Matching};
use rground_core::ReasoningType;

#[derive(Parser)]
#[command(name = "rground", version, about = "3D reasoning grounding: evaluation, data generation and chain-of-grounding inference")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions with Acc@kIoU.
    Eval(EvalCmd),
    /// Generate question-answer-location records from scenes.
    Gen(GenCmd),
    /// Write synthetic indoor scenes.
    Scenes(ScenesCmd),
    /// Run chain-of-grounding inference over records.
    Cog(CogCmd),
    /// IoU of two boxes given as cx,cy,cz,w,l,h[,yaw,pitch,roll].
    Iou(IouCmd),
    /// Single-threaded oriented IoU throughput.
    Bench(BenchCmd),
    /// Check records against their scenes.
    Validate(ValidateCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum IouModeArg {
    Oriented,
    AxisAligned,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchingArg {
    Hungarian,
    Greedy,
}

#[derive(Args)]
struct EvalOpts {
    /// Acc@kIoU threshold.
    #[arg(long = "k", default_value_t = 0.25)]
    k_iou: f64,
    #[arg(long, value_enum, default_value = "oriented")]
    iou_mode: IouModeArg,
    #[arg(long, value_enum, default_value = "hungarian")]
    matching: MatchingArg,
    /// Predictions below this confidence never match.
    #[arg(long, default_value_t = 0.0)]
    confidence_floor: f64,
}

impl EvalOpts {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            k_iou: self.k_iou,
            iou_mode: match self.iou_mode {
                IouModeArg::Oriented => IouMode::Oriented,
                IouModeArg::AxisAligned => IouMode::AxisAligned,
            },
            matching: match self.matching {
                MatchingArg::Hungarian => Matching::Hungarian,
                MatchingArg::Greedy => Matching::Greedy,
            },
            confidence_floor: self.confidence_floor,
        }
    }
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    #[command(flatten)]
    eval: EvalOpts,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    ValidationRatio,
    FullSize,
}

#[derive(Args)]
struct GenCmd {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "validation-ratio")]
    preset: Preset,
    /// Total records for the validation-ratio preset.
    #[arg(long, default_value_t = 1474)]
    total: usize,
    #[arg(long)]
    spatial: Option<usize>,
    #[arg(long)]
    functional: Option<usize>,
    #[arg(long)]
    logical: Option<usize>,
    #[arg(long)]
    emotional: Option<usize>,
    #[arg(long)]
    safety: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write what was produced even if a type falls short.
    #[arg(long)]
    allow_short: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ScenesCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    Remote,
}

#[derive(Args)]
struct CogCmd {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out_preds: PathBuf,
    #[arg(long)]
    out_traces: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendArg,
    /// Ground every object category and inject all of them.
    #[arg(long)]
    inject_all_objects: bool,
    /// Minimum confidence for an anchor to be injected.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 2)]
    max_rounds: usize,
    /// Record per-step wall-clock timings in the traces.
    #[arg(long)]
    timings: bool,
    /// Skip the chain and ground the original question once.
    #[arg(long)]
    single_pass: bool,
    /// Remote request timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    /// Print an Acc@kIoU table for the produced predictions.
    #[arg(long)]
    report: bool,
    #[command(flatten)]
    eval: EvalOpts,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct IouCmd {
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    #[arg(long, allow_hyphen_values = true)]
    b: String,
}

#[derive(Args)]
struct BenchCmd {
    #[arg(long, default_value_t = 100_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ValidateCmd {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
}

fn gen_config(c: &GenCmd) -> CliResult<GenConfig> {
    let mut cfg = match c.preset {
        Preset::ValidationRatio => GenConfig::preset(c.total),
        Preset::FullSize => GenConfig::full_size(),
    };
    let overrides = [
        (ReasoningType::Spatial, c.spatial),
        (ReasoningType::Functional, c.functional),
        (ReasoningType::Logical, c.logical),
        (ReasoningType::Emotional, c.emotional),
        (ReasoningType::Safety, c.safety),
    ];
    if overrides.iter().any(|(_, v)| v.is_some()) {
        if matches!(c.preset, Preset::FullSize) {
            return Err(CliError::input("per-type counts cannot be combined with the full-size preset"));
        }
        cfg = GenConfig::with_counts(overrides.iter().map(|&(t, v)| (t, v.unwrap_or(0))));
    }
    cfg.seed = c.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    let out_err = |e: std::io::Error| CliError::input(e.to_string());
    match cli.command {
        Command::Eval(c) => {
            let args = EvalArgs {
                records: c.records,
                scenes: c.scenes,
                preds: c.preds,
                config: c.eval.config(),
                json: c.json,
                jobs: c.jobs,
            };
            cmd_eval(&args, &mut stdout)?;
        }
        Command::Gen(c) => {
            let config = gen_config(&c)?;
            let n = cmd_gen(&GenArgs {
                scenes: c.scenes,
                out: c.out.clone(),
                config,
                allow_short: c.allow_short,
                jobs: c.jobs,
            })?;
            writeln!(stdout, "wrote {n} records to {}", c.out.display()).map_err(out_err)?;
        }
        Command::Scenes(c) => {
            let n = cmd_scenes(&c.out, c.count, c.seed)?;
            writeln!(stdout, "wrote {n} scenes to {}", c.out.display()).map_err(out_err)?;
        }
        Command::Cog(c) => {
            let eval = c.eval.config();
            let config = CoGConfig {
                confidence_threshold: c.threshold,
                max_rounds: c.max_rounds,
                inject_all_objects: c.inject_all_objects,
                record_timings: c.timings,
                ..CoGConfig::default()
            };
            let args = CogArgs {
                records: c.records.clone(),
                scenes: c.scenes.clone(),
                out_preds: c.out_preds,
                out_traces: c.out_traces,
                backend: match c.backend {
                    BackendArg::Oracle => BackendKind::Oracle,
                    BackendArg::Remote => BackendKind::Remote,
                },
                config,
                single_pass: c.single_pass,
                timeout: c.timeout.map(Duration::from_secs).unwrap_or(DEFAULT_TIMEOUT),
                jobs: c.jobs,
            };
            let outcome = cmd_cog(&args)?;
            writeln!(stdout, "{} records, {} failed", outcome.predictions.len(), outcome.failures).map_err(out_err)?;
            if c.report {
                eval.validate()?;
                let report = report_for(&c.records, &c.scenes, &outcome.predictions, &eval)?;
                write!(stdout, "{}", report.to_table()).map_err(out_err)?;
            }
        }
        Command::Iou(c) => {
            writeln!(stdout, "{:.6}", cmd_iou(&c.a, &c.b)?).map_err(out_err)?;
        }
        Command::Bench(c) => {
            let r = cmd_bench(c.pairs, c.seed)?;
            if c.json {
                writeln!(stdout, "{}", serde_json::to_string(&r).expect("report serializes")).map_err(out_err)?;
            } else {
                writeln!(stdout, "{} pairs in {:.3} s: {:.0} pairs/s (mean IoU {:.4})", r.pairs, r.seconds, r.pairs_per_second, r.mean_iou)
                    .map_err(out_err)?;
            }
        }
        Command::Validate(c) => {
            let problems = cmd_validate(&c.records, &c.scenes)?;
            for (id, ps) in &problems {
                for p in ps {
                    writeln!(stdout, "{id}: {p}").map_err(out_err)?;
                }
            }
            if !problems.is_empty() {
                return Err(CliError::input(format!("{} records with problems", problems.len())));
            }
            writeln!(stdout, "ok").map_err(out_err)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
