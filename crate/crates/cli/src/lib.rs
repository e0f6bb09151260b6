//! Subcommand implementations for the `rground` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rground_core::annotation::{generate_dataset, synth_scenes, validate_record, AffordanceTable, GenConfig, SynthConfig};
use rground_core::cog::{
    run_record, run_single_pass, Backends, CoGConfig, CoGTrace, Grounder, Lexicon, OracleGrounder, Reasoner,
    RemoteBackend, RuleReasoner,
};
use rground_core::geometry::iou;
use rground_core::io::{load_predictions, load_records, load_records_resolved, save_predictions, write_jsonl, SceneStore};
use rground_core::metrics::{evaluate, EvalConfig, EvalReport};
use rground_core::{Box3D, Error, PredictionSet, ReasoningType};
use serde::Serialize;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Input = 2,
    Shortfall = 3,
    BackendConfig = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Input,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

/// Run `f` on a pool of `jobs` threads, or rayon's default when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::input("--jobs must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::input(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn load_scenes(dir: &Path) -> CliResult<SceneStore> {
    if !dir.is_dir() {
        return Err(CliError::input(format!("{}: not a directory", dir.display())));
    }
    Ok(SceneStore::load_dir(dir)?)
}

// ---------------------------------------------------------------- eval

pub struct EvalArgs {
    pub records: PathBuf,
    pub scenes: PathBuf,
    pub preds: PathBuf,
    pub config: EvalConfig,
    pub json: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// Score predictions and return the report; the table goes to `out`.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<EvalReport> {
    args.config.validate()?;
    let store = load_scenes(&args.scenes)?;
    let records = load_records_resolved(&args.records, &store)?;
    let preds = load_predictions(&args.preds)?;
    let report = with_jobs(args.jobs, || evaluate(&records, &store, &preds, &args.config))??;
    write!(out, "{}", report.to_table()).map_err(|e| CliError::input(e.to_string()))?;
    if let Some(p) = &args.json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(p, text + "\n").map_err(|e| io_err(p, e))?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- gen

pub struct GenArgs {
    pub scenes: PathBuf,
    pub out: PathBuf,
    pub config: GenConfig,
    pub allow_short: bool,
    pub jobs: Option<usize>,
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<usize> {
    let store = load_scenes(&args.scenes)?;
    if store.is_empty() {
        return Err(CliError {
            kind: ExitKind::Shortfall,
            message: format!("{}: no scenes found", args.scenes.display()),
        });
    }
    let scenes: Vec<_> = store.iter().cloned().collect();
    let table = AffordanceTable::builtin();
    let out = with_jobs(args.jobs, || generate_dataset(&scenes, &table, &args.config))??;
    for t in ReasoningType::ALL {
        log::info!("{}: {} of {}", t.as_str(), out.produced(t), args.config.count(t));
    }
    if !out.shortfall.is_empty() {
        let detail: Vec<String> = out
            .shortfall
            .iter()
            .map(|s| format!("{} {}/{}", s.reasoning_type.as_str(), s.produced, s.requested))
            .collect();
        let message = format!("generation shortfall: {}", detail.join(", "));
        if !args.allow_short {
            return Err(CliError {
                kind: ExitKind::Shortfall,
                message,
            });
        }
        log::warn!("{message}");
    }
    write_jsonl(&args.out, &out.records)?;
    Ok(out.records.len())
}

// ---------------------------------------------------------------- scenes

pub fn cmd_scenes(out: &Path, count: usize, seed: u64) -> CliResult<usize> {
    let table = AffordanceTable::builtin();
    let store = SceneStore::from_scenes(synth_scenes(count, seed, &table, &SynthConfig::default()))?;
    store.save_dir(out)?;
    Ok(store.len())
}

// ---------------------------------------------------------------- cog

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Oracle,
    Remote,
}

pub struct CogArgs {
    pub records: PathBuf,
    pub scenes: PathBuf,
    pub out_preds: PathBuf,
    pub out_traces: Option<PathBuf>,
    pub backend: BackendKind,
    pub config: CoGConfig,
    /// Skip the chain: reason once on the original question and ground.
    pub single_pass: bool,
    pub timeout: Duration,
    pub jobs: Option<usize>,
}

/// One line of the traces file.
#[derive(Debug, Serialize)]
pub struct TraceLine {
    pub record_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub trace: Option<CoGTrace>,
}

pub struct CogOutcome {
    pub predictions: Vec<PredictionSet>,
    pub failures: usize,
}

pub fn cmd_cog(args: &CogArgs) -> CliResult<CogOutcome> {
    args.config.validate()?;
    let store = load_scenes(&args.scenes)?;
    let records = load_records(&args.records)?;
    for r in &records {
        if store.get(&r.scene_id).is_none() {
            return Err(CliError::input(format!("record {} references missing scene {}", r.record_id, r.scene_id)));
        }
    }
    let table = AffordanceTable::builtin();
    let lexicon = Lexicon::from_table(&table);
    let (grounder, reasoner): (Box<dyn Grounder>, Box<dyn Reasoner>) = match args.backend {
        BackendKind::Oracle => (Box::new(OracleGrounder::new(lexicon.clone())), Box::new(RuleReasoner::builtin())),
        BackendKind::Remote => {
            let remote = RemoteBackend::from_env(args.timeout).map_err(|e| CliError {
                kind: ExitKind::BackendConfig,
                message: e.to_string(),
            })?;
            (Box::new(remote.clone()), Box::new(remote))
        }
    };
    let backends = Backends {
        grounder: grounder.as_ref(),
        reasoner: reasoner.as_ref(),
        lexicon: &lexicon,
    };
    let results: Vec<(PredictionSet, TraceLine)> = with_jobs(args.jobs, || {
        records
            .par_iter()
            .map(|r| {
                let scene = store.get(&r.scene_id).expect("checked above");
                let outcome = if args.single_pass {
                    run_single_pass(r, scene, &backends).map(|p| (p, None))
                } else {
                    run_record(r, scene, &backends, &args.config).map(|t| (t.predictions.clone(), Some(t)))
                };
                match outcome {
                    Ok((p, trace)) => (
                        p,
                        TraceLine {
                            record_id: r.record_id.clone(),
                            error: None,
                            trace,
                        },
                    ),
                    Err(e) => {
                        log::warn!("record {}: {e}", r.record_id);
                        (
                            PredictionSet::empty(r.record_id.clone()),
                            TraceLine {
                                record_id: r.record_id.clone(),
                                error: Some(e.to_string()),
                                trace: None,
                            },
                        )
                    }
                }
            })
            .collect()
    })?;
    let failures = results.iter().filter(|(_, t)| t.error.is_some()).count();
    let (predictions, traces): (Vec<PredictionSet>, Vec<TraceLine>) = results.into_iter().unzip();
    save_predictions(&args.out_preds, &predictions)?;
    if let Some(p) = &args.out_traces {
        write_jsonl(p, &traces)?;
    }
    Ok(CogOutcome { predictions, failures })
}

/// Score predictions against their records, for `cog --report`.
pub fn report_for(records: &Path, scenes: &Path, preds: &[PredictionSet], cfg: &EvalConfig) -> CliResult<EvalReport> {
    let store = load_scenes(scenes)?;
    let records = load_records_resolved(records, &store)?;
    Ok(evaluate(&records, &store, preds, cfg)?)
}

// ---------------------------------------------------------------- iou / bench

/// `cx,cy,cz,w,l,h` with an optional `,yaw,pitch,roll`.
pub fn parse_box(literal: &str) -> CliResult<Box3D> {
    let vals: Vec<f64> = literal
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("bad box literal {literal:?}: {e}")))?;
    let p: [f64; 9] = match vals.len() {
        6 => [vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], 0.0, 0.0, 0.0],
        9 => vals.try_into().expect("nine values"),
        n => return Err(CliError::input(format!("bad box literal {literal:?}: expected 6 or 9 numbers, got {n}"))),
    };
    Box3D::from_params(&p).map_err(|e| CliError::input(format!("bad box literal {literal:?}: {e}")))
}

pub fn cmd_iou(a: &str, b: &str) -> CliResult<f64> {
    Ok(iou(&parse_box(a)?, &parse_box(b)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub pairs: usize,
    pub seconds: f64,
    pub pairs_per_second: f64,
    /// Mean IoU, reported so the work cannot be optimized away.
    pub mean_iou: f64,
}

/// Random box pairs with extents in 0.1 to 3 m, arbitrary angles and
/// overlapping centers.
pub fn bench_pairs(n: usize, seed: u64) -> Vec<(Box3D, Box3D)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one = |rng: &mut ChaCha8Rng| {
        let c = [0.0; 3].map(|_: f64| rng.random_range(-0.5..0.5));
        let s = [0.0; 3].map(|_: f64| rng.random_range(0.1..3.0));
        let e = [0.0; 3].map(|_: f64| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        Box3D::new(c, s, e).expect("positive size")
    };
    (0..n).map(|_| (one(&mut rng), one(&mut rng))).collect()
}

/// Single-threaded oriented IoU throughput.
pub fn cmd_bench(n: usize, seed: u64) -> CliResult<BenchReport> {
    if n == 0 {
        return Err(CliError::input("--pairs must be at least 1"));
    }
    let pairs = bench_pairs(n, seed);
    let start = Instant::now();
    let total: f64 = pairs.iter().map(|(a, b)| iou(a, b)).sum();
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        pairs: n,
        seconds,
        pairs_per_second: n as f64 / seconds.max(1e-12),
        mean_iou: total / n as f64,
    })
}

// ---------------------------------------------------------------- validate

/// Problems per record; an empty result means every record is sound.
pub fn cmd_validate(records: &Path, scenes: &Path) -> CliResult<Vec<(String, Vec<String>)>> {
    let store = load_scenes(scenes)?;
    let records = load_records(records)?;
    Ok(records
        .iter()
        .filter_map(|r| {
            let problems = match store.get(&r.scene_id) {
                Some(s) => validate_record(r, s),
                None => vec![format!("missing scene {}", r.scene_id)],
            };
            (!problems.is_empty()).then(|| (r.record_id.clone(), problems))
        })
        .collect())
}
