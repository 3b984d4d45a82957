//! Command-line front end: `synth`, `validate`, `train`, `eval`, `report`.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input data, 3 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bundle::{load_bundle, save_bundle, synth_bundle, SynthSpec};
use crate::eval::{compute_report, MetricsReport};
use crate::trainer::{load_run, save_checkpoint, train_sequence, Profile, RunConfig};
use crate::Error;

pub const THREADS_ENV: &str = "DESCLIP_THREADS";
const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "desclip", version, about = "Attribute-guided continual adaptation on frozen embeddings")]
struct Cli {
    /// Worker threads (falls back to $DESCLIP_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic bundle.
    Synth(SynthArgs),
    /// Check a bundle and print a summary.
    Validate {
        bundle: PathBuf,
    },
    /// Train every task of a bundle and write per-task checkpoints.
    Train(TrainArgs),
    /// Evaluate a trained run and write report.json and curve.csv.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Output directory (defaults to the run directory).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the summary of an evaluated run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    tasks: usize,
    #[arg(long, default_value_t = 4)]
    classes_per_task: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    unfamiliarity: Option<f64>,
    #[arg(long)]
    unfamiliarity_skew: Option<f64>,
    #[arg(long)]
    attribute_noise: Option<f64>,
    #[arg(long)]
    control_classes: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// coarse, fine or finegrained.
    #[arg(long)]
    profile: Option<String>,
    /// JSON file with RunConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(short, long)]
    out: PathBuf,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

/// Errors raised while reading a bundle or run are data problems; the rest
/// happened while computing or writing.
fn data_error(e: Error) -> Failure {
    let code = if e.is_validation() { 2 } else { 3 };
    Failure { code, message: e.to_string() }
}

fn runtime_error(e: Error) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match cli.threads {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => match v.parse() {
                Ok(n) => n,
                Err(_) => {
                    eprintln!("error: {THREADS_ENV}='{v}' is not a thread count");
                    return 1;
                }
            },
            Err(_) => 1,
        },
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(args) => synth(args),
        Command::Validate { bundle } => validate(&bundle),
        Command::Train(args) => train(args),
        Command::Eval { bundle, run, out } => eval(&bundle, &run, out.as_deref().unwrap_or(&run)),
        Command::Report { run } => {
            let report = MetricsReport::read(&run).map_err(data_error)?;
            print!("{}", report.summary());
            Ok(())
        }
    }
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        num_tasks: args.tasks,
        classes_per_task: args.classes_per_task,
        dim: args.dim,
        seed: args.seed,
        samples_per_class: args.samples_per_class.unwrap_or(d.samples_per_class),
        test_per_class: args.test_per_class.unwrap_or(d.test_per_class),
        candidates_per_class: args.candidates.unwrap_or(d.candidates_per_class),
        unfamiliarity: args.unfamiliarity.unwrap_or(d.unfamiliarity),
        unfamiliarity_skew: args.unfamiliarity_skew.unwrap_or(d.unfamiliarity_skew),
        attribute_noise: args.attribute_noise.unwrap_or(d.attribute_noise),
        control_classes: args.control_classes.unwrap_or(d.control_classes),
        ..d
    };
    let bundle = synth_bundle(&spec).map_err(|e| Failure::usage(e.to_string()))?;
    save_bundle(&bundle, &args.out).map_err(runtime_error)?;
    println!(
        "wrote {} classes in {} tasks ({} train, {} test, {} control samples) to {}",
        bundle.classes.len(),
        bundle.num_tasks(),
        bundle.train.len(),
        bundle.test.len(),
        bundle.control.len(),
        args.out.display()
    );
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let b = load_bundle(path).map_err(data_error)?;
    let cands: usize = b.classes.iter().map(|c| c.candidates.len()).sum();
    let nouns: usize = b.classes.iter().flat_map(|c| &c.candidates).filter(|d| d.cls_noun).count();
    println!("bundle {}: ok", path.display());
    println!("  dim {}", b.dim);
    println!("  {} classes in {} tasks (sizes {:?})", b.classes.len(), b.num_tasks(), b.tasks.iter().map(Vec::len).collect::<Vec<_>>());
    println!("  {} description candidates ({} name the class)", cands, nouns);
    println!("  samples: {} train, {} test, {} control", b.train.len(), b.test.len(), b.control.len());
    if !b.control_classes.is_empty() {
        println!("  {} control classes", b.control_classes.len());
    }
    Ok(())
}

/// Defaults < profile < config file < `--set` overrides.
fn effective_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::default();
    if let Some(p) = &args.profile {
        let profile: Profile = p.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
        profile.apply(&mut config);
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        config.merge_json(&text).map_err(|e| Failure::usage(e.to_string()))?;
    }
    for pair in &args.overrides {
        config.set_pair(pair).map_err(|e| Failure::usage(e.to_string()))?;
    }
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(config)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let config = effective_config(&args)?;
    let bundle = load_bundle(&args.bundle).map_err(data_error)?;
    let outcome = train_sequence(&bundle, &config).map_err(runtime_error)?;

    fs::create_dir_all(&args.out).map_err(|e| runtime_error(Error::io(&args.out, e)))?;
    let cfg_path = args.out.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(&config).expect("config serializes");
    fs::write(&cfg_path, json + "\n").map_err(|e| runtime_error(Error::io(&cfg_path, e)))?;
    for ckpt in &outcome.checkpoints {
        save_checkpoint(&args.out, ckpt).map_err(runtime_error)?;
    }
    for (t, acc) in outcome.curve.iter().enumerate() {
        println!("task {}: {:.2}% on seen classes", t + 1, acc);
    }
    println!("wrote {} checkpoints to {}", outcome.checkpoints.len(), args.out.display());
    Ok(())
}

fn eval(bundle: &Path, run: &Path, out: &Path) -> Result<(), Failure> {
    let bundle = load_bundle(bundle).map_err(data_error)?;
    let cfg_path = run.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| data_error(Error::io(&cfg_path, e)))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|source| data_error(Error::Manifest { path: cfg_path.clone(), source }))?;
    let checkpoints = load_run(run).map_err(data_error)?;
    if checkpoints.is_empty() {
        return Err(Failure { code: 2, message: format!("no checkpoints in {}", run.display()) });
    }
    let report = compute_report(&checkpoints, &bundle, &config).map_err(runtime_error)?;
    report.write(out).map_err(runtime_error)?;
    print!("{}", report.summary());
    Ok(())
}
