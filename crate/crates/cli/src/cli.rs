use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use online_laplace::data::Dataset;
use online_laplace::model::DEFAULT_HIDDEN_UNITS;
use online_laplace::train::{online_step_budget, Objective, Procedure, TrainConfig, OFFLINE_MAX_STEPS};
use online_laplace::verify::{run_all, Corruption, VerifyOptions};
use online_laplace::Hyperparams;

use crate::error::{CliError, CliResult, ExitCode};
use crate::manifest::{code_version, data_root, dataset_checksum, load_dataset, RunManifest};
use crate::run::{execute, RunOutcome};
use crate::summary;

/// Steps for datasets without a published budget.
pub const DEFAULT_ONLINE_STEPS: usize = 5000;

#[derive(Debug, Parser)]
#[command(name = "olap", version, about = "Online Laplace hyperparameter learning for MLP regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one or more runs and write trace, model and manifest files.
    Train(TrainArgs),
    /// Summarise finished runs: mean ± standard error over splits.
    Evaluate(EvaluateArgs),
    /// Run the oracle and invariant property suites.
    Verify(VerifyArgs),
}

fn parse_procedure(s: &str) -> Result<Procedure, String> {
    s.parse().map_err(|e: online_laplace::Error| e.to_string())
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s.to_ascii_lowercase().as_str() {
        "lf" => Ok(Objective::Lf),
        "lh" => Ok(Objective::Lh),
        _ => Err(format!("unknown objective {s:?} (expected lf or lh)")),
    }
}

/// `3`, `0-9` or `0,2,5`.
pub fn parse_splits(s: &str) -> Result<Vec<u32>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| format!("bad split range {part:?}"))?, b.trim().parse().map_err(|_| format!("bad split range {part:?}"))?);
            if a > b {
                return Err(format!("empty split range {part:?}"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad split index {part:?}"))?);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Parsed `--split` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits(pub Vec<u32>);

fn parse_split_arg(s: &str) -> Result<Splits, String> {
    parse_splits(s).map(Splits)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "manifest")]
    pub dataset: Option<String>,
    #[arg(long, value_parser = parse_procedure, default_value = "ol")]
    pub procedure: Procedure,
    /// Split index, range (`0-9`) or list (`0,3`).
    #[arg(long, value_parser = parse_split_arg, default_value = "0")]
    pub split: Splits,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum training steps (default: per-dataset budget).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Log-space damping of hyperparameter updates in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Re-run exactly the configuration stored in a run manifest.
    #[arg(long, conflicts_with_all = ["dataset", "steps"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HIDDEN_UNITS)]
    pub hidden: usize,
    /// Post-hoc objective for offline runs.
    #[arg(long, value_parser = parse_objective, default_value = "lh")]
    pub posthoc: Objective,
    /// Stop online runs early once converged (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub convergence_tol: f64,
    /// Dataset root (overrides the environment variable).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Runs to execute concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<String>,
    #[arg(long = "procedure", value_parser = parse_procedure)]
    pub procedures: Vec<Procedure>,
    #[arg(long, value_parser = parse_split_arg, default_value = "0-9")]
    pub split: Splits,
    /// Directory for `summary.csv` and `per_split.csv` (default: out-dir).
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    pub seed: u64,
    /// Smaller instance counts for a fast smoke check.
    #[arg(long)]
    pub quick: bool,
    /// Mutation check: flip the sign of the Gauss-Newton step in the fixture.
    #[arg(long, hide = true)]
    pub corrupt_ggn_sign: bool,
}

/// Builds the manifest for one split from command-line flags.
pub fn manifest_from_flags(a: &TrainArgs, dataset: &str, ds: &Dataset, split: u32) -> CliResult<RunManifest> {
    let steps = match (a.steps, a.procedure) {
        (Some(s), _) => s,
        (None, Procedure::Offline) => OFFLINE_MAX_STEPS,
        (None, _) => online_step_budget(dataset).unwrap_or(DEFAULT_ONLINE_STEPS),
    };
    let mut config = TrainConfig::new(a.procedure, steps);
    config.hyper_init = Hyperparams::new(a.alpha, a.beta).map_err(|e| CliError::usage(e.to_string()))?;
    config.seed = a.seed;
    config.damping = a.damping;
    config.record_every = a.record_every;
    config.convergence_tol = a.convergence_tol;
    let offline = a.procedure == Procedure::Offline;
    let m = RunManifest {
        dataset: dataset.to_string(),
        procedure: a.procedure,
        seed: a.seed,
        split_index: split,
        hidden_units: a.hidden,
        use_validation: offline,
        posthoc: offline.then_some(a.posthoc),
        config,
        code_version: code_version(),
        dataset_sha256: dataset_checksum(ds),
    };
    m.check()?;
    Ok(m)
}

fn report(o: &RunOutcome, m: &RunManifest) -> String {
    format!(
        "{}/{}/split{}: {} steps, test RMSE {:.4}, test log-lik {:.4}, alpha {:.4e}, beta {:.4e} -> {}",
        m.dataset,
        m.procedure.as_str(),
        m.split_index,
        o.steps_run,
        o.eval.test_rmse,
        o.eval.test_loglik,
        o.eval.alpha,
        o.eval.beta,
        o.dir.display()
    )
}

/// Runs manifests with up to `jobs` concurrent workers; results keep input order.
pub fn execute_all(manifests: &[RunManifest], ds: &Dataset, out_dir: &Path, jobs: usize) -> Vec<CliResult<RunOutcome>> {
    let jobs = jobs.clamp(1, manifests.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<CliResult<RunOutcome>>>> = manifests.iter().map(|_| Default::default()).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= manifests.len() {
                    break;
                }
                let r = execute(&manifests[i], ds, out_dir);
                *slots[i].lock().expect("unpoisoned") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("unpoisoned").expect("every slot filled")).collect()
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let root = data_root(a.data_dir.as_deref());
    let manifests = if let Some(path) = &a.manifest {
        vec![RunManifest::load(path)?]
    } else {
        let name = a.dataset.as_deref().expect("clap enforces --dataset");
        let ds = load_dataset(name, &root)?;
        a.split.0.iter().map(|&k| manifest_from_flags(a, name, &ds, k)).collect::<CliResult<Vec<_>>>()?
    };
    let ds = load_dataset(&manifests[0].dataset, &root)?;
    let results = execute_all(&manifests, &ds, &a.out_dir, a.jobs);
    let mut failures = Vec::new();
    for (m, r) in manifests.iter().zip(results) {
        match r {
            Ok(o) => println!("{}", report(&o, m)),
            Err(e) => failures.push((format!("{}/{}/split{}", m.dataset, m.procedure.as_str(), m.split_index), e)),
        }
    }
    match failures.len() {
        0 => Ok(()),
        1 => {
            let (run, e) = failures.pop().expect("one failure");
            Err(CliError { code: e.code, message: format!("{run}: {}", e.message) })
        }
        n => {
            for (run, e) in &failures {
                eprintln!("error: {run}: {e}");
            }
            let code = failures.iter().map(|(_, e)| e.code).max_by_key(|c| *c as i32).expect("non-empty");
            Err(CliError { code, message: format!("{n} runs failed") })
        }
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let procedures = if a.procedures.is_empty() {
        vec![Procedure::Ol, Procedure::Lm, Procedure::Offline]
    } else {
        a.procedures.clone()
    };
    let results = summary::collect(&a.out_dir, &a.datasets, &procedures, &a.split.0)?;
    let rows = summary::summarise(&results);
    let csv_dir = a.csv_dir.as_deref().unwrap_or(&a.out_dir);
    std::fs::create_dir_all(csv_dir).map_err(|e| CliError::io(csv_dir, e))?;
    for (file, text) in [("per_split.csv", summary::per_split_csv(&results)), ("summary.csv", summary::summary_csv(&rows))] {
        let p = csv_dir.join(file);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    }
    print!("{}", summary::summary_text(&rows));
    Ok(())
}

pub fn verify_options(a: &VerifyArgs) -> VerifyOptions {
    let base = if a.quick {
        VerifyOptions { evidence_instances: 40, derivative_instances: 10, mackay_instances: 4, matching_steps: 20, ..Default::default() }
    } else {
        VerifyOptions::default()
    };
    VerifyOptions {
        seed: a.seed,
        corruption: if a.corrupt_ggn_sign { Corruption::FlipGaussNewtonSign } else { Corruption::None },
        ..base
    }
}

pub fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let outcomes = run_all(&verify_options(a));
    let mut failed = Vec::new();
    for o in &outcomes {
        println!("{o}");
        if !o.passed {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        println!("all {} properties passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::numeric(format!("{} propert(ies) failed: {}", failed.len(), failed.join(", "))))
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Usage as i32 } else { ExitCode::Success as i32 };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            eprintln!("error: {e}");
            e.code as i32
        }
    }
}
