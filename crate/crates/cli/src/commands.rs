use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pubc_core::bc::{self, evaluate, Policy};
use pubc_core::data::{
    classification_accuracy, load_dataset, metrics_row, save_dataset, top_fraction_by_return, DataError, Dataset,
    MembershipPartition, TrajectoryId, METRICS_HEADER,
};
use pubc_core::filter::{convergence_csv, histogram_csv, run_pubc_filter, select_seeds, FilterError};
use pubc_core::synth::{compose_dataset_with, reference_score_bounds, MixKind, ACTION_DIM, STATE_DIM};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, RunConfig};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const POSITIVES_FILE: &str = "positives.txt";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const REPORT_HEADER: &str = "run,iterations,accuracy,mean_return,normalized_score";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn prepare_dir(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(&dir.join(CONFIG_FILE), &config.render())
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| io_err(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ids_text(ids: &BTreeSet<TrajectoryId>) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

pub fn gen_data(kind: MixKind, count: usize, out: &Path, config: &RunConfig) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Usage("count must be >= 1".into()));
    }
    let dataset = compose_dataset_with(kind, count, config.seed, &config.env).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    save_dataset(&dataset, out).map_err(|e| io_err(out, e))?;
    let mut echo = out.as_os_str().to_owned();
    echo.push(".config.txt");
    write(&PathBuf::from(echo), &config.render())?;
    println!("dataset={} kind={kind} trajectories={}", out.display(), dataset.len());
    for (label, n, mean) in dataset.label_summary() {
        println!("label={label} count={n} mean_return={mean}");
    }
    Ok(())
}

pub fn filter(dataset_path: &Path, out: &Path, config: &RunConfig) -> Result<(), CliError> {
    let mix = load(dataset_path)?;
    let truth = mix.ground_truth(&config.expert_label);
    prepare_dir(out, config)?;

    let (positive, iterations) = if config.method == Method::Naive {
        let ids = top_fraction_by_return(&mix, config.naive_fraction, 1).map_err(|e| CliError::Pipeline(e.to_string()))?;
        (ids, None)
    } else {
        let seed_ids = select_seeds(&mix, &config.filter).map_err(|e| CliError::Pipeline(e.to_string()))?;
        let seeds: Vec<_> = seed_ids.iter().filter_map(|id| mix.get(*id).cloned()).collect();
        let outcome = run_pubc_filter(&mix, &seeds, &config.filter, truth.as_ref(), config.seed).map_err(|e| match e {
            FilterError::Collapse { iteration } => {
                CliError::Pipeline(format!("filter collapsed at iteration {iteration}: no positive trajectories"))
            }
            other => CliError::Pipeline(other.to_string()),
        })?;
        write(&out.join(CONVERGENCE_FILE), &convergence_csv(&outcome.iterations))?;
        for d in &outcome.iterations {
            write(&out.join(format!("histogram_iter{}.csv", d.iteration)), &histogram_csv(d))?;
        }
        let summary = (outcome.iterations.len(), outcome.converged);
        (outcome.partition.positive, Some(summary))
    };
    write(&out.join(POSITIVES_FILE), &ids_text(&positive))?;

    let mut line = format!("method={} positives={}", config.method.name(), positive.len());
    if let Some((n, converged)) = iterations {
        let _ = write!(line, " iterations={n} converged={converged}");
    }
    if let Some(gt) = &truth {
        let partition = MembershipPartition::new(&mix.ids(), &positive, 0);
        let c = classification_accuracy(&partition, gt).map_err(|e| CliError::Pipeline(e.to_string()))?;
        write(
            &out.join(METRICS_FILE),
            &format!("{METRICS_HEADER}\n{}\n", metrics_row(&stem(dataset_path), &c)),
        )?;
        let _ = write!(line, " accuracy={:.6}", c.accuracy());
    }
    println!("{line}");
    Ok(())
}

/// Reads a positive-id list: one id per line, `#` comments and blanks ignored.
pub fn read_membership(path: &Path) -> Result<BTreeSet<TrajectoryId>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut ids = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id = line
            .parse()
            .map_err(|_| CliError::Io(format!("{}: line {}: invalid id {line:?}", path.display(), n + 1)))?;
        ids.insert(TrajectoryId(id));
    }
    Ok(ids)
}

pub fn select_subset(dataset: &Dataset, membership: Option<&Path>) -> Result<Dataset, CliError> {
    let Some(path) = membership else {
        return Ok(dataset.clone());
    };
    let ids = read_membership(path)?;
    if ids.is_empty() {
        return Err(CliError::Pipeline(format!("{}: membership selects no trajectories", path.display())));
    }
    dataset.subset(&ids).map_err(|e| match e {
        DataError::UnknownId(id) => CliError::Pipeline(format!("membership id {id} is not in the dataset")),
        other => CliError::Pipeline(other.to_string()),
    })
}

pub fn train_bc(dataset_path: &Path, membership: Option<&Path>, out: &Path, config: &RunConfig) -> Result<(), CliError> {
    let dataset = load(dataset_path)?;
    let subset = select_subset(&dataset, membership)?;
    prepare_dir(out, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (policy, history) = bc::train_bc(&subset, &config.bc, &mut rng).map_err(|e| CliError::Pipeline(e.to_string()))?;
    let policy_path = out.join(POLICY_FILE);
    policy.save(&policy_path).map_err(|e| io_err(&policy_path, e))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    write(&out.join(LOSS_FILE), &csv)?;
    println!(
        "trajectories={} transitions={} epochs={} final_loss={}",
        subset.len(),
        subset.transition_count(),
        history.len(),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn eval(policy_path: &Path, out: &Path, config: &RunConfig) -> Result<(), CliError> {
    let policy = Policy::load(policy_path).map_err(|e| io_err(policy_path, e))?;
    if policy.state_dim() != STATE_DIM || policy.action_dim() != ACTION_DIM {
        return Err(CliError::Pipeline(format!(
            "policy maps {} -> {} dimensions, the environment needs {STATE_DIM} -> {ACTION_DIM}",
            policy.state_dim(),
            policy.action_dim()
        )));
    }
    let bounds = match (config.score_min, config.score_max) {
        (Some(lo), Some(hi)) => (lo, hi),
        (lo, hi) => {
            let (rlo, rhi) = reference_score_bounds(&config.env);
            (lo.unwrap_or(rlo), hi.unwrap_or(rhi))
        }
    };
    let report = evaluate(&policy, &config.env, config.episodes, config.seed, bounds)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    prepare_dir(out, config)?;
    write(&out.join(EVAL_FILE), &report.csv())?;
    let summary = format!("{} score_min={} score_max={}", report.summary_line(), bounds.0, bounds.1);
    write(&out.join(SUMMARY_FILE), &format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

fn key_values(text: &str) -> BTreeMap<String, String> {
    text.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// One report row per run directory. Columns stay empty when the directory
/// holds no output of that kind.
pub fn report_row(dir: &Path) -> Result<String, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("{}: not a run directory", dir.display())));
    }
    let read = |name: &str| -> Result<Option<String>, CliError> {
        let p = dir.join(name);
        if p.exists() {
            fs::read_to_string(&p).map(Some).map_err(|e| io_err(&p, e))
        } else {
            Ok(None)
        }
    };
    let iterations = read(CONVERGENCE_FILE)?
        .map(|t| t.lines().skip(1).filter(|l| !l.is_empty()).count().to_string())
        .unwrap_or_default();
    let accuracy = read(METRICS_FILE)?
        .and_then(|t| t.lines().nth(1).and_then(|l| l.rsplit(',').next()).map(str::to_string))
        .unwrap_or_default();
    let summary = read(SUMMARY_FILE)?.map(|t| key_values(&t)).unwrap_or_default();
    let get = |k: &str| summary.get(k).cloned().unwrap_or_default();
    Ok(format!(
        "{},{iterations},{accuracy},{},{}",
        dir.display(),
        get("mean_return"),
        get("normalized_score")
    ))
}

pub fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let mut text = format!("{REPORT_HEADER}\n");
    for dir in runs {
        text.push_str(&report_row(dir)?);
        text.push('\n');
    }
    match out {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
