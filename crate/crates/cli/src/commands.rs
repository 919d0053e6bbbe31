//! Command implementations behind the CLI surface. Each command returns a
//! typed outcome; the binary maps outcomes and errors to exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use marginlab_core::data::{load_csv, save_csv, gen_blobs};
use marginlab_core::error::{Error, Result};
use marginlab_core::margin::score_batch;
use marginlab_core::model::Model;
use marginlab_core::numeric::{Matrix, Rng};
use marginlab_core::objective::{AlphaSchedule, LossMode};
use marginlab_core::oracle::{brute_force_mms, composite_grad_check};
use marginlab_core::selection::PolicyKind;
use marginlab_core::trainer::{train, TrainRun};
use marginlab_core::margin::mms;
use marginlab_core::model::LinearHead;
use marginlab_core::numeric::{dot, l2_norm};

use crate::artifacts::{
    float_cell, metrics_csv, selection_csv, steps_cell, write_atomic,
};
use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub final_error: f64,
    pub final_train_error: f64,
    pub steps_to_target: Option<u64>,
    pub completed_steps: u64,
    pub aborted: Option<String>,
    pub version: String,
    pub config: RunConfig,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub final_error: f64,
    pub steps_to_target: Option<u64>,
    pub aborted: bool,
    pub wallclock_seconds: f64,
}

/// Run one training job from a resolved config and write its artifacts:
/// the config echo, the metrics CSV, the summary JSON, the final checkpoint,
/// and optional selection log and periodic checkpoints.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let started = std::time::Instant::now();
    let dataset = config.build_dataset()?;
    let split = config.build_split(&dataset)?;
    let model = config.build_model(dataset.dim(), dataset.n_classes)?;
    let train_config = config.train.to_config()?;
    train_config.validate(split.train.len())?;
    let run = train(&train_config, &split, model)?;
    let out_dir = PathBuf::from(&config.out_dir);
    write_run_artifacts(&out_dir, config, &run)?;
    Ok(TrainOutcome {
        out_dir,
        final_error: run.final_validation_error,
        steps_to_target: run.steps_to_target,
        aborted: run.abort.is_some(),
        wallclock_seconds: started.elapsed().as_secs_f64(),
    })
}

fn write_run_artifacts(out_dir: &Path, config: &RunConfig, run: &TrainRun) -> Result<()> {
    let config_json = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Json { context: "config echo".to_string(), source: e })?;
    write_atomic(&out_dir.join("config.json"), &config_json)?;
    write_atomic(&out_dir.join("metrics.csv"), &metrics_csv(&run.metrics))?;
    if config.log_selection {
        write_atomic(&out_dir.join("selection.csv"), &selection_csv(&run.selection_log))?;
    }
    let summary = RunSummary {
        final_error: run.final_validation_error,
        final_train_error: run.final_train_error,
        steps_to_target: run.steps_to_target,
        completed_steps: run.completed_steps,
        aborted: run.abort.clone(),
        version: VERSION.to_string(),
        config: config.clone(),
    };
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Json { context: "summary".to_string(), source: e })?;
    write_atomic(&out_dir.join("summary.json"), &summary_json)?;
    write_atomic(&out_dir.join("checkpoint.json"), &run.model.to_json()?)?;
    for (step, snapshot) in &run.snapshots {
        write_atomic(&out_dir.join(format!("checkpoint-{step}.json")), &snapshot.to_json()?)?;
    }
    Ok(())
}

/// Ordered parallel map over `n` jobs with at most `threads` workers.
fn run_parallel<T, F>(n: usize, threads: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= n {
                    break;
                }
                let result = job(k);
                slots.lock().unwrap()[k] = Some(result);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

#[derive(Debug)]
pub struct CompareRow {
    pub policy: PolicyKind,
    pub seed: u64,
    pub steps_to_target: Option<u64>,
    pub final_error: f64,
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
    pub csv_path: PathBuf,
}

/// Lower median: the middle element of the sorted values (the lower of the
/// two middles for even counts). `None` sorts after every number.
fn median_steps(mut values: Vec<Option<u64>>) -> Option<u64> {
    values.sort_by_key(|v| v.unwrap_or(u64::MAX));
    values[(values.len() - 1) / 2]
}

fn median_f64(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[(values.len() - 1) / 2]
}

/// Run the cross product of policies and seeds against one base config and
/// tabulate steps-to-target and final error per run, with per-policy
/// medians.
pub fn cmd_compare(
    base: &RunConfig,
    policies: &[PolicyKind],
    seeds: &[u64],
    threads: usize,
) -> Result<CompareOutcome> {
    base.validate()?;
    if policies.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("compare needs at least one policy and one seed".to_string()));
    }
    let jobs: Vec<(PolicyKind, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let out_root = PathBuf::from(&base.out_dir);
    let outcomes = run_parallel(jobs.len(), threads, |k| {
        let (policy, seed) = jobs[k];
        let mut config = base.clone();
        config.train.policy.kind = policy;
        config.train.seed = seed;
        config.out_dir =
            out_root.join("runs").join(format!("{policy}-seed{seed}")).display().to_string();
        cmd_train(&config)
    })?;
    let rows: Vec<CompareRow> = jobs
        .iter()
        .zip(&outcomes)
        .map(|(&(policy, seed), outcome)| CompareRow {
            policy,
            seed,
            steps_to_target: outcome.steps_to_target,
            final_error: outcome.final_error,
        })
        .collect();

    let mut csv = String::from("policy,seed,steps_to_target,final_error\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.policy,
            row.seed,
            steps_cell(row.steps_to_target),
            float_cell(row.final_error)
        );
    }
    for &policy in policies {
        let of_policy: Vec<&CompareRow> =
            rows.iter().filter(|r| r.policy == policy).collect();
        let med_steps = median_steps(of_policy.iter().map(|r| r.steps_to_target).collect());
        let med_error = median_f64(of_policy.iter().map(|r| r.final_error).collect());
        let _ = writeln!(
            csv,
            "{policy},median,{},{}",
            steps_cell(med_steps),
            float_cell(med_error)
        );
    }
    let csv_path = out_root.join("compare.csv");
    write_atomic(&csv_path, &csv)?;
    Ok(CompareOutcome { rows, csv_path })
}

#[derive(Debug)]
pub struct SweepRow {
    pub alpha: f64,
    pub runs: usize,
    pub mean_validation_error: f64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// Sorted ascending by mean validation error.
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

/// One MMR-enabled training run per (alpha, seed); the summary reports the
/// mean validation error per alpha, sorted so the best alpha comes first.
pub fn cmd_sweep_alpha(
    base: &RunConfig,
    alphas: &[f64],
    seeds: &[u64],
    threads: usize,
) -> Result<SweepOutcome> {
    base.validate()?;
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one alpha and one seed".to_string()));
    }
    if alphas.iter().any(|&a| !(a >= 0.0)) {
        return Err(Error::invalid("alpha grid values must be >= 0".to_string()));
    }
    let jobs: Vec<(usize, u64)> = (0..alphas.len())
        .flat_map(|ai| seeds.iter().map(move |&s| (ai, s)))
        .collect();
    let out_root = PathBuf::from(&base.out_dir);
    let outcomes = run_parallel(jobs.len(), threads, |k| {
        let (ai, seed) = jobs[k];
        let mut config = base.clone();
        config.train.mmr_enabled = true;
        config.train.alpha = AlphaSchedule::Constant { value: alphas[ai] };
        config.train.seed = seed;
        config.out_dir =
            out_root.join("runs").join(format!("alpha{ai}-seed{seed}")).display().to_string();
        cmd_train(&config)
    })?;

    let mut runs_csv = String::from("alpha,seed,validation_error,steps_to_target\n");
    for (&(ai, seed), outcome) in jobs.iter().zip(&outcomes) {
        let _ = writeln!(
            runs_csv,
            "{},{},{},{}",
            float_cell(alphas[ai]),
            seed,
            float_cell(outcome.final_error),
            steps_cell(outcome.steps_to_target)
        );
    }
    write_atomic(&out_root.join("sweep_runs.csv"), &runs_csv)?;

    let mut rows: Vec<SweepRow> = (0..alphas.len())
        .map(|ai| {
            let errors: Vec<f64> = jobs
                .iter()
                .zip(&outcomes)
                .filter(|((a, _), _)| *a == ai)
                .map(|(_, o)| o.final_error)
                .collect();
            SweepRow {
                alpha: alphas[ai],
                runs: errors.len(),
                mean_validation_error: errors.iter().sum::<f64>() / errors.len() as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.mean_validation_error.partial_cmp(&b.mean_validation_error).unwrap());

    let mut csv = String::from("alpha,runs,mean_validation_error\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{}",
            float_cell(row.alpha),
            row.runs,
            float_cell(row.mean_validation_error)
        );
    }
    let csv_path = out_root.join("sweep.csv");
    write_atomic(&csv_path, &csv)?;
    Ok(SweepOutcome { rows, csv_path })
}

/// Data source for scoring: a CSV (optionally labeled) or a config's dataset.
#[derive(Debug)]
pub enum ScoreData {
    Csv { path: PathBuf, label_column: Option<String> },
    Config(Box<RunConfig>),
}

#[derive(Debug, Serialize)]
pub struct ScoreSummary {
    pub samples: usize,
    pub mms_min: f64,
    pub mms_median: f64,
    pub mms_mean: f64,
    pub mms_max: f64,
    /// Degenerate-pair sentinels excluded from the aggregates above.
    pub infinite_count: usize,
}

/// Score a dataset with a checkpointed model: per-sample predicted class,
/// runner-up, minimal margin score, and (when labels exist) the signed true
/// margin. Emits the score CSV and an MMS distribution summary.
pub fn cmd_score(
    checkpoint: &Path,
    data: &ScoreData,
    out_dir: &Path,
) -> Result<(ScoreSummary, PathBuf)> {
    let model = Model::load(checkpoint)?;
    let (features, labels): (Matrix, Option<Vec<usize>>) = match data {
        ScoreData::Csv { path, label_column } => {
            let loaded = load_csv(path, label_column.as_deref())?;
            (loaded.features, loaded.labels)
        }
        ScoreData::Config(config) => {
            let dataset = config.build_dataset()?;
            (dataset.features, Some(dataset.labels))
        }
    };
    if features.cols() != model.input_dim {
        return Err(Error::dim(format!(
            "score: data has {} features, model expects {}",
            features.cols(),
            model.input_dim
        )));
    }
    let cache = model.forward(&features)?;
    let scores = score_batch(&model.head, &cache.features, labels.as_deref())?;

    let mut csv = String::from("sample_index,top_class,runner_up,mms,true_margin\n");
    for (i, s) in scores.iter().enumerate() {
        let margin = s.true_margin.map(float_cell).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{i},{},{},{},{margin}",
            s.top_class,
            s.runner_up,
            float_cell(s.mms)
        );
    }
    let csv_path = out_dir.join("scores.csv");
    write_atomic(&csv_path, &csv)?;

    let mut finite: Vec<f64> = scores.iter().map(|s| s.mms).filter(|d| d.is_finite()).collect();
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let infinite_count = scores.len() - finite.len();
    let summary = if finite.is_empty() {
        ScoreSummary {
            samples: scores.len(),
            mms_min: f64::NAN,
            mms_median: f64::NAN,
            mms_mean: f64::NAN,
            mms_max: f64::NAN,
            infinite_count,
        }
    } else {
        ScoreSummary {
            samples: scores.len(),
            mms_min: finite[0],
            mms_median: finite[(finite.len() - 1) / 2],
            mms_mean: finite.iter().sum::<f64>() / finite.len() as f64,
            mms_max: *finite.last().unwrap(),
            infinite_count,
        }
    };
    Ok((summary, csv_path))
}

#[derive(Debug, Serialize)]
pub struct GradCheckOutcome {
    pub pass: bool,
    pub models_checked: usize,
    pub epsilon: f64,
    pub threshold: f64,
    pub max_rel_error: f64,
    pub worst_label: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Finite-difference check of the composite objective on random small
/// models. Unstable draws (argmax or kink inside the perturbation window)
/// are redrawn, never silently passed.
pub fn cmd_gradcheck(models: usize, epsilon: f64, seed: u64) -> Result<GradCheckOutcome> {
    let threshold = 1e-4;
    let mut outcome = GradCheckOutcome {
        pass: true,
        models_checked: 0,
        epsilon,
        threshold,
        max_rel_error: 0.0,
        worst_label: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut rng = Rng::new(seed);
    let alphas = [1e-3, 1e-2, 1e-1];
    let mut draw = 0u64;
    while outcome.models_checked < models {
        draw += 1;
        if draw > 50 * models as u64 {
            return Err(Error::UnstableEvalPoint(
                "could not find enough stable evaluation points".to_string(),
            ));
        }
        let n_classes = 3 + rng.below(3);
        let model =
            marginlab_core::model::init_model(&[2, 8], n_classes, seed.wrapping_add(draw))?;
        let mut x = Matrix::zeros(5, 2);
        for v in x.data_mut() {
            *v = rng.uniform_in(-2.0, 2.0);
        }
        let labels: Vec<usize> = (0..5).map(|_| rng.below(n_classes)).collect();
        let alpha = alphas[outcome.models_checked % alphas.len()];
        match composite_grad_check(&model, &x, &labels, alpha, LossMode::Ce, true, epsilon) {
            Ok(report) => {
                if report.max_rel_error > outcome.max_rel_error {
                    outcome.max_rel_error = report.max_rel_error;
                    outcome.worst_label = report.worst_label;
                    outcome.worst_analytic = report.worst_analytic;
                    outcome.worst_numeric = report.worst_numeric;
                }
                outcome.models_checked += 1;
            }
            Err(Error::UnstableEvalPoint(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    outcome.pass = outcome.max_rel_error < threshold;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
pub struct OracleSweepOutcome {
    pub pass: bool,
    pub draws: usize,
    pub max_abs_diff: f64,
    pub diff_tolerance: f64,
    pub crossing_failures: usize,
}

/// Random-draw sweep: the closed-form margin score against the brute-force
/// projection oracle, plus the boundary-crossing displacement check.
pub fn cmd_oracle_sweep(draws: usize, seed: u64) -> Result<OracleSweepOutcome> {
    let mut rng = Rng::new(seed);
    let mut max_abs_diff: f64 = 0.0;
    let mut crossing_failures = 0usize;
    for _ in 0..draws {
        let n = 2 + rng.below(5);
        let d = 2 + rng.below(4);
        let mut w = Matrix::zeros(n, d);
        for v in w.data_mut() {
            *v = rng.uniform_in(-2.0, 2.0);
        }
        let b: Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let head = LinearHead::new(w, b)?;
        let phi: Vec<f64> = (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let fast = mms(&head, &phi)?;
        let slow = brute_force_mms(&head, &phi)?;
        if fast.mms.is_finite() || slow.is_finite() {
            max_abs_diff = max_abs_diff.max((fast.mms - slow).abs());
        }
        if fast.mms.is_finite() {
            let diff: Vec<f64> = head
                .w
                .row(fast.top_class)
                .iter()
                .zip(head.w.row(fast.runner_up))
                .map(|(a, b)| a - b)
                .collect();
            let norm = l2_norm(&diff);
            let u: Vec<f64> = diff.iter().map(|v| v / norm).collect();
            let eps = 1e-6 * (1.0 + fast.mms);
            let gap_at = |t: f64| {
                let moved: Vec<f64> = phi.iter().zip(&u).map(|(p, ui)| p - t * ui).collect();
                let s1 = dot(head.w.row(fast.top_class), &moved) + head.b[fast.top_class];
                let s2 = dot(head.w.row(fast.runner_up), &moved) + head.b[fast.runner_up];
                s1 - s2
            };
            if !(gap_at(fast.mms + eps) < 0.0 && gap_at(fast.mms - eps) > 0.0) {
                crossing_failures += 1;
            }
        }
    }
    Ok(OracleSweepOutcome {
        pass: max_abs_diff < 1e-9 && crossing_failures == 0,
        draws,
        max_abs_diff,
        diff_tolerance: 1e-9,
        crossing_failures,
    })
}

/// Generate a blob dataset straight to CSV.
#[allow(clippy::too_many_arguments)]
pub fn cmd_gen_data(
    n_classes: usize,
    dim: usize,
    per_class: usize,
    center_radius: f64,
    sigma: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let dataset = gen_blobs(n_classes, dim, per_class, center_radius, sigma, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    save_csv(&dataset, out, "label")
}
