//! Subcommand execution and artifact writing.
//!
//! Every run writes its effective config echo, and every emitted file path is
//! recorded in the returned summary. All CSV content is a pure function of
//! the config and seeds; wall time is reported on stdout only, never inside
//! an artifact.

use crate::cli::config::ExperimentConfig;
use crate::evalmetrics::{
    fast_adapt_eval, histogram_with_range, histograms_to_csv, report_csv_header, report_to_csv,
    separation_score, EvalError, EvalReport, Histogram, DEFAULT_BINS,
};
use crate::metatrain::{
    logs_to_csv, parse_checkpoint, run_training, write_checkpoint, Algorithm, Mode, TrainConfig,
    TrainError, TrainRun, TrainerState,
};
use crate::netcore::{init_params, ModelParams};
use crate::taskgen::{NoiseMode, NoiseProfile, TaskGenError, TaskPool};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration or input problem; exit code 1.
    #[error("config error: {0}")]
    Config(String),
    /// Training produced non-finite values; exit code 2.
    #[error("runtime divergence: {0}")]
    Divergence(String),
    /// Filesystem problem; exit code 3.
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::Diverged { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TaskGenError> for CliError {
    fn from(e: TaskGenError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Model(_) => CliError::Divergence(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Train,
    Eval,
    SweepKm,
    SensitivityMajority,
    SensitivityNoisy,
    SensitivityOutlier,
    Histogram,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Train => "train",
            Subcommand::Eval => "eval",
            Subcommand::SweepKm => "sweep-km",
            Subcommand::SensitivityMajority => "sensitivity-majority",
            Subcommand::SensitivityNoisy => "sensitivity-noisy",
            Subcommand::SensitivityOutlier => "sensitivity-outlier",
            Subcommand::Histogram => "histogram",
        }
    }
}

/// What a run produced. Wall time is informational; it never enters any
/// emitted file.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub config_hash: String,
    pub algorithm: Algorithm,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub wall_secs: f64,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("run id        {}\n", self.run_id));
        out.push_str(&format!("config hash   {}\n", self.config_hash));
        out.push_str(&format!("algorithm     {}\n", self.algorithm.as_str()));
        out.push_str(&format!("test loss     {}\n", self.final_loss));
        out.push_str(&format!("test accuracy {}\n", self.final_accuracy));
        out.push_str(&format!("wall seconds  {:.3}\n", self.inner_wall()));
        out.push_str("files:\n");
        for f in &self.files {
            out.push_str(&format!("  {}\n", f.display()));
        }
        out
    }

    fn inner_wall(&self) -> f64 {
        self.wall_secs
    }
}

struct Emitter {
    out_dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn new(out_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

/// Summary rows shared by all subcommands; extras are appended per command.
fn summary_csv(base: &[(&str, String)]) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in base {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

fn load_or_init_model(config: &ExperimentConfig) -> Result<(ModelParams, Option<Mode>), CliError> {
    match &config.checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let ckpt = parse_checkpoint(&text)?;
            Ok((
                ModelParams {
                    phi: ckpt.phi,
                    w: ckpt.w0,
                    arch: ckpt.arch,
                },
                Some(ckpt.mode),
            ))
        }
        None => Ok((init_params(&config.train.arch, config.train.model_seed), None)),
    }
}

fn build_pool(train: &TrainConfig) -> Result<TaskPool, CliError> {
    Ok(TaskPool::build(
        train.profile.clone(),
        train.target_family.clone(),
        train.outlier_family.clone(),
        train.pool_size,
        train.batch_size,
        train.data_seed,
    )?)
}

fn eval_model(
    params: &ModelParams,
    pool: &TaskPool,
    config: &ExperimentConfig,
) -> Result<(EvalReport, EvalReport), CliError> {
    let test_tasks = pool.eval_tasks(config.eval_task_count)?;
    let test = fast_adapt_eval(params, &test_tasks, config.train.inner_steps, config.train.alpha)?;
    let pool_tasks = pool.all_tasks()?;
    let pool_report =
        fast_adapt_eval(params, &pool_tasks, config.train.inner_steps, config.train.alpha)?;
    Ok((test, pool_report))
}

/// Shared-range histograms for several labelled loss groups.
fn grouped_histograms(groups: &[(String, Vec<f64>)]) -> Result<Vec<Histogram>, CliError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, values) in groups {
        for &v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    groups
        .iter()
        .filter(|(_, values)| !values.is_empty())
        .map(|(label, values)| {
            histogram_with_range(values, DEFAULT_BINS, (lo, hi), label).map_err(CliError::from)
        })
        .collect()
}

/// Execute a subcommand against a parsed config, writing artifacts under
/// `out_dir`.
pub fn run(
    subcommand: Subcommand,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let mut emitter = Emitter::new(out_dir)?;
    emitter.write("config-echo.txt", &config.echo())?;

    let (final_loss, final_accuracy) = match subcommand {
        Subcommand::Train => cmd_train(config, &mut emitter)?,
        Subcommand::Eval => cmd_eval(config, &mut emitter)?,
        Subcommand::SweepKm => cmd_sweep_km(config, &mut emitter)?,
        Subcommand::SensitivityMajority => cmd_sensitivity_majority(config, &mut emitter)?,
        Subcommand::SensitivityNoisy => cmd_sensitivity_noisy(config, &mut emitter)?,
        Subcommand::SensitivityOutlier => cmd_sensitivity_outlier(config, &mut emitter)?,
        Subcommand::Histogram => cmd_histogram(config, &mut emitter)?,
    };

    Ok(RunSummary {
        run_id: format!("{}-{}", subcommand.as_str(), config.hash()),
        config_hash: config.hash(),
        algorithm: config.algorithm,
        final_loss,
        final_accuracy,
        wall_secs: start.elapsed().as_secs_f64(),
        files: emitter.files,
    })
}

fn final_state_of(run: &TrainRun, config: &TrainConfig, algorithm: Algorithm) -> TrainerState {
    let mode = match algorithm {
        Algorithm::Baseline => Mode::Warmup,
        Algorithm::Hetrom => Mode::Hetrom,
        Algorithm::SgHetrom => {
            if run.thresholds.is_some() {
                Mode::Distill
            } else {
                Mode::Warmup
            }
        }
    };
    TrainerState {
        phi: run.params.phi.clone(),
        w0: run.params.w.clone(),
        trackers: run.trackers,
        iteration: config.total_iterations,
        mode,
        thresholds: run.thresholds,
    }
}

fn cmd_train(config: &ExperimentConfig, emitter: &mut Emitter) -> Result<(f64, f64), CliError> {
    let run = run_training(&config.train, config.algorithm)?;
    emitter.write("manifest.csv", &run.manifest)?;
    emitter.write("train-log.csv", &logs_to_csv(&run.logs))?;
    let state = final_state_of(&run, &config.train, config.algorithm);
    emitter.write("checkpoint.txt", &write_checkpoint(&config.train.arch, &state))?;

    let pool = build_pool(&config.train)?;
    let (test, pool_report) = eval_model(&run.params, &pool, config)?;
    let mut report = String::from(report_csv_header());
    report.push_str(&report_to_csv("test", &test));
    report.push_str(&report_to_csv("pool", &pool_report));
    emitter.write("eval-report.csv", &report)?;

    let acc = test.overall.mean_accuracy.unwrap_or(f64::NAN);
    let mut rows = vec![
        ("config_hash", config.hash()),
        ("algorithm", config.algorithm.as_str().to_string()),
        ("iterations", config.train.total_iterations.to_string()),
        ("test_mean_loss", test.overall.mean_loss.to_string()),
        ("test_mean_acc", acc.to_string()),
        ("test_ci_half_width", test.overall.ci_half_width.to_string()),
        ("pool_mean_loss", pool_report.overall.mean_loss.to_string()),
    ];
    if let Some(id) = &run.identification {
        rows.push(("lambda_star", id.lambda_star.to_string()));
        rows.push(("lambda_hat_star", id.lambda_hat_star.to_string()));
    }
    emitter.write("summary.csv", &summary_csv(&rows))?;
    Ok((test.overall.mean_loss, acc))
}

fn cmd_eval(config: &ExperimentConfig, emitter: &mut Emitter) -> Result<(f64, f64), CliError> {
    let (params, _) = load_or_init_model(config)?;
    let pool = build_pool(&config.train)?;
    emitter.write("manifest.csv", &pool.manifest())?;
    let (test, pool_report) = eval_model(&params, &pool, config)?;
    let mut report = String::from(report_csv_header());
    report.push_str(&report_to_csv("test", &test));
    report.push_str(&report_to_csv("pool", &pool_report));
    emitter.write("eval-report.csv", &report)?;
    let acc = test.overall.mean_accuracy.unwrap_or(f64::NAN);
    emitter.write(
        "summary.csv",
        &summary_csv(&[
            ("config_hash", config.hash()),
            ("test_mean_loss", test.overall.mean_loss.to_string()),
            ("test_mean_acc", acc.to_string()),
            ("pool_mean_loss", pool_report.overall.mean_loss.to_string()),
        ]),
    )?;
    Ok((test.overall.mean_loss, acc))
}

fn cmd_sweep_km(config: &ExperimentConfig, emitter: &mut Emitter) -> Result<(f64, f64), CliError> {
    if config.sweep_k.is_empty() || config.sweep_m.is_empty() {
        return Err(CliError::Config(
            "sweep-km needs nonempty sweep.k and sweep.m lists".into(),
        ));
    }
    let mut table = String::from("k,m,status,test_mean_loss,test_mean_acc,ci_half_width\n");
    let mut best: Option<(f64, f64)> = None;
    for &k in &config.sweep_k {
        for &m in &config.sweep_m {
            // invalid pairs stay in the table, marked rather than dropped
            if m >= k || k > config.train.batch_size {
                table.push_str(&format!("{k},{m},invalid,NaN,NaN,NaN\n"));
                continue;
            }
            let mut train = config.train.clone();
            train.k = k;
            train.m = m;
            let run = run_training(&train, Algorithm::Hetrom)?;
            let cell = format!("km-k{k}-m{m}");
            emitter.write(&format!("{cell}/train-log.csv"), &logs_to_csv(&run.logs))?;
            let pool = build_pool(&train)?;
            let test_tasks = pool.eval_tasks(config.eval_task_count)?;
            let test = fast_adapt_eval(&run.params, &test_tasks, train.inner_steps, train.alpha)?;
            let mut report = String::from(report_csv_header());
            report.push_str(&report_to_csv("test", &test));
            emitter.write(&format!("{cell}/eval-report.csv"), &report)?;
            let acc = test.overall.mean_accuracy.unwrap_or(f64::NAN);
            table.push_str(&format!(
                "{k},{m},ok,{},{},{}\n",
                test.overall.mean_loss, acc, test.overall.ci_half_width
            ));
            let better = match best {
                None => true,
                Some((_, best_acc)) => acc > best_acc,
            };
            if better {
                best = Some((test.overall.mean_loss, acc));
            }
        }
    }
    emitter.write("sweep-km.csv", &table)?;
    let (loss, acc) = best.unwrap_or((f64::NAN, f64::NAN));
    emitter.write(
        "summary.csv",
        &summary_csv(&[
            ("config_hash", config.hash()),
            ("cells", (config.sweep_k.len() * config.sweep_m.len()).to_string()),
            ("best_test_mean_acc", acc.to_string()),
            ("best_test_mean_loss", loss.to_string()),
        ]),
    )?;
    Ok((loss, acc))
}

/// Train on all tasks vs. on the highest-loss half, then compare the
/// training-pool loss distributions and test accuracy of the two models.
fn cmd_sensitivity_majority(
    config: &ExperimentConfig,
    emitter: &mut Emitter,
) -> Result<(f64, f64), CliError> {
    let all_cfg = config.train.clone();
    let run_all = run_training(&all_cfg, Algorithm::Baseline)?;

    let mut hard_cfg = config.train.clone();
    hard_cfg.k = (hard_cfg.batch_size / 2).max(1);
    hard_cfg.m = 0;
    let run_hard = run_training(&hard_cfg, Algorithm::Hetrom)?;

    let pool = build_pool(&config.train)?;
    let pool_tasks = pool.all_tasks()?;
    let steps = config.train.inner_steps;
    let alpha = config.train.alpha;
    let eval_all = fast_adapt_eval(&run_all.params, &pool_tasks, steps, alpha)?;
    let eval_hard = fast_adapt_eval(&run_hard.params, &pool_tasks, steps, alpha)?;
    let losses_all: Vec<f64> = eval_all.per_task.iter().map(|t| t.loss).collect();
    let losses_hard: Vec<f64> = eval_hard.per_task.iter().map(|t| t.loss).collect();
    let histograms = grouped_histograms(&[
        ("all-tasks".to_string(), losses_all),
        ("hard-tasks".to_string(), losses_hard),
    ])?;
    emitter.write("histograms/majority.csv", &histograms_to_csv(&histograms))?;

    let test_tasks = pool.eval_tasks(config.eval_task_count)?;
    let test_all = fast_adapt_eval(&run_all.params, &test_tasks, steps, alpha)?;
    let test_hard = fast_adapt_eval(&run_hard.params, &test_tasks, steps, alpha)?;
    let acc_all = test_all.overall.mean_accuracy.unwrap_or(f64::NAN);
    let acc_hard = test_hard.overall.mean_accuracy.unwrap_or(f64::NAN);
    emitter.write(
        "summary.csv",
        &summary_csv(&[
            ("config_hash", config.hash()),
            ("hard_k", hard_cfg.k.to_string()),
            ("all_pool_mean_loss", eval_all.overall.mean_loss.to_string()),
            ("hard_pool_mean_loss", eval_hard.overall.mean_loss.to_string()),
            ("all_test_acc", acc_all.to_string()),
            ("hard_test_acc", acc_hard.to_string()),
        ]),
    )?;
    Ok((test_hard.overall.mean_loss, acc_hard))
}

/// Train on a clean pool and on a pool with most labels of 60% of tasks
/// flipped, fast-adapt both models to the corrupted pool and compare how
/// well each separates its clean and noisy tasks.
fn cmd_sensitivity_noisy(
    config: &ExperimentConfig,
    emitter: &mut Emitter,
) -> Result<(f64, f64), CliError> {
    let mut clean_cfg = config.train.clone();
    clean_cfg.profile = NoiseProfile::clean();
    let mut noisy_cfg = config.train.clone();
    noisy_cfg.profile = NoiseProfile {
        mode: NoiseMode::TwoStep,
        outlier_ratio: 0.0,
        fixed_schedule: Vec::new(),
        two_step_p: if config.train.profile.mode == NoiseMode::TwoStep {
            config.train.profile.two_step_p
        } else {
            1.0
        },
    };

    let run_clean = run_training(&clean_cfg, Algorithm::Baseline)?;
    let run_noisy = run_training(&noisy_cfg, Algorithm::Baseline)?;

    let noisy_pool = build_pool(&noisy_cfg)?;
    let pool_tasks = noisy_pool.all_tasks()?;
    let steps = config.train.inner_steps;
    let alpha = config.train.alpha;

    let mut groups = Vec::new();
    let mut separations = Vec::new();
    for (label, params) in [("clean-trained", &run_clean.params), ("noisy-trained", &run_noisy.params)] {
        let report = fast_adapt_eval(params, &pool_tasks, steps, alpha)?;
        let clean_losses: Vec<f64> = report
            .per_task
            .iter()
            .filter(|t| t.noise_ratio == 0.0)
            .map(|t| t.loss)
            .collect();
        let noisy_losses: Vec<f64> = report
            .per_task
            .iter()
            .filter(|t| t.noise_ratio > 0.0)
            .map(|t| t.loss)
            .collect();
        separations.push((label, separation_score(&clean_losses, &noisy_losses)?));
        groups.push((format!("{label}:clean-tasks"), clean_losses));
        groups.push((format!("{label}:noisy-tasks"), noisy_losses));
    }
    let histograms = grouped_histograms(&groups)?;
    emitter.write("histograms/noisy.csv", &histograms_to_csv(&histograms))?;

    let test_tasks = noisy_pool.eval_tasks(config.eval_task_count)?;
    let test_clean = fast_adapt_eval(&run_clean.params, &test_tasks, steps, alpha)?;
    let test_noisy = fast_adapt_eval(&run_noisy.params, &test_tasks, steps, alpha)?;
    let acc_clean = test_clean.overall.mean_accuracy.unwrap_or(f64::NAN);
    let acc_noisy = test_noisy.overall.mean_accuracy.unwrap_or(f64::NAN);
    emitter.write(
        "summary.csv",
        &summary_csv(&[
            ("config_hash", config.hash()),
            ("noise_p", noisy_cfg.profile.two_step_p.to_string()),
            ("separation_clean_trained", separations[0].1.to_string()),
            ("separation_noisy_trained", separations[1].1.to_string()),
            ("test_acc_clean_trained", acc_clean.to_string()),
            ("test_acc_noisy_trained", acc_noisy.to_string()),
        ]),
    )?;
    Ok((test_noisy.overall.mean_loss, acc_noisy))
}

/// Train with and without one planted outlier slot and report how often each
/// slot carries the batch's highest loss.
fn cmd_sensitivity_outlier(
    config: &ExperimentConfig,
    emitter: &mut Emitter,
) -> Result<(f64, f64), CliError> {
    let n = config.train.batch_size;
    let mut with_cfg = config.train.clone();
    with_cfg.profile = NoiseProfile {
        mode: NoiseMode::Outlier,
        // exactly one outlier slot, planted at the last index
        outlier_ratio: 1.0 / n as f64 + 1e-9,
        fixed_schedule: Vec::new(),
        two_step_p: 0.8,
    };
    let mut without_cfg = config.train.clone();
    without_cfg.profile = NoiseProfile::clean();

    let run_with = run_training(&with_cfg, Algorithm::Baseline)?;
    let run_without = run_training(&without_cfg, Algorithm::Baseline)?;

    let argmax_freq = |run: &TrainRun| -> Vec<f64> {
        let mut counts = vec![0usize; n];
        for log in &run.logs {
            let mut best = 0;
            for (slot, row) in log.rows.iter().enumerate() {
                if row.query_loss > log.rows[best].query_loss {
                    best = slot;
                }
            }
            counts[best] += 1;
        }
        let total = run.logs.len().max(1) as f64;
        counts.iter().map(|&c| c as f64 / total).collect()
    };
    let freq_with = argmax_freq(&run_with);
    let freq_without = argmax_freq(&run_without);

    let mut table = String::from("slot,freq_with_outlier,freq_without_outlier\n");
    for slot in 0..n {
        table.push_str(&format!("{slot},{},{}\n", freq_with[slot], freq_without[slot]));
    }
    emitter.write("highest-loss-freq.csv", &table)?;

    let pool = build_pool(&without_cfg)?;
    let test_tasks = pool.eval_tasks(config.eval_task_count)?;
    let steps = config.train.inner_steps;
    let alpha = config.train.alpha;
    let test_with = fast_adapt_eval(&run_with.params, &test_tasks, steps, alpha)?;
    let test_without = fast_adapt_eval(&run_without.params, &test_tasks, steps, alpha)?;
    let acc_with = test_with.overall.mean_accuracy.unwrap_or(f64::NAN);
    let acc_without = test_without.overall.mean_accuracy.unwrap_or(f64::NAN);
    emitter.write(
        "summary.csv",
        &summary_csv(&[
            ("config_hash", config.hash()),
            ("outlier_slot", (n - 1).to_string()),
            ("outlier_slot_freq", freq_with[n - 1].to_string()),
            ("uniform_reference", (1.0 / n as f64).to_string()),
            ("test_acc_with_outlier", acc_with.to_string()),
            ("test_acc_without_outlier", acc_without.to_string()),
        ]),
    )?;
    Ok((test_with.overall.mean_loss, acc_with))
}

/// Grouped loss histograms of the pool under a trained (or initial) model.
fn cmd_histogram(config: &ExperimentConfig, emitter: &mut Emitter) -> Result<(f64, f64), CliError> {
    let (params, _) = load_or_init_model(config)?;
    let pool = build_pool(&config.train)?;
    let pool_tasks = pool.all_tasks()?;
    let report = fast_adapt_eval(&params, &pool_tasks, config.train.inner_steps, config.train.alpha)?;

    let mut keys: Vec<(u64, bool)> = report
        .per_task
        .iter()
        .map(|t| (t.noise_ratio.to_bits(), t.is_outlier))
        .collect();
    keys.sort();
    keys.dedup();
    let groups: Vec<(String, Vec<f64>)> = keys
        .into_iter()
        .map(|(bits, outlier)| {
            let label = format!("noise={}:outlier={}", f64::from_bits(bits), outlier);
            let losses = report
                .per_task
                .iter()
                .filter(|t| t.noise_ratio.to_bits() == bits && t.is_outlier == outlier)
                .map(|t| t.loss)
                .collect();
            (label, losses)
        })
        .collect();
    let histograms = grouped_histograms(&groups)?;
    emitter.write("histograms/pool-losses.csv", &histograms_to_csv(&histograms))?;
    emitter.write(
        "summary.csv",
        &summary_csv(&[
            ("config_hash", config.hash()),
            ("pool_mean_loss", report.overall.mean_loss.to_string()),
            ("groups", groups.len().to_string()),
        ]),
    )?;
    Ok((report.overall.mean_loss, report.overall.mean_accuracy.unwrap_or(f64::NAN)))
}
