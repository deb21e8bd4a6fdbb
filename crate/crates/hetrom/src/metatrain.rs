//! Training engines: inner-loop adaptation, ranked-range meta-updates with
//! tracker subgradient steps, the plain-average warm-up trainer, and the
//! statistic-guided warm-up / identification / distillation pipeline.
//!
//! All engines share one meta-update kernel, so the ranked-range trainer with
//! the full range selected and trackers pinned outside the loss range is
//! bit-identical to the warm-up trainer. Per-task work is reduced in
//! ascending slot order, which keeps runs reproducible.

use crate::evalmetrics::{lognormal_stats, LogNormalStats, LOSS_FLOOR};
use crate::netcore::{
    grad_phi_with, init_params, loss_and_grad_w, mean_loss_with, Architecture, ModelParams,
    NetError, SampleBatch,
};
use crate::rankedrange::{
    lambda_subgradients, selection_coefficients, selection_mask, LossSet, RangeError, RangeSpec,
    RangeTrackers, SelectionMode,
};
use crate::taskgen::{NoiseProfile, Task, TaskFamily, TaskGenError, TaskPool};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error("diverged at iteration {iteration}: {source}")]
    Diverged { iteration: usize, source: NetError },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Range(#[from] RangeError),
    #[error("probe batch of {got} tasks is smaller than k={k}")]
    ProbeTooSmall { got: usize, k: usize },
    #[error("task pool is empty")]
    EmptyPool,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Step-size schedule for the tracker updates. The scaled schedules multiply
/// the base rate by `delta`; the decreasing one reaches zero at the final
/// iteration, the increasing one starts there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSchedule {
    Constant,
    ProseDecreasing,
    FormulaIncreasing,
}

impl GammaSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            GammaSchedule::Constant => "constant",
            GammaSchedule::ProseDecreasing => "prose",
            GammaSchedule::FormulaIncreasing => "formula",
        }
    }
}

/// How the trackers start: from a probe batch's sorted query losses, or
/// pinned to explicit values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackerInit {
    Probe,
    Pinned { lambda: f64, lambda_hat: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Baseline,
    Hetrom,
    SgHetrom,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Hetrom => "hetrom",
            Algorithm::SgHetrom => "sg-hetrom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Algorithm::Baseline),
            "hetrom" => Some(Algorithm::Hetrom),
            "sg-hetrom" => Some(Algorithm::SgHetrom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Warmup,
    Hetrom,
    Distill,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Warmup => "warmup",
            Mode::Hetrom => "hetrom",
            Mode::Distill => "distill",
        }
    }
}

/// All hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub total_iterations: usize,
    pub warmup_iterations: usize,
    pub inner_steps: usize,
    pub batch_size: usize,
    pub pool_size: usize,
    pub k: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma0: f64,
    pub delta: f64,
    pub gamma_schedule: GammaSchedule,
    pub rho1: f64,
    pub rho2: f64,
    pub model_seed: u64,
    pub data_seed: u64,
    pub arch: Architecture,
    pub profile: NoiseProfile,
    pub target_family: TaskFamily,
    pub outlier_family: TaskFamily,
    pub tracker_init: TrackerInit,
}

impl TrainConfig {
    pub fn validate(&self, algorithm: Algorithm) -> Result<(), TrainError> {
        if self.m >= self.k || self.k > self.batch_size {
            return Err(TrainError::InvalidConfig(format!(
                "need 0 <= m < k <= batch size, got k={} m={} N={}",
                self.k, self.m, self.batch_size
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma0", self.gamma0),
            ("delta", self.delta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(TrainError::InvalidConfig(format!(
                    "step size {name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if v.is_nan() || v < 0.0 {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if algorithm == Algorithm::SgHetrom && self.warmup_iterations >= self.total_iterations {
            return Err(TrainError::InvalidConfig(format!(
                "warmup iterations P={} must be below total J={}",
                self.warmup_iterations, self.total_iterations
            )));
        }
        self.profile.validate(self.batch_size)?;
        self.target_family.validate()?;
        self.outlier_family.validate()?;
        Ok(())
    }
}

/// Tracker step size at iteration `j`.
pub fn tracker_stepsize(iteration: usize, config: &TrainConfig) -> f64 {
    let frac = if config.total_iterations > 0 {
        iteration as f64 / config.total_iterations as f64
    } else {
        0.0
    };
    match config.gamma_schedule {
        GammaSchedule::Constant => config.gamma0,
        GammaSchedule::ProseDecreasing => config.delta * config.gamma0 * (1.0 - frac),
        GammaSchedule::FormulaIncreasing => config.delta * config.gamma0 * frac,
    }
}

/// Result of the inner loop: the adapted task parameters and the support-loss
/// trajectory (entry `t` is the loss after `t` steps; length `steps + 1`).
#[derive(Debug, Clone)]
pub struct Adapted {
    pub w: Vec<f64>,
    pub support_losses: Vec<f64>,
}

/// Plain gradient descent on the task block only; `phi` is never touched.
pub fn inner_adapt(
    arch: &Architecture,
    phi: &[f64],
    w0: &[f64],
    support: &SampleBatch,
    steps: usize,
    alpha: f64,
) -> Result<Adapted, NetError> {
    let mut w = w0.to_vec();
    let mut support_losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grad) = loss_and_grad_w(arch, phi, &w, support)?;
        support_losses.push(loss);
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= alpha * gi;
        }
    }
    support_losses.push(mean_loss_with(arch, phi, &w, support)?);
    Ok(Adapted { w, support_losses })
}

/// Trackers from sorted probe losses: `lambda` is the k-th largest,
/// `lambda_hat` the m-th largest. For m = 0 the top-0 threshold is taken as
/// the maximum loss, which keeps the update rule uniform while making top-0
/// exclusion inert in expectation.
pub fn trackers_from_losses(losses: &[f64], k: usize, m: usize) -> Result<RangeTrackers, TrainError> {
    if losses.len() < k {
        return Err(TrainError::ProbeTooSmall {
            got: losses.len(),
            k,
        });
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("losses are finite"));
    let lambda = sorted[k - 1];
    let lambda_hat = if m == 0 { sorted[0] } else { sorted[m - 1] };
    Ok(RangeTrackers { lambda, lambda_hat })
}

/// Adapt to every probe task and read the trackers off the sorted query
/// losses.
pub fn init_lambdas(
    arch: &Architecture,
    phi: &[f64],
    w0: &[f64],
    probe: &[Task],
    k: usize,
    m: usize,
    steps: usize,
    alpha: f64,
) -> Result<RangeTrackers, TrainError> {
    if probe.len() < k {
        return Err(TrainError::ProbeTooSmall { got: probe.len(), k });
    }
    let mut losses = Vec::with_capacity(probe.len());
    for task in probe {
        let adapted = inner_adapt(arch, phi, w0, &task.support, steps, alpha)?;
        losses.push(mean_loss_with(arch, phi, &adapted.w, &task.query)?);
    }
    trackers_from_losses(&losses, k, m)
}

/// Output of the identification pass over the full pool.
#[derive(Debug, Clone)]
pub struct Identification {
    pub lambda_star: f64,
    pub lambda_hat_star: f64,
    pub stats: LogNormalStats,
    /// Floored query losses in pool id order.
    pub pool_losses: Vec<f64>,
}

/// Thresholds from log-loss statistics. An infinite rho disables the
/// corresponding bound.
pub fn thresholds_from_stats(stats: &LogNormalStats, rho1: f64, rho2: f64) -> (f64, f64) {
    let lambda_star = if rho1.is_infinite() {
        0.0
    } else {
        (stats.mean_log - rho1 * stats.std_log).exp()
    };
    let lambda_hat_star = if rho2.is_infinite() {
        f64::INFINITY
    } else {
        (stats.mean_log + rho2 * stats.std_log).exp()
    };
    (lambda_star, lambda_hat_star)
}

/// Fast-adapt to every pool task, fit the log-loss statistics and derive the
/// distillation thresholds.
pub fn identify_thresholds(
    arch: &Architecture,
    phi: &[f64],
    w0: &[f64],
    tasks: &[Task],
    steps: usize,
    alpha: f64,
    rho1: f64,
    rho2: f64,
) -> Result<Identification, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    let mut losses = Vec::with_capacity(tasks.len());
    for task in tasks {
        let adapted = inner_adapt(arch, phi, w0, &task.support, steps, alpha)?;
        let loss = mean_loss_with(arch, phi, &adapted.w, &task.query)?;
        losses.push(loss.max(LOSS_FLOOR));
    }
    let stats = lognormal_stats(&losses).expect("nonempty");
    let (lambda_star, lambda_hat_star) = thresholds_from_stats(&stats, rho1, rho2);
    Ok(Identification {
        lambda_star,
        lambda_hat_star,
        stats,
        pool_losses: losses,
    })
}

/// One row of the per-iteration log, one per task slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub slot: usize,
    pub task_id: usize,
    pub noise_ratio: f64,
    pub is_outlier: bool,
    pub query_loss: f64,
    pub coeff: f64,
    pub selected: bool,
}

/// Per-iteration record. Tracker columns hold the values the meta step
/// consumed: the pre-update trackers in ranked-range mode, the fixed
/// thresholds in distillation, NaN during warm-up.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub mode: Mode,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub rows: Vec<TaskRow>,
    pub meta_grad_norm: f64,
    pub empty_selection: bool,
}

/// Comma-separated dump of a log stream, one row per (iteration, slot).
pub fn logs_to_csv(logs: &[IterationLog]) -> String {
    let mut out = String::from(
        "iter,slot,task_id,noise_ratio,is_outlier,query_loss,lambda,lambda_hat,coeff,selected\n",
    );
    for log in logs {
        for row in &log.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                log.iteration,
                row.slot,
                row.task_id,
                row.noise_ratio,
                row.is_outlier,
                row.query_loss,
                log.lambda,
                log.lambda_hat,
                row.coeff,
                row.selected
            ));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub phi: Vec<f64>,
    pub w0: Vec<f64>,
    pub trackers: Option<RangeTrackers>,
    pub iteration: usize,
    pub mode: Mode,
    pub thresholds: Option<(f64, f64)>,
}

/// Accumulate the coefficient-weighted sum of per-task gradients in slot
/// order, then apply `phi -= (beta / denom) * sum`. Returns the norm of the
/// mean meta-gradient. All trainers share this kernel.
fn apply_meta_update(
    phi: &mut [f64],
    grads: &[Vec<f64>],
    coeffs: &[f64],
    beta: f64,
    denom: f64,
) -> f64 {
    let mut acc = vec![0.0; phi.len()];
    for (grad, &c) in grads.iter().zip(coeffs) {
        for (a, g) in acc.iter_mut().zip(grad) {
            *a += c * g;
        }
    }
    let scale = beta / denom;
    let mut norm_sq = 0.0;
    for (p, a) in phi.iter_mut().zip(&acc) {
        let hg = *a / denom;
        norm_sq += hg * hg;
        *p -= scale * *a;
    }
    norm_sq.sqrt()
}

pub struct Trainer {
    config: TrainConfig,
    algorithm: Algorithm,
    pool: TaskPool,
    state: TrainerState,
    identification: Option<Identification>,
}

impl Trainer {
    pub fn new(config: TrainConfig, algorithm: Algorithm) -> Result<Self, TrainError> {
        config.validate(algorithm)?;
        let pool = TaskPool::build(
            config.profile.clone(),
            config.target_family.clone(),
            config.outlier_family.clone(),
            config.pool_size,
            config.batch_size,
            config.data_seed,
        )?;
        let params = init_params(&config.arch, config.model_seed);
        let (mode, trackers) = match algorithm {
            Algorithm::Baseline => (Mode::Warmup, None),
            Algorithm::SgHetrom => (Mode::Warmup, None),
            Algorithm::Hetrom => {
                let trackers = match config.tracker_init {
                    TrackerInit::Pinned { lambda, lambda_hat } => {
                        RangeTrackers { lambda, lambda_hat }
                    }
                    TrackerInit::Probe => init_lambdas(
                        &config.arch,
                        &params.phi,
                        &params.w,
                        &pool.probe_batch()?,
                        config.k,
                        config.m,
                        config.inner_steps,
                        config.alpha,
                    )?,
                };
                (Mode::Hetrom, Some(trackers))
            }
        };
        Ok(Self {
            state: TrainerState {
                phi: params.phi,
                w0: params.w,
                trackers,
                iteration: 0,
                mode,
                thresholds: None,
            },
            config,
            algorithm,
            pool,
            identification: None,
        })
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn pool(&self) -> &TaskPool {
        &self.pool
    }

    pub fn identification(&self) -> Option<&Identification> {
        self.identification.as_ref()
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            phi: self.state.phi.clone(),
            w: self.state.w0.clone(),
            arch: self.config.arch.clone(),
        }
    }

    fn divergence(&self, e: NetError) -> TrainError {
        match e {
            NetError::NonFinite(_) => TrainError::Diverged {
                iteration: self.state.iteration,
                source: e,
            },
            other => TrainError::Net(other),
        }
    }

    /// Inner-adapt every task of the batch and evaluate query losses and
    /// first-order meta-gradients at the adapted parameters.
    fn adapt_batch(&self, batch: &[Task]) -> Result<(Vec<f64>, Vec<Vec<f64>>), TrainError> {
        let arch = &self.config.arch;
        let mut losses = Vec::with_capacity(batch.len());
        let mut grads = Vec::with_capacity(batch.len());
        for task in batch {
            let adapted = inner_adapt(
                arch,
                &self.state.phi,
                &self.state.w0,
                &task.support,
                self.config.inner_steps,
                self.config.alpha,
            )
            .map_err(|e| self.divergence(e))?;
            let loss = mean_loss_with(arch, &self.state.phi, &adapted.w, &task.query)
                .map_err(|e| self.divergence(e))?;
            let grad = grad_phi_with(arch, &self.state.phi, &adapted.w, &task.query)
                .map_err(|e| self.divergence(e))?;
            losses.push(loss);
            grads.push(grad);
        }
        Ok((losses, grads))
    }

    fn make_rows(batch: &[Task], losses: &[f64], coeffs: &[f64]) -> Vec<TaskRow> {
        batch
            .iter()
            .enumerate()
            .map(|(slot, task)| TaskRow {
                slot,
                task_id: task.task_id,
                noise_ratio: task.noise_ratio,
                is_outlier: task.is_outlier,
                query_loss: losses[slot],
                coeff: coeffs[slot],
                selected: coeffs[slot] != 0.0,
            })
            .collect()
    }

    /// Advance one iteration and return its log.
    pub fn step(&mut self) -> Result<IterationLog, TrainError> {
        let j = self.state.iteration;
        let batch = self.pool.batch(j as u64)?;
        let log = match self.state.mode {
            Mode::Warmup => self.warmup_step(j, &batch)?,
            Mode::Hetrom => self.hetrom_step(j, &batch)?,
            Mode::Distill => self.distill_step(j, &batch)?,
        };
        self.state.iteration = j + 1;
        if self.algorithm == Algorithm::SgHetrom
            && self.state.mode == Mode::Warmup
            && self.state.iteration == self.config.warmup_iterations
        {
            self.run_identification()?;
        }
        Ok(log)
    }

    /// Plain averaged first-order meta-update; trackers untouched.
    fn warmup_step(&mut self, j: usize, batch: &[Task]) -> Result<IterationLog, TrainError> {
        let (losses, grads) = self.adapt_batch(batch)?;
        let coeffs = vec![1.0; batch.len()];
        let norm = apply_meta_update(
            &mut self.state.phi,
            &grads,
            &coeffs,
            self.config.beta,
            batch.len() as f64,
        );
        Ok(IterationLog {
            iteration: j,
            mode: Mode::Warmup,
            lambda: f64::NAN,
            lambda_hat: f64::NAN,
            rows: Self::make_rows(batch, &losses, &coeffs),
            meta_grad_norm: norm,
            empty_selection: false,
        })
    }

    /// Ranked-range step: subgradient moves on the trackers plus the
    /// coefficient-gated meta-update. Both consume the iteration-j trackers;
    /// lambda descends its objective while lambda_hat ascends.
    fn hetrom_step(&mut self, j: usize, batch: &[Task]) -> Result<IterationLog, TrainError> {
        let (losses, grads) = self.adapt_batch(batch)?;
        let loss_set = LossSet::new(losses.clone())?;
        let spec = RangeSpec::new(self.config.k, self.config.m, batch.len())?;
        let trackers = self.state.trackers.expect("ranked-range mode has trackers");
        let coeffs = selection_coefficients(&loss_set, &trackers);

        let gamma = tracker_stepsize(j, &self.config);
        let km = (self.config.k - self.config.m) as f64;
        let (g_lambda, g_lambda_hat) = lambda_subgradients(&loss_set, &spec, &trackers)?;
        self.state.trackers = Some(RangeTrackers {
            lambda: trackers.lambda - gamma / km * g_lambda,
            lambda_hat: trackers.lambda_hat + gamma / km * g_lambda_hat,
        });

        let norm = apply_meta_update(&mut self.state.phi, &grads, &coeffs, self.config.beta, km);
        Ok(IterationLog {
            iteration: j,
            mode: Mode::Hetrom,
            lambda: trackers.lambda,
            lambda_hat: trackers.lambda_hat,
            rows: Self::make_rows(batch, &losses, &coeffs),
            meta_grad_norm: norm,
            empty_selection: false,
        })
    }

    /// Threshold-gated meta-update over the closed interval
    /// `[lambda_star, lambda_hat_star]`. An empty selection skips the update.
    fn distill_step(&mut self, j: usize, batch: &[Task]) -> Result<IterationLog, TrainError> {
        let (lambda_star, lambda_hat_star) =
            self.state.thresholds.expect("distill mode has thresholds");
        let (losses, grads) = self.adapt_batch(batch)?;
        let loss_set = LossSet::new(losses.clone())?;
        let mask = selection_mask(
            &loss_set,
            &RangeTrackers {
                lambda: lambda_star,
                lambda_hat: lambda_hat_star,
            },
            SelectionMode::Threshold,
        );
        let selected = mask.count();
        let coeffs: Vec<f64> = mask
            .selected
            .iter()
            .map(|&s| if s { 1.0 } else { 0.0 })
            .collect();
        let norm = if selected == 0 {
            0.0
        } else {
            apply_meta_update(
                &mut self.state.phi,
                &grads,
                &coeffs,
                self.config.beta,
                selected as f64,
            )
        };
        Ok(IterationLog {
            iteration: j,
            mode: Mode::Distill,
            lambda: lambda_star,
            lambda_hat: lambda_hat_star,
            rows: Self::make_rows(batch, &losses, &coeffs),
            meta_grad_norm: norm,
            empty_selection: selected == 0,
        })
    }

    fn run_identification(&mut self) -> Result<(), TrainError> {
        let tasks = self.pool.all_tasks()?;
        let identification = identify_thresholds(
            &self.config.arch,
            &self.state.phi,
            &self.state.w0,
            &tasks,
            self.config.inner_steps,
            self.config.alpha,
            self.config.rho1,
            self.config.rho2,
        )?;
        self.state.thresholds = Some((
            identification.lambda_star,
            identification.lambda_hat_star,
        ));
        self.state.mode = Mode::Distill;
        self.identification = Some(identification);
        Ok(())
    }
}

/// A completed run: final parameters, the full log stream, the pool manifest
/// and whatever the algorithm produced along the way.
pub struct TrainRun {
    pub params: ModelParams,
    pub logs: Vec<IterationLog>,
    pub manifest: String,
    pub trackers: Option<RangeTrackers>,
    pub thresholds: Option<(f64, f64)>,
    pub identification: Option<Identification>,
}

/// Drive a trainer for the configured number of iterations.
pub fn run_training(config: &TrainConfig, algorithm: Algorithm) -> Result<TrainRun, TrainError> {
    let mut trainer = Trainer::new(config.clone(), algorithm)?;
    let mut logs = Vec::with_capacity(config.total_iterations);
    for _ in 0..config.total_iterations {
        logs.push(trainer.step()?);
    }
    Ok(TrainRun {
        params: trainer.params(),
        manifest: trainer.pool.manifest(),
        trackers: trainer.state.trackers,
        thresholds: trainer.state.thresholds,
        identification: trainer.identification,
        logs,
    })
}

const CHECKPOINT_MAGIC: &str = "hetrom-checkpoint v1";

/// Bit-exact text dump of the trainer state.
pub fn write_checkpoint(
    arch: &Architecture,
    state: &TrainerState,
) -> String {
    use crate::netcore::{Activation, Head};
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str(&format!("mode {}\n", state.mode.as_str()));
    out.push_str(&format!("iteration {}\n", state.iteration));
    out.push_str(&format!("input_dim {}\n", arch.input_dim));
    let dims: Vec<String> = arch.hidden_dims.iter().map(|d| d.to_string()).collect();
    out.push_str(&format!("hidden_dims {}\n", dims.join(",")));
    out.push_str(&format!("output_dim {}\n", arch.output_dim));
    out.push_str(&format!(
        "activation {}\n",
        match arch.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    ));
    out.push_str(&format!(
        "head {}\n",
        match arch.head {
            Head::Regression => "regression",
            Head::SoftmaxClassification => "classification",
        }
    ));
    if let Some(t) = state.trackers {
        out.push_str(&format!(
            "trackers {:016x} {:016x}\n",
            t.lambda.to_bits(),
            t.lambda_hat.to_bits()
        ));
    }
    if let Some((l, lh)) = state.thresholds {
        out.push_str(&format!(
            "thresholds {:016x} {:016x}\n",
            l.to_bits(),
            lh.to_bits()
        ));
    }
    let hex = |v: &[f64]| -> String {
        v.iter()
            .map(|x| format!("{:016x}", x.to_bits()))
            .collect::<Vec<_>>()
            .join(" ")
    };
    out.push_str(&format!("phi {}\n", hex(&state.phi)));
    out.push_str(&format!("w0 {}\n", hex(&state.w0)));
    out
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub mode: Mode,
    pub iteration: usize,
    pub arch: Architecture,
    pub phi: Vec<f64>,
    pub w0: Vec<f64>,
    pub trackers: Option<RangeTrackers>,
    pub thresholds: Option<(f64, f64)>,
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint, TrainError> {
    use crate::netcore::{Activation, Head};
    let bad = |msg: &str| TrainError::Checkpoint(msg.to_string());
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing or unsupported magic line"));
    }
    let mut mode = None;
    let mut iteration = None;
    let mut input_dim = None;
    let mut hidden_dims: Option<Vec<usize>> = None;
    let mut output_dim = None;
    let mut activation = None;
    let mut head = None;
    let mut trackers = None;
    let mut thresholds = None;
    let mut phi: Option<Vec<f64>> = None;
    let mut w0: Option<Vec<f64>> = None;

    let parse_hex_list = |rest: &str| -> Result<Vec<f64>, TrainError> {
        rest.split_whitespace()
            .map(|tok| {
                u64::from_str_radix(tok, 16)
                    .map(f64::from_bits)
                    .map_err(|_| bad("bad hex float"))
            })
            .collect()
    };

    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "mode" => {
                mode = Some(match rest {
                    "warmup" => Mode::Warmup,
                    "hetrom" => Mode::Hetrom,
                    "distill" => Mode::Distill,
                    _ => return Err(bad("unknown mode")),
                })
            }
            "iteration" => iteration = Some(rest.parse().map_err(|_| bad("bad iteration"))?),
            "input_dim" => input_dim = Some(rest.parse().map_err(|_| bad("bad input_dim"))?),
            "hidden_dims" => {
                hidden_dims = Some(
                    rest.split(',')
                        .map(|d| d.trim().parse().map_err(|_| bad("bad hidden dim")))
                        .collect::<Result<_, _>>()?,
                )
            }
            "output_dim" => output_dim = Some(rest.parse().map_err(|_| bad("bad output_dim"))?),
            "activation" => {
                activation = Some(match rest {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    _ => return Err(bad("unknown activation")),
                })
            }
            "head" => {
                head = Some(match rest {
                    "regression" => Head::Regression,
                    "classification" => Head::SoftmaxClassification,
                    _ => return Err(bad("unknown head")),
                })
            }
            "trackers" => {
                let v = parse_hex_list(rest)?;
                if v.len() != 2 {
                    return Err(bad("trackers line needs two values"));
                }
                trackers = Some(RangeTrackers {
                    lambda: v[0],
                    lambda_hat: v[1],
                });
            }
            "thresholds" => {
                let v = parse_hex_list(rest)?;
                if v.len() != 2 {
                    return Err(bad("thresholds line needs two values"));
                }
                thresholds = Some((v[0], v[1]));
            }
            "phi" => phi = Some(parse_hex_list(rest)?),
            "w0" => w0 = Some(parse_hex_list(rest)?),
            _ => return Err(TrainError::Checkpoint(format!("unknown key {key}"))),
        }
    }

    let arch = Architecture::new(
        input_dim.ok_or_else(|| bad("missing input_dim"))?,
        hidden_dims.ok_or_else(|| bad("missing hidden_dims"))?,
        output_dim.ok_or_else(|| bad("missing output_dim"))?,
        activation.ok_or_else(|| bad("missing activation"))?,
        head.ok_or_else(|| bad("missing head"))?,
    )?;
    let phi = phi.ok_or_else(|| bad("missing phi"))?;
    let w0 = w0.ok_or_else(|| bad("missing w0"))?;
    if phi.len() != arch.phi_len() || w0.len() != arch.w_len() {
        return Err(bad("parameter lengths do not match the architecture"));
    }
    Ok(Checkpoint {
        mode: mode.ok_or_else(|| bad("missing mode"))?,
        iteration: iteration.ok_or_else(|| bad("missing iteration"))?,
        arch,
        phi,
        w0,
        trackers,
        thresholds,
    })
}
