//! Evaluation and analysis over trained models and training logs:
//! fast-adaptation reports grouped by task provenance, log-loss summary
//! statistics, exclusion-frequency tables, rank-based separation scores and
//! histogram data for external plotting.

use crate::metatrain::{inner_adapt, IterationLog, Mode};
use crate::netcore::{mean_loss_with, predict, Architecture, Head, ModelParams};
use crate::taskgen::Task;
use thiserror::Error;

/// Losses are floored here before any logarithm; easy synthetic tasks can
/// reach exactly zero query loss.
pub const LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("task list is empty")]
    EmptyTasks,
    #[error("loss group is empty")]
    EmptyGroup,
    #[error("no ranked-range rows with tracker values in the logs")]
    NoTrackedRows,
    #[error("histogram needs at least one value and one bin")]
    EmptyHistogram,
    #[error("evaluation failed: {0}")]
    Model(String),
}

/// Mean and population standard deviation of log losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalStats {
    pub mean_log: f64,
    pub std_log: f64,
    pub count: usize,
}

/// Fit the log-loss descriptor. Values are floored at `LOSS_FLOOR` first.
pub fn lognormal_stats(losses: &[f64]) -> Result<LogNormalStats, EvalError> {
    if losses.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let logs: Vec<f64> = losses.iter().map(|&l| l.max(LOSS_FLOOR).ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(LogNormalStats {
        mean_log: mean,
        std_log: var.sqrt(),
        count: logs.len(),
    })
}

/// One evaluated task.
#[derive(Debug, Clone)]
pub struct TaskEval {
    pub task_id: usize,
    pub noise_ratio: f64,
    pub is_outlier: bool,
    pub loss: f64,
    /// Fraction of query points whose argmax matches the label; None for
    /// regression tasks.
    pub accuracy: Option<f64>,
}

/// Aggregate over one (noise_ratio, is_outlier) group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub noise_ratio: f64,
    pub is_outlier: bool,
    pub count: usize,
    pub mean_loss: f64,
    pub mean_accuracy: Option<f64>,
    /// 95% normal-approximation half-width over per-task accuracies
    /// (classification) or losses (regression).
    pub ci_half_width: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_task: Vec<TaskEval>,
    pub groups: Vec<GroupReport>,
    pub overall: GroupReport,
}

fn group_stats(noise_ratio: f64, is_outlier: bool, tasks: &[&TaskEval]) -> GroupReport {
    let n = tasks.len() as f64;
    let mean_loss = tasks.iter().map(|t| t.loss).sum::<f64>() / n;
    let accs: Vec<f64> = tasks.iter().filter_map(|t| t.accuracy).collect();
    let mean_accuracy = if accs.is_empty() {
        None
    } else {
        Some(accs.iter().sum::<f64>() / accs.len() as f64)
    };
    // the CI tracks whichever metric is reported
    let values: Vec<f64> = if accs.is_empty() {
        tasks.iter().map(|t| t.loss).collect()
    } else {
        accs
    };
    let ci_half_width = if values.len() < 2 {
        0.0
    } else {
        let m = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|&v| (v - m) * (v - m)).sum::<f64>()
            / (values.len() - 1) as f64;
        1.96 * (var / values.len() as f64).sqrt()
    };
    GroupReport {
        noise_ratio,
        is_outlier,
        count: tasks.len(),
        mean_loss,
        mean_accuracy,
        ci_half_width,
    }
}

/// Inner-adapt each task from the given initialization and report query loss
/// (and accuracy for classification), grouped by noise ratio and outlier
/// flag.
pub fn fast_adapt_eval(
    params: &ModelParams,
    tasks: &[Task],
    steps: usize,
    alpha: f64,
) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyTasks);
    }
    let arch: &Architecture = &params.arch;
    let mut per_task = Vec::with_capacity(tasks.len());
    for task in tasks {
        let adapted = inner_adapt(arch, &params.phi, &params.w, &task.support, steps, alpha)
            .map_err(|e| EvalError::Model(e.to_string()))?;
        let loss = mean_loss_with(arch, &params.phi, &adapted.w, &task.query)
            .map_err(|e| EvalError::Model(e.to_string()))?;
        let accuracy = match arch.head {
            Head::Regression => None,
            Head::SoftmaxClassification => {
                let adapted_params = ModelParams {
                    phi: params.phi.clone(),
                    w: adapted.w.clone(),
                    arch: arch.clone(),
                };
                let outputs = predict(&adapted_params, &task.query)
                    .map_err(|e| EvalError::Model(e.to_string()))?;
                let labels = task.query.labels().expect("classification task");
                let c = arch.output_dim;
                let mut correct = 0usize;
                for (s, &label) in labels.iter().enumerate() {
                    let row = &outputs[s * c..(s + 1) * c];
                    let mut best = 0;
                    for j in 1..c {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    correct += usize::from(best == label);
                }
                Some(correct as f64 / labels.len() as f64)
            }
        };
        per_task.push(TaskEval {
            task_id: task.task_id,
            noise_ratio: task.noise_ratio,
            is_outlier: task.is_outlier,
            loss,
            accuracy,
        });
    }

    // group by (noise_ratio, is_outlier), deterministic order
    let mut keys: Vec<(u64, bool)> = per_task
        .iter()
        .map(|t| (t.noise_ratio.to_bits(), t.is_outlier))
        .collect();
    keys.sort();
    keys.dedup();
    let groups = keys
        .iter()
        .map(|&(bits, outlier)| {
            let members: Vec<&TaskEval> = per_task
                .iter()
                .filter(|t| t.noise_ratio.to_bits() == bits && t.is_outlier == outlier)
                .collect();
            group_stats(f64::from_bits(bits), outlier, &members)
        })
        .collect();
    let all: Vec<&TaskEval> = per_task.iter().collect();
    let overall = group_stats(f64::NAN, false, &all);
    Ok(EvalReport {
        per_task,
        groups,
        overall,
    })
}

/// Exclusion frequencies for one noise-ratio group.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionRow {
    pub noise_ratio: f64,
    pub rows: usize,
    /// Fraction of (iteration, slot) pairs with loss above the top-m tracker.
    pub excluded_above: f64,
    /// Fraction with loss at or below the top-k tracker.
    pub excluded_below: f64,
}

/// Per-noise-ratio exclusion frequencies over the ranked-range rows of a log
/// stream. Rows without tracker values (warm-up, distillation) are ignored;
/// having none at all is an error.
pub fn exclusion_stats(logs: &[IterationLog]) -> Result<Vec<ExclusionRow>, EvalError> {
    let mut counts: Vec<(u64, usize, usize, usize)> = Vec::new(); // (ratio bits, rows, above, below)
    let mut tracked_rows = 0usize;
    for log in logs {
        if log.mode != Mode::Hetrom || !log.lambda.is_finite() || !log.lambda_hat.is_finite() {
            continue;
        }
        for row in &log.rows {
            tracked_rows += 1;
            let bits = row.noise_ratio.to_bits();
            let entry = match counts.iter_mut().find(|(b, _, _, _)| *b == bits) {
                Some(e) => e,
                None => {
                    counts.push((bits, 0, 0, 0));
                    counts.last_mut().unwrap()
                }
            };
            entry.1 += 1;
            entry.2 += usize::from(row.query_loss > log.lambda_hat);
            entry.3 += usize::from(row.query_loss <= log.lambda);
        }
    }
    if tracked_rows == 0 {
        return Err(EvalError::NoTrackedRows);
    }
    counts.sort_by_key(|&(bits, _, _, _)| bits);
    Ok(counts
        .into_iter()
        .map(|(bits, rows, above, below)| ExclusionRow {
            noise_ratio: f64::from_bits(bits),
            rows,
            excluded_above: above as f64 / rows as f64,
            excluded_below: below as f64 / rows as f64,
        })
        .collect())
}

/// Probability that a uniformly drawn corrupted loss exceeds a uniformly
/// drawn clean loss; ties count one half. 0.5 means the distributions are
/// indistinguishable by rank, 1.0 means complete separation.
pub fn separation_score(clean: &[f64], corrupted: &[f64]) -> Result<f64, EvalError> {
    if clean.is_empty() || corrupted.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut score = 0.0;
    for &c in corrupted {
        for &x in clean {
            if c > x {
                score += 1.0;
            } else if c == x {
                score += 0.5;
            }
        }
    }
    Ok(score / (clean.len() * corrupted.len()) as f64)
}

/// Equal-width histogram. Counts always sum to the sample count; values at
/// the top edge land in the last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub group: String,
}

pub const DEFAULT_BINS: usize = 30;

pub fn histogram_with_range(
    values: &[f64],
    bins: usize,
    range: (f64, f64),
    group: &str,
) -> Result<Histogram, EvalError> {
    if values.is_empty() || bins == 0 {
        return Err(EvalError::EmptyHistogram);
    }
    let (lo, hi) = range;
    // keep edges strictly increasing even for a degenerate range
    let span = if hi > lo { hi - lo } else { 1e-9 };
    let width = span / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = ((v - lo) / width).floor();
        let idx = (idx.max(0.0) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        group: group.to_string(),
    })
}

/// Histogram over the values' own min/max range and the default bin count.
pub fn histogram(values: &[f64], group: &str) -> Result<Histogram, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyHistogram);
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    histogram_with_range(values, DEFAULT_BINS, (lo, hi), group)
}

/// CSV rows `bin_left,bin_right,count,group` for any plotting tool.
pub fn histograms_to_csv(histograms: &[Histogram]) -> String {
    let mut out = String::from("bin_left,bin_right,count,group\n");
    for h in histograms {
        for (i, &count) in h.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                h.edges[i],
                h.edges[i + 1],
                count,
                h.group
            ));
        }
    }
    out
}

/// CSV rows `group,count,mean_loss,mean_acc,ci_half_width`. The group label
/// encodes the grouping keys without embedded commas.
pub fn report_to_csv(prefix: &str, report: &EvalReport) -> String {
    let mut out = String::new();
    let fmt_group = |g: &GroupReport| -> String {
        let label = if g.noise_ratio.is_nan() {
            format!("{prefix}:all")
        } else {
            format!("{prefix}:noise={}:outlier={}", g.noise_ratio, g.is_outlier)
        };
        format!(
            "{},{},{},{},{}\n",
            label,
            g.count,
            g.mean_loss,
            g.mean_accuracy.unwrap_or(f64::NAN),
            g.ci_half_width
        )
    };
    out.push_str(&fmt_group(&report.overall));
    for g in &report.groups {
        out.push_str(&fmt_group(g));
    }
    out
}

pub fn report_csv_header() -> &'static str {
    "group,count,mean_loss,mean_acc,ci_half_width\n"
}
