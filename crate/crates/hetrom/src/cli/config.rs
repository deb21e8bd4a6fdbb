//! Flat key=value experiment configs.
//!
//! Lines hold `key = value` pairs; `#` starts a comment; nesting is spelled
//! with dotted keys (`profile.mode = fixed`). Unknown keys are rejected, and
//! every omitted key falls back to a documented default, so an empty file is
//! a valid configuration.

use crate::metatrain::{Algorithm, GammaSchedule, TrackerInit, TrainConfig};
use crate::netcore::{Activation, Architecture, Head};
use crate::taskgen::{
    ClassificationFamily, NoiseMode, NoiseProfile, RegressionFamily, TaskFamily,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: malformed line (expected `key = value`): {text}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    DuplicateKey {
        line: usize,
        key: String,
        first: usize,
    },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Invariant { line: usize, message: String },
}

/// Every accepted key with its default value. `iterations` is the total
/// iteration count J; `warmup_iterations` is the warm-up length P of the
/// statistic-guided algorithm. For the regression family `family.shots` and
/// `family.query` are the support and query sizes.
const KNOWN_KEYS: &[(&str, &str)] = &[
    ("algorithm", "hetrom"),
    ("iterations", "2000"),
    ("warmup_iterations", "500"),
    ("inner_steps", "10"),
    ("batch_size", "16"),
    ("pool_size", "64"),
    ("k", "12"),
    ("m", "2"),
    ("alpha", "0.05"),
    ("beta", "0.002"),
    ("gamma0", "0.002"),
    ("delta", "1"),
    ("gamma_schedule", "prose"),
    ("rho1", "2"),
    ("rho2", "2"),
    ("model_seed", "1"),
    ("data_seed", "2"),
    ("eval_tasks", "100"),
    ("checkpoint", ""),
    ("arch.hidden_dims", "8,8"),
    ("arch.activation", "default"),
    ("family.kind", "gaussian-classification"),
    ("family.ways", "5"),
    ("family.shots", "5"),
    ("family.query", "15"),
    ("family.input_dim", "2"),
    ("family.center_spread", "3"),
    ("family.within_sigma", "0.5"),
    ("family.outlier_offset", "15"),
    ("family.amp_min", "0.1"),
    ("family.amp_max", "5"),
    ("family.phase_min", "0"),
    ("family.phase_max", "3.141592653589793"),
    ("family.input_min", "-5"),
    ("family.input_max", "5"),
    ("family.target_sigma", "0"),
    ("profile.mode", "clean"),
    ("profile.outlier_ratio", "0"),
    ("profile.fixed_schedule", ""),
    ("profile.two_step_p", "0.8"),
    ("tracker.init", "probe"),
    ("tracker.pin_lambda", "-1e18"),
    ("tracker.pin_lambda_hat", "1e18"),
    ("sweep.k", ""),
    ("sweep.m", ""),
    ("sweep.rho1", ""),
    ("sweep.rho2", ""),
];

/// A fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub algorithm: Algorithm,
    pub eval_task_count: usize,
    pub checkpoint: Option<PathBuf>,
    pub sweep_k: Vec<usize>,
    pub sweep_m: Vec<usize>,
    pub sweep_rho1: Vec<f64>,
    pub sweep_rho2: Vec<f64>,
    /// Effective key=value map (defaults plus overrides), sorted by key.
    canonical: BTreeMap<String, String>,
}

struct Raw {
    values: BTreeMap<String, String>,
    lines: BTreeMap<String, usize>,
}

impl Raw {
    fn line_of(&self, key: &str) -> usize {
        self.lines.get(key).copied().unwrap_or(0)
    }

    fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("all known keys are defaulted")
    }

    fn bad(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            line: self.line_of(key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn invariant(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invariant {
            line: self.line_of(key),
            message: message.into(),
        }
    }

    fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get(key)
            .parse()
            .map_err(|_| self.bad(key, "expected a nonnegative integer"))
    }

    fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.get(key)
            .parse()
            .map_err(|_| self.bad(key, "expected a nonnegative integer"))
    }

    fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let text = self.get(key);
        match text {
            "inf" | "infinity" => Ok(f64::INFINITY),
            _ => text
                .parse()
                .map_err(|_| self.bad(key, "expected a number")),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let text = self.get(key);
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(',')
            .map(|tok| {
                tok.trim()
                    .parse()
                    .map_err(|_| self.bad(key, format!("`{tok}` is not a number")))
            })
            .collect()
    }

    fn usize_list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        let text = self.get(key);
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(',')
            .map(|tok| {
                tok.trim()
                    .parse()
                    .map_err(|_| self.bad(key, format!("`{tok}` is not an integer")))
            })
            .collect()
    }
}

/// Parse a config file from disk.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config_str(&text)
}

/// Parse config text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = Raw {
        values: KNOWN_KEYS
            .iter()
            .map(|&(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        lines: BTreeMap::new(),
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line: line_no,
            text: stripped.to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.iter().any(|&(k, _)| k == key) {
            return Err(ConfigError::UnknownKey {
                line: line_no,
                key: key.to_string(),
            });
        }
        if let Some(&first) = raw.lines.get(key) {
            return Err(ConfigError::DuplicateKey {
                line: line_no,
                key: key.to_string(),
                first,
            });
        }
        raw.lines.insert(key.to_string(), line_no);
        raw.values.insert(key.to_string(), value.to_string());
    }

    finalize(raw)
}

fn finalize(raw: Raw) -> Result<ExperimentConfig, ConfigError> {
    let algorithm = Algorithm::parse(raw.get("algorithm"))
        .ok_or_else(|| raw.bad("algorithm", "expected baseline, hetrom or sg-hetrom"))?;

    let total_iterations = raw.usize("iterations")?;
    let warmup_iterations = raw.usize("warmup_iterations")?;
    let inner_steps = raw.usize("inner_steps")?;
    let batch_size = raw.usize("batch_size")?;
    let pool_size = raw.usize("pool_size")?;
    let k = raw.usize("k")?;
    let m = raw.usize("m")?;

    if batch_size == 0 {
        return Err(raw.invariant("batch_size", "batch size must be >= 1"));
    }
    if m >= k || k > batch_size {
        let key = if raw.line_of("m") > 0 { "m" } else { "k" };
        return Err(raw.invariant(
            key,
            format!("need 0 <= m < k <= batch size, got k={k} m={m} batch_size={batch_size}"),
        ));
    }
    if pool_size < batch_size {
        return Err(raw.invariant(
            "pool_size",
            format!("pool size {pool_size} must be at least the batch size {batch_size}"),
        ));
    }
    if algorithm == Algorithm::SgHetrom && warmup_iterations >= total_iterations {
        return Err(raw.invariant(
            "warmup_iterations",
            format!(
                "warmup iterations {warmup_iterations} must be below total iterations {total_iterations}"
            ),
        ));
    }

    let alpha = raw.f64("alpha")?;
    let beta = raw.f64("beta")?;
    let gamma0 = raw.f64("gamma0")?;
    let delta = raw.f64("delta")?;
    for (key, v) in [("alpha", alpha), ("beta", beta), ("gamma0", gamma0), ("delta", delta)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(raw.invariant(key, format!("{key} must be positive and finite")));
        }
    }
    let rho1 = raw.f64("rho1")?;
    let rho2 = raw.f64("rho2")?;
    for (key, v) in [("rho1", rho1), ("rho2", rho2)] {
        if v.is_nan() || v < 0.0 {
            return Err(raw.invariant(key, format!("{key} must be >= 0")));
        }
    }

    let gamma_schedule = match raw.get("gamma_schedule") {
        "constant" => GammaSchedule::Constant,
        "prose" => GammaSchedule::ProseDecreasing,
        "formula" => GammaSchedule::FormulaIncreasing,
        _ => return Err(raw.bad("gamma_schedule", "expected constant, prose or formula")),
    };

    let family_kind = raw.get("family.kind");
    let (target_family, head, default_activation) = match family_kind {
        "gaussian-classification" => {
            let ways = raw.usize("family.ways")?;
            if ways < 2 {
                return Err(raw.invariant("family.ways", "ways must be >= 2"));
            }
            let family = TaskFamily::Gaussian(ClassificationFamily {
                ways,
                shots: raw.usize("family.shots")?,
                query_shots: raw.usize("family.query")?,
                input_dim: raw.usize("family.input_dim")?,
                center_spread: raw.f64("family.center_spread")?,
                within_sigma: raw.f64("family.within_sigma")?,
                center_offset: 0.0,
            });
            (family, Head::SoftmaxClassification, Activation::Relu)
        }
        "sinusoid-regression" => {
            let family = TaskFamily::Sinusoid(RegressionFamily {
                amplitude_range: (raw.f64("family.amp_min")?, raw.f64("family.amp_max")?),
                phase_range: (raw.f64("family.phase_min")?, raw.f64("family.phase_max")?),
                input_range: (raw.f64("family.input_min")?, raw.f64("family.input_max")?),
                target_noise_sigma: raw.f64("family.target_sigma")?,
                support_size: raw.usize("family.shots")?,
                query_size: raw.usize("family.query")?,
            });
            (family, Head::Regression, Activation::Tanh)
        }
        _ => {
            return Err(raw.bad(
                "family.kind",
                "expected gaussian-classification or sinusoid-regression",
            ))
        }
    };
    target_family
        .validate()
        .map_err(|e| raw.invariant("family.kind", e.to_string()))?;
    let outlier_offset = raw.f64("family.outlier_offset")?;
    let outlier_family = target_family.outlier_variant(outlier_offset);

    let activation = match raw.get("arch.activation") {
        "default" => default_activation,
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        _ => return Err(raw.bad("arch.activation", "expected relu, tanh or default")),
    };
    let hidden_dims = raw.usize_list("arch.hidden_dims")?;
    let (input_dim, output_dim) = match &target_family {
        TaskFamily::Gaussian(f) => (f.input_dim, f.ways),
        TaskFamily::Sinusoid(_) => (1, 1),
    };
    let arch = Architecture::new(input_dim, hidden_dims, output_dim, activation, head)
        .map_err(|e| raw.invariant("arch.hidden_dims", e.to_string()))?;

    let mode = match raw.get("profile.mode") {
        "clean" => NoiseMode::Clean,
        "fixed" => NoiseMode::Fixed,
        "one-step" => NoiseMode::OneStep,
        "two-step" => NoiseMode::TwoStep,
        "outlier" => NoiseMode::Outlier,
        _ => {
            return Err(raw.bad(
                "profile.mode",
                "expected clean, fixed, one-step, two-step or outlier",
            ))
        }
    };
    let mut fixed_schedule = raw.f64_list("profile.fixed_schedule")?;
    if mode == NoiseMode::Fixed && fixed_schedule.is_empty() {
        if batch_size == 16 {
            fixed_schedule = NoiseProfile::default_fixed_schedule();
        } else {
            return Err(raw.invariant(
                "profile.fixed_schedule",
                format!("fixed mode with batch size {batch_size} needs an explicit schedule"),
            ));
        }
    }
    let profile = NoiseProfile {
        mode,
        outlier_ratio: raw.f64("profile.outlier_ratio")?,
        fixed_schedule,
        two_step_p: raw.f64("profile.two_step_p")?,
    };
    profile
        .validate(batch_size)
        .map_err(|e| raw.invariant("profile.mode", e.to_string()))?;

    let tracker_init = match raw.get("tracker.init") {
        "probe" => TrackerInit::Probe,
        "pinned" => TrackerInit::Pinned {
            lambda: raw.f64("tracker.pin_lambda")?,
            lambda_hat: raw.f64("tracker.pin_lambda_hat")?,
        },
        _ => return Err(raw.bad("tracker.init", "expected probe or pinned")),
    };

    let sweep_k = raw.usize_list("sweep.k")?;
    let sweep_m = raw.usize_list("sweep.m")?;
    let sweep_rho1 = raw.f64_list("sweep.rho1")?;
    let sweep_rho2 = raw.f64_list("sweep.rho2")?;

    let checkpoint_text = raw.get("checkpoint");
    let checkpoint = if checkpoint_text.is_empty() {
        None
    } else {
        Some(PathBuf::from(checkpoint_text))
    };

    let train = TrainConfig {
        total_iterations,
        warmup_iterations,
        inner_steps,
        batch_size,
        pool_size,
        k,
        m,
        alpha,
        beta,
        gamma0,
        delta,
        gamma_schedule,
        rho1,
        rho2,
        model_seed: raw.u64("model_seed")?,
        data_seed: raw.u64("data_seed")?,
        arch,
        profile,
        target_family,
        outlier_family,
        tracker_init,
    };
    train
        .validate(algorithm)
        .map_err(|e| raw.invariant("algorithm", e.to_string()))?;

    Ok(ExperimentConfig {
        train,
        algorithm,
        eval_task_count: raw.usize("eval_tasks")?,
        checkpoint,
        sweep_k,
        sweep_m,
        sweep_rho1,
        sweep_rho2,
        canonical: raw.values,
    })
}

impl ExperimentConfig {
    /// Apply command-line seed overrides; the canonical echo and hash follow
    /// the effective values.
    pub fn override_seeds(&mut self, model_seed: Option<u64>, data_seed: Option<u64>) {
        if let Some(s) = model_seed {
            self.train.model_seed = s;
            self.canonical.insert("model_seed".into(), s.to_string());
        }
        if let Some(s) = data_seed {
            self.train.data_seed = s;
            self.canonical.insert("data_seed".into(), s.to_string());
        }
    }

    /// Canonical key=value text: every key, sorted, with its effective value.
    /// Field order in the source file cannot change this.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.canonical {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// FNV-1a hash of the canonical echo, as fixed-width hex.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.echo().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
