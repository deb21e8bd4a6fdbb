//! Reproducible synthetic few-shot task generation.
//!
//! Two generative families stand in for image episodes: sinusoid regression
//! (amplitude/phase drawn per task) and Gaussian-blob classification (class
//! centers drawn per task). Corruption follows the fixed / one-step / two-step
//! label-noise protocols, and outlier tasks come from a shifted variant of the
//! same family. Batches draw tasks from a finite, fully seeded pool so every
//! experiment is reproducible from (profile, families, pool size, data seed).

use crate::netcore::SampleBatch;
use crate::seed::{derive_seed, stream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TaskGenError {
    #[error("noise probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid task family: {0}")]
    InvalidFamily(String),
    #[error("invalid noise profile: {0}")]
    InvalidProfile(String),
    #[error("pool size {pool} must be at least the batch size {batch}")]
    PoolTooSmall { pool: usize, batch: usize },
    #[error("task {0} out of range for the pool")]
    TaskOutOfRange(usize),
    #[error("batch construction: {0}")]
    Batch(String),
}

/// Sinusoid regression family: targets are `A * sin(x + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFamily {
    pub amplitude_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub input_range: (f64, f64),
    pub target_noise_sigma: f64,
    pub support_size: usize,
    pub query_size: usize,
}

/// Gaussian-blob classification family: per task, `ways` class centers are
/// drawn from `N(center_offset, center_spread^2 I)` and samples from
/// `N(center, within_sigma^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationFamily {
    pub ways: usize,
    pub shots: usize,
    pub query_shots: usize,
    pub input_dim: usize,
    pub center_spread: f64,
    pub within_sigma: f64,
    pub center_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskFamily {
    Sinusoid(RegressionFamily),
    Gaussian(ClassificationFamily),
}

impl TaskFamily {
    pub fn validate(&self) -> Result<(), TaskGenError> {
        match self {
            TaskFamily::Sinusoid(f) => {
                if f.amplitude_range.0 <= 0.0 || f.amplitude_range.1 < f.amplitude_range.0 {
                    return Err(TaskGenError::InvalidFamily(
                        "amplitude range must be positive and ordered".into(),
                    ));
                }
                if f.support_size == 0 || f.query_size == 0 {
                    return Err(TaskGenError::InvalidFamily(
                        "support and query sizes must be >= 1".into(),
                    ));
                }
                Ok(())
            }
            TaskFamily::Gaussian(f) => {
                if f.ways < 2 {
                    return Err(TaskGenError::InvalidFamily("ways must be >= 2".into()));
                }
                if f.shots == 0 || f.query_shots == 0 || f.input_dim == 0 {
                    return Err(TaskGenError::InvalidFamily(
                        "shots, query shots and input dim must be >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            TaskFamily::Sinusoid(_) => "sinusoid-regression",
            TaskFamily::Gaussian(_) => "gaussian-classification",
        }
    }

    /// The shifted variant used for out-of-distribution tasks: classification
    /// moves the center distribution by the family's offset; regression moves
    /// amplitudes above the clean range.
    pub fn outlier_variant(&self, offset: f64) -> TaskFamily {
        match self {
            TaskFamily::Gaussian(f) => TaskFamily::Gaussian(ClassificationFamily {
                center_offset: f.center_offset + offset,
                ..f.clone()
            }),
            TaskFamily::Sinusoid(f) => {
                let hi = f.amplitude_range.1;
                TaskFamily::Sinusoid(RegressionFamily {
                    amplitude_range: (hi + offset, hi + offset + (hi - f.amplitude_range.0)),
                    ..f.clone()
                })
            }
        }
    }
}

/// One few-shot episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub support: SampleBatch,
    pub query: SampleBatch,
    pub noise_ratio: f64,
    pub is_outlier: bool,
    pub task_id: usize,
    pub seed: u64,
    /// Resampling range for regression-target corruption; None for
    /// classification tasks.
    pub target_range: Option<(f64, f64)>,
}

/// Deterministic episode generation. Family parameters, support draws and
/// query draws use three independent streams derived from the task seed, so
/// support and query never share sample coordinates.
pub fn sample_task(family: &TaskFamily, seed: u64) -> Result<Task, TaskGenError> {
    family.validate()?;
    let mut param_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::TASK_PARAMS]));
    let mut support_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::TASK_SUPPORT]));
    let mut query_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::TASK_QUERY]));

    match family {
        TaskFamily::Sinusoid(f) => {
            let amplitude = param_rng.gen_range(f.amplitude_range.0..f.amplitude_range.1);
            let phase = if f.phase_range.1 > f.phase_range.0 {
                param_rng.gen_range(f.phase_range.0..f.phase_range.1)
            } else {
                f.phase_range.0
            };
            let draw = |rng: &mut ChaCha8Rng, count: usize| -> (Vec<f64>, Vec<f64>) {
                let mut xs = Vec::with_capacity(count);
                let mut ts = Vec::with_capacity(count);
                for _ in 0..count {
                    let x = rng.gen_range(f.input_range.0..f.input_range.1);
                    let mut t = amplitude * (x + phase).sin();
                    if f.target_noise_sigma > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        t += f.target_noise_sigma * z;
                    }
                    xs.push(x);
                    ts.push(t);
                }
                (xs, ts)
            };
            let (sx, st) = draw(&mut support_rng, f.support_size);
            let (qx, qt) = draw(&mut query_rng, f.query_size);
            let support = SampleBatch::regression(sx, st, 1, 1)
                .map_err(|e| TaskGenError::InvalidFamily(e.to_string()))?;
            let query = SampleBatch::regression(qx, qt, 1, 1)
                .map_err(|e| TaskGenError::InvalidFamily(e.to_string()))?;
            let hi = f.amplitude_range.1;
            Ok(Task {
                support,
                query,
                noise_ratio: 0.0,
                is_outlier: false,
                task_id: 0,
                seed,
                target_range: Some((-hi, hi)),
            })
        }
        TaskFamily::Gaussian(f) => {
            let mut centers = vec![0.0; f.ways * f.input_dim];
            for c in centers.iter_mut() {
                let z: f64 = param_rng.sample(StandardNormal);
                *c = f.center_offset + f.center_spread * z;
            }
            let draw = |rng: &mut ChaCha8Rng, per_class: usize| -> (Vec<f64>, Vec<usize>) {
                let mut xs = Vec::with_capacity(f.ways * per_class * f.input_dim);
                let mut labels = Vec::with_capacity(f.ways * per_class);
                for class in 0..f.ways {
                    let center = &centers[class * f.input_dim..(class + 1) * f.input_dim];
                    for _ in 0..per_class {
                        for &c in center {
                            let z: f64 = rng.sample(StandardNormal);
                            xs.push(c + f.within_sigma * z);
                        }
                        labels.push(class);
                    }
                }
                (xs, labels)
            };
            let (sx, sl) = draw(&mut support_rng, f.shots);
            let (qx, ql) = draw(&mut query_rng, f.query_shots);
            let support = SampleBatch::classification(sx, sl, f.input_dim, f.ways)
                .map_err(|e| TaskGenError::InvalidFamily(e.to_string()))?;
            let query = SampleBatch::classification(qx, ql, f.input_dim, f.ways)
                .map_err(|e| TaskGenError::InvalidFamily(e.to_string()))?;
            Ok(Task {
                support,
                query,
                noise_ratio: 0.0,
                is_outlier: false,
                task_id: 0,
                seed,
                target_range: None,
            })
        }
    }
}

/// Corrupt a task with probability `p` per sample: classification labels flip
/// to a uniformly random different label; regression targets are resampled
/// uniformly over the family target range. Support labels are corrupted
/// first, then query labels, in sample order.
pub fn inject_noise(task: &Task, p: f64, seed: u64) -> Result<Task, TaskGenError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(TaskGenError::InvalidProbability(p));
    }
    if p == 0.0 {
        return Ok(task.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = task.clone();
    if let Some(labels) = task.support.labels() {
        let classes = task.support.target_dim();
        let flip = |labels: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
            labels
                .iter()
                .map(|&l| {
                    if rng.gen::<f64>() < p {
                        (l + 1 + rng.gen_range(0..classes - 1)) % classes
                    } else {
                        l
                    }
                })
                .collect()
        };
        let support_labels = flip(labels, &mut rng);
        let query_labels = flip(task.query.labels().expect("query matches support"), &mut rng);
        out.support = task
            .support
            .with_labels(support_labels)
            .map_err(|e| TaskGenError::Batch(e.to_string()))?;
        out.query = task
            .query
            .with_labels(query_labels)
            .map_err(|e| TaskGenError::Batch(e.to_string()))?;
    } else {
        let (lo, hi) = task
            .target_range
            .ok_or_else(|| TaskGenError::Batch("regression task lacks a target range".into()))?;
        let resample = |values: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
            values
                .iter()
                .map(|&v| {
                    if rng.gen::<f64>() < p {
                        rng.gen_range(lo..hi)
                    } else {
                        v
                    }
                })
                .collect()
        };
        let support_values = resample(task.support.values().expect("regression"), &mut rng);
        let query_values = resample(task.query.values().expect("regression"), &mut rng);
        out.support = task
            .support
            .with_values(support_values)
            .map_err(|e| TaskGenError::Batch(e.to_string()))?;
        out.query = task
            .query
            .with_values(query_values)
            .map_err(|e| TaskGenError::Batch(e.to_string()))?;
    }
    out.noise_ratio = p;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Clean,
    Fixed,
    OneStep,
    TwoStep,
    Outlier,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::Clean => "clean",
            NoiseMode::Fixed => "fixed",
            NoiseMode::OneStep => "one-step",
            NoiseMode::TwoStep => "two-step",
            NoiseMode::Outlier => "outlier",
        }
    }
}

/// How a training pool is corrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    pub mode: NoiseMode,
    pub outlier_ratio: f64,
    /// Per-slot noise ratios for the fixed protocol; length must equal the
    /// batch size.
    pub fixed_schedule: Vec<f64>,
    /// Noise probability for marked tasks in the two-step protocol.
    pub two_step_p: f64,
}

/// Fraction of pool tasks marked in the two-step protocol.
pub const TWO_STEP_FRACTION: f64 = 0.6;

/// Noise levels the one-step protocol draws from.
pub const ONE_STEP_LEVELS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];

impl NoiseProfile {
    pub fn clean() -> Self {
        Self {
            mode: NoiseMode::Clean,
            outlier_ratio: 0.0,
            fixed_schedule: Vec::new(),
            two_step_p: 0.8,
        }
    }

    /// The worked 16-slot schedule: five clean slots, five at 10%, three at
    /// 30%, two at 50% and one at 70%.
    pub fn default_fixed_schedule() -> Vec<f64> {
        let mut s = Vec::with_capacity(16);
        s.extend(std::iter::repeat(0.0).take(5));
        s.extend(std::iter::repeat(0.1).take(5));
        s.extend(std::iter::repeat(0.3).take(3));
        s.extend(std::iter::repeat(0.5).take(2));
        s.push(0.7);
        s
    }

    pub fn validate(&self, batch_size: usize) -> Result<(), TaskGenError> {
        if !(0.0..=1.0).contains(&self.outlier_ratio) {
            return Err(TaskGenError::InvalidProfile(format!(
                "outlier ratio {} outside [0, 1]",
                self.outlier_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.two_step_p) {
            return Err(TaskGenError::InvalidProfile(format!(
                "two-step probability {} outside [0, 1]",
                self.two_step_p
            )));
        }
        if self.mode == NoiseMode::Fixed {
            if self.fixed_schedule.len() != batch_size {
                return Err(TaskGenError::InvalidProfile(format!(
                    "fixed schedule length {} does not match batch size {}",
                    self.fixed_schedule.len(),
                    batch_size
                )));
            }
            if self
                .fixed_schedule
                .iter()
                .any(|p| !(0.0..=1.0).contains(p))
            {
                return Err(TaskGenError::InvalidProfile(
                    "fixed schedule entries must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One pool entry: everything needed to re-materialize its task.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub task_id: usize,
    pub is_outlier: bool,
    pub noise_p: f64,
    pub gen_seed: u64,
    pub noise_seed: u64,
}

/// The finite training-task pool. Slot-structured profiles (fixed, outlier)
/// assign a role to each residue class `task_id mod batch_size` and batches
/// sample slot s from residue class s, so slot s carries the same noise
/// ratio (or outlier flag) at every iteration. Unstructured profiles sample
/// uniformly over the pool.
#[derive(Debug, Clone)]
pub struct TaskPool {
    entries: Vec<PoolEntry>,
    target: TaskFamily,
    outlier_family: TaskFamily,
    profile: NoiseProfile,
    batch_size: usize,
    data_seed: u64,
}

impl TaskPool {
    pub fn build(
        profile: NoiseProfile,
        target: TaskFamily,
        outlier_family: TaskFamily,
        pool_size: usize,
        batch_size: usize,
        data_seed: u64,
    ) -> Result<Self, TaskGenError> {
        target.validate()?;
        outlier_family.validate()?;
        profile.validate(batch_size)?;
        if batch_size == 0 {
            return Err(TaskGenError::Batch("batch size must be >= 1".into()));
        }
        if pool_size < batch_size {
            return Err(TaskGenError::PoolTooSmall {
                pool: pool_size,
                batch: batch_size,
            });
        }

        // Two-step marking: a seeded shuffle of the pool, first 60% marked.
        let two_step_marked: Vec<bool> = if profile.mode == NoiseMode::TwoStep {
            let mut ids: Vec<usize> = (0..pool_size).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(data_seed, &[stream::TWO_STEP]));
            // Fisher-Yates
            for i in (1..ids.len()).rev() {
                let j = rng.gen_range(0..=i);
                ids.swap(i, j);
            }
            let marked_count = (TWO_STEP_FRACTION * pool_size as f64).floor() as usize;
            let mut marked = vec![false; pool_size];
            for &id in &ids[..marked_count] {
                marked[id] = true;
            }
            marked
        } else {
            Vec::new()
        };

        let outlier_slots = (profile.outlier_ratio * batch_size as f64).floor() as usize;

        let mut entries = Vec::with_capacity(pool_size);
        for task_id in 0..pool_size {
            let slot = task_id % batch_size;
            let (is_outlier, noise_p) = match profile.mode {
                NoiseMode::Clean => (false, 0.0),
                NoiseMode::Fixed => (false, profile.fixed_schedule[slot]),
                NoiseMode::OneStep => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        data_seed,
                        &[stream::ONE_STEP, task_id as u64],
                    ));
                    let p = ONE_STEP_LEVELS[rng.gen_range(0..ONE_STEP_LEVELS.len())];
                    (false, p)
                }
                NoiseMode::TwoStep => {
                    let p = if two_step_marked[task_id] {
                        profile.two_step_p
                    } else {
                        0.0
                    };
                    (false, p)
                }
                NoiseMode::Outlier => (slot >= batch_size - outlier_slots, 0.0),
            };
            entries.push(PoolEntry {
                task_id,
                is_outlier,
                noise_p,
                gen_seed: derive_seed(data_seed, &[stream::POOL_GEN, task_id as u64]),
                noise_seed: derive_seed(data_seed, &[stream::POOL_NOISE, task_id as u64]),
            });
        }
        Ok(Self {
            entries,
            target,
            outlier_family,
            profile,
            batch_size,
            data_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn target_family(&self) -> &TaskFamily {
        &self.target
    }

    pub fn profile(&self) -> &NoiseProfile {
        &self.profile
    }

    fn slot_structured(&self) -> bool {
        matches!(self.profile.mode, NoiseMode::Fixed | NoiseMode::Outlier)
    }

    /// Re-materialize pool task `task_id` (generation plus its corruption).
    pub fn materialize(&self, task_id: usize) -> Result<Task, TaskGenError> {
        let entry = self
            .entries
            .get(task_id)
            .ok_or(TaskGenError::TaskOutOfRange(task_id))?;
        let family = if entry.is_outlier {
            &self.outlier_family
        } else {
            &self.target
        };
        let mut task = sample_task(family, entry.gen_seed)?;
        if entry.noise_p > 0.0 {
            task = inject_noise(&task, entry.noise_p, entry.noise_seed)?;
        }
        task.task_id = entry.task_id;
        task.is_outlier = entry.is_outlier;
        Ok(task)
    }

    fn pick(&self, slot: usize, draw_seed: u64) -> usize {
        let u = draw_seed as usize;
        if self.slot_structured() {
            let class_size = self.entries.len() / self.batch_size
                + usize::from(slot < self.entries.len() % self.batch_size);
            slot + (u % class_size) * self.batch_size
        } else {
            u % self.entries.len()
        }
    }

    /// The training batch for one iteration: `batch_size` tasks, slot s drawn
    /// from residue class s for slot-structured profiles, uniformly otherwise.
    pub fn batch(&self, iteration: u64) -> Result<Vec<Task>, TaskGenError> {
        (0..self.batch_size)
            .map(|slot| {
                let seed =
                    derive_seed(self.data_seed, &[stream::BATCH, iteration, slot as u64]);
                self.materialize(self.pick(slot, seed))
            })
            .collect()
    }

    /// A batch reserved for tracker initialization; drawn like a training
    /// batch but from its own stream.
    pub fn probe_batch(&self) -> Result<Vec<Task>, TaskGenError> {
        (0..self.batch_size)
            .map(|slot| {
                let seed = derive_seed(self.data_seed, &[stream::PROBE, slot as u64]);
                self.materialize(self.pick(slot, seed))
            })
            .collect()
    }

    /// Every pool task, materialized in id order.
    pub fn all_tasks(&self) -> Result<Vec<Task>, TaskGenError> {
        (0..self.entries.len()).map(|i| self.materialize(i)).collect()
    }

    /// Fresh clean tasks from the target family for held-out evaluation.
    pub fn eval_tasks(&self, count: usize) -> Result<Vec<Task>, TaskGenError> {
        (0..count)
            .map(|i| {
                let seed = derive_seed(self.data_seed, &[stream::EVAL, i as u64]);
                let mut t = sample_task(&self.target, seed)?;
                t.task_id = i;
                Ok(t)
            })
            .collect()
    }

    /// Line-oriented manifest: one record per pool task.
    pub fn manifest(&self) -> String {
        let mut out = String::from("task_id,family,seed,noise_ratio,is_outlier\n");
        for e in &self.entries {
            let family = if e.is_outlier {
                self.outlier_family.kind_str()
            } else {
                self.target.kind_str()
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.task_id, family, e.gen_seed, e.noise_p, e.is_outlier
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(ways: usize, shots: usize, query: usize) -> TaskFamily {
        TaskFamily::Gaussian(ClassificationFamily {
            ways,
            shots,
            query_shots: query,
            input_dim: 2,
            center_spread: 3.0,
            within_sigma: 0.5,
            center_offset: 0.0,
        })
    }

    fn sinusoid() -> TaskFamily {
        TaskFamily::Sinusoid(RegressionFamily {
            amplitude_range: (0.5, 3.0),
            phase_range: (0.0, 3.0),
            input_range: (-5.0, 5.0),
            target_noise_sigma: 0.0,
            support_size: 10,
            query_size: 20,
        })
    }

    #[test]
    fn same_family_and_seed_give_identical_tasks() {
        let fam = gaussian(5, 5, 15);
        let a = sample_task(&fam, 42).unwrap();
        let b = sample_task(&fam, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_task(&fam, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn classification_counts_follow_ways_and_shots() {
        let fam = gaussian(5, 5, 15);
        let t = sample_task(&fam, 1).unwrap();
        assert_eq!(t.support.count(), 25);
        assert_eq!(t.query.count(), 75);
    }

    #[test]
    fn noiseless_regression_targets_follow_the_sinusoid() {
        let t = sample_task(&sinusoid(), 9).unwrap();
        // recover amplitude and phase from two support points and check all
        // targets exactly satisfy t = A sin(x + phase)
        let xs = t.support.inputs();
        let ts = t.support.values().unwrap();
        // fit A, phase via least squares on sin/cos basis: t = a sin x + b cos x
        let (mut saa, mut sab, mut sbb, mut sta, mut stb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &t) in xs.iter().zip(ts) {
            let (s, c) = (x.sin(), x.cos());
            saa += s * s;
            sab += s * c;
            sbb += c * c;
            sta += t * s;
            stb += t * c;
        }
        let det = saa * sbb - sab * sab;
        let a = (sta * sbb - stb * sab) / det;
        let b = (stb * saa - sta * sab) / det;
        for (&x, &t) in xs.iter().zip(ts) {
            let pred = a * x.sin() + b * x.cos();
            assert!((pred - t).abs() < 1e-9, "target off the sinusoid");
        }
        // query targets satisfy the same curve
        for (&x, &t) in t.query.inputs().iter().zip(t.query.values().unwrap()) {
            let pred = a * x.sin() + b * x.cos();
            assert!((pred - t).abs() < 1e-9);
        }
    }

    #[test]
    fn support_and_query_inputs_never_collide() {
        for seed in 0..20 {
            let t = sample_task(&gaussian(3, 4, 6), seed).unwrap();
            for i in 0..t.support.count() {
                for j in 0..t.query.count() {
                    assert_ne!(t.support.input_row(i), t.query.input_row(j));
                }
            }
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = sample_task(&gaussian(5, 5, 15), 3).unwrap();
        let t2 = inject_noise(&t, 0.0, 99).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn full_noise_changes_every_label() {
        let t = sample_task(&gaussian(5, 5, 15), 3).unwrap();
        let t2 = inject_noise(&t, 1.0, 99).unwrap();
        for (a, b) in t
            .support
            .labels()
            .unwrap()
            .iter()
            .zip(t2.support.labels().unwrap())
        {
            assert_ne!(a, b);
        }
        for (a, b) in t
            .query
            .labels()
            .unwrap()
            .iter()
            .zip(t2.query.labels().unwrap())
        {
            assert_ne!(a, b);
        }
        assert_eq!(t2.noise_ratio, 1.0);
        assert!(inject_noise(&t, 1.5, 0).is_err());
        assert!(inject_noise(&t, -0.1, 0).is_err());
    }

    #[test]
    fn flip_fraction_concentrates_at_p() {
        // 10000 labels, p = 0.3: the empirical flip fraction must fall within
        // three binomial standard deviations of p.
        let fam = gaussian(5, 10, 10);
        let p = 0.3;
        let mut flips = 0usize;
        let mut total = 0usize;
        for seed in 0..100 {
            let t = sample_task(&fam, seed).unwrap();
            let t2 = inject_noise(&t, p, derive_seed(7, &[seed])).unwrap();
            for (a, b) in t
                .support
                .labels()
                .unwrap()
                .iter()
                .chain(t.query.labels().unwrap())
                .zip(
                    t2.support
                        .labels()
                        .unwrap()
                        .iter()
                        .chain(t2.query.labels().unwrap()),
                )
            {
                flips += usize::from(a != b);
                total += 1;
            }
        }
        assert_eq!(total, 10000);
        let sd = (p * (1.0 - p) / total as f64).sqrt();
        let observed = flips as f64 / total as f64;
        assert!(
            (observed - p).abs() < 3.0 * sd,
            "flip fraction {observed} vs expected {p} (sd {sd})"
        );
    }

    #[test]
    fn regression_noise_resamples_targets_in_range() {
        let t = sample_task(&sinusoid(), 5).unwrap();
        let t2 = inject_noise(&t, 1.0, 8).unwrap();
        let (lo, hi) = t.target_range.unwrap();
        for &v in t2.support.values().unwrap() {
            assert!(v >= lo && v < hi);
        }
        assert_ne!(t.support.values().unwrap(), t2.support.values().unwrap());
    }

    fn pool(profile: NoiseProfile, pool_size: usize, batch: usize, seed: u64) -> TaskPool {
        let target = gaussian(5, 5, 15);
        let outlier = target.outlier_variant(15.0);
        TaskPool::build(profile, target, outlier, pool_size, batch, seed).unwrap()
    }

    #[test]
    fn fixed_mode_applies_the_schedule_by_slot() {
        let profile = NoiseProfile {
            mode: NoiseMode::Fixed,
            outlier_ratio: 0.0,
            fixed_schedule: NoiseProfile::default_fixed_schedule(),
            two_step_p: 0.8,
        };
        let p = pool(profile, 64, 16, 11);
        let want = NoiseProfile::default_fixed_schedule();
        for j in 0..5 {
            let batch = p.batch(j).unwrap();
            let ratios: Vec<f64> = batch.iter().map(|t| t.noise_ratio).collect();
            assert_eq!(ratios, want, "iteration {j}");
        }
    }

    #[test]
    fn clean_mode_has_no_noise_or_outliers() {
        let p = pool(NoiseProfile::clean(), 32, 16, 5);
        let batch = p.batch(0).unwrap();
        assert!(batch.iter().all(|t| t.noise_ratio == 0.0 && !t.is_outlier));
    }

    #[test]
    fn outlier_mode_plants_the_floor_of_ratio_times_batch() {
        let profile = NoiseProfile {
            mode: NoiseMode::Outlier,
            outlier_ratio: 0.25,
            fixed_schedule: Vec::new(),
            two_step_p: 0.8,
        };
        let p = pool(profile, 64, 16, 2);
        for j in 0..4 {
            let batch = p.batch(j).unwrap();
            assert_eq!(batch.iter().filter(|t| t.is_outlier).count(), 4);
            // outlier slots sit at the end of the batch
            assert!(batch[12..].iter().all(|t| t.is_outlier));
            assert!(batch[..12].iter().all(|t| !t.is_outlier));
        }
    }

    #[test]
    fn two_step_marks_sixty_percent_of_the_pool() {
        let profile = NoiseProfile {
            mode: NoiseMode::TwoStep,
            outlier_ratio: 0.0,
            fixed_schedule: Vec::new(),
            two_step_p: 0.8,
        };
        let p = pool(profile, 50, 10, 3);
        let marked = p.entries().iter().filter(|e| e.noise_p == 0.8).count();
        assert_eq!(marked, 30);
    }

    #[test]
    fn one_step_draws_from_the_five_levels() {
        let profile = NoiseProfile {
            mode: NoiseMode::OneStep,
            outlier_ratio: 0.0,
            fixed_schedule: Vec::new(),
            two_step_p: 0.8,
        };
        let p = pool(profile, 200, 16, 4);
        let mut seen = std::collections::BTreeSet::new();
        for e in p.entries() {
            assert!(ONE_STEP_LEVELS.contains(&e.noise_p));
            seen.insert((e.noise_p * 10.0) as i32);
        }
        assert_eq!(seen.len(), 5, "with 200 tasks all levels should appear");
    }

    #[test]
    fn batches_are_deterministic() {
        let profile = NoiseProfile {
            mode: NoiseMode::Fixed,
            outlier_ratio: 0.0,
            fixed_schedule: NoiseProfile::default_fixed_schedule(),
            two_step_p: 0.8,
        };
        let a = pool(profile.clone(), 64, 16, 11).batch(7).unwrap();
        let b = pool(profile, 64, 16, 11).batch(7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_profiles_are_rejected() {
        let profile = NoiseProfile {
            mode: NoiseMode::Fixed,
            outlier_ratio: 0.0,
            fixed_schedule: vec![0.0; 8], // wrong length for batch 16
            two_step_p: 0.8,
        };
        let target = gaussian(5, 5, 15);
        let outlier = target.outlier_variant(15.0);
        assert!(TaskPool::build(profile, target.clone(), outlier.clone(), 64, 16, 0).is_err());
        assert!(TaskPool::build(NoiseProfile::clean(), target, outlier, 8, 16, 0).is_err());
    }

    #[test]
    fn manifest_lists_every_pool_task() {
        let p = pool(NoiseProfile::clean(), 32, 16, 5);
        let manifest = p.manifest();
        let lines: Vec<&str> = manifest.lines().collect();
        assert_eq!(lines[0], "task_id,family,seed,noise_ratio,is_outlier");
        assert_eq!(lines.len(), 33);
        assert!(lines[1].starts_with("0,gaussian-classification,"));
    }
}
