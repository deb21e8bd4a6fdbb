//! Temporary calibration probes. Deleted before finalizing.

use hetrom::evalmetrics::{fast_adapt_eval, separation_score};
use hetrom::metatrain::{
    run_training, Algorithm, GammaSchedule, TrackerInit, TrainConfig,
};
use hetrom::netcore::{Activation, Architecture, Head};
use hetrom::taskgen::{ClassificationFamily, NoiseMode, NoiseProfile, TaskFamily, TaskPool};

fn base_config(n: usize, pool: usize, j: usize) -> TrainConfig {
    let target = TaskFamily::Gaussian(ClassificationFamily {
        ways: 5,
        shots: 5,
        query_shots: 15,
        input_dim: 2,
        center_spread: 3.0,
        within_sigma: 0.5,
        center_offset: 0.0,
    });
    let outlier = target.outlier_variant(15.0);
    TrainConfig {
        total_iterations: j,
        warmup_iterations: 400,
        inner_steps: 10,
        batch_size: n,
        pool_size: pool,
        k: n.min(12),
        m: 2,
        alpha: 0.2,
        beta: 0.03,
        gamma0: 0.01,
        delta: 1.0,
        gamma_schedule: GammaSchedule::Constant,
        rho1: 2.0,
        rho2: 1.0,
        model_seed: 1,
        data_seed: 2,
        arch: Architecture::new(2, vec![16, 16], 5, Activation::Relu, Head::SoftmaxClassification)
            .unwrap(),
        profile: NoiseProfile::clean(),
        target_family: target,
        outlier_family: outlier,
        tracker_init: TrackerInit::Probe,
    }
}

fn test_acc(config: &TrainConfig, run: &hetrom::metatrain::TrainRun, count: usize) -> f64 {
    let pool = TaskPool::build(
        config.profile.clone(),
        config.target_family.clone(),
        config.outlier_family.clone(),
        config.pool_size,
        config.batch_size,
        config.data_seed,
    )
    .unwrap();
    let tasks = pool.eval_tasks(count).unwrap();
    let report = fast_adapt_eval(&run.params, &tasks, config.inner_steps, config.alpha).unwrap();
    report.overall.mean_accuracy.unwrap()
}

#[test]
#[ignore]
fn probe_clean_baseline() {
    for j in [500, 1500] {
        let mut c = base_config(16, 64, j);
        c.model_seed = 1;
        c.data_seed = 2;
        let run = run_training(&c, Algorithm::Baseline).unwrap();
        let acc = test_acc(&c, &run, 100);
        println!("clean baseline J={j}: test acc {acc:.3}");
    }
}

#[test]
#[ignore]
fn probe_noisy_gap() {
    // two-step 60% @ 0.8, grid {8,12} x {2,4} vs baseline, N = 8
    for n in [8usize] {
        for seed in [1u64, 2, 3] {
            let mut accs = Vec::new();
            let mut c = base_config(n, 60, 1500);
            c.profile = NoiseProfile {
                mode: NoiseMode::TwoStep,
                outlier_ratio: 0.0,
                fixed_schedule: Vec::new(),
                two_step_p: 0.8,
            };
            c.model_seed = seed;
            c.data_seed = 100 + seed;
            let base = run_training(&c, Algorithm::Baseline).unwrap();
            let base_acc = test_acc(&c, &base, 100);
            for (k, m) in [(8usize, 2usize), (8, 4), (12, 2), (12, 4)] {
                if k > n {
                    continue;
                }
                let mut ck = c.clone();
                ck.k = k;
                ck.m = m;
                let run = run_training(&ck, Algorithm::Hetrom).unwrap();
                let acc = test_acc(&ck, &run, 100);
                accs.push(((k, m), acc));
            }
            println!("N={n} seed={seed}: baseline {base_acc:.3} grid {accs:?}");
        }
    }
}

#[test]
#[ignore]
fn probe_outlier_separation() {
    for seed in [1u64, 2, 3] {
        let mut c = base_config(16, 64, 400);
        c.profile = NoiseProfile {
            mode: NoiseMode::Outlier,
            outlier_ratio: 0.25,
            fixed_schedule: Vec::new(),
            two_step_p: 0.8,
        };
        c.model_seed = seed;
        c.data_seed = 200 + seed;
        let run = run_training(&c, Algorithm::Baseline).unwrap();
        let pool = TaskPool::build(
            c.profile.clone(),
            c.target_family.clone(),
            c.outlier_family.clone(),
            c.pool_size,
            c.batch_size,
            c.data_seed,
        )
        .unwrap();
        let tasks = pool.all_tasks().unwrap();
        let report = fast_adapt_eval(&run.params, &tasks, c.inner_steps, c.alpha).unwrap();
        let clean: Vec<f64> = report
            .per_task
            .iter()
            .filter(|t| !t.is_outlier)
            .map(|t| t.loss)
            .collect();
        let outlier: Vec<f64> = report
            .per_task
            .iter()
            .filter(|t| t.is_outlier)
            .map(|t| t.loss)
            .collect();
        let sep = separation_score(&clean, &outlier).unwrap();
        // identification thresholds at several rho2
        let stats = hetrom::evalmetrics::lognormal_stats(
            &report.per_task.iter().map(|t| t.loss).collect::<Vec<_>>(),
        )
        .unwrap();
        for rho2 in [1.0, 1.5, 2.0] {
            let (_, lh) = hetrom::metatrain::thresholds_from_stats(&stats, 1.0, rho2);
            let out_excl =
                outlier.iter().filter(|&&l| l > lh).count() as f64 / outlier.len() as f64;
            let clean_excl =
                clean.iter().filter(|&&l| l > lh).count() as f64 / clean.len() as f64;
            println!(
                "seed={seed} sep={sep:.3} rho2={rho2}: outlier excl {out_excl:.2}, clean excl {clean_excl:.2}"
            );
        }
    }
}

#[test]
#[ignore]
fn probe_exclusion_monotonicity() {
    for seed in [1u64, 2, 3] {
        let mut c = base_config(16, 64, 2000);
        c.profile = NoiseProfile {
            mode: NoiseMode::Fixed,
            outlier_ratio: 0.0,
            fixed_schedule: NoiseProfile::default_fixed_schedule(),
            two_step_p: 0.8,
        };
        c.k = 12;
        c.m = 4;
        c.model_seed = seed;
        c.data_seed = 300 + seed;
        let run = run_training(&c, Algorithm::Hetrom).unwrap();
        let stats = hetrom::evalmetrics::exclusion_stats(&run.logs).unwrap();
        let line: Vec<String> = stats
            .iter()
            .map(|r| format!("{}:{:.3}", r.noise_ratio, r.excluded_above))
            .collect();
        println!("seed={seed} exclusion above by ratio: {}", line.join(" "));
    }
}

#[test]
#[ignore]
fn probe_hard_task_mining() {
    for seed in [1u64, 2, 3] {
        let mut c = base_config(16, 64, 1500);
        c.model_seed = seed;
        c.data_seed = 400 + seed;
        let all = run_training(&c, Algorithm::Baseline).unwrap();
        let mut ch = c.clone();
        ch.k = 8;
        ch.m = 0;
        let hard = run_training(&ch, Algorithm::Hetrom).unwrap();
        let pool = TaskPool::build(
            c.profile.clone(),
            c.target_family.clone(),
            c.outlier_family.clone(),
            c.pool_size,
            c.batch_size,
            c.data_seed,
        )
        .unwrap();
        let tasks = pool.all_tasks().unwrap();
        let all_report = fast_adapt_eval(&all.params, &tasks, c.inner_steps, c.alpha).unwrap();
        let hard_report = fast_adapt_eval(&hard.params, &tasks, c.inner_steps, c.alpha).unwrap();
        let all_acc = test_acc(&c, &all, 100);
        let hard_acc = test_acc(&ch, &hard, 100);
        println!(
            "seed={seed}: all pool loss {:.4} acc {:.3} | hard pool loss {:.4} acc {:.3}",
            all_report.overall.mean_loss, all_acc, hard_report.overall.mean_loss, hard_acc
        );
    }
}
