//! Hyperparameter probe. Deleted before finalizing.

use hetrom::evalmetrics::fast_adapt_eval;
use hetrom::metatrain::{run_training, Algorithm, GammaSchedule, TrackerInit, TrainConfig};
use hetrom::netcore::{Activation, Architecture, Head};
use hetrom::taskgen::{ClassificationFamily, NoiseProfile, TaskFamily, TaskPool};

fn config(alpha: f64, beta: f64, d: usize, j: usize, hidden: Vec<usize>) -> TrainConfig {
    config_dim(alpha, beta, d, j, hidden, 2, 5)
}

fn config_dim(
    alpha: f64,
    beta: f64,
    d: usize,
    j: usize,
    hidden: Vec<usize>,
    input_dim: usize,
    shots: usize,
) -> TrainConfig {
    let target = TaskFamily::Gaussian(ClassificationFamily {
        ways: 5,
        shots,
        query_shots: 15,
        input_dim,
        center_spread: 3.0,
        within_sigma: 0.5,
        center_offset: 0.0,
    });
    let outlier = target.outlier_variant(15.0);
    let arch = Architecture::new(
        input_dim,
        hidden,
        5,
        Activation::Relu,
        Head::SoftmaxClassification,
    )
    .unwrap();
    TrainConfig {
        total_iterations: j,
        warmup_iterations: 400,
        inner_steps: d,
        batch_size: 16,
        pool_size: 64,
        k: 12,
        m: 2,
        alpha,
        beta,
        gamma0: 0.01,
        delta: 1.0,
        gamma_schedule: GammaSchedule::Constant,
        rho1: 2.0,
        rho2: 1.0,
        model_seed: 1,
        data_seed: 2,
        arch,
        profile: NoiseProfile::clean(),
        target_family: target,
        outlier_family: outlier,
        tracker_init: TrackerInit::Probe,
    }
}

#[test]
#[ignore]
fn probe_small_pool_noise() {
    use hetrom::taskgen::NoiseMode;
    for (input_dim, shots, hidden) in [
        (8usize, 3usize, vec![32usize, 32]),
        (8, 5, vec![32, 32]),
        (6, 3, vec![32, 32]),
    ] {
        for seed in [1u64, 2, 3] {
            let mut c = config_dim(0.2, 0.03, 10, 2000, hidden.clone(), input_dim, shots);
            c.batch_size = 8;
            c.k = 8;
            c.pool_size = 48;
            c.profile = NoiseProfile {
                mode: NoiseMode::TwoStep,
                outlier_ratio: 0.0,
                fixed_schedule: Vec::new(),
                two_step_p: 0.8,
            };
            c.model_seed = seed;
            c.data_seed = 100 + seed;
            let base = run_training(&c, Algorithm::Baseline).unwrap();
            let pool = TaskPool::build(
                c.profile.clone(),
                c.target_family.clone(),
                c.outlier_family.clone(),
                c.pool_size,
                c.batch_size,
                c.data_seed,
            )
            .unwrap();
            let tasks = pool.eval_tasks(150).unwrap();
            let base_acc = fast_adapt_eval(&base.params, &tasks, c.inner_steps, c.alpha)
                .unwrap()
                .overall
                .mean_accuracy
                .unwrap();
            let mut line = format!(
                "d={input_dim} shots={shots} hidden={hidden:?} seed={seed}: baseline {base_acc:.3}"
            );
            for (k, m) in [(8usize, 2usize), (8, 4)] {
                let mut ck = c.clone();
                ck.k = k;
                ck.m = m;
                let run = run_training(&ck, Algorithm::Hetrom).unwrap();
                let acc = fast_adapt_eval(&run.params, &tasks, c.inner_steps, c.alpha)
                    .unwrap()
                    .overall
                    .mean_accuracy
                    .unwrap();
                line.push_str(&format!(" ({k},{m})={acc:.3}"));
            }
            println!("{line}");
        }
    }
}
