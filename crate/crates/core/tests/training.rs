mod common;

use common::*;
use copg::constrained::ConstraintSpec;
use copg::envs::{CostWeightMode, EnvConfig, Environment, PendulumConfig, PointNav, PointNavConfig};
use copg::objectives::{high_side_fractions, SampleBatch};
use copg::policy::LogProbMode;
use copg::tensor_nn::{AdamConfig, AdamState, Mlp};
use copg::trainer::{
    fit_value, metrics_csv_string, train, update_policy_firstorder, value_mse, Algorithm, NetworkConfig, TrainConfig,
    Trainer,
};
use copg::trpo::{conjugate_gradient, trpo_update, TrustRegionConfig};
use rand::Rng;

fn tiny(algorithm: Algorithm, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        env: EnvConfig::Pendulum(PendulumConfig::default()),
        steps_per_batch: 300,
        epochs_per_batch: 10,
        value_epochs: 10,
        entropy_log_samples: 16,
        network: NetworkConfig {
            policy_hidden: vec![16],
            value_hidden: vec![16],
            init_log_std: -0.5,
        },
        ..TrainConfig::new(algorithm, 3)
    }
}

fn nav(algorithm: Algorithm, seed: u64) -> TrainConfig {
    TrainConfig {
        env: EnvConfig::PointNav(PointNavConfig {
            max_steps: 200,
            ..Default::default()
        }),
        steps_per_batch: 1000,
        ..tiny(algorithm, seed)
    }
}

#[test]
fn recorded_log_probs_match_recomputation() {
    for mode in [LogProbMode::Unbounded, LogProbMode::Bounded] {
        let mut trainer = Trainer::new(TrainConfig {
            log_prob_mode: mode,
            num_envs: 3,
            ..nav(Algorithm::Copg, 1)
        })
        .unwrap();
        let rollout = trainer.collect().unwrap();
        assert_eq!(rollout.len(), 1000);
        for t in &rollout.transitions {
            let a = match mode {
                LogProbMode::Bounded => &t.executed_action,
                LogProbMode::Unbounded => &t.raw_action,
            };
            let lp = trainer.policy().log_prob_mode(&t.state, a, mode).unwrap();
            assert!((lp - t.old_log_prob).abs() <= 1e-12);
        }
    }
}

#[test]
fn one_step_batch() {
    let mut trainer = Trainer::new(TrainConfig {
        steps_per_batch: 1,
        ..tiny(Algorithm::Ppo, 2)
    })
    .unwrap();
    let rollout = trainer.collect().unwrap();
    assert_eq!(rollout.len(), 1);
    assert_eq!(rollout.segments.len(), 1);
}

#[test]
fn floor_std_policy_collects_identical_batches() {
    let cfg = TrainConfig {
        network: NetworkConfig {
            init_log_std: -20.0,
            ..tiny(Algorithm::Copg, 3).network
        },
        ..tiny(Algorithm::Copg, 3)
    };
    let a = Trainer::new(cfg.clone()).unwrap().collect().unwrap();
    let b = Trainer::new(cfg).unwrap().collect().unwrap();
    assert_eq!(a, b);
}

fn value_problem(seed: u64) -> (Mlp, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let net = Mlp::new(&[3, 16, 1], 1.0, &mut r).unwrap();
    let states = (0..64).map(|_| (0..3).map(|_| normal(&mut r)).collect()).collect();
    (net, states)
}

fn direct_mse(net: &Mlp, states: &[Vec<f64>], targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for (s, y) in states.iter().zip(targets) {
        let e = net.forward(s).unwrap()[0] - y;
        total += e * e;
    }
    total / states.len() as f64
}

#[test]
fn value_fit_on_own_predictions_is_a_fixed_point() {
    let (mut net, states) = value_problem(4);
    let targets: Vec<f64> = states.iter().map(|s| net.forward(s).unwrap()[0]).collect();
    let before = net.params().clone();
    let mut adam = AdamState::new(net.param_count(), AdamConfig::with_lr(1e-3));
    let trace = fit_value(&mut net, &mut adam, &states, &targets, 5, 1, &mut rng(0)).unwrap();
    assert!(trace.iter().all(|&l| l < 1e-24));
    assert_eq!(net.params().values(), before.values());
}

#[test]
fn value_fit_decreases_loss_and_reports_direct_mse() {
    let (mut net, states) = value_problem(5);
    let targets = vec![2.5; states.len()];
    assert!((value_mse(&net, &states, &targets).unwrap() - direct_mse(&net, &states, &targets)).abs() < 1e-12);
    let mut adam = AdamState::new(net.param_count(), AdamConfig::with_lr(1e-2));
    let trace = fit_value(&mut net, &mut adam, &states, &targets, 20, 1, &mut rng(0)).unwrap();
    assert_eq!(trace.len(), 21);
    assert!(trace[..6].windows(2).all(|w| w[1] < w[0]), "{trace:?}");
    assert!((trace[20] - direct_mse(&net, &states, &targets)).abs() < 1e-12);
}

#[test]
fn zero_kl_threshold_runs_one_epoch() {
    for alg in [Algorithm::Ppo, Algorithm::Copg] {
        let metrics = train(&TrainConfig {
            kl_stop_threshold: 0.0,
            ..tiny(alg, 6)
        })
        .unwrap()
        .metrics;
        for m in metrics {
            assert_eq!(m.epochs_used, 1);
        }
    }
}

#[test]
fn early_stop_only_above_threshold() {
    for alg in [Algorithm::Ppo, Algorithm::Copg] {
        let cfg = TrainConfig {
            epochs_per_batch: 40,
            policy_lr: 3e-3,
            minibatch_count: 4,
            ..tiny(alg, 7)
        };
        for m in train(&cfg).unwrap().metrics {
            assert!(m.epochs_used <= cfg.epochs_per_batch);
            if m.epochs_used < cfg.epochs_per_batch {
                assert!(m.approx_kl_final.max(0.0) >= cfg.kl_stop_threshold);
            }
        }
    }
}

#[test]
fn failed_update_rolls_back_parameters_and_optimizer() {
    let cfg = TrainConfig {
        minibatch_count: 40,
        steps_per_batch: 40,
        ..tiny(Algorithm::Copg, 8)
    };
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let clean = trainer.collect_prepared().unwrap().batch;
    let mut samples = clean.samples.clone();
    samples[17].advantage = 1e308;
    let poisoned = SampleBatch::new(samples, clean.mode).unwrap();

    let policy = trainer.policy().clone();
    let adam = AdamState::new(policy.param_count(), AdamConfig::with_lr(cfg.policy_lr));

    // several minibatch steps succeed before the poisoned sample's one fails
    let mut p = policy.clone();
    let mut a = adam.clone();
    let err = update_policy_firstorder(&mut p, &mut a, &poisoned, &cfg, &mut rng(1));
    assert!(err.is_err());
    assert_eq!(p.params().values(), policy.params().values());

    // the optimizer state was restored too: a clean update afterwards matches
    // one that never saw the poisoned batch
    let mut q = policy.clone();
    let mut b = adam.clone();
    update_policy_firstorder(&mut p, &mut a, &clean, &cfg, &mut rng(2)).unwrap();
    update_policy_firstorder(&mut q, &mut b, &clean, &cfg, &mut rng(2)).unwrap();
    assert_eq!(p.params().values(), q.params().values());
}

#[test]
fn training_is_deterministic() {
    for cfg in [
        tiny(Algorithm::Ppo, 9),
        TrainConfig {
            num_envs: 2,
            minibatch_count: 3,
            ..nav(Algorithm::Copg, 10)
        },
        tiny(Algorithm::Trpo, 11),
    ] {
        let a = metrics_csv_string(&train(&cfg).unwrap().metrics).unwrap();
        let b = metrics_csv_string(&train(&cfg).unwrap().metrics).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn zero_multiplier_leaves_rewards_unshaped() {
    let env = EnvConfig::PointNav(PointNavConfig {
        max_steps: 200,
        cost_weight_mode: CostWeightMode::Separate,
        ..Default::default()
    });
    let plain = TrainConfig {
        env: env.clone(),
        ..nav(Algorithm::Copg, 12)
    };
    let constrained = TrainConfig {
        constrained: Some(ConstraintSpec::new(1e6)),
        ..plain.clone()
    };
    let a = Trainer::new(plain).unwrap().collect_prepared().unwrap();
    let b = Trainer::new(constrained).unwrap().collect_prepared().unwrap();
    assert_eq!(a.batch.samples, b.batch.samples);
    assert_eq!(a.mean_episode_return, b.mean_episode_return);
}

#[test]
fn shaped_rewards_subtract_weighted_cost() {
    let env = EnvConfig::PointNav(PointNavConfig {
        max_steps: 200,
        cost_weight_mode: CostWeightMode::Separate,
        ..Default::default()
    });
    let cfg = TrainConfig {
        env,
        constrained: Some(ConstraintSpec {
            multiplier_init: 0.7,
            ..ConstraintSpec::new(1.0)
        }),
        ..nav(Algorithm::Copg, 13)
    };
    let mut trainer = Trainer::new(cfg).unwrap();
    let rollout = trainer.collect().unwrap();
    let prepared = copg::trainer::prepare_batch(
        &rollout,
        trainer.value_net(),
        &trainer.config().advantage,
        trainer.lagrange(),
    )
    .unwrap();
    for (t, s) in rollout.transitions.iter().zip(&prepared.batch.samples) {
        assert!((s.reward - (t.reward - 0.7 * t.cost)).abs() < 1e-15);
    }
}

#[test]
fn lambda_is_logged_only_when_constrained() {
    let m = train(&tiny(Algorithm::Ppo, 14)).unwrap().metrics;
    assert!(m.iter().all(|r| r.lambda.is_none()));
    let cfg = TrainConfig {
        constrained: Some(ConstraintSpec::new(0.0)),
        ..nav(Algorithm::Ppo, 14)
    };
    assert!(cfg.validate().is_err(), "cost folded into the reward cannot be constrained");
    let cfg = TrainConfig {
        env: EnvConfig::PointNav(PointNavConfig {
            max_steps: 200,
            cost_weight_mode: CostWeightMode::Separate,
            ..Default::default()
        }),
        ..cfg
    };
    let m = train(&cfg).unwrap().metrics;
    assert!(m.iter().all(|r| r.lambda.unwrap() >= 0.0));
}

#[test]
fn trpo_steps_stay_inside_the_trust_region() {
    let mut trainer = Trainer::new(tiny(Algorithm::Trpo, 15)).unwrap();
    let tr = TrustRegionConfig::default();
    for _ in 0..5 {
        let batch = trainer.collect_prepared().unwrap().batch;
        let old = trainer.policy().clone();
        let out = trpo_update(trainer.policy_mut(), &batch, &tr).unwrap();
        let kl = mean_kl(&old, trainer.policy(), &batch);
        if out.accepted {
            assert!(kl <= tr.kl_limit * (1.0 + 1e-9));
            assert!((kl - out.achieved_kl).abs() < 1e-12);
            assert!(surrogate(trainer.policy(), &batch) >= surrogate(&old, &batch));
        } else {
            assert_eq!(trainer.policy().params().values(), old.params().values());
        }
    }
}

#[test]
fn trpo_with_zero_advantages_does_not_move() {
    let mut trainer = Trainer::new(tiny(Algorithm::Trpo, 16)).unwrap();
    let batch = trainer.collect_prepared().unwrap().batch;
    let mut samples = batch.samples.clone();
    for s in &mut samples {
        s.advantage = 0.0;
    }
    let zero = SampleBatch::new(samples, batch.mode).unwrap();
    let before = trainer.policy().params();
    let out = trpo_update(trainer.policy_mut(), &zero, &TrustRegionConfig::default()).unwrap();
    assert!(!out.accepted);
    assert_eq!(trainer.policy().params().values(), before.values());
}

/// Solves `A x = b` for a small dense system by Gaussian elimination.
fn direct_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

#[test]
fn conjugate_gradient_matches_direct_solve() {
    let mut r = rng(17);
    let n = 8;
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| normal(&mut r)).collect()).collect();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let out = conjugate_gradient(
        |v| Ok(a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()),
        &b,
        50,
        1e-12,
    )
    .unwrap();
    let x = direct_solve(a.clone(), b.clone());
    assert!(rel_err(&out.x, &x) < 1e-8, "{:?} vs {x:?}", out.x);
    assert!(out.residual_norm <= 1e-12 && out.iterations <= 50);
}

#[test]
fn point_nav_progress_reward_telescopes() {
    let cfg = PointNavConfig {
        cost_weight_mode: CostWeightMode::Separate,
        goal_bonus: 0.0,
        max_steps: 300,
        ..Default::default()
    };
    let mut env = PointNav::new(cfg.clone()).unwrap();
    let mut r = rng(18);
    env.reset(5).unwrap();
    let start = env.goal_distance();
    let mut total = 0.0;
    loop {
        let goals = env.goals_reached();
        let s = env.step(&[r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)]).unwrap();
        if env.goals_reached() != goals {
            // a new goal invalidates the telescoping sum
            break;
        }
        total += s.reward;
        if s.truncated {
            break;
        }
    }
    assert!((total - cfg.dense_reward_scale * (start - env.goal_distance())).abs() < 1e-10);
}

#[test]
fn point_nav_goal_placement_is_uniform() {
    // chi-square over a 4x4 grid of the arena: 15 degrees of freedom, the
    // 0.999 quantile is about 37.7
    let cfg = PointNavConfig::default();
    let hw = cfg.arena_half_width;
    let mut env = PointNav::new(cfg).unwrap();
    let mut counts = [0usize; 16];
    let draws = 4000;
    for seed in 0..draws {
        env.reset(seed).unwrap();
        let [x, y] = env.goal();
        let cell = |v: f64| (((v + hw) / (2.0 * hw) * 4.0) as usize).min(3);
        counts[cell(x) * 4 + cell(y)] += 1;
    }
    let expected = draws as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 37.7, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn positive_advantages_leave_the_band_on_the_high_side_more_often() {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for seed in 0..5 {
        let mut trainer = Trainer::new(TrainConfig {
            policy_lr: 0.01,
            ..nav(Algorithm::Ppo, 30 + seed)
        })
        .unwrap();
        let run = trainer.diagnose(3).unwrap();
        let (p, n) = high_side_fractions(&run.ratios, trainer.config().clip.epsilon);
        pos += p.unwrap();
        neg += n.unwrap();
    }
    assert!(pos > neg, "Â>0 {:.3} vs Â<0 {:.3}", pos / 5.0, neg / 5.0);
}

/// Full-scale pendulum run (150 batches of 4000 steps); takes tens of
/// minutes, so it only runs on request.
#[test]
#[ignore]
fn pendulum_copg_beats_random_policy() {
    let cfg = TrainConfig {
        env: EnvConfig::Pendulum(PendulumConfig::default()),
        ..TrainConfig::new(Algorithm::Copg, 150)
    };
    let metrics = train(&cfg).unwrap().metrics;
    let last: f64 = metrics[140..].iter().map(|m| m.mean_episode_return).sum::<f64>() / 10.0;

    let mut env = copg::envs::Pendulum::new(PendulumConfig::default()).unwrap();
    let mut r = rng(0);
    let mut baseline = 0.0;
    for _ in 0..100 {
        env.reset(r.random()).unwrap();
        loop {
            let s = env.step(&[r.random_range(-2.0..=2.0)]).unwrap();
            baseline += s.reward / 100.0;
            if s.truncated {
                break;
            }
        }
    }
    // returns are negative costs: "3x better" means a third of the cost
    assert!(last >= baseline / 3.0, "trained {last:.1}, random {baseline:.1}");
}
