//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.

#![allow(dead_code)]

use copg::objectives::{Sample, SampleBatch};
use copg::policy::{GaussianPolicy, LogProbMode};
use copg::tensor_nn::Mlp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, 1e-6)`
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-6)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian-vector product of a vector-valued `f`.
pub fn fd_directional(x: &[f64], v: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let up: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let down: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    f(&up).iter().zip(f(&down)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

pub struct Instance {
    pub policy: GaussianPolicy,
    pub collector: GaussianPolicy,
    pub batch: SampleBatch,
}

/// A small random policy, a perturbed copy that "collected" a batch of
/// `episodes × steps` samples, and random advantages and rewards.
pub fn random_instance(seed: u64, mode: LogProbMode, episodes: usize, steps: usize, perturbation: f64) -> Instance {
    let mut r = rng(seed);
    let obs_dim = 3;
    let mut net = Mlp::new(&[obs_dim, 5, 2], 1.0, &mut r).unwrap();
    let mut flat = net.params().values().to_vec();
    for v in flat.iter_mut() {
        *v *= 2.0;
    }
    net.set_flat(&flat).unwrap();
    let log_std: Vec<f64> = (0..2).map(|_| r.random_range(-1.2..0.0)).collect();
    let collector = GaussianPolicy::from_parts(net, log_std, vec![-1.0; 2], vec![1.0; 2]).unwrap();
    let mut samples = Vec::new();
    for e in 0..episodes {
        for t in 0..steps {
            let state: Vec<f64> = (0..obs_dim).map(|_| normal(&mut r)).collect();
            let a = collector.sample(&state, &mut r).unwrap();
            let scored = match mode {
                LogProbMode::Bounded => &a.executed,
                LogProbMode::Unbounded => &a.raw,
            };
            let old_log_prob = collector.log_prob_mode(&state, scored, mode).unwrap();
            samples.push(Sample {
                state,
                raw_action: a.raw.clone(),
                executed_action: a.executed.clone(),
                reward: 0.5 * normal(&mut r),
                cost: 0.0,
                advantage: normal(&mut r),
                old_log_prob,
                episode_id: e,
                step_index: t,
            });
        }
    }
    let batch = SampleBatch::new(samples, mode).unwrap();
    let mut policy = collector.clone();
    let moved: Vec<f64> = policy
        .params()
        .values()
        .iter()
        .map(|v| v + perturbation * normal(&mut r))
        .collect();
    policy.set_flat(&moved).unwrap();
    Instance {
        policy,
        collector,
        batch,
    }
}

pub fn scored(batch: &SampleBatch, s: &Sample) -> Vec<f64> {
    match batch.mode {
        LogProbMode::Bounded => s.executed_action.clone(),
        LogProbMode::Unbounded => s.raw_action.clone(),
    }
}

pub fn log_probs(policy: &GaussianPolicy, batch: &SampleBatch) -> Vec<f64> {
    batch
        .samples
        .iter()
        .map(|s| policy.log_prob_mode(&s.state, &scored(batch, s), batch.mode).unwrap())
        .collect()
}

pub fn with_params(policy: &GaussianPolicy, theta: &[f64]) -> GaussianPolicy {
    let mut p = policy.clone();
    p.set_flat(theta).unwrap();
    p
}

/// Negated mean objectives, written directly from their definitions.
pub fn vanilla_loss(policy: &GaussianPolicy, batch: &SampleBatch) -> f64 {
    let lps = log_probs(policy, batch);
    -batch.samples.iter().zip(&lps).map(|(s, lp)| lp * s.advantage).sum::<f64>() / batch.len() as f64
}

pub fn ppo_loss(policy: &GaussianPolicy, batch: &SampleBatch, eps: f64) -> f64 {
    let lps = log_probs(policy, batch);
    -batch
        .samples
        .iter()
        .zip(&lps)
        .map(|(s, lp)| {
            let rho = (lp - s.old_log_prob).exp();
            (rho * s.advantage).min(rho.clamp(1.0 - eps, 1.0 + eps) * s.advantage)
        })
        .sum::<f64>()
        / batch.len() as f64
}

pub fn copg_loss(policy: &GaussianPolicy, batch: &SampleBatch, eps: f64) -> f64 {
    let lps = log_probs(policy, batch);
    -batch
        .samples
        .iter()
        .zip(&lps)
        .map(|(s, lp)| {
            let rho = (lp - s.old_log_prob).exp();
            let clipped = (rho.clamp(1.0 - eps, 1.0 + eps) * s.old_log_prob.exp()).ln();
            (lp * s.advantage).min(clipped * s.advantage)
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// `-(1/N) Σ_episodes Σ_t (Π_{k<=t} ρ_k) r_t`: the importance-weighted
/// return whose gradient the causal off-policy estimator equals.
pub fn importance_return_loss(policy: &GaussianPolicy, batch: &SampleBatch) -> f64 {
    let lps = log_probs(policy, batch);
    let mut total = 0.0;
    let mut prev_episode = usize::MAX;
    let mut product = 1.0;
    for (s, lp) in batch.samples.iter().zip(&lps) {
        if s.episode_id != prev_episode {
            product = 1.0;
            prev_episode = s.episode_id;
        }
        product *= (lp - s.old_log_prob).exp();
        total += product * s.reward;
    }
    -total / batch.len() as f64
}

/// Closed-form `KL(N(m1, e^{2 s1}) ‖ N(m2, e^{2 s2}))` summed over dimensions.
pub fn kl_diag(m1: &[f64], s1: &[f64], m2: &[f64], s2: &[f64]) -> f64 {
    (0..m1.len())
        .map(|i| {
            let v1 = (2.0 * s1[i]).exp();
            let v2 = (2.0 * s2[i]).exp();
            0.5 * ((v1 + (m1[i] - m2[i]).powi(2)) / v2 - 1.0) + s2[i] - s1[i]
        })
        .sum()
}

pub fn mean_kl(old: &GaussianPolicy, new: &GaussianPolicy, batch: &SampleBatch) -> f64 {
    batch
        .samples
        .iter()
        .map(|s| {
            kl_diag(
                &old.mean(&s.state).unwrap(),
                old.log_std(),
                &new.mean(&s.state).unwrap(),
                new.log_std(),
            )
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// `mean(ρ·Â)`
pub fn surrogate(policy: &GaussianPolicy, batch: &SampleBatch) -> f64 {
    let lps = log_probs(policy, batch);
    batch
        .samples
        .iter()
        .zip(&lps)
        .map(|(s, lp)| (lp - s.old_log_prob).exp() * s.advantage)
        .sum::<f64>()
        / batch.len() as f64
}

/// `Â_t = Σ_l (γλ)^l δ_{t+l}`, summed explicitly for every `t`.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], terminal: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let v = |t: usize| if t < n { values[t] } else { terminal };
    let delta: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * v(t + 1) - v(t)).collect();
    (0..n)
        .map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum())
        .collect()
}

/// `ln ∫_z^∞ φ(t) dt` by composite Simpson on `[z, z + 40]`, integrating the
/// rescaled density `φ(t)/φ(z)` so that the far tail keeps full precision.
pub fn log_upper_tail_numeric(z: f64) -> f64 {
    let intervals = 400_000;
    let width = 40.0;
    let h = width / intervals as f64;
    let g = |t: f64| (-0.5 * (t * t - z * z)).exp();
    let mut acc = g(z) + g(z + width);
    for i in 1..intervals {
        let t = z + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(t);
    }
    let integral = acc * h / 3.0;
    integral.ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}
