//! The on-policy training loop.
//!
//! Each batch runs collect, advantage estimation (on constraint-shaped
//! rewards when a constraint is configured), policy update, value
//! regression, multiplier update, and logging. The run is a pure function
//! of its [`TrainConfig`]: weight init, rollouts, minibatch shuffling and
//! entropy sampling each draw from their own ChaCha stream of the seed.

mod config;
mod metrics;
mod rollout;

pub use config::{Algorithm, NetworkConfig, TrainConfig};
pub use metrics::{metrics_csv_string, read_metrics_csv, write_metrics_csv, MetricRecord, CSV_COMMENT};
pub use rollout::{collect_rollout, EpisodeTotals, Rollout, Segment, SegmentEnd, Transition};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::advantage::{gae, normalize, AdvantageConfig};
use crate::constrained::{multiplier_update, shaped_reward, LagrangeState};
use crate::envs::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::objectives::{
    approx_kl, copg, gradient_ratio_diagnostic, ppo_clip, GradientRatio, ObjectiveReport, Sample, SampleBatch,
};
use crate::policy::GaussianPolicy;
use crate::tensor_nn::{AdamConfig, AdamState, Checkpoint, Mlp};
use crate::trpo::trpo_update;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const ENTROPY_STREAM: u64 = 2;
const ROLLOUT_STREAM_BASE: u64 = 16;

pub const POLICY_PREFIX: &str = "policy.";
pub const VALUE_PREFIX: &str = "value.";
pub const LAMBDA_TENSOR: &str = "lagrange.lambda";

/// ChaCha8 stream `stream` of `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A batch ready for the policy update, plus the regression targets for the
/// value network.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub batch: SampleBatch,
    pub value_targets: Vec<f64>,
    pub mean_episode_return: f64,
    pub mean_episode_cost: f64,
}

/// Shapes rewards (if `lagrange` is given), runs GAE per segment with
/// bootstrap values for truncated segments, and optionally normalizes the
/// advantages over the batch (skipped for batches of one sample).
pub fn prepare_batch(
    rollout: &Rollout,
    value_net: &Mlp,
    advantage: &AdvantageConfig,
    lagrange: Option<&LagrangeState>,
) -> Result<PreparedBatch> {
    if rollout.is_empty() {
        return Err(Error::Empty("rollout"));
    }
    let n = rollout.len();
    let mut rewards = Vec::with_capacity(n);
    let mut advantages = Vec::with_capacity(n);
    let mut value_targets = Vec::with_capacity(n);
    for seg in &rollout.segments {
        let steps = &rollout.transitions[seg.range.clone()];
        let r: Vec<f64> = steps
            .iter()
            .map(|t| match lagrange {
                Some(l) => shaped_reward(t.reward, t.cost, l),
                None => t.reward,
            })
            .collect();
        let v: Vec<f64> = steps
            .iter()
            .map(|t| Ok(value_net.forward(&t.state)?[0]))
            .collect::<Result<_>>()?;
        let terminal_value = match &seg.end {
            SegmentEnd::Terminated => 0.0,
            SegmentEnd::Truncated { next_observation, .. } => value_net.forward(next_observation)?[0],
        };
        for rec in gae(&r, &v, terminal_value, advantage)? {
            advantages.push(rec.advantage);
            value_targets.push(rec.value_target);
        }
        rewards.extend(r);
    }
    if advantage.normalize_advantages && n >= 2 {
        advantages = normalize(&advantages)?;
    }
    let samples = rollout
        .transitions
        .iter()
        .zip(rewards)
        .zip(&advantages)
        .map(|((t, reward), &advantage)| Sample {
            state: t.state.clone(),
            raw_action: t.raw_action.clone(),
            executed_action: t.executed_action.clone(),
            reward,
            cost: t.cost,
            advantage,
            old_log_prob: t.old_log_prob,
            episode_id: t.episode_id,
            step_index: t.step_index,
        })
        .collect();
    let (mean_episode_return, mean_episode_cost) = rollout.mean_episode_stats();
    Ok(PreparedBatch {
        batch: SampleBatch::new(samples, rollout.mode)?,
        value_targets,
        mean_episode_return,
        mean_episode_cost,
    })
}

/// Splits `0..n` into `count` near-equal parts (the first `n % count` get one
/// extra index). With `count > 1` the indices are shuffled first.
pub fn minibatch_partition<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    if count <= 1 {
        return vec![indices];
    }
    indices.shuffle(rng);
    let share = n / count;
    let extra = n % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for k in 0..count {
        let len = share + usize::from(k < extra);
        out.push(indices[start..start + len].to_vec());
        start += len;
    }
    out
}

/// `mean((V(s) - target)²)`
pub fn value_mse(net: &Mlp, states: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    crate::error::ensure_len("value targets", states.len(), targets.len())?;
    if states.is_empty() {
        return Err(Error::Empty("value regression batch"));
    }
    let mut total = 0.0;
    for (s, t) in states.iter().zip(targets) {
        total += (net.forward(s)?[0] - t).powi(2);
    }
    Ok(total / states.len() as f64)
}

/// MSE and its gradient over the given subset of the regression batch.
pub fn value_loss_with_grad(net: &Mlp, states: &[Vec<f64>], targets: &[f64], indices: &[usize]) -> Result<(f64, Vec<f64>)> {
    let m = indices.len() as f64;
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    for &i in indices {
        let trace = net.forward_trace(&states[i])?;
        let err = trace.output()[0] - targets[i];
        loss += err * err / m;
        net.accumulate_gradient(&trace, &[2.0 * err / m], &mut grad)?;
    }
    Ok((loss, grad))
}

/// Regresses `V(s)` onto `targets` with Adam for `epochs` passes over
/// `minibatch_count` shuffled minibatches. The returned trace holds the
/// full-batch MSE before every epoch followed by the final MSE
/// (`epochs + 1` entries).
pub fn fit_value<R: Rng + ?Sized>(
    net: &mut Mlp,
    adam: &mut AdamState,
    states: &[Vec<f64>],
    targets: &[f64],
    epochs: usize,
    minibatch_count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        trace.push(value_mse(net, states, targets)?);
        for mb in minibatch_partition(states.len(), minibatch_count, rng) {
            let (_, grad) = value_loss_with_grad(net, states, targets, &mb)?;
            let mut params = net.params().clone();
            let grad = crate::tensor_nn::ParameterVector::unflatten(params.layout().clone(), grad)?;
            adam.step(&mut params, &grad)?;
            net.set_params(params)?;
        }
    }
    trace.push(value_mse(net, states, targets)?);
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct FirstOrderOutcome {
    pub epochs_used: usize,
    /// Approximate KL at the last check: the value that triggered the early
    /// stop, or the value after the final epoch.
    pub final_kl: f64,
    /// Full-batch objective at the final parameters.
    pub final_report: ObjectiveReport,
}

fn first_order_objective(policy: &GaussianPolicy, batch: &SampleBatch, config: &TrainConfig) -> Result<ObjectiveReport> {
    match config.algorithm {
        Algorithm::Ppo => ppo_clip(policy, batch, config.clip),
        Algorithm::Copg => copg(policy, batch, config.clip),
        Algorithm::Trpo => Err(Error::Config("trpo has no first-order objective".into())),
    }
}

/// Multi-epoch minibatch Adam updates on the PPO or COPG loss. Before every
/// epoch after the first the approximate KL over the whole batch is checked,
/// and the loop stops once `max(kl, 0)` reaches `kl_stop_threshold`. Any
/// error, including a non-finite loss, restores the policy and optimizer
/// state from before the call.
pub fn update_policy_firstorder<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    adam: &mut AdamState,
    batch: &SampleBatch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<FirstOrderOutcome> {
    let snapshot = (policy.clone(), adam.clone());
    let result = first_order_epochs(policy, adam, batch, config, rng);
    if result.is_err() {
        *policy = snapshot.0;
        *adam = snapshot.1;
    }
    result
}

fn first_order_epochs<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    adam: &mut AdamState,
    batch: &SampleBatch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<FirstOrderOutcome> {
    first_order_objective(policy, batch, config)?;
    let mut epochs_used = 0;
    let mut kl = 0.0;
    let mut stopped = false;
    for _ in 0..config.epochs_per_batch {
        kl = approx_kl(batch, &batch.new_log_probs(policy)?)?;
        if epochs_used > 0 && kl.max(0.0) >= config.kl_stop_threshold {
            stopped = true;
            break;
        }
        for mb in minibatch_partition(batch.len(), config.minibatch_count, rng) {
            let report = if config.minibatch_count == 1 {
                first_order_objective(policy, batch, config)?
            } else {
                first_order_objective(policy, &batch.select(&mb), config)?
            };
            if !report.loss.is_finite() {
                return Err(Error::NonFinite("policy loss".into()));
            }
            let mut params = policy.params();
            adam.step(&mut params, &report.grad)?;
            policy.set_params(&params)?;
        }
        epochs_used += 1;
    }
    if !stopped {
        kl = approx_kl(batch, &batch.new_log_probs(policy)?)?;
    }
    Ok(FirstOrderOutcome {
        epochs_used,
        final_kl: kl,
        final_report: first_order_objective(policy, batch, config)?,
    })
}

/// Mean return and cost of the mean action over `episodes` full episodes.
pub fn greedy_eval(policy: &GaussianPolicy, env: &EnvConfig, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Domain("greedy evaluation needs at least one episode".into()));
    }
    let mut e = env.build()?;
    let mut rng = seeded_stream(seed, ROLLOUT_STREAM_BASE);
    let (mut ret, mut cost) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut obs = e.reset(rng.random())?;
        loop {
            let step = e.step(&policy.greedy_action(&obs)?)?;
            ret += step.reward;
            cost += step.cost;
            if step.terminated || step.truncated {
                break;
            }
            obs = step.observation;
        }
    }
    Ok((ret / episodes as f64, cost / episodes as f64))
}

/// Step-wise training driver; [`train`] runs it to completion.
pub struct Trainer {
    config: TrainConfig,
    policy: GaussianPolicy,
    value_net: Mlp,
    policy_adam: AdamState,
    value_adam: AdamState,
    envs: Vec<Box<dyn Environment>>,
    rollout_rngs: Vec<ChaCha8Rng>,
    shuffle_rng: ChaCha8Rng,
    entropy_rng: ChaCha8Rng,
    lagrange: Option<LagrangeState>,
    batches_done: usize,
    next_episode_id: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let envs: Vec<Box<dyn Environment>> = (0..config.num_envs).map(|_| config.env.build()).collect::<Result<_>>()?;
        let (low, high) = envs[0].action_bounds();
        let obs_dim = envs[0].obs_dim();
        let mut init = seeded_stream(config.seed, INIT_STREAM);
        let policy = GaussianPolicy::new(
            obs_dim,
            &config.network.policy_hidden,
            low,
            high,
            config.network.init_log_std,
            &mut init,
        )?;
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&config.network.value_hidden);
        sizes.push(1);
        let value_net = Mlp::new(&sizes, 1.0, &mut init)?;
        let policy_adam = AdamState::new(policy.param_count(), AdamConfig::with_lr(config.policy_lr));
        let value_adam = AdamState::new(value_net.param_count(), AdamConfig::with_lr(config.value_lr));
        let rollout_rngs = (0..config.num_envs as u64)
            .map(|i| seeded_stream(config.seed, ROLLOUT_STREAM_BASE + i))
            .collect();
        Ok(Self {
            shuffle_rng: seeded_stream(config.seed, SHUFFLE_STREAM),
            entropy_rng: seeded_stream(config.seed, ENTROPY_STREAM),
            lagrange: config.constrained.as_ref().map(LagrangeState::new),
            config,
            policy,
            value_net,
            policy_adam,
            value_adam,
            envs,
            rollout_rngs,
            batches_done: 0,
            next_episode_id: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut GaussianPolicy {
        &mut self.policy
    }

    pub fn value_net(&self) -> &Mlp {
        &self.value_net
    }

    pub fn lagrange(&self) -> Option<&LagrangeState> {
        self.lagrange.as_ref()
    }

    pub fn batches_done(&self) -> usize {
        self.batches_done
    }

    /// Collects one batch with the current policy.
    pub fn collect(&mut self) -> Result<Rollout> {
        let rollout = collect_rollout(
            &self.policy,
            &mut self.envs,
            &mut self.rollout_rngs,
            self.config.steps_per_batch,
            self.config.log_prob_mode,
            self.next_episode_id,
        )?;
        self.next_episode_id += rollout.segments.len();
        Ok(rollout)
    }

    /// Collects a batch and computes advantages, without updating anything.
    pub fn collect_prepared(&mut self) -> Result<PreparedBatch> {
        let rollout = self.collect()?;
        prepare_batch(&rollout, &self.value_net, &self.config.advantage, self.lagrange.as_ref())
    }

    /// One PPO or COPG update on a prepared batch, using the trainer's
    /// optimizer and shuffle stream.
    pub fn first_order_update(&mut self, batch: &SampleBatch) -> Result<FirstOrderOutcome> {
        update_policy_firstorder(&mut self.policy, &mut self.policy_adam, batch, &self.config, &mut self.shuffle_rng)
    }

    /// Collects one batch, takes `steps` full-batch Adam steps on the PPO
    /// loss (for `ppo` configs) or the COPG loss (otherwise), then measures
    /// the per-sample gradient ratios against the collecting policy.
    pub fn diagnose(&mut self, steps: usize) -> Result<DiagnosticRun> {
        let prepared = self.collect_prepared()?;
        let batch = prepared.batch;
        for _ in 0..steps {
            let report = match self.config.algorithm {
                Algorithm::Ppo => ppo_clip(&self.policy, &batch, self.config.clip)?,
                _ => copg(&self.policy, &batch, self.config.clip)?,
            };
            let mut params = self.policy.params();
            self.policy_adam.step(&mut params, &report.grad)?;
            self.policy.set_params(&params)?;
        }
        let ratios = gradient_ratio_diagnostic(&self.policy, &batch, self.config.clip)?;
        Ok(DiagnosticRun { batch, ratios, steps })
    }

    /// Runs one full batch and returns its metrics.
    pub fn step(&mut self) -> Result<MetricRecord> {
        let index = self.batches_done;
        let record = self.run_batch(index).map_err(|e| Error::Batch {
            batch: index,
            source: Box::new(e),
        })?;
        self.batches_done += 1;
        log::info!(
            "batch {index}: return {:.4} cost {:.3} entropy {:.4} kl {:.5} epochs {}",
            record.mean_episode_return,
            record.mean_episode_cost,
            record.policy_entropy,
            record.approx_kl_final,
            record.epochs_used
        );
        Ok(record)
    }

    fn run_batch(&mut self, index: usize) -> Result<MetricRecord> {
        let prepared = self.collect_prepared()?;
        let batch = &prepared.batch;

        let (epochs_used, approx_kl_final, clip_fraction) = match self.config.algorithm {
            Algorithm::Ppo | Algorithm::Copg => {
                let out = self.first_order_update(batch)?;
                (out.epochs_used, out.final_kl, out.final_report.clip_fraction)
            }
            Algorithm::Trpo => {
                let out = trpo_update(&mut self.policy, batch, &self.config.trust_region)?;
                let report = ppo_clip(&self.policy, batch, self.config.clip)?;
                (usize::from(out.accepted), report.approx_kl, report.clip_fraction)
            }
        };

        let states: Vec<Vec<f64>> = batch.samples.iter().map(|s| s.state.clone()).collect();
        let trace = fit_value(
            &mut self.value_net,
            &mut self.value_adam,
            &states,
            &prepared.value_targets,
            self.config.value_epochs,
            self.config.minibatch_count,
            &mut self.shuffle_rng,
        )?;

        if let (Some(spec), Some(state)) = (&self.config.constrained, &self.lagrange) {
            self.lagrange = Some(multiplier_update(state, prepared.mean_episode_cost, spec)?);
        }

        let mut bounded = 0.0;
        for _ in 0..self.config.entropy_log_samples {
            let s = &batch.samples[self.entropy_rng.random_range(0..batch.len())];
            bounded += self.policy.entropy_bounded(&s.state, 1, &mut self.entropy_rng)?;
        }

        let record = MetricRecord {
            batch_index: index,
            mean_episode_return: prepared.mean_episode_return,
            mean_episode_cost: prepared.mean_episode_cost,
            policy_entropy: self.policy.entropy(),
            policy_entropy_bounded: bounded / self.config.entropy_log_samples as f64,
            approx_kl_final,
            clip_fraction,
            lambda: self.lagrange.map(|l| l.lambda),
            value_loss: trace[0],
            epochs_used,
        };
        if !record.is_finite() {
            return Err(Error::NonFinite("metric record".into()));
        }
        Ok(record)
    }

    /// Policy, value network and (if constrained) the multiplier.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        self.policy.write_checkpoint(POLICY_PREFIX, &mut ck);
        for (seg, values) in self.value_net.params().segments() {
            ck.push(format!("{VALUE_PREFIX}{}", seg.name), seg.shape.clone(), values);
        }
        if let Some(l) = &self.lagrange {
            ck.push(LAMBDA_TENSOR, vec![1], &[l.lambda]);
        }
        ck
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticRun {
    pub batch: SampleBatch,
    pub ratios: Vec<GradientRatio>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricRecord>,
    pub checkpoint: Checkpoint,
}

/// Runs `total_batches` batches from a fresh initialization.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let metrics = (0..config.total_batches)
        .map(|_| trainer.step())
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome {
        metrics,
        checkpoint: trainer.checkpoint(),
    })
}
