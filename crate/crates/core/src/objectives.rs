//! Policy objectives and their parameter gradients.
//!
//! Every objective here is a per-sample function of the new log-probability
//! `l' = log π_θ'(a|s)`, the log-probability recorded at collection time
//! `l = log π_θ(a|s)` and the advantage `Â`. Gradients are obtained as
//! `Σ (∂f/∂l') ∇θ' l'`, so a single backward pass per sample suffices.
//!
//! | objective     | per-sample value                                      |
//! |---------------|-------------------------------------------------------|
//! | vanilla PG    | `l'·Â`                                                |
//! | PPO           | `min(ρ·Â, clip(ρ, 1-ε, 1+ε)·Â)`, `ρ = exp(l' - l)`    |
//! | COPG          | `min(l'·Â, (ln clip(ρ, 1-ε, 1+ε) + l)·Â)`             |
//! | off-policy PG | `l'·w_t`, `w_t` built from cumulative ratio products  |
//!
//! Reports carry the *loss* (the negated mean objective) and its gradient, so
//! they can be handed straight to a minimizer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, LogProbMode};
use crate::tensor_nn::ParameterVector;

/// Log-probabilities are floored here before entering any objective value;
/// the gradient below the floor is zero. Samples that hit it are counted in
/// [`ObjectiveReport::floored_samples`].
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// Episodes longer than this may underflow the importance-ratio products.
pub const LONG_EPISODE_WARNING: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub executed_action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub advantage: f64,
    /// Log-probability of the stored action under the collecting policy,
    /// scored with the batch's [`LogProbMode`].
    pub old_log_prob: f64,
    pub episode_id: usize,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
    pub mode: LogProbMode,
}

impl SampleBatch {
    /// Validates finiteness and that each episode's steps are contiguous and
    /// in time order.
    pub fn new(samples: Vec<Sample>, mode: LogProbMode) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !s.old_log_prob.is_finite() || !s.advantage.is_finite() {
                return Err(Error::NonFinite(format!("sample {i} (old_log_prob or advantage)")));
            }
        }
        let batch = Self { samples, mode };
        let mut seen = Vec::new();
        for r in batch.episode_ranges() {
            let id = batch.samples[r.start].episode_id;
            if seen.contains(&id) {
                return Err(Error::Domain(format!("episode {id} is not contiguous in the batch")));
            }
            seen.push(id);
            if batch.samples[r.clone()].windows(2).any(|w| w[1].step_index <= w[0].step_index) {
                return Err(Error::Domain(format!("episode {id} steps are not in time order")));
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The action the batch's likelihood convention scores.
    pub fn scored_action<'a>(&self, s: &'a Sample) -> &'a [f64] {
        match self.mode {
            LogProbMode::Bounded => &s.executed_action,
            LogProbMode::Unbounded => &s.raw_action,
        }
    }

    /// Sub-batch in the given index order (no grouping validation).
    pub fn select(&self, indices: &[usize]) -> SampleBatch {
        SampleBatch {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            mode: self.mode,
        }
    }

    /// Maximal runs of equal `episode_id`.
    pub fn episode_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            if i == self.samples.len() || self.samples[i].episode_id != self.samples[start].episode_id {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }

    pub fn new_log_probs(&self, policy: &GaussianPolicy) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| policy.log_prob_mode(&s.state, self.scored_action(s), self.mode))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    pub epsilon: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { epsilon: 0.2 }
    }
}

impl ClipConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let c = Self { epsilon };
        c.validate()?;
        Ok(c)
    }

    /// `ε < 1` keeps `clip(ρ) >= 1 - ε > 0`, so `ln clip(ρ)` is defined.
    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("clip epsilon must lie in (0, 1), got {}", self.epsilon)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    /// Negated mean objective.
    pub loss: f64,
    /// Gradient of `loss` with respect to the policy parameters.
    pub grad: ParameterVector,
    pub clip_fraction: f64,
    /// Raw `mean(old_log_prob - new_log_prob)`; may be slightly negative.
    pub approx_kl: f64,
    pub per_sample_clipped: Vec<bool>,
    pub floored_samples: usize,
}

/// Which side of the trust band is actively clipping a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipSide {
    High,
    Low,
}

/// The clipped branch is selected (and differs from the unclipped one)
/// exactly when the ratio has left the band on the side the advantage pushes
/// towards.
pub fn active_clip(ratio: f64, advantage: f64, epsilon: f64) -> Option<ClipSide> {
    if advantage > 0.0 && ratio > 1.0 + epsilon {
        Some(ClipSide::High)
    } else if advantage < 0.0 && ratio < 1.0 - epsilon {
        Some(ClipSide::Low)
    } else {
        None
    }
}

/// Per-sample objective value, its derivative with respect to the new
/// log-probability, and whether the clipped branch was taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTerm {
    pub value: f64,
    pub d_new_log_prob: f64,
    pub clipped: bool,
}

fn floor_log_prob(lp: f64) -> (f64, bool) {
    if lp < LOG_PROB_FLOOR {
        (LOG_PROB_FLOOR, true)
    } else {
        (lp, false)
    }
}

pub fn vanilla_term(new_log_prob: f64, advantage: f64) -> SampleTerm {
    let (l_new, floored) = floor_log_prob(new_log_prob);
    SampleTerm {
        value: l_new * advantage,
        d_new_log_prob: if floored { 0.0 } else { advantage },
        clipped: false,
    }
}

pub fn ppo_term(new_log_prob: f64, old_log_prob: f64, advantage: f64, epsilon: f64) -> SampleTerm {
    let (l_new, floored) = floor_log_prob(new_log_prob);
    let (l_old, _) = floor_log_prob(old_log_prob);
    let ratio = (l_new - l_old).exp();
    let unclipped = ratio * advantage;
    match active_clip(ratio, advantage, epsilon) {
        Some(_) => {
            let clipped_value = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
            SampleTerm {
                value: clipped_value.min(unclipped),
                d_new_log_prob: 0.0,
                clipped: true,
            }
        }
        None => SampleTerm {
            value: unclipped,
            d_new_log_prob: if floored { 0.0 } else { unclipped },
            clipped: false,
        },
    }
}

/// Clipped-objective policy gradient term. The clipped branch is evaluated in
/// log space as `(ln clip(ρ) + l)·Â` and is constant in θ' while active.
pub fn copg_term(new_log_prob: f64, old_log_prob: f64, advantage: f64, epsilon: f64) -> SampleTerm {
    let (l_new, floored) = floor_log_prob(new_log_prob);
    let (l_old, _) = floor_log_prob(old_log_prob);
    let ratio = (l_new - l_old).exp();
    let unclipped = l_new * advantage;
    match active_clip(ratio, advantage, epsilon) {
        Some(_) => {
            let clipped_value = (ratio.clamp(1.0 - epsilon, 1.0 + epsilon).ln() + l_old) * advantage;
            SampleTerm {
                value: clipped_value.min(unclipped),
                d_new_log_prob: 0.0,
                clipped: true,
            }
        }
        None => SampleTerm {
            value: unclipped,
            d_new_log_prob: if floored { 0.0 } else { advantage },
            clipped: false,
        },
    }
}

fn evaluate(
    policy: &GaussianPolicy,
    batch: &SampleBatch,
    mut term: impl FnMut(f64, &Sample) -> SampleTerm,
) -> Result<ObjectiveReport> {
    if batch.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    let n = batch.len() as f64;
    let mut grad = policy.params_zeros();
    let mut objective = 0.0;
    let mut kl = 0.0;
    let mut floored = 0;
    let mut per_sample_clipped = Vec::with_capacity(batch.len());
    for s in &batch.samples {
        let mut t = None;
        let new_lp = policy.log_prob_with_weighted_grad(
            &s.state,
            batch.scored_action(s),
            batch.mode,
            |lp| {
                let st = term(lp, s);
                t = Some(st);
                -st.d_new_log_prob / n
            },
            grad.values_mut(),
        )?;
        let t = t.expect("weight closure runs once");
        if new_lp < LOG_PROB_FLOOR || s.old_log_prob < LOG_PROB_FLOOR {
            floored += 1;
        }
        objective += t.value;
        kl += s.old_log_prob - new_lp;
        per_sample_clipped.push(t.clipped);
    }
    if !objective.is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    let clipped = per_sample_clipped.iter().filter(|&&c| c).count();
    Ok(ObjectiveReport {
        loss: -objective / n,
        grad,
        clip_fraction: clipped as f64 / n,
        approx_kl: kl / n,
        per_sample_clipped,
        floored_samples: floored,
    })
}

/// Advantage-weighted log-likelihood: `mean(l'·Â)`.
pub fn vanilla_pg(policy: &GaussianPolicy, batch: &SampleBatch) -> Result<ObjectiveReport> {
    evaluate(policy, batch, |lp, s| vanilla_term(lp, s.advantage))
}

/// PPO's clipped importance-sampling surrogate.
pub fn ppo_clip(policy: &GaussianPolicy, batch: &SampleBatch, clip: ClipConfig) -> Result<ObjectiveReport> {
    clip.validate()?;
    evaluate(policy, batch, |lp, s| ppo_term(lp, s.old_log_prob, s.advantage, clip.epsilon))
}

/// Clipped-objective policy gradient.
pub fn copg(policy: &GaussianPolicy, batch: &SampleBatch, clip: ClipConfig) -> Result<ObjectiveReport> {
    clip.validate()?;
    evaluate(policy, batch, |lp, s| copg_term(lp, s.old_log_prob, s.advantage, clip.epsilon))
}

/// Range of the reward-side importance product for step `t`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardProduct {
    /// `Π_{t''=t+1}^{t'}`: together with the state product `Π_{1}^{t}` every
    /// ratio up to `t'` appears exactly once, which keeps the estimator
    /// unbiased.
    #[default]
    AfterStep,
    /// `Π_{t''=t}^{t'}`: the index range as literally printed; ratio `t`
    /// appears in both products.
    IncludingStep,
}

/// What multiplies the reward-side products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnSignal {
    /// Raw rewards-to-go (reference estimator).
    #[default]
    RewardToGo,
    /// Recorded per-step advantages in place of the reward sum (diagnostic).
    Advantage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffPolicyOptions {
    pub reward_product: RewardProduct,
    pub signal: ReturnSignal,
}

/// Per-step weights `w_t` of the off-policy gradient `Σ_t ∇l'_t · w_t` for
/// one episode, given its log-ratios, rewards and advantages.
pub fn offpolicy_weights(log_ratios: &[f64], rewards: &[f64], advantages: &[f64], options: OffPolicyOptions) -> Vec<f64> {
    let n = log_ratios.len();
    let ratios: Vec<f64> = log_ratios.iter().map(|l| l.exp()).collect();
    // reward side, computed back to front: E_t = r_t + ρ_{t+1} E_{t+1}
    let mut after = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        acc = rewards[t] + if t + 1 < n { ratios[t + 1] * acc } else { 0.0 };
        after[t] = acc;
    }
    let mut prefix = 1.0;
    (0..n)
        .map(|t| {
            prefix *= ratios[t];
            let tail = match options.signal {
                ReturnSignal::Advantage => advantages[t],
                ReturnSignal::RewardToGo => match options.reward_product {
                    RewardProduct::AfterStep => after[t],
                    RewardProduct::IncludingStep => ratios[t] * after[t],
                },
            };
            prefix * tail
        })
        .collect()
}

/// Off-policy importance-sampled policy gradient with causal ratio products.
///
/// The loss is `-(1/N) Σ_t l'_t · w_t` with the weights `w_t` held fixed, so
/// the reported gradient is exactly the estimator (normalized by the sample
/// count `N` to share a scale with the per-sample-mean objectives). Rewards
/// come from [`Sample::reward`]; episode grouping from `episode_id`.
pub fn offpolicy_pg(policy: &GaussianPolicy, batch: &SampleBatch, options: OffPolicyOptions) -> Result<ObjectiveReport> {
    if batch.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    let new_lps = batch.new_log_probs(policy)?;
    let mut weights = vec![0.0; batch.len()];
    for range in batch.episode_ranges() {
        if range.len() > LONG_EPISODE_WARNING {
            log::warn!(
                "episode of {} steps: importance products may underflow",
                range.len()
            );
        }
        let samples = &batch.samples[range.clone()];
        let log_ratios: Vec<f64> = samples
            .iter()
            .zip(&new_lps[range.clone()])
            .map(|(s, &lp)| floor_log_prob(lp).0 - floor_log_prob(s.old_log_prob).0)
            .collect();
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        let advantages: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        let w = offpolicy_weights(&log_ratios, &rewards, &advantages, options);
        if let Some(bad) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "importance product at step {} of episode {}",
                bad, samples[0].episode_id
            )));
        }
        weights[range].copy_from_slice(&w);
    }
    let mut i = 0;
    evaluate(policy, batch, |lp, _| {
        let w = weights[i];
        i += 1;
        let (l, floored) = floor_log_prob(lp);
        SampleTerm {
            value: l * w,
            d_new_log_prob: if floored { 0.0 } else { w },
            clipped: false,
        }
    })
    .map(|mut r| {
        r.floored_samples = new_lps.iter().filter(|&&l| l < LOG_PROB_FLOOR).count();
        r
    })
}

/// `mean(old_log_prob - new_log_prob)`, reported raw.
pub fn approx_kl(batch: &SampleBatch, new_log_probs: &[f64]) -> Result<f64> {
    crate::error::ensure_len("new log-probs", batch.len(), new_log_probs.len())?;
    if batch.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    let sum: f64 = batch
        .samples
        .iter()
        .zip(new_log_probs)
        .map(|(s, &lp)| s.old_log_prob - lp)
        .sum();
    Ok(sum / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BranchLabel {
    Unclipped,
    ClippedHigh,
    ClippedLow,
    /// Zero advantage or zero score: both gradients vanish identically.
    Dead,
}

impl BranchLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchLabel::Unclipped => "unclipped",
            BranchLabel::ClippedHigh => "clipped_high",
            BranchLabel::ClippedLow => "clipped_low",
            BranchLabel::Dead => "dead",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientRatio {
    pub label: BranchLabel,
    /// `‖∇J_COPG‖ / ‖∇J_PPO‖` for this sample; `None` for dead samples.
    pub ratio: Option<f64>,
    pub importance_ratio: f64,
    pub advantage: f64,
    pub new_log_prob: f64,
    pub old_log_prob: f64,
}

/// Per-sample ratio of the COPG gradient norm to the PPO gradient norm.
///
/// Unclipped samples use the actual per-sample gradients of both objectives.
/// When a sample is actively clipped both gradients are exactly zero; the
/// ratio reported then is the one at the clip boundary, approached from inside
/// the band, where COPG's gradient is `Â∇l'` and PPO's is `(1±ε)Â∇l'`.
pub fn gradient_ratio_diagnostic(
    policy: &GaussianPolicy,
    batch: &SampleBatch,
    clip: ClipConfig,
) -> Result<Vec<GradientRatio>> {
    clip.validate()?;
    let eps = clip.epsilon;
    batch
        .samples
        .iter()
        .map(|s| {
            let (new_lp, score) = policy.score(&s.state, batch.scored_action(s), batch.mode)?;
            let ratio = (floor_log_prob(new_lp).0 - floor_log_prob(s.old_log_prob).0).exp();
            let a = s.advantage;
            let mut out = GradientRatio {
                label: BranchLabel::Dead,
                ratio: None,
                importance_ratio: ratio,
                advantage: a,
                new_log_prob: new_lp,
                old_log_prob: s.old_log_prob,
            };
            if a == 0.0 || score.norm() == 0.0 {
                return Ok(out);
            }
            let (copg_coef, ppo_coef) = match active_clip(ratio, a, eps) {
                None => {
                    out.label = BranchLabel::Unclipped;
                    (
                        copg_term(new_lp, s.old_log_prob, a, eps).d_new_log_prob,
                        ppo_term(new_lp, s.old_log_prob, a, eps).d_new_log_prob,
                    )
                }
                Some(side) => {
                    let bound = match side {
                        ClipSide::High => {
                            out.label = BranchLabel::ClippedHigh;
                            1.0 + eps
                        }
                        ClipSide::Low => {
                            out.label = BranchLabel::ClippedLow;
                            1.0 - eps
                        }
                    };
                    (a, bound * a)
                }
            };
            let mut g_copg = score.clone();
            g_copg.scale(copg_coef);
            let mut g_ppo = score;
            g_ppo.scale(ppo_coef);
            let denom = g_ppo.norm();
            if denom == 0.0 {
                out.label = BranchLabel::Dead;
                return Ok(out);
            }
            out.ratio = Some(g_copg.norm() / denom);
            Ok(out)
        })
        .collect()
}

/// Among samples whose ratio left the band, the fraction that left on the
/// high side, split by advantage sign: `(Â > 0, Â < 0)`. `None` when a group
/// has no out-of-band samples.
pub fn high_side_fractions(ratios: &[GradientRatio], epsilon: f64) -> (Option<f64>, Option<f64>) {
    let frac = |positive: bool| {
        let mut high = 0usize;
        let mut out = 0usize;
        for r in ratios {
            if (positive && r.advantage > 0.0) || (!positive && r.advantage < 0.0) {
                if r.importance_ratio > 1.0 + epsilon {
                    high += 1;
                    out += 1;
                } else if r.importance_ratio < 1.0 - epsilon {
                    out += 1;
                }
            }
        }
        (out > 0).then(|| high as f64 / out as f64)
    };
    (frac(true), frac(false))
}
