//! Diagonal Gaussian policy over box-bounded actions.
//!
//! The mean comes from an MLP, the log standard deviation is a learned,
//! state-independent vector. Actions are drawn unbounded and then clipped to
//! the box before execution. Under [`LogProbMode::Bounded`] the likelihood of
//! an executed action replaces the density by the tail mass beyond the bound
//! for every saturated dimension, so the clipped-action distribution (density
//! plus boundary atoms) is scored exactly.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::normal;
use crate::tensor_nn::{Checkpoint, Layout, Mlp, ParameterVector, Segment};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_SEGMENT: &str = "log_std";

/// Which likelihood scores an action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogProbMode {
    /// Executed (clipped) action, tail mass at saturated dimensions.
    #[default]
    Bounded,
    /// Raw Gaussian density of the unclipped draw.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub raw: Vec<f64>,
    pub executed: Vec<f64>,
    pub per_dim_clipped: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEval {
    pub log_prob: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub per_dim_clipped: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    mean_net: Mlp,
    log_std: Vec<f64>,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    layout: Arc<Layout>,
}

/// Log-likelihood of one action dimension and its partials with respect to
/// the mean and the log standard deviation.
#[derive(Debug, Clone, Copy)]
struct DimTerms {
    log_prob: f64,
    d_mean: f64,
    d_log_std: f64,
    saturated: bool,
}

fn density_terms(a: f64, mean: f64, log_std: f64) -> DimTerms {
    let inv_std = (-log_std).exp();
    let z = (a - mean) * inv_std;
    DimTerms {
        log_prob: normal::log_pdf_std(z) - log_std,
        d_mean: z * inv_std,
        d_log_std: z * z - 1.0,
        saturated: false,
    }
}

fn bounded_terms(a: f64, mean: f64, log_std: f64, low: f64, high: f64) -> DimTerms {
    let inv_std = (-log_std).exp();
    if a >= high {
        // ln Q(z), z = (high - mean)/σ
        let z = (high - mean) * inv_std;
        let h = normal::inverse_mills(z);
        DimTerms {
            log_prob: normal::log_upper_tail(z),
            d_mean: h * inv_std,
            d_log_std: h * z,
            saturated: true,
        }
    } else if a <= low {
        // ln Φ(z) = ln Q(-z), z = (low - mean)/σ
        let z = (low - mean) * inv_std;
        let h = normal::inverse_mills(-z);
        DimTerms {
            log_prob: normal::log_lower_tail(z),
            d_mean: -h * inv_std,
            d_log_std: -h * z,
            saturated: true,
        }
    } else {
        density_terms(a, mean, log_std)
    }
}

impl GaussianPolicy {
    /// Builds a policy with a `obs_dim -> hidden.. -> action_dim` mean network
    /// whose final layer starts scaled by 0.01.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        init_log_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_low.len());
        let mean_net = Mlp::new(&sizes, 0.01, rng)?;
        let log_std = vec![init_log_std; action_low.len()];
        Self::from_parts(mean_net, log_std, action_low, action_high)
    }

    pub fn from_parts(mean_net: Mlp, log_std: Vec<f64>, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        let dim = mean_net.output_dim();
        ensure_len("log_std", dim, log_std.len())?;
        ensure_len("action_low", dim, action_low.len())?;
        ensure_len("action_high", dim, action_high.len())?;
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("action_low must be below action_high in every dimension".into()));
        }
        let mut segments = mean_net.params().layout().segments().to_vec();
        segments.push(Segment::new(LOG_STD_SEGMENT, vec![dim]));
        let layout = Arc::new(Layout::new(segments)?);
        let log_std = log_std.into_iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok(Self {
            mean_net,
            log_std,
            action_low,
            action_high,
            layout,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    /// Mean-network parameters followed by the `log_std` segment.
    pub fn params(&self) -> ParameterVector {
        let mut values = Vec::with_capacity(self.param_count());
        values.extend_from_slice(self.mean_net.params().values());
        values.extend_from_slice(&self.log_std);
        ParameterVector::unflatten(self.layout.clone(), values).expect("layout built from parts")
    }

    /// Loads parameters; `log_std` is projected into `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn set_params(&mut self, params: &ParameterVector) -> Result<()> {
        if !(Arc::ptr_eq(params.layout(), &self.layout) || **params.layout() == *self.layout) {
            return Err(Error::Config("policy parameter layout mismatch".into()));
        }
        self.set_flat(params.values())
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        ensure_len("policy parameters", self.param_count(), values.len())?;
        let n = self.mean_net.param_count();
        self.mean_net.set_flat(&values[..n])?;
        for (dst, &v) in self.log_std.iter_mut().zip(&values[n..]) {
            *dst = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(())
    }

    pub fn set_log_std(&mut self, log_std: &[f64]) -> Result<()> {
        ensure_len("log_std", self.action_dim(), log_std.len())?;
        for (dst, &v) in self.log_std.iter_mut().zip(log_std) {
            *dst = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(())
    }

    /// Zero vector with the policy's parameter layout.
    pub fn params_zeros(&self) -> ParameterVector {
        ParameterVector::zeros(self.layout.clone())
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(state)
    }

    pub fn clip_action(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }

    /// Clipped mean action.
    pub fn greedy_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.clip_action(&self.mean(state)?))
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<ActionSample> {
        let mean = self.mean(state)?;
        Ok(self.sample_from_mean(&mean, rng))
    }

    fn sample_from_mean<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> ActionSample {
        let raw: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + ls.exp() * eps
            })
            .collect();
        let executed = self.clip_action(&raw);
        let per_dim_clipped = raw
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a < lo || a > hi)
            .collect();
        ActionSample {
            raw,
            executed,
            per_dim_clipped,
        }
    }

    fn check_in_bounds(&self, action: &[f64]) -> Result<()> {
        for (i, &a) in action.iter().enumerate() {
            if !(a >= self.action_low[i] && a <= self.action_high[i]) {
                return Err(Error::Domain(format!(
                    "executed action {a} outside [{}, {}] in dimension {i}",
                    self.action_low[i], self.action_high[i]
                )));
            }
        }
        Ok(())
    }

    fn terms(&self, mean: &[f64], action: &[f64], mode: LogProbMode) -> Result<Vec<DimTerms>> {
        ensure_len("action", self.action_dim(), action.len())?;
        if mode == LogProbMode::Bounded {
            self.check_in_bounds(action)?;
        }
        Ok((0..self.action_dim())
            .map(|i| match mode {
                LogProbMode::Unbounded => density_terms(action[i], mean[i], self.log_std[i]),
                LogProbMode::Bounded => bounded_terms(
                    action[i],
                    mean[i],
                    self.log_std[i],
                    self.action_low[i],
                    self.action_high[i],
                ),
            })
            .collect())
    }

    /// Gaussian log-density of a raw (unclipped) action.
    pub fn log_prob(&self, state: &[f64], raw_action: &[f64]) -> Result<f64> {
        self.log_prob_mode(state, raw_action, LogProbMode::Unbounded)
    }

    /// Log-likelihood of an executed action with tail mass at saturated
    /// dimensions. Errors if the action lies outside the action box.
    pub fn log_prob_bounded(&self, state: &[f64], executed_action: &[f64]) -> Result<f64> {
        self.log_prob_mode(state, executed_action, LogProbMode::Bounded)
    }

    pub fn log_prob_mode(&self, state: &[f64], action: &[f64], mode: LogProbMode) -> Result<f64> {
        let mean = self.mean(state)?;
        Ok(self.terms(&mean, action, mode)?.iter().map(|t| t.log_prob).sum())
    }

    pub fn evaluate(&self, state: &[f64], action: &[f64], mode: LogProbMode) -> Result<PolicyEval> {
        let mean = self.mean(state)?;
        let terms = self.terms(&mean, action, mode)?;
        Ok(PolicyEval {
            log_prob: terms.iter().map(|t| t.log_prob).sum(),
            std: self.std(),
            per_dim_clipped: terms.iter().map(|t| t.saturated).collect(),
            mean,
        })
    }

    /// Returns `log π(action | state)` and adds `weight · ∇θ log π` into
    /// `grad` (laid out like [`GaussianPolicy::params`]). A zero weight skips
    /// the backward pass.
    pub fn log_prob_with_grad(
        &self,
        state: &[f64],
        action: &[f64],
        mode: LogProbMode,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.log_prob_with_weighted_grad(state, action, mode, |_| weight, grad)
    }

    /// Like [`GaussianPolicy::log_prob_with_grad`], but the weight is chosen
    /// from the log-probability itself after the forward pass.
    pub fn log_prob_with_weighted_grad(
        &self,
        state: &[f64],
        action: &[f64],
        mode: LogProbMode,
        weight_of: impl FnOnce(f64) -> f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        ensure_len("policy gradient buffer", self.param_count(), grad.len())?;
        let trace = self.mean_net.forward_trace(state)?;
        let terms = self.terms(trace.output(), action, mode)?;
        let log_prob = terms.iter().map(|t| t.log_prob).sum();
        let weight = weight_of(log_prob);
        if weight != 0.0 {
            let n = self.mean_net.param_count();
            let d_mean: Vec<f64> = terms.iter().map(|t| weight * t.d_mean).collect();
            self.mean_net.accumulate_gradient(&trace, &d_mean, &mut grad[..n])?;
            for (g, t) in grad[n..].iter_mut().zip(&terms) {
                *g += weight * t.d_log_std;
            }
        }
        Ok(log_prob)
    }

    /// `(log π, ∇θ log π)` for a single action.
    pub fn score(&self, state: &[f64], action: &[f64], mode: LogProbMode) -> Result<(f64, ParameterVector)> {
        let mut grad = self.params_zeros();
        let lp = self.log_prob_with_grad(state, action, mode, 1.0, grad.values_mut())?;
        Ok((lp, grad))
    }

    /// Closed-form differential entropy of the unclipped Gaussian. The
    /// standard deviation does not depend on the state, so neither does this.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|&l| normal::entropy(l)).sum()
    }

    /// Per-draw values of `-ln p_bounded(clip(a))` for `a ~ π(·|state)`.
    pub fn bounded_surprisal_samples<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        sample_count: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mean = self.mean(state)?;
        (0..sample_count)
            .map(|_| {
                let s = self.sample_from_mean(&mean, rng);
                let terms = self.terms(&mean, &s.executed, LogProbMode::Bounded)?;
                Ok(-terms.iter().map(|t| t.log_prob).sum::<f64>())
            })
            .collect()
    }

    /// Monte-Carlo estimate of `-E[ln p_bounded]` under the clipped-action
    /// distribution. This mixes a density with boundary atoms, so it is not a
    /// differential entropy in the strict sense.
    pub fn entropy_bounded<R: Rng + ?Sized>(&self, state: &[f64], sample_count: usize, rng: &mut R) -> Result<f64> {
        if sample_count == 0 {
            return Err(Error::Domain("entropy_bounded needs sample_count >= 1".into()));
        }
        let draws = self.bounded_surprisal_samples(state, sample_count, rng)?;
        Ok(draws.iter().sum::<f64>() / sample_count as f64)
    }

    /// Appends the mean network and `log_std` to `ck` under `prefix`.
    pub fn write_checkpoint(&self, prefix: &str, ck: &mut Checkpoint) {
        for (seg, values) in self.mean_net.params().segments() {
            ck.push(format!("{prefix}{}", seg.name), seg.shape.clone(), values);
        }
        ck.push(format!("{prefix}{LOG_STD_SEGMENT}"), vec![self.action_dim()], &self.log_std);
    }

    /// Rebuilds a policy saved with [`GaussianPolicy::write_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        let mean_net = mlp_from_checkpoint(ck, prefix)?;
        let log_std = ck
            .get(&format!("{prefix}{LOG_STD_SEGMENT}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing `{prefix}{LOG_STD_SEGMENT}`")))?
            .values
            .clone();
        Self::from_parts(mean_net, log_std, action_low, action_high)
    }
}

/// Reads `{prefix}layer{k}.weight` / `.bias` tensors back into an [`Mlp`].
pub fn mlp_from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Mlp> {
    let mut sizes = Vec::new();
    let mut values = Vec::new();
    for k in 0.. {
        let Some(w) = ck.get(&format!("{prefix}layer{k}.weight")) else {
            break;
        };
        let b = ck
            .get(&format!("{prefix}layer{k}.bias"))
            .ok_or_else(|| Error::Checkpoint(format!("missing `{prefix}layer{k}.bias`")))?;
        let [out, inp] = w.shape[..] else {
            return Err(Error::Checkpoint(format!("`{}` must be rank 2", w.name)));
        };
        if k == 0 {
            sizes.push(inp);
        } else if sizes.last() != Some(&inp) {
            return Err(Error::Checkpoint(format!("`{}` input size does not chain", w.name)));
        }
        if b.shape != [out] {
            return Err(Error::Checkpoint(format!("`{}` has wrong shape", b.name)));
        }
        sizes.push(out);
        values.extend_from_slice(&w.values);
        values.extend_from_slice(&b.values);
    }
    if sizes.is_empty() {
        return Err(Error::Checkpoint(format!("no `{prefix}layer0.weight` tensor")));
    }
    let mut net = Mlp::zeros(&sizes)?;
    net.set_flat(&values)?;
    Ok(net)
}
