use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, LogProbMode};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub executed_action: Vec<f64>,
    /// Environment reward, before any constraint shaping.
    pub reward: f64,
    pub cost: f64,
    pub old_log_prob: f64,
    pub episode_id: usize,
    pub step_index: usize,
}

/// How an episode segment inside a batch ended.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentEnd {
    /// True terminal state: no bootstrap.
    Terminated,
    /// Time limit reached or the batch ran out of steps: bootstrap from the
    /// value of `next_observation`.
    Truncated { next_observation: Vec<f64>, batch_cut: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub range: std::ops::Range<usize>,
    pub end: SegmentEnd,
}

impl Segment {
    /// Whether the episode ran to its natural end inside the batch.
    pub fn completed(&self) -> bool {
        !matches!(self.end, SegmentEnd::Truncated { batch_cut: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub segments: Vec<Segment>,
    pub mode: LogProbMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeTotals {
    pub episode_return: f64,
    pub episode_cost: f64,
    pub length: usize,
    pub completed: bool,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Undiscounted reward and cost sums per segment.
    pub fn episode_totals(&self) -> Vec<EpisodeTotals> {
        self.segments
            .iter()
            .map(|seg| {
                let steps = &self.transitions[seg.range.clone()];
                EpisodeTotals {
                    episode_return: steps.iter().map(|t| t.reward).sum(),
                    episode_cost: steps.iter().map(|t| t.cost).sum(),
                    length: steps.len(),
                    completed: seg.completed(),
                }
            })
            .collect()
    }

    /// Mean episodic return and cost over completed episodes, or over all
    /// segments when no episode completed inside the batch.
    pub fn mean_episode_stats(&self) -> (f64, f64) {
        let totals = self.episode_totals();
        let completed: Vec<_> = totals.iter().filter(|t| t.completed).copied().collect();
        let pool = if completed.is_empty() { totals } else { completed };
        let n = pool.len().max(1) as f64;
        (
            pool.iter().map(|t| t.episode_return).sum::<f64>() / n,
            pool.iter().map(|t| t.episode_cost).sum::<f64>() / n,
        )
    }
}

/// Runs `steps_per_batch` transitions split across `envs` (the first
/// `steps % envs.len()` instances take one extra step), each instance driven
/// by its own RNG. Every instance starts a fresh episode; segments are
/// merged in instance order.
pub fn collect_rollout(
    policy: &GaussianPolicy,
    envs: &mut [Box<dyn Environment>],
    rngs: &mut [ChaCha8Rng],
    steps_per_batch: usize,
    mode: LogProbMode,
    first_episode_id: usize,
) -> Result<Rollout> {
    if envs.is_empty() || envs.len() != rngs.len() {
        return Err(Error::Config("need one rng per environment instance".into()));
    }
    let mut rollout = Rollout {
        transitions: Vec::with_capacity(steps_per_batch),
        segments: Vec::new(),
        mode,
    };
    let mut episode_id = first_episode_id;
    let share = steps_per_batch / envs.len();
    let extra = steps_per_batch % envs.len();
    for (i, (env, rng)) in envs.iter_mut().zip(rngs.iter_mut()).enumerate() {
        let budget = share + usize::from(i < extra);
        if budget == 0 {
            continue;
        }
        let mut obs = env.reset(rng.random())?;
        let mut start = rollout.transitions.len();
        let mut step_index = 0;
        for k in 0..budget {
            let action = policy.sample(&obs, rng)?;
            let old_log_prob = match mode {
                LogProbMode::Bounded => policy.log_prob_bounded(&obs, &action.executed)?,
                LogProbMode::Unbounded => policy.log_prob(&obs, &action.raw)?,
            };
            let step = env.step(&action.executed)?;
            rollout.transitions.push(Transition {
                state: std::mem::take(&mut obs),
                raw_action: action.raw,
                executed_action: action.executed,
                reward: step.reward,
                cost: step.cost,
                old_log_prob,
                episode_id,
                step_index,
            });
            step_index += 1;
            let last = k + 1 == budget;
            let end = if step.terminated {
                Some(SegmentEnd::Terminated)
            } else if step.truncated || last {
                Some(SegmentEnd::Truncated {
                    next_observation: step.observation.clone(),
                    batch_cut: !step.truncated,
                })
            } else {
                None
            };
            match end {
                Some(end) => {
                    rollout.segments.push(Segment {
                        range: start..rollout.transitions.len(),
                        end,
                    });
                    episode_id += 1;
                    start = rollout.transitions.len();
                    step_index = 0;
                    if !last {
                        obs = env.reset(rng.random())?;
                    }
                }
                None => obs = step.observation,
            }
        }
    }
    Ok(rollout)
}
