//! Trust-region policy update: importance-sampled surrogate, Fisher-vector
//! products of the mean Gaussian KL, conjugate gradient and a backtracking
//! line search on the KL constraint.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::objectives::SampleBatch;
use crate::policy::GaussianPolicy;
use crate::tensor_nn::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustRegionConfig {
    /// Bound δ on the mean KL divergence of an accepted step.
    pub kl_limit: f64,
    pub cg_iterations: usize,
    pub cg_damping: f64,
    pub cg_residual_tol: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            kl_limit: 0.01,
            cg_iterations: 10,
            cg_damping: 0.1,
            cg_residual_tol: 1e-10,
            backtrack_ratio: 0.8,
            max_backtracks: 10,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_limit > 0.0) {
            return Err(Error::Config("trust_region.kl_limit must be > 0".into()));
        }
        if !(self.cg_damping > 0.0) {
            return Err(Error::Config("trust_region.cg_damping must be > 0".into()));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(Error::Config("trust_region.backtrack_ratio must lie in (0, 1)".into()));
        }
        if self.cg_iterations == 0 || self.max_backtracks == 0 {
            return Err(Error::Config("trust_region iteration counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateReport {
    /// `mean(ρ·Â)`
    pub value: f64,
    /// Gradient of `value` (not negated).
    pub grad: ParameterVector,
}

/// Importance-sampled surrogate `mean(ρ·Â)` and its gradient at the current
/// parameters.
pub fn surrogate(policy: &GaussianPolicy, batch: &SampleBatch) -> Result<SurrogateReport> {
    if batch.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    let n = batch.len() as f64;
    let mut grad = policy.params_zeros();
    let mut value = 0.0;
    for s in &batch.samples {
        let mut term = 0.0;
        policy.log_prob_with_weighted_grad(
            &s.state,
            batch.scored_action(s),
            batch.mode,
            |lp| {
                term = (lp - s.old_log_prob).exp() * s.advantage;
                term / n
            },
            grad.values_mut(),
        )?;
        value += term;
    }
    Ok(SurrogateReport { value: value / n, grad })
}

/// `KL(N(mean_p, σ_p²) ‖ N(mean_q, σ_q²))` for diagonal Gaussians.
pub fn gaussian_kl(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
    (0..mean_p.len())
        .map(|i| {
            let var_p = (2.0 * log_std_p[i]).exp();
            let var_q = (2.0 * log_std_q[i]).exp();
            log_std_q[i] - log_std_p[i] + (var_p + (mean_p[i] - mean_q[i]).powi(2)) / (2.0 * var_q) - 0.5
        })
        .sum()
}

/// The collecting policy's Gaussian at every batch state, frozen so the KL
/// to a moving policy can be evaluated in closed form.
#[derive(Debug, Clone)]
pub struct KlReference {
    means: Vec<Vec<f64>>,
    log_std: Vec<f64>,
}

impl KlReference {
    pub fn new(policy: &GaussianPolicy, batch: &SampleBatch) -> Result<Self> {
        Ok(Self {
            means: batch
                .samples
                .iter()
                .map(|s| policy.mean(&s.state))
                .collect::<Result<_>>()?,
            log_std: policy.log_std().to_vec(),
        })
    }

    /// Mean over batch states of `KL(π_ref ‖ π)`.
    pub fn mean_kl(&self, policy: &GaussianPolicy, batch: &SampleBatch) -> Result<f64> {
        ensure_len("kl reference", self.means.len(), batch.len())?;
        let mut total = 0.0;
        for (s, m_ref) in batch.samples.iter().zip(&self.means) {
            let m = policy.mean(&s.state)?;
            total += gaussian_kl(m_ref, &self.log_std, &m, policy.log_std());
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean KL and its gradient with respect to the moving policy's parameters.
    pub fn mean_kl_with_grad(&self, policy: &GaussianPolicy, batch: &SampleBatch) -> Result<(f64, ParameterVector)> {
        ensure_len("kl reference", self.means.len(), batch.len())?;
        let n = batch.len() as f64;
        let net = policy.mean_net();
        let np = net.param_count();
        let mut grad = policy.params_zeros();
        let mut total = 0.0;
        let log_std = policy.log_std();
        let var_q: Vec<f64> = log_std.iter().map(|l| (2.0 * l).exp()).collect();
        for (s, m_ref) in batch.samples.iter().zip(&self.means) {
            let trace = net.forward_trace(&s.state)?;
            let m = trace.output();
            total += gaussian_kl(m_ref, &self.log_std, m, log_std);
            let d_mean: Vec<f64> = (0..m.len()).map(|i| (m[i] - m_ref[i]) / var_q[i] / n).collect();
            net.accumulate_gradient(&trace, &d_mean, &mut grad.values_mut()[..np])?;
            for i in 0..m.len() {
                let var_p = (2.0 * self.log_std[i]).exp();
                let g = &mut grad.values_mut()[np + i];
                *g += (1.0 - (var_p + (m_ref[i] - m[i]).powi(2)) / var_q[i]) / n;
            }
        }
        Ok((total / n, grad))
    }
}

/// `(H + damping·I)·v`, where `H` is the Hessian of the mean KL from the
/// current policy to a moving copy, taken at coincidence.
///
/// At coincidence the first derivatives of the KL vanish, so the Hessian is
/// exactly `Jᵀ diag(1/σ²) J` on the mean-network block (`J` the Jacobian of
/// the mean output) and `2·I` on the `log_std` block, with no cross terms.
/// Each state costs one forward-mode and one reverse-mode pass.
pub fn fisher_vector_product(
    policy: &GaussianPolicy,
    batch: &SampleBatch,
    v: &ParameterVector,
    damping: f64,
) -> Result<ParameterVector> {
    ensure_len("fisher vector", policy.param_count(), v.len())?;
    if batch.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    let n = batch.len() as f64;
    let net = policy.mean_net();
    let np = net.param_count();
    let inv_var: Vec<f64> = policy.log_std().iter().map(|l| (-2.0 * l).exp()).collect();
    let v_net = &v.values()[..np];
    let mut out = policy.params_zeros();
    for s in &batch.samples {
        let (_, jv) = net.jvp(&s.state, v_net)?;
        let w: Vec<f64> = jv.iter().zip(&inv_var).map(|(d, iv)| d * iv / n).collect();
        let trace = net.forward_trace(&s.state)?;
        net.accumulate_gradient(&trace, &w, &mut out.values_mut()[..np])?;
    }
    let ov = out.values_mut();
    for i in np..ov.len() {
        ov[i] += 2.0 * v.values()[i];
    }
    for (o, x) in ov.iter_mut().zip(v.values()) {
        *o += damping * x;
    }
    if out.first_non_finite().is_some() {
        return Err(Error::NonFinite("fisher-vector product".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for `A x = b` with `A` symmetric positive definite,
/// starting from `x = 0`.
pub fn conjugate_gradient(
    mut matvec: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    iterations: usize,
    residual_tol: f64,
) -> Result<CgOutcome> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    let mut done = 0;
    for _ in 0..iterations {
        if rr.sqrt() <= residual_tol {
            break;
        }
        let ap = matvec(&p)?;
        ensure_len("cg matvec", b.len(), ap.len())?;
        let alpha = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conjugate gradient iterate".into()));
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        done += 1;
    }
    Ok(CgOutcome {
        x,
        residual_norm: rr.sqrt(),
        iterations: done,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub accepted: bool,
    /// Mean KL to the pre-update policy at the accepted point (0 if rejected).
    pub achieved_kl: f64,
    pub surrogate_improvement: f64,
    pub backtracks: usize,
    /// Fraction of the maximal natural step that was taken.
    pub step_fraction: f64,
    /// The maximal step `sqrt(2δ / xᵀHx)·x`.
    pub full_step: Vec<f64>,
    /// The conjugate-gradient solution `x ≈ H⁻¹g`.
    pub natural_direction: Vec<f64>,
}

impl UpdateOutcome {
    fn rejected() -> Self {
        Self {
            accepted: false,
            achieved_kl: 0.0,
            surrogate_improvement: 0.0,
            backtracks: 0,
            step_fraction: 0.0,
            full_step: Vec::new(),
            natural_direction: Vec::new(),
        }
    }
}

/// One trust-region step. A step is accepted only if the surrogate strictly
/// improves and the closed-form mean KL stays within `kl_limit`; otherwise
/// the parameters are left exactly as they were.
pub fn trpo_update(policy: &mut GaussianPolicy, batch: &SampleBatch, config: &TrustRegionConfig) -> Result<UpdateOutcome> {
    config.validate()?;
    let start = surrogate(policy, batch)?;
    if start.grad.norm() == 0.0 {
        return Ok(UpdateOutcome::rejected());
    }
    let reference = KlReference::new(policy, batch)?;
    let layout = policy.layout().clone();
    let fvp = |v: &[f64]| -> Result<Vec<f64>> {
        let v = ParameterVector::unflatten(layout.clone(), v.to_vec())?;
        Ok(fisher_vector_product(policy, batch, &v, config.cg_damping)?.into_values())
    };
    let cg = conjugate_gradient(fvp, start.grad.values(), config.cg_iterations, config.cg_residual_tol)?;
    let hx = fvp(&cg.x)?;
    let shs = dot(&cg.x, &hx);
    if !(shs > 0.0) || !shs.is_finite() {
        return Ok(UpdateOutcome::rejected());
    }
    let scale = (2.0 * config.kl_limit / shs).sqrt();
    let full_step: Vec<f64> = cg.x.iter().map(|v| scale * v).collect();
    let origin = policy.params().into_values();
    let mut trial = vec![0.0; origin.len()];
    let mut fraction = 1.0;
    for backtrack in 0..config.max_backtracks {
        for i in 0..trial.len() {
            trial[i] = origin[i] + fraction * full_step[i];
        }
        policy.set_flat(&trial)?;
        let kl = reference.mean_kl(policy, batch)?;
        let improvement = surrogate(policy, batch)?.value - start.value;
        if kl.is_finite() && kl <= config.kl_limit && improvement > 0.0 {
            return Ok(UpdateOutcome {
                accepted: true,
                achieved_kl: kl,
                surrogate_improvement: improvement,
                backtracks: backtrack,
                step_fraction: fraction,
                full_step,
                natural_direction: cg.x,
            });
        }
        fraction *= config.backtrack_ratio;
    }
    policy.set_flat(&origin)?;
    Ok(UpdateOutcome {
        backtracks: config.max_backtracks,
        full_step,
        natural_direction: cg.x,
        ..UpdateOutcome::rejected()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_identity_one_iteration() {
        let b = [1.0, -2.0, 0.5];
        let out = conjugate_gradient(|v| Ok(v.to_vec()), &b, 1, 0.0).unwrap();
        assert_eq!(out.x, b.to_vec());
        assert!(out.residual_norm < 1e-15);
    }

    #[test]
    fn cg_zero_rhs() {
        let out = conjugate_gradient(|v| Ok(v.iter().map(|x| 3.0 * x).collect()), &[0.0; 4], 5, 1e-12).unwrap();
        assert_eq!(out.x, vec![0.0; 4]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn cg_non_finite_is_error() {
        let r = conjugate_gradient(|v| Ok(v.iter().map(|_| 0.0).collect()), &[1.0], 2, 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn kl_identity_and_known_value() {
        assert_eq!(gaussian_kl(&[0.3], &[-0.2], &[0.3], &[-0.2]), 0.0);
        // mean shift 0.1, unit variance: 0.005
        assert!((gaussian_kl(&[0.0], &[0.0], &[0.1], &[0.0]) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrustRegionConfig::default().validate().is_ok());
        let bad = TrustRegionConfig {
            backtrack_ratio: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
