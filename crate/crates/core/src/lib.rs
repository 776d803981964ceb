//! On-policy policy-gradient reinforcement learning for bounded continuous
//! action spaces.
//!
//! The crate provides four policy objectives over a diagonal Gaussian policy:
//! the vanilla advantage-weighted policy gradient, the off-policy
//! importance-sampled policy gradient, PPO's clipped surrogate, and the
//! clipped-objective policy gradient (COPG), which clips the log-likelihood
//! objective instead of the importance ratio. Around them sit a trust-region
//! (TRPO) update, a Lagrangian cost-constraint wrapper (RCPO), generalized
//! advantage estimation, two small native environments and a deterministic
//! training loop.
//!
//! Everything is computed in `f64` with explicit, layer-wise reverse-mode
//! gradients; there is no general autodiff.

pub mod advantage;
pub mod constrained;
pub mod envs;
mod error;
pub mod normal;
pub mod objectives;
pub mod policy;
pub mod tensor_nn;
pub mod trainer;
pub mod trpo;

pub use error::{Error, Result};
