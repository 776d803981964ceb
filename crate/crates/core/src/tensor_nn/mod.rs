//! Dense math, the tanh MLP with hand-written gradients, Adam, and the binary
//! checkpoint format.

mod adam;
mod checkpoint;
mod mlp;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, FORMAT_VERSION, MAGIC};
pub use mlp::{Mlp, Trace};
pub use params::{Layout, ParameterVector, Segment};
