//! Vanilla flow matching and mixture-of-experts flow matching on
//! low-dimensional synthetic targets.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod moefm;
pub mod nnet;
pub mod oracle;
pub mod point;

pub use checkpoint::{Checkpoint, FlowModel};
pub use datasets::{MixtureSpec, SampleSet};
pub use error::{Error, Result};
pub use flow::{TrainConfig, Trajectory, VectorField};
pub use moefm::{MoeConfig, MoeFlowModel, SamplingMode};
pub use nnet::{Activation, AdamWConfig, MlpNet};
pub use point::Point;

/// Maps `f` over `0..n` on the rayon pool, preserving order.
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}
