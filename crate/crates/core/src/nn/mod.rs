//! Minimal reverse-mode autodiff, Adam, time conditioning and checkpoints.

mod adam;
mod checkpoint;
mod embedding;
mod params;
mod tape;

pub use adam::{adam_step, AdamState, DEFAULT_LR};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use embedding::{time_embedding, TIME_SCALE};
pub use params::{GradientMap, ParameterSet, Tensor};
pub use tape::{Tape, Var};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
