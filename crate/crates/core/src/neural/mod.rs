//! Differentiable odometry network built on a small reverse-mode autodiff engine.
//!
//! - [`tensor`] / [`tape`]: values and the gradient tape.
//! - [`layers`]: convolution stacks, LSTMs, initialisation.
//! - [`attention`]: self-attention and cross-modal attention gates.
//! - [`network`]: the subnets → fusion → LSTM → regressor pipeline.
//! - [`train`]: RMSProp training over subsequences, inference.

pub mod attention;
pub mod checkpoint;
pub mod dataset;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use network::{Network, NetworkConfig, Profile};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Scalar pose loss on plain values: `(1/K) Σ ‖t̂ − t‖² + γ‖wrap(r̂ − r)‖²`.
pub fn pose_loss(pred: &[[f64; 6]], truth: &[[f64; 6]], gamma: f64) -> crate::Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(crate::Error::InvalidInput(format!(
            "pose loss needs equal non-empty batches, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut tape = Tape::new();
    let p = tape.constant(&[pred.len(), 6], pred.concat())?;
    let l = tape.pose_loss(p, &truth.concat(), gamma)?;
    Ok(tape.value(l)[0])
}
