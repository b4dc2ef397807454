//! Minimal 64-bit neural network substrate.
//!
//! Layers do not own their parameters. Each layer type describes a shape and
//! reads its weights from a slice of a flat [`ParamVector`], which keeps
//! gradients, Fisher-vector products and checkpoints as plain vectors.

mod adam;
mod dense;
mod embedding;
mod fisher;
pub mod linalg;
mod lstm;
mod ops;
mod params;

pub use adam::Adam;
pub use dense::{dense_forward, Activation, Dense, DenseLayer};
pub use embedding::Embedding;
pub use fisher::{
    fisher_vector_product, fisher_vector_product_fd, kl_gradient, mean_kl, CategoricalModel,
};
pub use lstm::{Lstm, LstmCell, LstmState, LstmTrace};
pub use ops::{cross_entropy, entropy, kl_divergence, log_softmax, softmax};
pub use params::{read_checkpoint, write_checkpoint, LayoutEntry, ParamVector};

use crate::{Error, Result};

/// Glorot-uniform bound for a weight block.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fails with [`Error::Numeric`] naming `layer` if any entry is NaN or infinite.
pub fn ensure_finite(layer: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(layer.to_string()))
    }
}

/// A differentiable scalar loss over a flat parameter vector.
pub trait Differentiable {
    type Batch: ?Sized;

    fn loss(&self, params: &[f64], batch: &Self::Batch) -> Result<f64>;

    /// Loss together with its exact gradient.
    fn loss_and_grad(&self, params: &[f64], batch: &Self::Batch) -> Result<(f64, Vec<f64>)>;
}

/// Exact gradient of `model`'s loss at `params`.
pub fn grad<M: Differentiable + ?Sized>(
    model: &M,
    params: &[f64],
    batch: &M::Batch,
) -> Result<Vec<f64>> {
    let (loss, g) = model.loss_and_grad(params, batch)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("loss".into()));
    }
    ensure_finite("gradient", &g)?;
    Ok(g)
}
