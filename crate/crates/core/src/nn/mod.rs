//! Minimal differentiable network substrate: dense MLPs, exact backprop,
//! Adam and global-norm clipping.

pub mod checkpoint;
pub mod matrix;
pub mod mlp;
pub mod optim;

pub use matrix::Matrix;
pub use mlp::{Activation, DenseLayer, ForwardCache, LayerGrads, LayerNorm, Mlp, MlpGrads, ACTIVATION};
pub use optim::{clip_global_norm, AdamConfig, AdamState, ParamTensors, TensorList};

use rayon::prelude::*;

use crate::error::Result;

/// Samples per gradient-accumulation chunk. Chunk boundaries depend only on
/// the batch size, so the reduction order is identical for any thread count.
pub const GRAD_CHUNK: usize = 16;

/// Evaluates `per_sample` over `0..n`, accumulating into per-chunk gradient
/// buffers that are then summed in chunk order. Returns the summed loss and
/// summed gradients.
pub fn accumulate_batch<G, Z, F>(n: usize, zero: Z, per_sample: F) -> Result<(f64, G)>
where
    G: ParamTensors + Send,
    Z: Fn() -> G + Sync,
    F: Fn(usize, &mut G) -> Result<f64> + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(GRAD_CHUNK).collect();
    let partials: Vec<Result<(f64, G)>> = starts
        .par_iter()
        .map(|&start| {
            let mut g = zero();
            let mut loss = 0.0;
            for i in start..(start + GRAD_CHUNK).min(n) {
                loss += per_sample(i, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total_loss = 0.0;
    let mut total = zero();
    for part in partials {
        let (loss, g) = part?;
        total_loss += loss;
        total.accumulate(&g);
    }
    Ok((total_loss, total))
}
