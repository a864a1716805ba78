//! Reverse-mode differentiation over dense matrices, parameter storage,
//! Adam, learning-rate decay and checkpoints.
//!
//! A forward pass records every primitive on a [`Tape`]. Sparse transition
//! matrices enter only as constants, so gradients flow to parameters and
//! signals but never to the graph.

mod checkpoint;
mod optim;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use optim::{adam_step, clip_grad_norm, lr_schedule, AdamConfig, LrSchedule};
pub use params::{check_compatible, glorot_bound, init_params, InitScheme, ParamId, ParamStore, ParamTensor};
pub use tape::{ErrorKind, Tape, Var};

/// Relative error used by the finite-difference checks:
/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central finite-difference gradient of `f` with respect to every scalar in
/// `store`, perturbing one coordinate at a time by `±h`.
pub fn numeric_gradient<F>(store: &mut ParamStore, h: f64, mut f: F) -> Vec<crate::sparse::DenseMatrix>
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<ParamId> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let (r, c) = store.get(id).shape();
        let mut g = crate::sparse::DenseMatrix::zeros(r, c);
        for i in 0..r * c {
            let orig = store.get(id).value.as_slice()[i];
            store.get_mut(id).value.as_mut_slice()[i] = orig + h;
            let plus = f(store);
            store.get_mut(id).value.as_mut_slice()[i] = orig - h;
            let minus = f(store);
            store.get_mut(id).value.as_mut_slice()[i] = orig;
            g.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}
