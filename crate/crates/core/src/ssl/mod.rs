//! Pretraining objectives, projection and prediction heads, and the
//! exponential-moving-average target update.

mod ema;
mod heads;
mod loss;

pub use ema::{ema_schedule, ema_update, ema_update_params, EmaState};
pub use heads::{predict_byol, project, HeadConfig};
pub use loss::{
    byol_loss, byol_loss_grad, byol_symmetric, nt_xent, nt_xent_grad, supcon_loss, supcon_loss_grad, ContrastiveBatch, LossGrad,
    Projections, NORM_EPS,
};

/// Pairing for the layout `[view a of sources 0..N, view b of sources 0..N]`:
/// row `i` is paired with row `i + N` and vice versa.
pub fn standard_pairing(sources: usize) -> Vec<usize> {
    (0..2 * sources).map(|i| (i + sources) % (2 * sources)).collect()
}

/// Per-view labels for the same layout, from per-source labels.
pub fn view_labels<T: Copy>(per_source: &[T]) -> Vec<T> {
    per_source.iter().chain(per_source).copied().collect()
}
