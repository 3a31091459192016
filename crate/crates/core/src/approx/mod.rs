//! Function approximation: fully connected networks with diagonal-Gaussian heads,
//! hand-derived reverse-mode gradients, and Adam.
//!
//! Every loss in the crate is written as a function returning `(loss, gradient)` so that
//! gradients can be checked against central finite differences by perturbing
//! [`Mlp::params_mut`] directly.

mod gaussian;
mod gradcheck;
mod network;
mod normalize;
mod optim;

pub use gaussian::{
    batch_nll, forward_head, gaussian_nll, reparameterize, sample_diag_gaussian, soft_clamp_log_var,
    standard_normal, standard_normal_matrix, GaussianBatch, GaussianHead, LOGVAR_MAX, LOGVAR_MIN,
};
pub use network::{
    concat_cols, rows_to_array, sigmoid, softplus, Activation, ForwardCache, GradientRecord, Layout,
    Mlp, ParamVector,
};
pub use gradcheck::{check_gradient, relative_error, sample_coords};
pub use normalize::Standardizer;
pub use optim::Adam;

/// `[input, hidden..., output]` layer sizes.
pub fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}
