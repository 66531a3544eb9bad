//! Minimal dense tensor engine with tape-based reverse-mode
//! differentiation, a CSR sparse matrix, and an Adam optimizer.

mod adam;
mod dense;
mod gradcheck;
mod params;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::Tensor;
pub use gradcheck::finite_difference_check;
pub(crate) use params::csv_error;
pub use params::{ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{sigmoid, Gradients, Tape, Var};

/// Inverted-dropout mask: entries are `0` with probability `rate`, else
/// `1/(1−rate)`.
pub fn dropout_mask<R: rand::Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}
