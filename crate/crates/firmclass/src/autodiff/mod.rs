//! Minimal dense tensor type with reverse-mode automatic differentiation and
//! an Adam optimizer. Every learnable computation in the engine runs on the
//! [`Tape`].

mod adam;
mod tape;
mod tensor;

pub mod gradcheck;

pub use adam::AdamState;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

/// Uniform initialization in [-bound, bound].
pub fn uniform_tensor<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).unwrap()
}
