//! Dense tensors, reverse-mode differentiation, Adam, gradient checking,
//! seeded randomness and parameter checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_params, read_params, save_params, write_params};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, ParamCheck};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::SeededRng;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;


