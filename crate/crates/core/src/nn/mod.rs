//! Minimal neural-network toolkit: tensors, layers with manual backward
//! passes, Glorot init, Adam, finite-difference gradient checking, and a
//! binary checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, restore_params, save_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, Checkable, CorruptedGrad, GradCheckReport};
pub use init::{derive_seed, rng_from_seed};
pub use layers::{Conv1d, Dense};
pub use tensor::{NnError, Parameter, Tensor};
