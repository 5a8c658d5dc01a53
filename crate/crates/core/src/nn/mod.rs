//! Small deterministic neural-network engine: just the layers the
//! classifier needs, each with an explicit backward pass.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dense;
mod fastmath;
pub mod gradcheck;
pub mod gru;
pub mod init;
pub mod loss;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use conv::{conv2d_backward, conv2d_forward};
pub use dense::{dense_backward, dense_forward, Activation};
pub use gradcheck::{
    finite_difference_gradcheck, finite_difference_gradcheck_piecewise, GradCheckOptions,
    GradCheckReport, TensorCheck,
};
pub use gru::{gru_backward, gru_forward, GruWeights};
pub use loss::{one_hot, softmax_cross_entropy};
pub use params::{Param, ParamStore};
pub use tensor::{Real, Tensor};
