//! Dense tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod kernels;
mod params;
mod store;
mod tape;
mod value;

pub use gradcheck::{check_gradients, finite_difference_check, relative_error, GradCheckReport};
pub use params::{ParamId, ParamStore, Session};
pub use store::{manifest_path, read_tensor_file, write_tensor_file, TensorFile};
pub use tape::{Tape, Var};
pub use value::Tensor;
