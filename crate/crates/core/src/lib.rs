//! Scene-text recognition backbone with sparse attention mixers, a CTC
//! head, and the tooling to train, count, and inspect it on a CPU.

pub mod attention;
pub mod autograd;
pub mod backbone;
pub mod bench;
pub mod ctc;
pub mod ctx;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod nn;
pub(crate) mod kernels;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use ctx::{AttnRecord, Ctx, Mode};
pub use error::{Error, Result};
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::{Scalar, Tensor};
