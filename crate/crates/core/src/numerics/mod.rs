//! Dense and sparse kernels, a coarse-grained reverse-mode tape, Adam, and
//! the named-tensor file format.

mod adam;
mod csr;
mod dense;
mod mlp;
mod tape;
mod tensor_io;

pub use adam::{AdamConfig, AdamState};
pub use csr::{spmm, symmetric_normalize, CsrMatrix, CsrPattern};
pub use dense::DenseMatrix;
pub use mlp::{mlp2_forward, Mlp2, Mlp2Vars};
pub use tape::{Gradients, Tape, Var};
pub use tensor_io::{read_tensors, write_tensors, NamedTensor, ParamSet};
