//! Sparse-grid polynomial interpolation on nested Leja nodes.

pub mod index_set;
pub mod nodes;
pub mod smolyak;

pub use index_set::{build_index_set, index_set_with_size, IndexSetParams, MultiIndexSet};
pub use nodes::{interp_eval_1d, lebesgue_estimate, leja_nodes, NodeFamily};
pub use smolyak::{build_sg_surrogate, SparseGridSurrogate};
