mod elementwise;
mod linalg;
mod reduce;
mod shape;

pub use elementwise::ElementwiseKind;
pub(crate) use reduce::pairwise_sum;
