//! Differentiable operations recorded on a [`Graph`](crate::autograd::Graph).

pub mod conv;
pub mod dropout;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod norm;
pub mod pool;
pub mod shape;

pub use conv::ConvSpec;
pub use dropout::sample_shared_mask;
pub use elementwise::sigmoid;
pub use loss::softmax_rows;
pub use norm::BnStats;
