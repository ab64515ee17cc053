//! Audiovisual word recognition on a CPU.
//!
//! The crate provides a small reverse-mode tensor engine and, on top of it,
//! the networks for lipreading (spatiotemporal ResNet frontend plus BiLSTM or
//! temporal-convolution backend), audio-only recognition (pyramidal BiLSTM
//! over log spectra) and audiovisual recognition by intermediate or late
//! fusion. A seeded synthetic audiovisual wordbank with a noise bank makes
//! every mechanism trainable and testable at desk scale.

pub mod audio;
pub mod autograd;
pub mod backend;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod integration;
pub mod nn;
pub mod ops;
pub mod params;
pub mod recurrent;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod visual;

pub use autograd::{Graph, Mode, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
