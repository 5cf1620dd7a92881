//! Numeric core for span-extraction machine reading comprehension.
//!
//! Everything here is `no_std` + `alloc`: a dense tensor engine with
//! reverse-mode differentiation, the text pipeline (tokenization, span
//! alignment, vocabularies, features, batching), the neural layer catalog,
//! the built-in BiDAF and DrQA models, optimizers and training-state logic.
//! File formats, dataset readers and the training driver live in the `readkit`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod batch;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod optim;
pub mod params;
pub mod preprocess;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod train;

pub use autodiff::{Graph, RowGrad, Var, MASK_FILL};
pub use error::{Error, Result};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
