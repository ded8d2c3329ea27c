//! Encoder-decoder translation model whose multi-head attention mixes
//! scaled dot-product heads with convolution-based word-context heads, plus
//! everything needed to train and evaluate it on synthetic corpora.

pub mod attention;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod infer;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
