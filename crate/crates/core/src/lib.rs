//! Constrained unsupervised text attribute transfer.
//!
//! The crate trains a weight-tied encoder / dual-decoder / latent-critic
//! model whose latent space is additionally regularized by two cooperative
//! losses (contrastive and constraint classification), transfers sentences
//! between two domains, and evaluates transfer quality (ACC/FL/SIM/AGG)
//! together with per-constraint F1.
//!
//! Module map:
//! - [`corpus`]: vocabulary, tokenized sentences, padded batches
//! - [`constraints`]: six-constraint profiles, marker mining, constraint F1
//! - [`tensor`]: the reverse-mode autodiff engine everything trains on
//! - [`netcore`]: encoder / decoders / critic / classifier parameters and forwards
//! - [`losses`]: the five training losses plus the gradient penalty
//! - [`mining`]: positive mining for the contrastive loss
//! - [`trainer`]: the five-phase training loop, checkpoints, metrics
//! - [`decode`]: greedy and nucleus decoding, domain transfer
//! - [`eval`]: ACC/FL/SIM/AGG scoring and report generation
//! - [`cli`]: the `dct` command-line entry point

pub mod cli;
pub mod constraints;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod losses;
pub mod mining;
pub mod netcore;
pub mod tensor;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type; the variant names the module that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("constraints: {0}")]
    Constraints(String),
    #[error("netcore: {0}")]
    Netcore(String),
    #[error("losses: {0}")]
    Losses(String),
    #[error("mining: {0}")]
    Mining(String),
    #[error("trainer: {0}")]
    Trainer(String),
    #[error("decode: {0}")]
    Decode(String),
    #[error("eval: {0}")]
    Eval(String),
    #[error("cli: {0}")]
    Cli(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
