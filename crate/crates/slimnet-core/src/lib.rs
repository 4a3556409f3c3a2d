//! Core engine for slimmable neural networks: a single set of shared weights
//! executable at several widths, with per-width (switchable) batch
//! normalization, reverse-mode autodiff, exact parameter/FLOPs accounting,
//! and BN-to-conv fusion for deployment.
//!
//! The crate is `no_std` + `alloc`; everything here is pure computation.
//! File and process concerns (checkpoint files, CLI, latency timing) live in
//! the companion `slimnet` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bn;
pub mod checkpoint;
pub mod data;
pub mod deploy;
pub mod error;
mod fmath;
pub mod model;
pub mod slim;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod zoo;

mod conv;

pub use error::{Error, Result};
pub use model::Model;
pub use slim::{ChannelRounding, SwitchableWidthList, WidthMultiplier};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
