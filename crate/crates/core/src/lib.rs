#![no_std]
// `!(x > t)` is used on purpose so that NaN takes the failing branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod init;
pub mod measurement;
pub mod observability;
pub mod rotation;
pub mod simkit;
pub mod solver;
pub mod state;

pub use error::{Error, Result};
