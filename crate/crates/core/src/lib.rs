//! Conditional adversarial debiasing.
//!
//! This crate carries everything that is pure computation: a small
//! reverse-mode autodiff engine, kernel and correlation based (conditional)
//! dependence estimators, the debiasing losses built on them, the linear bias
//! model, the synthetic shape/colour benchmark, the trainer and the
//! permutation-based fairness tests. It is `no_std` and only needs `alloc`.
//! File formats, experiment orchestration and the command line live in the
//! `condebias` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod bias_model;
mod error;
pub mod fairness;
pub mod kernel;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
