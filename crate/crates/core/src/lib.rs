//! ULU/AULU activations, a small reverse-mode autodiff engine, and the
//! desk-scale experiments built on top of them.

pub mod activations;
pub mod autodiff;
pub mod tensor;
pub mod verify;
pub mod data;
pub mod models;
pub mod rng;
pub mod harness;
pub mod analysis;
pub mod cli;
