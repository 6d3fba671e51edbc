//! Blinded capabilities: a capability machine that tracks secret data with a
//! per-register blindedness bit, a compiler for an annotated mini-IR, and a
//! speculative-execution model for side-channel experiments.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the companion `blindsim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cap;
pub mod heap;
pub mod ir;
pub mod memory;
pub mod machine;
pub mod spec;
pub mod trace;
