//! Driver, file formats, benchmark corpus and verification suites for the
//! `blindcap` machine.

pub mod corpus;
pub mod toolchain;
pub mod ni;
pub mod gadgets;
pub mod snapshot;
pub mod jsonl;
pub mod bench;
pub mod soundness;
pub mod progen;
pub mod cli;
