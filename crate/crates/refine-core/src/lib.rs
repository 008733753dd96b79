//! Core algorithms for rule-guided synthetic tabular data generation in
//! low-data regimes.
//!
//! The pipeline has two halves. Component I distills a small tree ensemble
//! into one conjunctive if–then rule per target value and asks a language
//! model to generate rows under each rule ([`forest`], [`rules`],
//! [`gateway`], [`generate`]). Component II scores the synthetic pool for
//! redundancy against the real seed rows and filters it at chunk and
//! instance granularity before augmentation ([`filter`], [`boost`],
//! [`eval`]).
//!
//! This crate is `no_std` + `alloc`: it contains no IO, no file formats and
//! no HTTP. The companion `refine` crate supplies those along with the
//! command-line interface. Everything here is deterministic given explicit
//! seeds; random number generation goes through ChaCha so results are
//! reproducible across platforms.

#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations, rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod boost;
pub mod csv;
pub mod data;
pub mod eval;
pub mod filter;
pub mod forest;
pub mod gateway;
pub mod generate;
pub mod rules;
pub mod seed;
pub mod tree;
