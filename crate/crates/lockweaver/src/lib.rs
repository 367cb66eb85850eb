//! Lock synthesis from sequential proofs.
//!
//! The pipeline parses a library of procedures over shared globals, checks
//! or infers a sequential proof, and weaves fine-grained locks that keep
//! every proof predicate stable under interference. A bounded model checker
//! validates the result.

pub mod lang;
pub mod logic;
pub mod proof;
pub mod synth;
pub mod lin;
pub mod mc;
