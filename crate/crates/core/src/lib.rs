//! Temporal-bias probes for small GPT-2-style transformers.
//!
//! The crate trains desk-scale decoder-only models with a hand-written
//! backward pass, captures their attention, and computes lag-conditional
//! response curves, induction matching scores, recency and contiguity fits,
//! positional-embedding correlation profiles and downstream free-recall
//! curves with and without head ablation.

pub mod analysis;
pub mod numerics;
pub mod probes;
pub mod seeding;
pub mod trainer;
pub mod transformer;
