//! Certified top-K robustness for text rankers under word substitution attacks.
//!
//! A base ranker `f(q, d) ∈ [0, 1]` is wrapped into a smoothed ranker that averages
//! scores over randomly perturbed copies of each document, where every word is
//! replaced uniformly by a member of its perturbation set. For the smoothed ranker
//! a per-document bound on how far any synonym substitution can raise the score is
//! available in closed form, which turns top-K certification into comparing the
//! scores at ranks K and K+1 against the largest tail bound.
//!
//! Module map:
//!
//! - [`lexicon`]: synonym sets, perturbation sets, per-word overlap.
//! - [`corpus`]: documents, queries, runs, qrels and triples on disk.
//! - [`rankers`]: the [`ScoreModel`] trait, BM25 and a trainable linear scorer.
//! - [`smoothing`]: perturbation sampling, exact and Monte Carlo smoothed scores.
//! - [`certification`]: overlap bounds, the top-K criterion and proof oracles.
//! - [`attacker`]: exhaustive and greedy substitution attacks.
//! - [`metrics`]: CRQ, SR, CondSR and MRR.
//! - [`trainer`]: pairwise hinge training with noised documents.
//! - [`exec`]: parallel or sequential execution of batch loops.

pub mod attacker;
pub mod certification;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod lexicon;
pub mod metrics;
pub mod rankers;
pub mod smoothing;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use rankers::ScoreModel;
