//! Accuracy estimation for per-token annotators (lemmatizers, taggers) by
//! two-phase stratified sampling over a POS-tagged corpus.
//!
//! A pilot sample of `m` tokens per stratum (noun, adjective, verb) is judged
//! first; its per-stratum SDs drive Neyman allocation of the main sample,
//! sized for a target standard error of the pooled proportion. Judged items
//! from both phases feed pooled precision, recall and F estimates with
//! normal-approximation confidence intervals.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod estimation;
pub mod sampling;
pub mod simulator;
pub mod study;

pub use corpus::{Corpus, CorpusRef, FrequencyTable, PosClass, TokenRecord};
pub use estimation::{EvaluationReport, Verdict, WeightMode};
pub use sampling::{AllocationPlan, RandomState, SampleDraw, StratumSpec};
pub use study::{Phase, Study, StudyConfig, StudyError, StudyState};
