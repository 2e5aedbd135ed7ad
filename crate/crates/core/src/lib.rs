//! Newcomer-retention analysis for online communities: archive ingestion,
//! distinctive-vocabulary detection of hateful communities, reply scoring,
//! matched cohorts, engagement statistics and counterfactual growth
//! simulation, plus a synthetic-corpus generator with planted truth.

pub mod cohort;
pub mod corpus;
pub mod lexicon;
pub mod scoring;
pub mod seeding;
pub mod simulate;
pub mod stats;
pub mod study;
pub mod synth;
pub mod text;

pub use corpus::{
    CommunityType, CorpusError, Covariates, FirstPostEvent, FirstReply, Post, PostKind, ThreadIndex,
};
pub use lexicon::{HateLexicon, LexiconError, SageModel};
pub use scoring::{AttributeScores, ScoreError, SentimentLexicon, TextScores};
