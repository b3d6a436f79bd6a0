//! Classifiers for all-categorical tabular data, with fairness audits that
//! cover binary, multiclass and intersectional subgroups, and a chi-squared
//! reweighting step that targets significant attribute interactions.
//!
//! The pieces can be used on their own (see each module) or chained by
//! [`pipeline::run_pipeline`], which is what the `fairkit` binary runs.

pub mod config;
pub mod dataset;
pub mod fairness;
pub mod matrix;
pub mod mlp;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod reweight;
pub mod smoten;
pub mod svm;
pub mod trees;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/smoten.md")]
    mod smoten {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/fairness.md")]
    mod fairness {}
    #[doc = include_str!("../../../book/src/reweighting.md")]
    mod reweighting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
