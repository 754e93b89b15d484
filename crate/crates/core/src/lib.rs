//! Forecasting on temporal knowledge graphs by letting a chat model pick
//! and follow chains of earlier facts, then blending its ranked answers
//! with graph-model scores.
//!
//! Modules follow the data: [`kg`] loads the store, [`history`] finds
//! chains, [`verbalize`] writes prompts, [`gateway`] sends them, [`parse`]
//! reads replies, [`fusion`] and [`eval`] score, and [`pipeline`] ties the
//! steps together. The guide in `book/` walks through each one.

pub mod eval;
pub mod fusion;
pub mod gateway;
pub mod history;
pub mod kg;
pub mod parse;
pub mod pipeline;
pub mod verbalize;

/// The guide under `book/`, compiled so its examples run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/store.md")]
    pub mod store {}
    #[doc = include_str!("../../../book/src/histories.md")]
    pub mod histories {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    pub mod prompts {}
    #[doc = include_str!("../../../book/src/parsing.md")]
    pub mod parsing {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    pub mod fusion {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/running.md")]
    pub mod running {}
}
