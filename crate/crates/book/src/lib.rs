//! Compiles the chapters of the guide in `book/src` so that `cargo test`
//! runs their snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/cohort.md")]
pub mod cohort {}

#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/analytics.md")]
pub mod analytics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
