//! Guide chapters, compiled so their snippets run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/noise.md")]
pub mod noise {}
#[doc = include_str!("../../../book/src/bounds.md")]
pub mod bounds {}
#[doc = include_str!("../../../book/src/trustnet.md")]
pub mod trustnet {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
