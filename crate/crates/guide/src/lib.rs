//! The book's chapters as doc comments, so `cargo test` runs their snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/demonstrations.md")]
pub mod demonstrations {}

#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}

#[doc = include_str!("../../../book/src/tracking.md")]
pub mod tracking {}

#[doc = include_str!("../../../book/src/benchmark.md")]
pub mod benchmark {}

#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
