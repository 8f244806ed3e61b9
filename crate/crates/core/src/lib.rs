//! Repository mining and team-productivity analysis.
//!
//! Histories are replayed line by line to attribute ownership, cut into
//! fixed-length windows, measured for per-member productivity and
//! co-editing structure, and related to team size by least squares.
//! See [`pipeline`] for the staged driver.

#![allow(clippy::needless_range_loop)]

pub mod catalog;
pub mod ingest;
pub mod metrics;
pub mod networks;
pub mod ownership;
pub mod pipeline;
pub mod stats;
pub mod synthkit;
pub mod windows;

// Compiles and runs the guide's code blocks as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/ownership.md")]
    mod ownership {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/windows.md")]
    mod windows {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/regression.md")]
    mod regression {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
}
