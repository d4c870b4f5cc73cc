//! File formats, worker pools, and the command implementations behind the
//! `ocmg` binary. All algorithmic work lives in `ocmg-core`; this crate
//! adds IO and orchestration.

pub mod checkpoint;
pub mod parallel;
pub mod run;
pub mod store;
pub mod svg;
