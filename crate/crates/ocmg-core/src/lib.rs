//! Core algorithms for object-centric motion generation on 3D objects.
//!
//! The crate covers the full in-memory pipeline for learning spray-style
//! motion over free-form objects: procedural ground-truth generation
//! (cuboids and window frames with raster paths), conversion between paths
//! and fixed-length pose segments, the point/segment Chamfer loss family
//! with its training curriculum, bipartite mask matching, a small trainable
//! point-cloud predictor with hand-written backpropagation, segment
//! concatenation into executable paths, and a conic spray-deposition
//! simulator for coverage evaluation.
//!
//! Everything here is pure computation over owned values: no IO, no global
//! state, `no_std` with `alloc`. File formats, the command-line interface,
//! and parallel execution live in the companion `ocmg-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod branching;
pub mod dataset;
pub mod evalsim;
pub mod geom;
pub mod learner;
pub mod losses;
pub mod mesh;
pub mod postprocess;
pub mod segments;

#[cfg(test)]
pub(crate) mod testutil;

pub use geom::{MetricConfig, ObjectSample, Path, Pose, Segment, Vec3};
