//! Unsupervised domain adaptation for volumetric segmentation through
//! appearance and structure consistency.
//!
//! A labeled source domain and an unlabeled target domain are bridged by
//! swapping low-frequency Fourier amplitudes between volumes, and a student
//! network is trained against an exponential-moving-average teacher on the
//! target domain under both appearance swaps and cuboid mixing.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, CLI and other
//! IO live in the companion `asc` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod fourier;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod sched;
pub mod synthdata;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Dims, LabelMap, ProbMap, Volume};
