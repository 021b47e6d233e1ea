//! Chain-aware heterogeneity models for single-particle cryo-EM.
//!
//! Conformations are built from a reference structure by per-chain elastic
//! network deformations followed by per-chain rigid transforms, and are
//! projected to 2D images with Gaussian atom blobs. The crate is `no_std`
//! (it needs `alloc`); file formats and the command line live in `chainfit`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod datagen;
pub mod error;
pub mod fit;
pub mod nma;
pub mod render;
pub mod rigid;
pub mod structure;
pub mod toy;

pub use nalgebra;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

pub use error::{Error, Result};
pub use fit::{fit_image, ChainModel, FitConfig, FitMode, FitOutcome};
pub use nma::{EnmConfig, NormalModeBasis};
pub use render::{Image, ImagingConfig};
pub use rigid::{ChainTransform, GlobalPose, LatentState, ModeSet};
pub use structure::{Atom, AtomicStructure};
