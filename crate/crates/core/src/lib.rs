//! Deterministic core of a stereo video generation and restoration pipeline.
//!
//! * [`synthgen`] renders synthetic rectified stereo clips with ground-truth depth.
//! * [`warp`] turns depth into disparity and forward-warps the left view.
//! * [`degrade`] builds temporally-consistent low-quality training inputs.
//! * [`inpaint`] runs the two conversion branches through a pluggable backend.
//! * [`postproc`] histogram-matches and packs stereo pairs.
//! * [`metrics`] scores results.
//! * [`tensorio`] owns the array types and on-disk formats.

pub mod degrade;
pub mod error;
pub mod inpaint;
pub mod metrics;
pub mod postproc;
pub mod synthgen;
pub mod tensorio;
pub mod warp;

pub use error::{Error, Result};
pub use tensorio::{DepthSequence, Frame, OcclusionMask, Plane, Video};

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
