//! On-disk interchange formats.

pub mod pfm;
pub mod ply;
