//! Patch-based monocular-guided radiance field training and geometric
//! reconstruction at desk scale: synthetic posed scenes, a density/color/
//! normal field trained with per-patch depth/normal distillation, occlusion-
//! aware virtual-view photometric consistency, SfM-anchored density
//! restriction, and fused point-cloud evaluation.

pub mod eval;
pub mod field;
pub mod geom;
pub mod io;
pub mod losses;
pub mod math;
pub mod render;
pub mod restriction;
pub mod scene;
pub mod train;
pub mod virtual_view;
