//! Grow a textured triangle mesh of an indoor scene one view at a time.
//!
//! Each step renders the current mesh from a planned camera, hands the
//! unobserved pixels to an RGB and a depth inpainting backend, aligns the
//! predicted depth to the rendered depth in disparity space and fuses the
//! filtered, seam-stitched triangles back into the mesh.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`], [`raster`] and [`mesh_io`] hold the shared types.
//! * [`rasterizer`] renders a mesh into a [`raster::FrameBundle`].
//! * [`depth_align`], [`fusion`] and [`imaging`] implement the per-frame
//!   processing steps.
//! * [`planner`] produces generation trajectories and completion poses.
//! * [`backends`] talks to the inpainting providers.
//! * [`pipeline`] ties everything together.
//!
//! With the default `parallel` feature the inner loops (pixel bands,
//! candidate scoring, oracle ray casting) run on rayon; without it the
//! same code paths run sequentially and produce bit-identical results.

// Validation guards are written as negated comparisons so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backends;
pub mod config;
pub mod depth_align;
pub mod exec;
pub mod fusion;
pub mod geometry;
pub mod imaging;
pub mod mesh_io;
pub mod pipeline;
pub mod planner;
pub mod raster;
pub mod rasterizer;

pub use geometry::{look_at, merge_meshes, Camera, Intrinsics, Pose, TriangleMesh, Vec3};
pub use raster::{DepthMap, FrameBundle, Mask, Raster, Rgb, RgbImage, NO_HIT};
