//! Planar template tracking by particle swarm optimization.
//!
//! The tracker recovers the camera motion relative to a textured plane by
//! searching pose space for the warp that makes the current frame look most
//! like the reference template under SSD, NCC or mutual information.

pub mod cli;
pub mod config;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod io;
pub mod optimizer;
pub mod similarity;
pub mod tracker;
