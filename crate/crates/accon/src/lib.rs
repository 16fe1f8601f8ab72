//! Angle-compensated contrastive regression.
//!
//! A regression model is trained jointly with a contrastive term whose
//! negative-pair targets are rotated by a label-dependent compensation angle,
//! so embedding geometry mirrors label distance. The crate provides the
//! reverse-mode autodiff core, the angle geometry, pair construction, the
//! loss family with lower-bound diagnostics, a small MLP, synthetic data
//! generation, the two-view training loop, and evaluation metrics. The
//! `accon` binary exposes all of it on the command line.

pub mod config;
pub mod data;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pairing;
pub mod runner;
pub mod seeding;
pub mod tensor;
pub mod textio;
pub mod train;
