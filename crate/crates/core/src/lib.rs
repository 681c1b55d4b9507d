//! Relative pose estimation for rigid multi-camera systems from affine
//! correspondences.
//!
//! The crate provides:
//! - rig / correspondence / pose types and rotation parameterizations ([`geometry`]);
//! - the generalized epipolar and affine constraints, and the polynomial
//!   coefficient matrices built from them ([`constraints`]);
//! - univariate polynomial arithmetic and real-root extraction ([`poly`]);
//! - the 1AC and 2AC planar-motion solvers and the 2AC known-vertical solver
//!   ([`solvers`]);
//! - RANSAC with preemptive hypothesis rejection ([`ransac`]);
//! - a synthetic scene generator, error metrics and experiment grids ([`synth`]);
//! - the text dataset / result formats and the command-line front end ([`io`], [`cli`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod constraints;
pub mod geometry;
pub mod io;
pub mod poly;
pub mod ransac;
pub mod solvers;
pub mod synth;

pub use geometry::{
    AffineCorrespondence, Camera, CameraRig, ImuAttitude, ImuAttitudePair, PlueckerLine,
    PoseHypothesis, PoseKind,
};
