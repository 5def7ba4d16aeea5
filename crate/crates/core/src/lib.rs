//! Gaze-preserving novel-view synthesis from single-view face reconstructions.
//!
//! A reconstructed face mesh in patch-pixel coordinates is lifted onto the
//! source camera's back-projection rays so that it reprojects exactly onto
//! the input patch, anchored metrically with a reference face model. The
//! metric mesh and its gaze target are then moved rigidly to new head poses,
//! expressed in a normalized virtual camera and rendered into labelled
//! training images.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod dataset;
pub mod error;
pub mod face_model;
pub mod fixtures;
pub mod geometry;
pub mod imaging;
pub mod matching;
pub mod normalization;
pub mod novel_view;
pub mod pipeline;
pub mod pnp;
pub mod render;
pub mod seed;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
