//! Stereo matching between a conventional intensity camera and an event
//! camera, refined without ground truth by gradient-structure losses.
//!
//! The pipeline: simulate or load events ([`event_model`], [`event_sim`]),
//! integrate them into a rough image ([`reconstruct`]), match against the
//! intensity view ([`stereo`]), refine with the self-supervised objective
//! ([`losses`]) and score the result ([`metrics`]).

// Validation checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod event_model;
pub mod event_sim;
pub mod imageops;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod reconstruct;
pub mod scenes;
pub mod stereo;
pub mod util;

pub use error::{Error, Result};
