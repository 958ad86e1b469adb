//! Graph-based dependency parsing with explicit arc vectors.
//!
//! Two parsers are provided: a two-pipeline biaffine baseline (Loc) and a
//! single-pipeline model (ArcLoc) that computes one vector per arc, can
//! refine the most promising arcs with transformer layers, and reads arc
//! scores and labels from those vectors.

pub mod checkpoint;
pub mod config;
pub mod conllu;
pub mod decode;
pub mod error;
pub mod exec;
pub mod model;
pub mod nn;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
