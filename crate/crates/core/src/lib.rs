//! Mobile-object discovery from multi-traversal LiDAR.
//!
//! The pipeline turns unlabeled LiDAR traversals into 3D bounding-box
//! labels for mobile objects, with no human annotation:
//!
//! 1. [`ephemerality`] scores each point by how persistent its local
//!    neighborhood is across traversals of the same route (PP score).
//! 2. [`seed`] clusters ephemeral points into objects and fits upright
//!    boxes, filtered by common-sense rules (on the ground, sane volume).
//! 3. [`selftrain`] bootstraps a detector on the seed labels and
//!    iterates: detect, filter pseudo-labels by PP score, retrain.
//! 4. [`eval`] measures labels and detections against ground truth with
//!    KITTI-style rotated-box AP, precision and recall by depth range.
//! 5. [`sim`] generates synthetic multi-traversal worlds with exact
//!    ground truth, the reference data for end-to-end verification.
//!
//! The `moblab` binary wires these stages into CLI subcommands; see the
//! crate README for the end-to-end workflow.

pub mod cli;
pub mod config;
pub mod ephemerality;
pub mod eval;
pub mod error;
pub mod geom;
pub mod index;
pub mod io;
pub mod pipeline;
pub mod seed;
pub mod selftrain;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
