//! Evaluation toolkit for self-aware object detectors.
//!
//! Covers greedy box matching, AP / COCO-style AP, LRP Error, LaECE with reliability
//! diagrams, post-hoc calibrators, image-level uncertainty and OOD thresholds, and the
//! composite IDQ / DAQ scores. The `examples/` directory walks through each capability.

pub mod accuracy;
pub mod calibration;
pub mod cli;
pub mod datamodel;
pub mod error;
pub mod matching;
pub mod saod;
pub mod testkit;
pub mod uncertainty;

pub use error::{Error, Result};
