//! Post-processing pipeline for anatomy-informed neurofibroma segmentation
//! on whole-body MRI.
//!
//! The crate covers everything around the segmentation network: building
//! the anatomy prior from an organ label map, fusing ensemble confidence
//! masks into tumor candidates, radiomics and random-forest filtering of
//! those candidates, the evaluation protocol, and a synthetic phantom
//! generator for end-to-end testing.

pub mod anatomy;
pub mod candidates;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod radiomics;
pub mod volume;

pub use error::{Error, ErrorClass, Result};
