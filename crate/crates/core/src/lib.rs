//! Training-less crowd anomaly detection.
//!
//! Frames pass through a Gaussian-mixture background model, edge-fused
//! segmentation and pedestrian-shaped proposals. Proposals are associated to
//! template pools by a low-frequency 3D-DCT likelihood. Pools that win a
//! proposal act as observers: each one gets a local descriptor built from
//! saliency-modulated optical flow around it, and the abnormality of a frame
//! is the mean earth mover's distance between consecutive descriptors of the
//! same observer.

pub mod association;
pub mod background;
pub mod config;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod frame;
pub mod motionfield;
pub mod pipeline;
pub mod proposals;
pub mod scoring;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, Detector, DumpSet, RunManifest, RunSummary};
