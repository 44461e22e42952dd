//! Background-aware open-set recognition toolkit.
//!
//! Synthetic foreground/background data, CAM banks, the BackMix mixer, a small
//! CAM-head convnet, training loops, open-set scores and metrics, and exact
//! information-theoretic checks on discrete joints.

pub mod binio;
pub mod config;
pub mod cambank;
pub mod error;
pub mod experiments;
pub mod image;
pub mod kvformat;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod synthdata;
pub mod theory;
pub mod training;

pub use error::{ErrorClass, OsrError, Result};
pub use image::{Image, Mask};
