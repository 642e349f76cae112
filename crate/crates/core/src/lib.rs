//! Saliency-map fusion and faithfulness evaluation.
//!
//! Activation maps from several CAM methods are fused (average, weighted or
//! top-k consensus) and scored with ROAD: pixels ranked by a map are removed
//! with noisy neighbor-mean imputation and the drop in model confidence is
//! measured. On top of this sit the adaptive threshold sweep, the CAM-set
//! ensemble campaign and Cumulative Residual Effect attribution.

pub mod adaptive;
pub mod cre;
pub mod ensemble;
pub mod error;
pub mod format;
pub mod fusion;
pub mod image;
pub mod map;
pub mod oracle;
pub mod road;
pub mod seed;
pub mod select;

pub use error::{Error, Result};
pub use image::{ImageTensor, Normalization};
pub use map::{ActivationMap, PixelIndex};
