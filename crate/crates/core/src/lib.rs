//! Dense displacement-field estimation between two images by fitting a
//! Fourier-feature coordinate network to a photometric warp loss, together
//! with synthetic particle images for validation, error metrics and
//! turbulence statistics.
//!
//! ```
//! use neural_velocimetry::model::{DisplacementModel, ModelConfig};
//!
//! let model = DisplacementModel::<f32>::init(ModelConfig::default(), 0).unwrap();
//! let [dx, dy] = model.forward(12.5, 40.25);
//! assert!(dx.is_finite() && dy.is_finite());
//! ```

pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod real;
pub mod stats;
pub mod synth;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use image::{Image, SequenceMeta};
pub use model::{DisplacementModel, ModelConfig};
pub use real::Real;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fourier-features.md")]
    mod fourier_features {}
    #[doc = include_str!("../../../book/src/warp-loss.md")]
    mod warp_loss {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
