//! Training-free zero-shot segmentation from diffusion features.
//!
//! An image is encoded once by a diffusion U-Net; its intermediate feature
//! maps are clustered with K-means into class-agnostic masks. A caption of
//! the image narrows the dataset vocabulary to candidate classes, each
//! masked region is labelled by its nearest class in a joint image-text
//! embedding space, and the resulting coarse map is refined against the
//! image with a dense CRF or PAMR.
//!
//! Model inference sits behind the [`backbones::Backbone`] trait. Results
//! are cached on disk by [`backbones::CachedBackbone`], so every later run
//! (including the test suite) can replay them without model weights.

pub mod ablation;
pub mod assignment;
pub mod backbones;
pub mod clustering;
pub mod config;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod pipeline;
pub mod refine;
pub mod vocabulary;

pub use assignment::SegmentationMap;
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use imaging::ImageRecord;
pub use pipeline::{Pipeline, Segmentation};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/vocabulary.md")]
    mod vocabulary {}
    #[doc = include_str!("../../../book/src/labeling.md")]
    mod labeling {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cache.md")]
    mod cache {}
    #[doc = include_str!("../../../book/src/ablation.md")]
    mod ablation {}
}
