//! Training-free language-guided segmentation.
//!
//! A vision-language model proposes boxes for a text instruction on several
//! augmented views of the image, picks among the surviving proposals using
//! numbered Set-of-Mark overlays, refines the chosen box, and hands it to a
//! box-promptable segmenter. The `eval` module scores runs against
//! ground-truth masks with gIoU and cIoU.

pub mod agent;
pub mod backends;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod imaging;

pub use agent::{run_chain, ChainConfig, ChainResult, ChainTrace};
pub use geometry::{Augmentation, BBox, ImageDims};
pub use imaging::{BinaryMask, Image};
