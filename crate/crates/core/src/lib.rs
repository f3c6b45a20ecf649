//! Mass detection in mammograms.
//!
//! The pipeline runs in five steps:
//!
//! 1. [`preprocess`]: breast extraction, linear rescale to 16 bits, ×4
//!    downsampling and CLAHE.
//! 2. [`morphosift`]: multi-scale morphological sifting with rotated line
//!    structuring elements, one enhanced image per diameter band.
//! 3. [`superpixel`]: SLIC superpixels on each sifted image become region
//!    candidates, labelled against ground truth by Dice overlap and pruned
//!    by a breast/intensity filter.
//! 4. [`features`]: 22 shape, histogram, co-occurrence and cross-scale
//!    features per candidate.
//! 5. [`cascade`]: a three-stage cascade of SVM ensembles, trained with SMO,
//!    whose last stage is Platt-calibrated.
//!
//! [`eval`] provides image-level cross-validation, FROC analysis and
//! prediction heat maps; [`pipeline`] wires everything into the staged
//! batch driver used by the `masscade` binary. [`imagecore`] holds the
//! raster types, the on-disk dataset layout and a synthetic phantom
//! generator.

pub mod cascade;
pub mod error;
pub mod eval;
pub mod features;
pub mod imagecore;
pub mod morphosift;
pub mod pipeline;
pub mod preprocess;
pub mod superpixel;

pub use error::{Error, Result};
