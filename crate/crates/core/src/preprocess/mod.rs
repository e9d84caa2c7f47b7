//! Optional intensity preprocessing: N4 bias-field correction and
//! normalization. Geometry is never touched.

use thiserror::Error;

use crate::volume::VolumeError;

mod bspline;
mod fft;
pub mod n4;
pub mod normalize;

pub use n4::{n4_correct, N4Output, N4Params, N4Warning};
pub use normalize::{normalize_intensity, percentile, percentile_window, NormalizeMethod};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("invalid N4 parameters: {0}")]
    InvalidParams(&'static str),
    #[error("z-score normalization of a volume with zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}
