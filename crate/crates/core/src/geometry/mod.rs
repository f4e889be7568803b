//! Rigid-body transforms, the pinhole camera model and image containers used
//! by every other module.

mod camera;
mod image;
mod se3;

pub use camera::PinholeCamera;
pub use image::{build_pyramid, GrayImage, ImagePyramid, RgbImage, ScalarImage};
pub use se3::{SE3Pose, Twist};

pub(crate) use se3::skew;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("inverse depth must be positive and finite, got {value}")]
    InvalidInverseDepth { value: f64 },
    #[error("position ({x}, {y}) outside image bounds {width}x{height}")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("image {width}x{height} too small for {levels} pyramid levels")]
    ImageTooSmall {
        width: usize,
        height: usize,
        levels: usize,
    },
    #[error("rotation matrix is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("invalid camera intrinsics: {reason}")]
    InvalidCamera { reason: String },
    #[error("intensity {value} at index {index} outside [0, 1]")]
    InvalidIntensity { value: f64, index: usize },
    #[error("buffer length {got} does not match {width}x{height}")]
    BufferSizeMismatch {
        got: usize,
        width: usize,
        height: usize,
    },
}
