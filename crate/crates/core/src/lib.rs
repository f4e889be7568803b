//! Direct monocular visual odometry on a prior 3D Gaussian map.

pub mod data;
pub mod eval;
pub mod fit;
pub mod gaussian;
pub mod geometry;
pub mod odom;
pub mod synth;

pub use data::{PlyContent, PointSample, SequenceDataset, Trajectory};
pub use gaussian::{Gaussian3D, GaussianMap, RenderOptions, RenderedView, Splat2D};
pub use geometry::{GrayImage, ImagePyramid, PinholeCamera, RgbImage, ScalarImage, SE3Pose};
