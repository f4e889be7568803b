//! The online front end: high-gradient point extraction, one-to-one depth
//! association from rendered maps, photometric frame tracking, keyframe
//! management and sliding-window pose refinement.

mod points;
mod residual;
mod track;
mod window;

pub use points::{associate_depth, extract_high_gradient_points, TrackPoint, PATTERN,
    PATTERN_MARGIN};
pub use residual::{huber_energy, photometric_residual, PointResidual};
pub use track::{track_frame, TrackResult};
pub use window::window_optimize;

use thiserror::Error;

use crate::data::{DataError, Trajectory};
use crate::eval::{interpolate_depth_nn, InterpolationError};
use crate::gaussian::{render, GaussianMap, MapError, RenderOptions};
use crate::geometry::{
    build_pyramid, GeometryError, GrayImage, ImagePyramid, PinholeCamera, ScalarImage, SE3Pose,
};
use crate::data::PointSample;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("too little image gradient: only {found} candidate points")]
    DegenerateImage { found: usize },
    #[error("no pixel received a valid rendered depth")]
    NoValidDepth,
    #[error("point reprojects outside the current view")]
    OutOfView,
    #[error("tracking lost at frame {frame}: {reason}")]
    TrackingLost { frame: usize, reason: String },
    #[error("sliding window needs at least 2 keyframes, got {keyframes}")]
    DegenerateWindow { keyframes: usize },
    #[error("host keyframe has only {have} points")]
    TooFewHostPoints { have: usize },
    #[error("depth source failed: {reason}")]
    DepthUnavailable { reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Tuning surface of the odometry. Intensity-valued thresholds are on the
/// [0,1] range (8-bit values divided by 255).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryConfig {
    /// Added to each block's median gradient magnitude to form the dynamic
    /// selection threshold.
    pub gradient_threshold: f64,
    pub target_points: usize,
    pub pyramid_levels: usize,
    pub huber_delta: f64,
    /// Minimum accumulated opacity for a rendered depth to be trusted.
    pub alpha_valid: f64,
    /// Maximum relative spread of normalized depth across a pixel's valid
    /// 3x3 neighborhood; larger means the pixel sits on a blended occlusion
    /// edge and is dropped during association.
    pub depth_consistency: f64,
    /// Mean-flow threshold (pixels) above which a frame becomes a keyframe.
    pub keyframe_flow: f64,
    /// Minimum inlier fraction below which tracking is lost; 1.5x this value
    /// triggers a new keyframe.
    pub inlier_floor: f64,
    pub max_keyframe_gap: usize,
    pub window_size: usize,
    /// Estimate the affine brightness pair (a, b) during tracking.
    pub estimate_affine: bool,
    /// Refine window keyframe poses jointly when a keyframe is created.
    pub window_refinement: bool,
    /// Constant of the gradient-based weight `c²/(c² + ‖∇I‖²)`.
    pub gradient_weight_constant: f64,
    pub max_gn_iterations: usize,
    pub min_points: usize,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            gradient_threshold: 6.0 / 255.0,
            target_points: 1200,
            pyramid_levels: 4,
            huber_delta: 9.0 / 255.0,
            alpha_valid: 0.5,
            depth_consistency: 0.01,
            keyframe_flow: 12.0,
            inlier_floor: 0.6,
            max_keyframe_gap: 60,
            window_size: 7,
            estimate_affine: true,
            window_refinement: true,
            gradient_weight_constant: 50.0 / 255.0,
            max_gn_iterations: 20,
            min_points: 50,
        }
    }
}

/// A reference frame: image pyramid, camera-to-world pose, tracked points and
/// the rendered depth/alpha maps they were associated from.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: u64,
    pub timestamp: f64,
    pub pyramid: ImagePyramid,
    /// Camera-to-world.
    pub pose: SE3Pose,
    pub points: Vec<TrackPoint>,
    pub depth: ScalarImage,
    pub alpha: ScalarImage,
    /// High-gradient pixels extracted from the image (pose-independent).
    pub candidate_pixels: Vec<(usize, usize)>,
    /// Pose at which `points` were associated; when window refinement moves
    /// the pose materially, depths are re-rendered to stay consistent.
    pub association_pose: SE3Pose,
}

/// Where keyframes get their depth maps from. The splatting source is the
/// production path; the nearest-neighbor source exists for the ablation.
pub trait DepthSource {
    fn depth_at(
        &self,
        world_to_camera: &SE3Pose,
        camera: &PinholeCamera,
    ) -> Result<(ScalarImage, ScalarImage), TrackError>;
}

pub struct SplatDepthSource<'a> {
    pub map: &'a GaussianMap,
    pub options: RenderOptions,
}

impl<'a> SplatDepthSource<'a> {
    pub fn new(map: &'a GaussianMap) -> Self {
        Self {
            map,
            options: RenderOptions::default(),
        }
    }
}

impl DepthSource for SplatDepthSource<'_> {
    fn depth_at(
        &self,
        world_to_camera: &SE3Pose,
        camera: &PinholeCamera,
    ) -> Result<(ScalarImage, ScalarImage), TrackError> {
        let view = render(self.map, world_to_camera, camera, &self.options)?;
        Ok((view.depth, view.alpha))
    }
}

/// Ablation baseline: depth by nearest-neighbor interpolation from a discrete
/// cloud. Valid pixels get alpha 1, so association inverts the depth as-is.
pub struct NnDepthSource<'a> {
    pub cloud: &'a [PointSample],
}

impl DepthSource for NnDepthSource<'_> {
    fn depth_at(
        &self,
        world_to_camera: &SE3Pose,
        camera: &PinholeCamera,
    ) -> Result<(ScalarImage, ScalarImage), TrackError> {
        let depth = interpolate_depth_nn(self.cloud, world_to_camera, camera).map_err(
            |e: InterpolationError| TrackError::DepthUnavailable {
                reason: e.to_string(),
            },
        )?;
        let alpha = ScalarImage::from_fn(depth.width(), depth.height(), |x, y| {
            if depth.get(x, y) > 0.0 {
                1.0
            } else {
                0.0
            }
        });
        Ok((depth, alpha))
    }
}

/// Keyframe decision: large mean flow, degraded inlier fraction, or a frame
/// gap that hit the maximum.
pub fn is_keyframe(
    result: &TrackResult,
    frames_since_keyframe: usize,
    config: &OdometryConfig,
) -> bool {
    result.mean_flow > config.keyframe_flow
        || result.inlier_fraction < (1.5 * config.inlier_floor).min(1.0)
        || frames_since_keyframe >= config.max_keyframe_gap
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Keyframe,
    Tracked,
    Lost,
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    pub status: FrameStatus,
    pub energy: f64,
    pub inlier_fraction: f64,
}

/// Result of an odometry run. `failure` is set when the run ended early; the
/// trajectory then covers the frames tracked so far.
#[derive(Debug)]
pub struct OdometryRun {
    pub trajectory: Trajectory,
    pub records: Vec<FrameRecord>,
    pub failure: Option<(usize, TrackError)>,
}

/// One input frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub timestamp: f64,
    pub image: GrayImage,
}

/// Track a frame stream against a fixed prior map. Frame 0 becomes a keyframe
/// at `first_pose`; every later frame is tracked against the latest keyframe
/// with a constant-velocity initial guess. New keyframes trigger window
/// refinement, a fresh depth render at the refined pose, point extraction and
/// one-to-one depth association.
pub fn run_odometry<I, E>(
    frames: I,
    depth_source: &dyn DepthSource,
    first_pose: &SE3Pose,
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> OdometryRun
where
    I: IntoIterator<Item = Result<Frame, E>>,
    E: Into<TrackError>,
{
    let mut run = OdometryRun {
        trajectory: Trajectory::empty(),
        records: Vec::new(),
        failure: None,
    };
    let mut window: Vec<Keyframe> = Vec::new();
    let mut previous_pose = *first_pose;
    let mut velocity = SE3Pose::identity();
    let mut frames_since_keyframe = 0usize;
    let mut next_keyframe_id = 0u64;

    for (index, frame) in frames.into_iter().enumerate() {
        let frame = match frame {
            Ok(f) => f,
            Err(e) => {
                run.failure = Some((index, e.into()));
                break;
            }
        };
        let step = (|| -> Result<(SE3Pose, FrameStatus, f64, f64), TrackError> {
            let pyramid = build_pyramid(&frame.image, config.pyramid_levels)?;
            if window.is_empty() {
                let keyframe = make_keyframe(
                    next_keyframe_id,
                    frame.timestamp,
                    pyramid,
                    *first_pose,
                    depth_source,
                    camera,
                    config,
                )?;
                window.push(keyframe);
                return Ok((*first_pose, FrameStatus::Keyframe, 0.0, 1.0));
            }

            let host_pose = window.last().unwrap().pose;
            let predicted = previous_pose.compose(&velocity);
            let init = predicted.inverse().compose(&host_pose);
            if std::env::var("SPLATVO_TRACE").is_ok() {
                let t = predicted.translation();
                eprintln!(
                    "frame {index}: host kf {} (pts {}), predicted t ({:+.4} {:+.4} {:+.4}), init |t| {:.4}",
                    window.last().unwrap().id,
                    window.last().unwrap().points.len(),
                    t.x, t.y, t.z,
                    init.translation().norm()
                );
            }
            let result = track_frame(window.last().unwrap(), &pyramid, &init, camera, config)
                .map_err(|e| match e {
                    TrackError::TrackingLost { reason, .. } => TrackError::TrackingLost {
                        frame: index,
                        reason,
                    },
                    other => other,
                })?;
            let mut pose = host_pose.compose(&result.relative.inverse());
            if std::env::var("SPLATVO_TRACE").is_ok() {
                let t = pose.translation();
                eprintln!(
                    "  tracked t ({:+.4} {:+.4} {:+.4}) flow {:.1} energy {:.5} inl {:.2} conv {}",
                    t.x, t.y, t.z, result.mean_flow, result.energy, result.inlier_fraction, result.converged
                );
            }

            if is_keyframe(&result, frames_since_keyframe, config) {
                let keyframe = Keyframe {
                    id: next_keyframe_id + 1,
                    timestamp: frame.timestamp,
                    pyramid,
                    pose,
                    points: Vec::new(),
                    depth: ScalarImage::zeros(0, 0),
                    alpha: ScalarImage::zeros(0, 0),
                    candidate_pixels: Vec::new(),
                    association_pose: pose,
                };
                window.push(keyframe);
                if window.len() > config.window_size {
                    window.remove(0);
                }
                if config.window_refinement && window.len() >= 2 {
                    window_optimize(&mut window, camera, config)?;
                }
                pose = window.last().unwrap().pose;

                // Depth render at the refined pose, then extraction and
                // association for the new keyframe.
                let world_to_camera = pose.inverse();
                let (depth, alpha) = depth_source.depth_at(&world_to_camera, camera)?;
                let kf = window.last_mut().unwrap();
                let pixels = extract_high_gradient_points(kf.pyramid.base(), config)?;
                kf.points = associate_depth(
                    &pixels,
                    kf.pyramid.base(),
                    &depth,
                    &alpha,
                    kf.id,
                    config,
                )?;
                kf.depth = depth;
                kf.alpha = alpha;
                kf.candidate_pixels = pixels;
                kf.association_pose = pose;
                Ok((pose, FrameStatus::Keyframe, result.energy, result.inlier_fraction))
            } else {
                Ok((pose, FrameStatus::Tracked, result.energy, result.inlier_fraction))
            }
        })();

        match step {
            Ok((pose, status, energy, inliers)) => {
                if status == FrameStatus::Keyframe {
                    next_keyframe_id += 1;
                    frames_since_keyframe = 0;
                } else {
                    frames_since_keyframe += 1;
                }
                velocity = previous_pose.inverse().compose(&pose);
                previous_pose = pose;
                if let Err(e) = run.trajectory.push(frame.timestamp, pose) {
                    run.failure = Some((index, e.into()));
                    break;
                }
                run.records.push(FrameRecord {
                    index,
                    timestamp: frame.timestamp,
                    status,
                    energy,
                    inlier_fraction: inliers,
                });
            }
            Err(e) => {
                run.records.push(FrameRecord {
                    index,
                    timestamp: frame.timestamp,
                    status: FrameStatus::Lost,
                    energy: f64::NAN,
                    inlier_fraction: 0.0,
                });
                run.failure = Some((index, e));
                break;
            }
        }
    }
    run
}

fn make_keyframe(
    id: u64,
    timestamp: f64,
    pyramid: ImagePyramid,
    pose: SE3Pose,
    depth_source: &dyn DepthSource,
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Result<Keyframe, TrackError> {
    let (depth, alpha) = depth_source.depth_at(&pose.inverse(), camera)?;
    let pixels = extract_high_gradient_points(pyramid.base(), config)?;
    let points = associate_depth(&pixels, pyramid.base(), &depth, &alpha, id, config)?;
    Ok(Keyframe {
        id,
        timestamp,
        pyramid,
        pose,
        points,
        depth,
        alpha,
        candidate_pixels: pixels,
        association_pose: pose,
    })
}

/// Re-render depth and re-associate points for keyframes whose pose moved
/// since their last association, so stored inverse depths always describe the
/// surface seen from the current pose estimate.
fn refresh_moved_keyframes(
    window: &mut [Keyframe],
    depth_source: &dyn DepthSource,
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Result<(), TrackError> {
    for kf in window.iter_mut() {
        let delta = kf.association_pose.inverse().compose(&kf.pose);
        if delta.translation().norm() < 1e-4 && delta.rotation_angle() < 1e-5 {
            continue;
        }
        let (depth, alpha) = depth_source.depth_at(&kf.pose.inverse(), camera)?;
        kf.points = associate_depth(
            &kf.candidate_pixels,
            kf.pyramid.base(),
            &depth,
            &alpha,
            kf.id,
            config,
        )?;
        kf.depth = depth;
        kf.alpha = alpha;
        kf.association_pose = kf.pose;
    }
    Ok(())
}
