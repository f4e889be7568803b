//! Deterministic synthetic scenes for closed-loop testing: a Gaussian map
//! with spatially varying color, a smooth camera trajectory that keeps the
//! scene in view, and rendered ground truth at every pose.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{PointSample, Trajectory};
use crate::fit::TrainingView;
use crate::gaussian::{render, Gaussian3D, GaussianMap, RenderOptions, RenderedView};
use crate::geometry::{PinholeCamera, ScalarImage, SE3Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneLayout {
    TwoPlanes,
    RoomBox,
    TexturedWall,
}

impl std::str::FromStr for SceneLayout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-planes" => Ok(SceneLayout::TwoPlanes),
            "room-box" => Ok(SceneLayout::RoomBox),
            "textured-wall" => Ok(SceneLayout::TexturedWall),
            other => Err(format!(
                "unknown layout `{other}` (two-planes|room-box|textured-wall)"
            )),
        }
    }
}

impl std::fmt::Display for SceneLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneLayout::TwoPlanes => "two-planes",
            SceneLayout::RoomBox => "room-box",
            SceneLayout::TexturedWall => "textured-wall",
        })
    }
}

/// Geometry of the two-planes layout, shared by the scene builder and the
/// analytic depth oracle.
pub mod two_planes {
    /// Background plane depth (meters) and half extents.
    pub const BG_Z: f64 = 3.0;
    pub const BG_X: (f64, f64) = (-2.6, 2.6);
    pub const BG_Y: (f64, f64) = (-1.9, 1.9);
    /// Foreground plane depth and extents.
    pub const FG_Z: f64 = 2.6;
    pub const FG_X: (f64, f64) = (0.3, 1.3);
    pub const FG_Y: (f64, f64) = (-0.5, 0.5);
    /// Occlusion-shadow rectangle missing from the point cloud (but present
    /// in the continuous map): the region of the background plane shadowed by
    /// the foreground plane as seen from the origin.
    pub const VOID_X: (f64, f64) = (0.35, 1.5);
    pub const VOID_Y: (f64, f64) = (-0.58, 0.58);
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub layout: SceneLayout,
    pub map: GaussianMap,
    /// Discrete samples of the map positions; for the two-planes layout the
    /// occlusion-shadow rectangle of the background plane is missing.
    pub cloud: Vec<PointSample>,
    pub trajectory: Trajectory,
    pub camera: PinholeCamera,
    pub views: Vec<RenderedView>,
}

fn default_camera() -> PinholeCamera {
    PinholeCamera::new(240.0, 240.0, 159.5, 119.5, 320, 240).unwrap()
}

/// Smooth multi-frequency color field; phases come from the seed so scenes
/// differ across seeds but are bit-identical for equal seeds.
struct Texture {
    phases: [f64; 12],
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut phases = [0.0; 12];
        for p in &mut phases {
            *p = rng.random_range(0.0..std::f64::consts::TAU);
        }
        Self { phases }
    }

    /// Three incommensurate frequency bands per channel plus a slow amplitude
    /// modulation, so the field has coarse-scale structure and no
    /// translational self-similarity (periodic textures invite false
    /// photometric minima).
    fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        let ph = &self.phases;
        let channel = |lo: (f64, f64), mid: (f64, f64), hi: (f64, f64), k: usize| -> f64 {
            let low = 0.16 * (lo.0 * p.x + lo.1 * p.y + ph[k]).sin();
            let modulation = 0.22 + 0.08 * (2.3 * p.x + 1.7 * p.y + ph[k + 1]).sin();
            let middle = modulation * (mid.0 * p.x + mid.1 * p.y + 0.4 * p.z + ph[k + 2]).sin();
            let high = 0.09 * (hi.0 * p.x + hi.1 * p.y + ph[k + 3]).sin();
            0.5 + low + middle + high
        };
        let r = channel((4.3, 1.7), (14.1, 5.3), (27.3, 9.1), 0);
        let g = channel((3.1, 5.1), (6.7, 13.3), (11.9, 24.7), 4);
        let b = channel((5.3, 3.7), (11.3, 9.7), (21.1, 17.9), 8);
        [r.clamp(0.03, 0.97), g.clamp(0.03, 0.97), b.clamp(0.03, 0.97)]
    }
}

/// Deterministic per-cell hash in [0, 1), used to jitter splats along the
/// plane normal. The jitter makes the compositing order of overlapping
/// splats geometrically stable across views, which keeps renders
/// view-consistent.
fn cell_hash(ix: usize, iy: usize) -> f64 {
    let mut h = (ix as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (iy as u64).wrapping_mul(0xBF58476D1CE4E5B9);
    h ^= h >> 31;
    h = h.wrapping_mul(0x94D049BB133111EB);
    h ^= h >> 29;
    (h % 1_000_000) as f64 / 1_000_000.0
}

/// Gaussians tiling an axis-aligned rectangle; `normal_axis` picks the plane
/// orientation (positions jittered by ±0.25·spacing along the normal).
#[allow(clippy::too_many_arguments)]
fn plane_gaussians(
    normal_axis: usize,
    value: f64,
    u_range: (f64, f64),
    v_range: (f64, f64),
    spacing: f64,
    texture: &Texture,
    opacity: f64,
    out: &mut Vec<Gaussian3D>,
) {
    let (u_axis, v_axis) = match normal_axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let nu = ((u_range.1 - u_range.0) / spacing).round() as usize + 1;
    let nv = ((v_range.1 - v_range.0) / spacing).round() as usize + 1;
    for iv in 0..nv {
        for iu in 0..nu {
            let mut position = Vector3::zeros();
            position[u_axis] = u_range.0 + iu as f64 * spacing;
            position[v_axis] = v_range.0 + iv as f64 * spacing;
            position[normal_axis] = value + (cell_hash(iu, iv) - 0.5) * 0.5 * spacing;
            let mut scale = Vector3::from_element(0.6 * spacing);
            scale[normal_axis] = 0.15 * spacing;
            out.push(Gaussian3D {
                color: texture.color(&position),
                position,
                scale,
                rotation: UnitQuaternion::identity(),
                opacity,
            });
        }
    }
}

fn smooth_pose(k: usize, n: usize, amplitude: f64) -> SE3Pose {
    let s = k as f64 / n as f64 * std::f64::consts::TAU;
    let translation = Vector3::new(
        amplitude * s.sin(),
        0.4 * amplitude * (2.0 * s).sin(),
        0.25 * amplitude * s.sin(),
    );
    let rotation = UnitQuaternion::from_euler_angles(
        0.04 * (2.0 * s).sin(),
        0.06 * s.sin(),
        0.03 * s.sin(),
    );
    SE3Pose::from_quaternion(rotation, translation)
}

/// Build a deterministic scene: Gaussian map, point-cloud sampling of it, a
/// smooth trajectory of `frames` camera-to-world poses starting at identity,
/// and the rendered ground-truth views.
pub fn make_synthetic_scene(layout: SceneLayout, seed: u64, frames: usize) -> SyntheticScene {
    assert!(frames >= 2, "a scene needs at least 2 frames");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = Texture::new(&mut rng);
    let camera = default_camera();
    let mut gaussians = Vec::new();
    let mut void = None;
    match layout {
        SceneLayout::TwoPlanes => {
            use two_planes::*;
            plane_gaussians(2, BG_Z, BG_X, BG_Y, 0.045, &texture, 0.9, &mut gaussians);
            plane_gaussians(2, FG_Z, FG_X, FG_Y, 0.035, &texture, 0.9, &mut gaussians);
            void = Some((VOID_X, VOID_Y, BG_Z));
        }
        SceneLayout::RoomBox => {
            // Back wall plus floor, ceiling and two side walls of an
            // inward-facing box.
            plane_gaussians(2, 4.0, (-2.0, 2.0), (-1.5, 1.5), 0.08, &texture, 0.9, &mut gaussians);
            plane_gaussians(1, -1.5, (-2.0, 2.0), (0.5, 3.9), 0.1, &texture, 0.9, &mut gaussians);
            plane_gaussians(1, 1.5, (-2.0, 2.0), (0.5, 3.9), 0.1, &texture, 0.9, &mut gaussians);
            plane_gaussians(0, -2.0, (-1.5, 1.5), (0.5, 3.9), 0.1, &texture, 0.9, &mut gaussians);
            plane_gaussians(0, 2.0, (-1.5, 1.5), (0.5, 3.9), 0.1, &texture, 0.9, &mut gaussians);
        }
        SceneLayout::TexturedWall => {
            plane_gaussians(2, 2.5, (-2.2, 2.2), (-1.7, 1.7), 0.04, &texture, 0.9, &mut gaussians);
        }
    }
    let map = GaussianMap::new(gaussians);

    let cloud: Vec<PointSample> = map
        .gaussians
        .iter()
        .filter(|g| {
            if let Some(((vx0, vx1), (vy0, vy1), vz)) = void {
                // The jitter keeps splats within ±0.25·spacing of the plane.
                !((g.position.z - vz).abs() < 0.1
                    && g.position.x >= vx0
                    && g.position.x <= vx1
                    && g.position.y >= vy0
                    && g.position.y <= vy1)
            } else {
                true
            }
        })
        .map(|g| PointSample {
            position: g.position,
            color: Some(g.color),
        })
        .collect();

    let amplitude = match layout {
        SceneLayout::TwoPlanes => 0.45,
        SceneLayout::RoomBox => 0.35,
        SceneLayout::TexturedWall => 0.4,
    };
    let mut trajectory = Trajectory::empty();
    for k in 0..frames {
        trajectory
            .push(k as f64 * 0.04, smooth_pose(k, frames, amplitude))
            .unwrap();
    }

    let options = RenderOptions::default();
    let views: Vec<RenderedView> = trajectory
        .entries()
        .iter()
        .map(|(_, pose)| render(&map, &pose.inverse(), &camera, &options).unwrap())
        .collect();
    for (k, view) in views.iter().enumerate() {
        let mean_alpha =
            view.alpha.data().iter().sum::<f64>() / view.alpha.data().len() as f64;
        assert!(
            mean_alpha > 0.8,
            "layout {layout} pose {k}: mean alpha coverage {mean_alpha:.3} too low"
        );
    }

    SyntheticScene {
        layout,
        map,
        cloud,
        trajectory,
        camera,
        views,
    }
}

/// Analytic depth of the two-planes geometry at a pose: per pixel, the
/// camera-frame z of the nearest plane the ray hits (0 where it misses both).
pub fn two_planes_analytic_depth(
    world_to_camera: &SE3Pose,
    camera: &PinholeCamera,
) -> ScalarImage {
    use two_planes::*;
    let camera_to_world = world_to_camera.inverse();
    ScalarImage::from_fn(camera.width, camera.height, |x, y| {
        let dir_cam = Vector3::new(
            (x as f64 - camera.cx) / camera.fx,
            (y as f64 - camera.cy) / camera.fy,
            1.0,
        );
        let origin = *camera_to_world.translation();
        let dir = camera_to_world.rotate(&dir_cam);
        let mut best = f64::INFINITY;
        for (z, xr, yr) in [(FG_Z, FG_X, FG_Y), (BG_Z, BG_X, BG_Y)] {
            if dir.z.abs() < 1e-12 {
                continue;
            }
            let t = (z - origin.z) / dir.z;
            if t <= 0.0 {
                continue;
            }
            let hit = origin + dir * t;
            if hit.x >= xr.0 && hit.x <= xr.1 && hit.y >= yr.0 && hit.y <= yr.1 && t < best {
                best = t;
            }
        }
        if best.is_finite() {
            // t parametrizes world ray length; camera-frame z is t · dir_cam.z
            // after normalization — dir_cam has z = 1, so z_cam = t.
            best
        } else {
            0.0
        }
    })
}

/// Mask of pixels whose true surface is the background plane inside the
/// point-cloud void (the occlusion-shadow region).
pub fn two_planes_void_mask(world_to_camera: &SE3Pose, camera: &PinholeCamera) -> Vec<bool> {
    use two_planes::*;
    let camera_to_world = world_to_camera.inverse();
    let mut mask = vec![false; camera.width * camera.height];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let dir_cam = Vector3::new(
                (x as f64 - camera.cx) / camera.fx,
                (y as f64 - camera.cy) / camera.fy,
                1.0,
            );
            let origin = *camera_to_world.translation();
            let dir = camera_to_world.rotate(&dir_cam);
            if dir.z.abs() < 1e-12 {
                continue;
            }
            // Must not be occluded by the foreground plane.
            let t_fg = (FG_Z - origin.z) / dir.z;
            if t_fg > 0.0 {
                let hit = origin + dir * t_fg;
                if hit.x >= FG_X.0 && hit.x <= FG_X.1 && hit.y >= FG_Y.0 && hit.y <= FG_Y.1 {
                    continue;
                }
            }
            let t_bg = (BG_Z - origin.z) / dir.z;
            if t_bg <= 0.0 {
                continue;
            }
            let hit = origin + dir * t_bg;
            if hit.x >= VOID_X.0 && hit.x <= VOID_X.1 && hit.y >= VOID_Y.0 && hit.y <= VOID_Y.1
            {
                mask[y * camera.width + x] = true;
            }
        }
    }
    mask
}

/// Small two-planes fixture for fitting tests: a 200-Gaussian ground-truth
/// map, training views rendered from it, one held-out view, and a perturbed
/// starting map (positions jittered by up to ±0.05 m, colors randomized).
pub struct FitFixture {
    pub truth: GaussianMap,
    pub initial: GaussianMap,
    pub views: Vec<TrainingView>,
    pub held_out: TrainingView,
    pub held_out_pose: SE3Pose,
}

pub fn two_planes_fit_fixture(seed: u64) -> FitFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = Texture::new(&mut rng);
    let camera = PinholeCamera::new(56.0, 56.0, 31.5, 31.5, 64, 64).unwrap();
    let mut gaussians = Vec::new();
    // 14x10 background + 10x6 foreground = 200 Gaussians.
    plane_gaussians(2, 3.0, (-1.7, 1.7), (-1.55, 1.55), 3.4 / 13.0, &texture, 0.9, &mut gaussians);
    plane_gaussians(2, 2.0, (0.1, 1.1), (-0.45, 0.45), 1.0 / 9.0, &texture, 0.9, &mut gaussians);
    assert_eq!(gaussians.len(), 200);
    let truth = GaussianMap::new(gaussians);

    let poses: Vec<SE3Pose> = (0..7)
        .map(|k| {
            let s = k as f64 / 7.0 * std::f64::consts::TAU;
            SE3Pose::from_quaternion(
                UnitQuaternion::from_euler_angles(0.02 * (2.0 * s).sin(), 0.04 * s.sin(), 0.0),
                Vector3::new(0.25 * s.sin(), 0.1 * (2.0 * s).sin(), 0.08 * s.cos() - 0.08),
            )
        })
        .collect();
    let options = RenderOptions::smooth();
    let mut views = Vec::new();
    for pose in poses.iter().take(6) {
        let image = render(&truth, &pose.inverse(), &camera, &options).unwrap().color;
        views.push(TrainingView::new(image, pose.inverse(), camera).unwrap());
    }
    let held_out_pose = poses[6];
    let held_out_image = render(&truth, &held_out_pose.inverse(), &camera, &options)
        .unwrap()
        .color;
    let held_out = TrainingView::new(held_out_image, held_out_pose.inverse(), camera).unwrap();

    let mut initial = truth.clone();
    for g in &mut initial.gaussians {
        g.position += Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        g.color = [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ];
    }
    FitFixture {
        truth,
        initial,
        views,
        held_out,
        held_out_pose,
    }
}

/// Gray frames of a scene's rendered views, for feeding the odometry.
pub fn scene_frames(scene: &SyntheticScene) -> Vec<crate::odom::Frame> {
    scene
        .views
        .iter()
        .zip(scene.trajectory.entries())
        .map(|(view, (timestamp, _))| crate::odom::Frame {
            timestamp: *timestamp,
            image: view.color.to_gray(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_planes_is_deterministic() {
        let a = make_synthetic_scene(SceneLayout::TwoPlanes, 7, 10);
        let b = make_synthetic_scene(SceneLayout::TwoPlanes, 7, 10);
        assert_eq!(a.map, b.map);
        assert_eq!(a.trajectory, b.trajectory);
        let c = make_synthetic_scene(SceneLayout::TwoPlanes, 8, 10);
        assert_ne!(a.map, c.map);
    }

    #[test]
    fn trajectories_start_at_identity() {
        for layout in [
            SceneLayout::TwoPlanes,
            SceneLayout::RoomBox,
            SceneLayout::TexturedWall,
        ] {
            let scene = make_synthetic_scene(layout, 3, 8);
            let (_, first) = scene.trajectory.entries()[0];
            assert!((first.translation()).norm() < 1e-12);
            assert!(first.rotation_angle() < 1e-12);
        }
    }

    #[test]
    fn analytic_depth_matches_normalized_render() {
        let scene = make_synthetic_scene(SceneLayout::TwoPlanes, 7, 4);
        let (_, pose) = scene.trajectory.entries()[1];
        let w2c = pose.inverse();
        let analytic = two_planes_analytic_depth(&w2c, &scene.camera);
        let view = &scene.views[1];
        let mut checked = 0usize;
        let mut total_err = 0.0;
        for y in (10..230).step_by(7) {
            for x in (10..310).step_by (7) {
                let alpha = view.alpha.get(x, y);
                let truth = analytic.get(x, y);
                if alpha > 0.9 && truth > 0.0 {
                    let rendered = view.depth.get(x, y) / alpha;
                    total_err += (rendered - truth).abs();
                    checked += 1;
                }
            }
        }
        assert!(checked > 500);
        let mean_err = total_err / checked as f64;
        assert!(
            mean_err < 0.08,
            "mean |rendered - analytic| = {mean_err:.4} m over {checked} pixels"
        );
    }

    #[test]
    fn cloud_has_the_void_but_map_does_not() {
        let scene = make_synthetic_scene(SceneLayout::TwoPlanes, 7, 4);
        use two_planes::*;
        let in_void = |p: &Vector3<f64>| {
            (p.z - BG_Z).abs() < 0.1
                && p.x >= VOID_X.0
                && p.x <= VOID_X.1
                && p.y >= VOID_Y.0
                && p.y <= VOID_Y.1
        };
        assert!(scene.cloud.iter().all(|p| !in_void(&p.position)));
        assert!(scene.map.gaussians.iter().any(|g| in_void(&g.position)));
    }
}
