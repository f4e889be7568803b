use nalgebra::{DMatrix, DVector, Vector2, Vector3, Vector6};

use crate::gaussian::MIN_SPLAT_DEPTH;
use crate::geometry::{skew, PinholeCamera, SE3Pose};

use super::points::PATTERN;
use super::residual::huber_energy;
use super::{Keyframe, OdometryConfig, TrackError};

const MAX_ITERATIONS: usize = 10;
const MAX_BACKTRACKS: usize = 6;
const STEP_NORM_STOP: f64 = 1e-6;
/// Levenberg-style relative damping of the normal equations.
const DAMPING: f64 = 1e-4;
/// Absolute diagonal floor; keeps momentarily unconstrained poses pinned
/// instead of free-floating along exactly flat directions.
const DIAG_FLOOR: f64 = 1e-7;
/// Largest twist norm attempted in one step.
const MAX_STEP: f64 = 0.2;

/// Residual magnitude charged for an active term that currently projects out
/// of view, so that leaving the image never pays off energetically.
pub(super) const OUT_OF_VIEW_RESIDUAL: f64 = 0.25;

/// One active residual term: a pattern element of one host point observed in
/// one target keyframe. The set is frozen when the optimization starts.
#[derive(Clone, Copy)]
struct Term {
    host: u32,
    target: u32,
    point: u32,
    pattern: u32,
}

struct Evaluated {
    residual: f64,
    weight: f64,
    target_uv_grad: Vector2<f64>,
    host_point: Vector3<f64>,
    target_point: Vector3<f64>,
}

/// Joint photometric refinement of all window keyframe poses at full
/// resolution. The oldest pose is held fixed as gauge; inverse depths stay
/// frozen (they come from the prior map). Updates are right-multiplied twists
/// on the camera-to-world poses. The residual set is fixed up front: terms
/// that move out of view during the optimization cost a constant penalty.
pub fn window_optimize(
    window: &mut [Keyframe],
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Result<(), TrackError> {
    if window.len() < 2 {
        return Err(TrackError::DegenerateWindow {
            keyframes: window.len(),
        });
    }
    let mut poses: Vec<SE3Pose> = window.iter().map(|kf| kf.pose).collect();
    let terms = collect_terms(window, &poses, camera, config);
    if terms.is_empty() {
        return Err(TrackError::DegenerateWindow {
            keyframes: window.len(),
        });
    }
    let mut energy = mean_energy(window, &poses, camera, config, &terms);
    for _ in 0..MAX_ITERATIONS {
        let Some((mut h, g)) = assemble(window, &poses, camera, config, &terms) else {
            return Err(TrackError::DegenerateWindow {
                keyframes: window.len(),
            });
        };
        for i in 0..h.nrows() {
            h[(i, i)] = h[(i, i)] * (1.0 + DAMPING) + DIAG_FLOOR;
        }
        let Some(chol) = h.clone().cholesky() else {
            if std::env::var("SPLATVO_WINDOW_DEBUG").is_ok() {
                eprintln!("window cholesky failed: {} keyframes", window.len());
                for (i, kf) in window.iter().enumerate() {
                    let t = kf.pose.translation();
                    eprintln!("  kf {i}: id {} points {} pose t ({:+.3} {:+.3} {:+.3})", kf.id, kf.points.len(), t.x, t.y, t.z);
                }
                let mut counts = vec![vec![0usize; window.len()]; window.len()];
                for term in &terms {
                    counts[term.host as usize][term.target as usize] += 1;
                }
                for (hi, row) in counts.iter().enumerate() {
                    eprintln!("  host {hi}: targets {row:?}");
                }
                for i in 0..window.len().saturating_sub(1) {
                    let block = h.view((i * 6, i * 6), (6, 6));
                    eprintln!("  block {i} diag: {:?}", (0..6).map(|k| block[(k, k)]).collect::<Vec<_>>());
                }
            }
            return Err(TrackError::DegenerateWindow {
                keyframes: window.len(),
            });
        };
        let full_step = chol.solve(&(-g));
        let mut scale = (MAX_STEP / full_step.norm()).min(1.0);
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACKS {
            let candidate: Vec<SE3Pose> = poses
                .iter()
                .enumerate()
                .map(|(i, pose)| {
                    if i == 0 {
                        *pose
                    } else {
                        let base = (i - 1) * 6;
                        let twist = Vector6::from_fn(|k, _| full_step[base + k] * scale);
                        pose.compose(&SE3Pose::exp(&twist))
                    }
                })
                .collect();
            let candidate_energy = mean_energy(window, &candidate, camera, config, &terms);
            if candidate_energy < energy {
                let step_norm = full_step.norm() * scale;
                poses = candidate;
                energy = candidate_energy;
                accepted = true;
                if step_norm < STEP_NORM_STOP {
                    for (kf, pose) in window.iter_mut().zip(&poses) {
                        kf.pose = *pose;
                    }
                    return Ok(());
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    for (kf, pose) in window.iter_mut().zip(&poses) {
        kf.pose = *pose;
    }
    Ok(())
}

/// Terms valid at the initial poses: every pattern element of every host
/// point that projects into every other keyframe.
fn collect_terms(
    window: &[Keyframe],
    poses: &[SE3Pose],
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Vec<Term> {
    let mut terms = Vec::new();
    for (host_index, host) in window.iter().enumerate() {
        for target_index in 0..window.len() {
            if target_index == host_index {
                continue;
            }
            for (point_index, _) in host.points.iter().enumerate() {
                for pattern in 0..PATTERN.len() {
                    if evaluate_term(
                        window,
                        poses,
                        camera,
                        config,
                        host_index,
                        target_index,
                        point_index,
                        pattern,
                    )
                    .is_some()
                    {
                        terms.push(Term {
                            host: host_index as u32,
                            target: target_index as u32,
                            point: point_index as u32,
                            pattern: pattern as u32,
                        });
                    }
                }
            }
        }
    }
    terms
}

/// Evaluate one term at the given poses; `None` when it projects out of view.
#[allow(clippy::too_many_arguments)]
fn evaluate_term(
    window: &[Keyframe],
    poses: &[SE3Pose],
    camera: &PinholeCamera,
    config: &OdometryConfig,
    host_index: usize,
    target_index: usize,
    point_index: usize,
    pattern: usize,
) -> Option<Evaluated> {
    let host = &window[host_index];
    let point = &host.points[point_index];
    let (dx, dy) = PATTERN[pattern];
    let host_uv = Vector2::new(point.pixel.x + dx as f64, point.pixel.y + dy as f64);
    let relative = poses[target_index].inverse().compose(&poses[host_index]);
    let host_point = camera.backproject(&host_uv, point.inv_depth).ok()?;
    let target_point = relative.transform(&host_point);
    if target_point.z <= MIN_SPLAT_DEPTH {
        return None;
    }
    let target_uv = camera.project(&target_point).ok()?;
    let max_x = (camera.width - 1) as f64;
    let max_y = (camera.height - 1) as f64;
    if target_uv.x < 1.0
        || target_uv.y < 1.0
        || target_uv.x > max_x - 1.0
        || target_uv.y > max_y - 1.0
    {
        return None;
    }
    let target_image = window[target_index].pyramid.base();
    let (intensity, image_grad) = target_image.sample_with_gradient(&target_uv).ok()?;
    let residual = intensity - point.pattern_intensities[pattern];
    let host_grad = host.pyramid.base().gradient(&host_uv).ok()?;
    let grad_c2 = config.gradient_weight_constant * config.gradient_weight_constant;
    let grad_weight = grad_c2 / (grad_c2 + host_grad.norm_squared());
    let huber_weight = if residual.abs() <= config.huber_delta {
        1.0
    } else {
        config.huber_delta / residual.abs()
    };
    Some(Evaluated {
        residual,
        weight: grad_weight * huber_weight,
        target_uv_grad: image_grad,
        host_point,
        target_point,
    })
}

/// Jacobians of one term's residual with respect to right-multiplied twist
/// updates of the host and target camera-to-world poses:
/// `dq/dξ_host = R_rel [I | -[p]x]`, `dq/dξ_target = [-I | +[q]x]`.
fn term_jacobians(
    eval: &Evaluated,
    relative: &SE3Pose,
    camera: &PinholeCamera,
) -> (Vector6<f64>, Vector6<f64>) {
    let rotation = *relative.rotation();
    let q = eval.target_point;
    let z_inv = 1.0 / q.z;
    let d_point = eval.target_uv_grad.x
        * Vector3::new(camera.fx * z_inv, 0.0, -camera.fx * q.x * z_inv * z_inv)
        + eval.target_uv_grad.y
            * Vector3::new(0.0, camera.fy * z_inv, -camera.fy * q.y * z_inv * z_inv);
    let mut jac_host = Vector6::zeros();
    let mut jac_target = Vector6::zeros();
    let rotated = rotation.transpose() * d_point;
    let host_rot = skew(&eval.host_point) * rotated;
    let target_rot = skew(&q) * d_point;
    for k in 0..3 {
        jac_host[k] = rotated[k];
        jac_target[k] = -d_point[k];
        jac_host[3 + k] = host_rot[k];
        jac_target[3 + k] = -target_rot[k];
    }
    (jac_host, jac_target)
}

/// Weighted normal equations over the fixed term set, with the gauge pose
/// excluded from the state.
fn assemble(
    window: &[Keyframe],
    poses: &[SE3Pose],
    camera: &PinholeCamera,
    config: &OdometryConfig,
    terms: &[Term],
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let dims = (window.len() - 1) * 6;
    let mut h = DMatrix::zeros(dims, dims);
    let mut g = DVector::zeros(dims);
    let mut any = false;
    for term in terms {
        let host_index = term.host as usize;
        let target_index = term.target as usize;
        let Some(eval) = evaluate_term(
            window,
            poses,
            camera,
            config,
            host_index,
            target_index,
            term.point as usize,
            term.pattern as usize,
        ) else {
            continue;
        };
        any = true;
        let relative = poses[target_index].inverse().compose(&poses[host_index]);
        let (jac_host, jac_target) = term_jacobians(&eval, &relative, camera);

        let mut indices = [usize::MAX; 2];
        let mut jacs = [Vector6::zeros(); 2];
        let mut n = 0;
        if host_index > 0 {
            indices[n] = host_index - 1;
            jacs[n] = jac_host;
            n += 1;
        }
        if target_index > 0 {
            indices[n] = target_index - 1;
            jacs[n] = jac_target;
            n += 1;
        }
        for a in 0..n {
            let ia = indices[a] * 6;
            for r in 0..6 {
                g[ia + r] += eval.weight * jacs[a][r] * eval.residual;
                for b in 0..n {
                    let ib = indices[b] * 6;
                    for c in 0..6 {
                        h[(ia + r, ib + c)] += eval.weight * jacs[a][r] * jacs[b][c];
                    }
                }
            }
        }
    }
    any.then_some((h, g))
}

/// Mean Huber energy of the fixed term set at the given poses; out-of-view
/// terms pay the constant penalty.
fn mean_energy(
    window: &[Keyframe],
    poses: &[SE3Pose],
    camera: &PinholeCamera,
    config: &OdometryConfig,
    terms: &[Term],
) -> f64 {
    let oob = huber_energy(OUT_OF_VIEW_RESIDUAL, config.huber_delta);
    let mut total = 0.0;
    for term in terms {
        match evaluate_term(
            window,
            poses,
            camera,
            config,
            term.host as usize,
            term.target as usize,
            term.point as usize,
            term.pattern as usize,
        ) {
            Some(eval) => total += eval.weight * huber_energy(eval.residual, config.huber_delta),
            None => total += oob,
        }
    }
    total / terms.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_pyramid;
    use crate::odom::DepthSource;
    use crate::odom::{associate_depth, extract_high_gradient_points, SplatDepthSource};
    use crate::synth::{make_synthetic_scene, SceneLayout};

    fn test_window() -> (Vec<Keyframe>, crate::geometry::PinholeCamera, OdometryConfig) {
        let scene = make_synthetic_scene(SceneLayout::TwoPlanes, 7, 20);
        let config = OdometryConfig {
            estimate_affine: false,
            ..OdometryConfig::default()
        };
        let source = SplatDepthSource::new(&scene.map);
        let mut window = Vec::new();
        for (id, k) in [0usize, 4, 8].iter().enumerate() {
            let (t, pose) = scene.trajectory.entries()[*k];
            let image = scene.views[*k].color.to_gray();
            let pyramid = build_pyramid(&image, config.pyramid_levels).unwrap();
            let (depth, alpha) = source.depth_at(&pose.inverse(), &scene.camera).unwrap();
            let pixels = extract_high_gradient_points(pyramid.base(), &config).unwrap();
            let points = associate_depth(
                &pixels,
                pyramid.base(),
                &depth,
                &alpha,
                id as u64,
                &config,
            )
            .unwrap();
            window.push(Keyframe {
                id: id as u64,
                timestamp: t,
                pyramid,
                pose,
                points,
                depth,
                alpha,
            });
        }
        (window, scene.camera, config)
    }

    #[test]
    fn term_jacobians_match_finite_differences() {
        let (window, camera, config) = test_window();
        let poses: Vec<SE3Pose> = window.iter().map(|kf| kf.pose).collect();
        let terms = collect_terms(&window, &poses, &camera, &config);
        let h = 1e-7;
        let mut checked = 0usize;
        for term in terms.iter().step_by(97) {
            let (hi, ti, pi, pj) = (
                term.host as usize,
                term.target as usize,
                term.point as usize,
                term.pattern as usize,
            );
            let Some(eval) = evaluate_term(&window, &poses, &camera, &config, hi, ti, pi, pj)
            else {
                continue;
            };
            let relative = poses[ti].inverse().compose(&poses[hi]);
            let (jac_host, jac_target) = term_jacobians(&eval, &relative, &camera);
            let mut ok = true;
            for (which, pose_index, analytic) in
                [(0, hi, jac_host), (1, ti, jac_target)]
            {
                for k in 0..6 {
                    let mut delta = Vector6::zeros();
                    delta[k] = h;
                    let mut plus = poses.clone();
                    plus[pose_index] = poses[pose_index].compose(&SE3Pose::exp(&delta));
                    let mut minus = poses.clone();
                    minus[pose_index] = poses[pose_index].compose(&SE3Pose::exp(&(-delta)));
                    let (Some(ep), Some(em)) = (
                        evaluate_term(&window, &plus, &camera, &config, hi, ti, pi, pj),
                        evaluate_term(&window, &minus, &camera, &config, hi, ti, pi, pj),
                    ) else {
                        ok = false;
                        break;
                    };
                    let fd = (ep.residual - em.residual) / (2.0 * h);
                    let tolerance = (1e-3 * analytic[k].abs().max(fd.abs())).max(1e-7);
                    assert!(
                        (fd - analytic[k]).abs() <= tolerance,
                        "term h{hi}->t{ti} side {which} dof {k}: analytic {:e} vs fd {fd:e}",
                        analytic[k]
                    );
                }
                if !ok {
                    break;
                }
            }
            if ok {
                checked += 1;
            }
        }
        assert!(checked > 50, "only {checked} terms checked");
    }

    #[test]
    fn residual_distribution_probe() {
        let (window, camera, config) = test_window();
        let poses: Vec<SE3Pose> = window.iter().map(|kf| kf.pose).collect();
        let terms = collect_terms(&window, &poses, &camera, &config);
        let mut residuals: Vec<(f64, usize, usize, f64, f64)> = Vec::new();
        for term in &terms {
            if let Some(eval) = evaluate_term(
                &window, &poses, &camera, &config,
                term.host as usize, term.target as usize,
                term.point as usize, term.pattern as usize,
            ) {
                let pt = &window[term.host as usize].points[term.point as usize];
                residuals.push((eval.residual.abs(), term.host as usize, term.target as usize, pt.pixel.x, pt.pixel.y));
            }
        }
        residuals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let n = residuals.len();
        for q in [0.5, 0.9, 0.99, 0.999] {
            println!("P{:.1} |r| = {:.5}", q * 100.0, residuals[(n as f64 * q) as usize].0);
        }
        println!("terms {n}");
        println!("worst 10:");
        for r in residuals.iter().rev().take(10) {
            println!("  |r|={:.4} host {} target {} pixel ({:.0},{:.0})", r.0, r.1, r.2, r.3, r.4);
        }
        // inverse-depth sanity at a few points: compare against analytic depth
        let analytic = crate::synth::two_planes_analytic_depth(&poses[0].inverse(), &camera);
        let mut depth_errs: Vec<f64> = window[0].points.iter().map(|pt| {
            let truth = analytic.get(pt.pixel.x as usize, pt.pixel.y as usize);
            ((1.0 / pt.inv_depth) - truth).abs()
        }).collect();
        depth_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("depth errors: P50 {:.4} P90 {:.4} P99 {:.4} max {:.4}",
            depth_errs[depth_errs.len()/2], depth_errs[(depth_errs.len() as f64*0.9) as usize],
            depth_errs[(depth_errs.len() as f64*0.99) as usize], depth_errs[depth_errs.len()-1]);
    }

    #[test]
    fn gn_trace_probe() {
        let (mut window, camera, config) = test_window();
        window[1].pose = window[1]
            .pose
            .compose(&SE3Pose::exp(&Vector6::new(0.02, 0.0, 0.0, 0.0, 0.0, 0.0)));
        let poses: Vec<SE3Pose> = window.iter().map(|kf| kf.pose).collect();
        let terms = collect_terms(&window, &poses, &camera, &config);
        println!("terms {}", terms.len());
        let mut poses = poses;
        let mut energy = mean_energy(&window, &poses, &camera, &config, &terms);
        println!("start energy {energy:.8}");
        for it in 0..10 {
            let Some((h, g)) = assemble(&window, &poses, &camera, &config, &terms) else { break };
            let Some(chol) = h.clone().cholesky() else { println!("chol fail"); break };
            let full_step = chol.solve(&(-g));
            let mut scale = 1.0f64;
            let mut accepted = false;
            for bt in 0..=6 {
                let candidate: Vec<SE3Pose> = poses.iter().enumerate().map(|(i, pose)| {
                    if i == 0 { *pose } else {
                        let base = (i - 1) * 6;
                        let twist = Vector6::from_fn(|k, _| full_step[base + k] * scale);
                        pose.compose(&SE3Pose::exp(&twist))
                    }
                }).collect();
                let ce = mean_energy(&window, &candidate, &camera, &config, &terms);
                if ce <= energy {
                    println!("iter {it}: step {:.6} bt {bt} energy {energy:.8} -> {ce:.8}", full_step.norm()*scale);
                    poses = candidate; energy = ce; accepted = true; break;
                }
                scale *= 0.5;
            }
            if !accepted { println!("iter {it}: no downhill step (|step| {:.6})", full_step.norm()); break; }
        }
    }

    #[test]
    fn perfect_window_stays_put() {
        let (mut window, camera, config) = test_window();
        let before: Vec<SE3Pose> = window.iter().map(|kf| kf.pose).collect();
        window_optimize(&mut window, &camera, &config).unwrap();
        for (kf, b) in window.iter().zip(&before) {
            let delta = kf.pose.inverse().compose(b);
            assert!(
                delta.translation().norm() < 2e-3,
                "pose moved {:.4} m from a photometrically consistent start",
                delta.translation().norm()
            );
            assert!(delta.rotation_angle() < 1e-3);
        }
    }

    #[test]
    fn single_keyframe_window_is_degenerate() {
        let (window, camera, config) = test_window();
        let mut single = vec![window[0].clone()];
        assert!(matches!(
            window_optimize(&mut single, &camera, &config),
            Err(TrackError::DegenerateWindow { keyframes: 1 })
        ));
    }

    #[test]
    fn perturbed_pose_is_pulled_back() {
        let (mut window, camera, config) = test_window();
        let truth = window[1].pose;
        window[1].pose = window[1]
            .pose
            .compose(&SE3Pose::exp(&Vector6::new(0.02, 0.0, 0.0, 0.0, 0.0, 0.0)));
        window_optimize(&mut window, &camera, &config).unwrap();
        let err = (window[1].pose.translation() - truth.translation()).norm();
        assert!(err < 1e-3, "perturbation only reduced to {err:.5} m");
    }
}
