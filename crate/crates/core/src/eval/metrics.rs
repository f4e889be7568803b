use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Trajectory;
use crate::geometry::SE3Pose;

use super::align::umeyama_alignment;

/// Maximum time offset for pairing estimate and reference entries (half a
/// 25 Hz frame period).
pub const ASSOCIATION_WINDOW: f64 = 0.02;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no timestamp associations within {window} s")]
    NoAssociation { window: f64 },
    #[error("trajectories do not overlap by more than delta = {delta} s")]
    InsufficientOverlap { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    None,
    Rigid,
    Similarity,
}

impl std::str::FromStr for Alignment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Alignment::None),
            "rigid" => Ok(Alignment::Rigid),
            "similarity" => Ok(Alignment::Similarity),
            other => Err(format!("unknown alignment `{other}` (none|rigid|similarity)")),
        }
    }
}

/// Summary metrics plus the per-pair error series for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub ate_rmse: f64,
    pub rte_rmse: f64,
    pub rre_rmse: f64,
    pub n_pairs: usize,
    #[serde(skip)]
    pub ate_series: Vec<(f64, f64)>,
    #[serde(skip)]
    pub rte_series: Vec<(f64, f64, f64)>,
}

/// Pair estimate entries with the nearest reference entry within the window.
fn associate(
    estimate: &Trajectory,
    reference: &Trajectory,
) -> Vec<(f64, SE3Pose, SE3Pose)> {
    let mut pairs = Vec::new();
    for &(t, est_pose) in estimate.entries() {
        if let Some(idx) = reference.nearest(t) {
            let (rt, ref_pose) = reference.entries()[idx];
            if (rt - t).abs() <= ASSOCIATION_WINDOW {
                pairs.push((t, est_pose, ref_pose));
            }
        }
    }
    pairs
}

/// RMSE of translation differences over associated pairs, optionally after
/// closed-form rigid or similarity alignment of the estimate onto the
/// reference.
pub fn ate_rmse(
    estimate: &Trajectory,
    reference: &Trajectory,
    alignment: Alignment,
) -> Result<f64, MetricError> {
    Ok(ate_with_series(estimate, reference, alignment)?.0)
}

pub fn ate_with_series(
    estimate: &Trajectory,
    reference: &Trajectory,
    alignment: Alignment,
) -> Result<(f64, Vec<(f64, f64)>), MetricError> {
    let pairs = associate(estimate, reference);
    if pairs.is_empty() {
        return Err(MetricError::NoAssociation {
            window: ASSOCIATION_WINDOW,
        });
    }
    let est_points: Vec<_> = pairs.iter().map(|(_, e, _)| *e.translation()).collect();
    let ref_points: Vec<_> = pairs.iter().map(|(_, _, r)| *r.translation()).collect();
    let (scale, rotation, translation) = match alignment {
        Alignment::None => (1.0, nalgebra::Matrix3::identity(), nalgebra::Vector3::zeros()),
        Alignment::Rigid => umeyama_alignment(&est_points, &ref_points, false),
        Alignment::Similarity => umeyama_alignment(&est_points, &ref_points, true),
    };
    let mut sum_sq = 0.0;
    let mut series = Vec::with_capacity(pairs.len());
    for ((t, _, _), (e, r)) in pairs.iter().zip(est_points.iter().zip(&ref_points)) {
        let aligned = rotation * e * scale + translation;
        let err = (aligned - r).norm();
        sum_sq += err * err;
        series.push((*t, err));
    }
    Ok(((sum_sq / series.len() as f64).sqrt(), series))
}

/// Relative translation / rotation RMSE over a fixed time interval `delta`:
/// for each associated pair at `t` with a pair at `t + delta`, the error
/// motion is `(Q_t⁻¹ Q_{t+δ})⁻¹ (P_t⁻¹ P_{t+δ})`. Returns (meters, degrees).
pub fn rte_rre_rmse(
    estimate: &Trajectory,
    reference: &Trajectory,
    delta: f64,
) -> Result<(f64, f64), MetricError> {
    Ok(rte_rre_with_series(estimate, reference, delta)?.0)
}

pub fn rte_rre_with_series(
    estimate: &Trajectory,
    reference: &Trajectory,
    delta: f64,
) -> Result<((f64, f64), Vec<(f64, f64, f64)>), MetricError> {
    let pairs = associate(estimate, reference);
    if pairs.is_empty() {
        return Err(MetricError::NoAssociation {
            window: ASSOCIATION_WINDOW,
        });
    }
    let times: Vec<f64> = pairs.iter().map(|(t, _, _)| *t).collect();
    let mut sum_trans = 0.0;
    let mut sum_rot = 0.0;
    let mut series = Vec::new();
    for (i, &(t, est_a, ref_a)) in pairs.iter().enumerate() {
        let target = t + delta;
        // Find the pair nearest to t + delta.
        let j = match times[i..].binary_search_by(|x| x.partial_cmp(&target).unwrap()) {
            Ok(k) => i + k,
            Err(k) => {
                let k = i + k;
                if k == pairs.len() {
                    k - 1
                } else if k > i && (times[k - 1] - target).abs() < (times[k] - target).abs() {
                    k - 1
                } else {
                    k
                }
            }
        };
        if j <= i || (times[j] - target).abs() > ASSOCIATION_WINDOW {
            continue;
        }
        let (_, est_b, ref_b) = pairs[j];
        let rel_est = est_a.inverse().compose(&est_b);
        let rel_ref = ref_a.inverse().compose(&ref_b);
        let error = rel_ref.inverse().compose(&rel_est);
        let trans_err = error.translation().norm();
        let rot_err = error.rotation_angle().to_degrees();
        sum_trans += trans_err * trans_err;
        sum_rot += rot_err * rot_err;
        series.push((t, trans_err, rot_err));
    }
    if series.is_empty() {
        return Err(MetricError::InsufficientOverlap { delta });
    }
    let n = series.len() as f64;
    Ok((
        ((sum_trans / n).sqrt(), (sum_rot / n).sqrt()),
        series,
    ))
}

/// Full report at the given alignment and relative-error interval.
pub fn metric_report(
    estimate: &Trajectory,
    reference: &Trajectory,
    alignment: Alignment,
    delta: f64,
) -> Result<MetricReport, MetricError> {
    let (ate, ate_series) = ate_with_series(estimate, reference, alignment)?;
    let ((rte, rre), rte_series) = rte_rre_with_series(estimate, reference, delta)?;
    Ok(MetricReport {
        ate_rmse: ate,
        rte_rmse: rte,
        rre_rmse: rre,
        n_pairs: ate_series.len(),
        ate_series,
        rte_series,
    })
}
