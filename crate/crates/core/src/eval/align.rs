use nalgebra::{Matrix3, Vector3};

/// Closed-form least-squares alignment of `source` onto `target`: finds
/// `(s, R, t)` minimizing `Σ ‖s·R·source_i + t − target_i‖²`. With
/// `with_scale = false` the scale is fixed to 1 (rigid alignment).
pub fn umeyama_alignment(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    with_scale: bool,
) -> (f64, Matrix3<f64>, Vector3<f64>) {
    assert_eq!(source.len(), target.len());
    assert!(!source.is_empty());
    let n = source.len() as f64;
    let mean_src: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n;
    let mean_dst: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in source.iter().zip(target) {
        let sc = s - mean_src;
        let dc = d - mean_dst;
        cov += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov /= n;
    var_src /= n;

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    // Reflection guard: force det(R) = +1.
    let mut s_diag = Vector3::from_element(1.0);
    if (u * v_t).determinant() < 0.0 {
        s_diag.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = if with_scale && var_src > 0.0 {
        (svd.singular_values.component_mul(&s_diag)).sum() / var_src
    } else {
        1.0
    };
    let translation = mean_dst - rotation * mean_src * scale;
    (scale, rotation, translation)
}
