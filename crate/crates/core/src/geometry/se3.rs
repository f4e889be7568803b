use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};

use super::GeometryError;

/// se(3) tangent vector, ordered `[translation, rotation]` with the rotation
/// part in radians. This ordering is used everywhere a pose is linearized.
pub type Twist = Vector6<f64>;

/// Rigid-body transform: an orthonormal rotation with determinant +1 plus a
/// translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build from a rotation matrix and translation, validating orthonormality
    /// (Frobenius tolerance 1e-9) and determinant +1.
    pub fn from_rt(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let pose = Self {
            rotation,
            translation,
        };
        if !pose.rotation_is_valid(1e-9) {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(pose)
    }

    pub fn from_quaternion(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn rotation_is_valid(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        (gram - Matrix3::identity()).norm() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rot_inv = self.rotation.transpose();
        SE3Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn rotate(&self, vector: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * vector
    }

    /// Angle of the rotation part in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.quaternion().angle()
    }

    /// Exponential map of a twist `[ρ, θ]`: `R = exp([θ]ₓ)`, `t = V(θ)·ρ`.
    pub fn exp(twist: &Twist) -> SE3Pose {
        let rho = Vector3::new(twist[0], twist[1], twist[2]);
        let theta = Vector3::new(twist[3], twist[4], twist[5]);
        let (rotation, v) = rotation_and_v(&theta);
        SE3Pose {
            rotation,
            translation: v * rho,
        }
    }

    /// Logarithm map, inverse of [`SE3Pose::exp`] for rotation angles below π.
    pub fn log(&self) -> Twist {
        let theta = so3_log(&self.rotation);
        let v_inv = v_inverse(&theta);
        let rho = v_inv * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, theta.x, theta.y, theta.z)
    }
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues rotation together with the translation mixer V(θ).
fn rotation_and_v(theta: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let angle_sq = theta.norm_squared();
    let hat = skew(theta);
    let hat_sq = hat * hat;
    // sinθ/θ, (1−cosθ)/θ², (θ−sinθ)/θ³ with series fallbacks near zero.
    let (a, b, c) = if angle_sq < 1e-14 {
        (
            1.0 - angle_sq / 6.0,
            0.5 - angle_sq / 24.0,
            1.0 / 6.0 - angle_sq / 120.0,
        )
    } else {
        let angle = angle_sq.sqrt();
        (
            angle.sin() / angle,
            (1.0 - angle.cos()) / angle_sq,
            (angle - angle.sin()) / (angle_sq * angle),
        )
    };
    let rotation = Matrix3::identity() + hat * a + hat_sq * b;
    let v = Matrix3::identity() + hat * b + hat_sq * c;
    (rotation, v)
}

fn so3_log(rotation: &Matrix3<f64>) -> Vector3<f64> {
    let cos_angle = ((rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos_angle.acos();
    let axis_times_two_sin = Vector3::new(
        rotation[(2, 1)] - rotation[(1, 2)],
        rotation[(0, 2)] - rotation[(2, 0)],
        rotation[(1, 0)] - rotation[(0, 1)],
    );
    if angle < 1e-7 {
        // sinθ ≈ θ: vee(R − Rᵀ)/2 ≈ θ·axis.
        return axis_times_two_sin * 0.5;
    }
    if angle > std::f64::consts::PI - 1e-6 {
        // Near π the off-diagonal difference vanishes; recover the axis from
        // the symmetric part instead.
        let sym = (rotation + Matrix3::identity()) * 0.5;
        let diag = Vector3::new(sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]);
        let k = diag.imax();
        let mut axis = Vector3::zeros();
        axis[k] = diag[k].max(0.0).sqrt();
        for i in 0..3 {
            if i != k {
                axis[i] = sym[(i, k)] / axis[k];
            }
        }
        axis.normalize_mut();
        // Fix the sign using the skew part (non-zero unless exactly at π).
        if axis.dot(&axis_times_two_sin) < 0.0 {
            axis = -axis;
        }
        return axis * angle;
    }
    axis_times_two_sin * (angle / (2.0 * angle.sin()))
}

fn v_inverse(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle_sq = theta.norm_squared();
    let hat = skew(theta);
    let hat_sq = hat * hat;
    let coeff = if angle_sq < 1e-14 {
        1.0 / 12.0 + angle_sq / 720.0
    } else {
        let angle = angle_sq.sqrt();
        (1.0 - angle * angle.sin() / (2.0 * (1.0 - angle.cos()))) / angle_sq
    };
    Matrix3::identity() - hat * 0.5 + hat_sq * coeff
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent log map: rotation via quaternion axis-angle, translation by
    /// solving V(θ)ρ = t numerically. Only used to cross-check `log`.
    fn log_oracle(pose: &SE3Pose) -> Twist {
        let theta = pose.quaternion().scaled_axis();
        let (_, v) = rotation_and_v(&theta);
        let rho = v.lu().solve(pose.translation()).unwrap();
        Vector6::new(rho.x, rho.y, rho.z, theta.x, theta.y, theta.z)
    }

    #[test]
    fn exp_of_zero_twist_is_identity() {
        let pose = SE3Pose::exp(&Twist::zeros());
        assert_relative_eq!(pose.rotation(), &Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(pose.translation(), &Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn exp_of_quarter_turn_about_z() {
        let twist = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let pose = SE3Pose::exp(&twist);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(pose.rotation(), &expected, epsilon = 1e-12);
        assert_relative_eq!(pose.translation(), &Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn exp_log_roundtrip_small_twists() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let twist = Twist::from_fn(|_, _| rng.random_range(-0.57..0.57));
            let pose = SE3Pose::exp(&twist);
            assert_relative_eq!(pose.log(), twist, epsilon = 1e-9);
            assert_relative_eq!(log_oracle(&pose), twist, epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_log_roundtrip_large_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let angle = rng.random_range(0.0..2.99);
            let theta = axis * angle;
            let twist = Vector6::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                theta.x,
                theta.y,
                theta.z,
            );
            let pose = SE3Pose::exp(&twist);
            assert_relative_eq!(pose.log(), twist, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let twist = Twist::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let pose = SE3Pose::exp(&twist);
            let eye = pose.compose(&pose.inverse());
            assert_relative_eq!(eye.rotation(), &Matrix3::identity(), epsilon = 1e-9);
            assert_relative_eq!(eye.translation(), &Vector3::zeros(), epsilon = 1e-9);
        }
    }

    #[test]
    fn composition_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                SE3Pose::exp(&Twist::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert_relative_eq!(left.rotation(), right.rotation(), epsilon = 1e-12);
            assert_relative_eq!(left.translation(), right.translation(), epsilon = 1e-12);
        }
    }

    #[test]
    fn from_rt_rejects_non_orthonormal() {
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(SE3Pose::from_rt(skewed, Vector3::zeros()).is_err());
    }
}
