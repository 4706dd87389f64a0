//! Rigid-body transform algebra: skew maps, the SO(3) exponential and
//! logarithm, and the pseudo-exponential retraction used as the solver's
//! state update.

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Vec6 = nalgebra::Vector6<f64>;
pub type Mat6 = nalgebra::Matrix6<f64>;

/// Rotation angle below which series expansions replace sin/cos ratios.
const SMALL_ANGLE: f64 = 1e-8;

/// Orthonormality tolerance accepted by [`so3_log`].
const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("matrix is not a rotation (orthonormality deviation {deviation:.3e})")]
    NotARotation { deviation: f64 },
}

/// Tangent-space optimization variable `[u_theta; u_t]`.
///
/// The rotation component is an axis-angle vector with norm below pi,
/// the translation component is carried verbatim by [`pseudo_exp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl StateVector {
    pub fn zero() -> Self {
        Self {
            rotation: Vec3::zeros(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Stacks the components as `[rotation; translation]`.
    pub fn to_vector(self) -> Vec6 {
        Vec6::new(
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        )
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Self {
            rotation: Vec3::new(v[0], v[1], v[2]),
            translation: Vec3::new(v[3], v[4], v[5]),
        }
    }
}

impl Default for StateVector {
    fn default() -> Self {
        Self::zero()
    }
}

/// An element of SE(3) stored as a rotation matrix plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// `self` applied after `other`: maps a point through `other`, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rot_inv = self.rotation.transpose();
        RigidTransform {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotates a direction without translating it.
    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Skew-symmetric cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation exponential via the Rodrigues formula.
pub fn so3_exp(axis_angle: &Vec3) -> Mat3 {
    let theta2 = axis_angle.norm_squared();
    let k = skew(axis_angle);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // sin(t)/t and (1-cos(t))/t^2 to second order
        let a = 1.0 - theta2 / 6.0;
        let b = 0.5 - theta2 / 24.0;
        Mat3::identity() + a * k + b * (k * k)
    } else {
        let theta = theta2.sqrt();
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta2;
        Mat3::identity() + a * k + b * (k * k)
    }
}

/// Principal-branch rotation logarithm, `||result|| <= pi`.
///
/// Rejects matrices whose orthonormality deviation exceeds 1e-6. The angle-pi
/// branch extracts the axis from the largest diagonal entry and fixes the sign
/// so the first nonzero component is positive.
pub fn so3_log(r: &Mat3) -> Result<Vec3, Se3Error> {
    let deviation = orthonormality_deviation(r);
    if deviation > ROTATION_TOL {
        return Err(Se3Error::NotARotation { deviation });
    }

    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let anti = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );

    if theta < SMALL_ANGLE {
        // log(R) ~ (R - R^T)/2 with the sin(t)/t correction expanded
        return Ok(anti * (0.5 * (1.0 + theta * theta / 6.0)));
    }

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part, where (R + R^T)/2 = cos*I + (1 - cos) * a*a^T.
    if (std::f64::consts::PI - theta) < 1e-4 {
        let b = (r + r.transpose()) * 0.5;
        let outer = (b - Mat3::identity() * cos_theta) / (1.0 - cos_theta);
        let diag = [outer[(0, 0)], outer[(1, 1)], outer[(2, 2)]];
        let mut largest = 0;
        for j in 1..3 {
            if diag[j] > diag[largest] {
                largest = j;
            }
        }
        let ai = diag[largest].max(0.0).sqrt();
        let mut axis = Vec3::zeros();
        axis[largest] = ai;
        if ai > 0.0 {
            for j in 0..3 {
                if j != largest {
                    axis[j] = outer[(largest, j)] / ai;
                }
            }
        }
        if axis.norm() == 0.0 {
            axis = Vec3::x();
        }
        axis.normalize_mut();
        // acos is ill-conditioned at trace -1; the antisymmetric part gives
        // sin(theta) = |anti|/2, and asin of that small value is precise.
        let theta = std::f64::consts::PI - (anti.norm() * 0.5).min(1.0).asin();
        // Residual antisymmetric part still carries the sign when theta < pi.
        let anti_proj = anti.dot(&axis);
        if anti_proj.abs() > 1e-12 {
            if anti_proj < 0.0 {
                axis = -axis;
            }
        } else {
            // Exactly pi: both signs are valid; make the first nonzero
            // component positive for a deterministic answer.
            for j in 0..3 {
                if axis[j].abs() > 1e-12 {
                    if axis[j] < 0.0 {
                        axis = -axis;
                    }
                    break;
                }
            }
        }
        return Ok(axis * theta);
    }

    Ok(anti * (0.5 * theta / theta.sin()))
}

/// Pseudo-exponential retraction: exact rotation exponential, translation
/// copied verbatim (no twist coupling).
pub fn pseudo_exp(u: &StateVector) -> RigidTransform {
    RigidTransform {
        rotation: so3_exp(&u.rotation),
        translation: u.translation,
    }
}

/// Inverse of [`pseudo_exp`].
pub fn pseudo_log(t: &RigidTransform) -> Result<StateVector, Se3Error> {
    Ok(StateVector {
        rotation: so3_log(&t.rotation)?,
        translation: t.translation,
    })
}

fn orthonormality_deviation(r: &Mat3) -> f64 {
    let gram = r.transpose() * r - Mat3::identity();
    let det_dev = (r.determinant() - 1.0).abs();
    gram.norm().max(det_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Exact SE(3) exponential (with the V matrix); test oracle only.
    fn exact_se3_exp(u: &StateVector) -> RigidTransform {
        let theta2 = u.rotation.norm_squared();
        let k = skew(&u.rotation);
        let v = if theta2 < 1e-16 {
            Mat3::identity() + 0.5 * k + (k * k) / 6.0
        } else {
            let theta = theta2.sqrt();
            Mat3::identity()
                + ((1.0 - theta.cos()) / theta2) * k
                + ((theta - theta.sin()) / (theta2 * theta)) * (k * k)
        };
        RigidTransform {
            rotation: so3_exp(&u.rotation),
            translation: v * u.translation,
        }
    }

    fn random_rotation(rng: &mut impl rand::Rng) -> Mat3 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle: f64 = rng.random_range(0.0..3.1);
        so3_exp(&(axis * angle))
    }

    fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn skew_zero_is_zero_matrix() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn skew_matches_cross_product_definition() {
        let m = skew(&Vec3::new(1.0, 0.0, 0.0));
        let expected = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(m, expected);

        let v = Vec3::new(1.0, 2.0, 3.0);
        let w = Vec3::new(4.0, 5.0, 6.0);
        let hand_computed = Vec3::new(-3.0, 6.0, -3.0);
        assert_eq!(skew(&v) * w, hand_computed);
        assert_eq!(v.cross(&w), hand_computed);
    }

    #[test]
    fn skew_is_exactly_antisymmetric() {
        let v = Vec3::new(0.3, -1.7, 2.9);
        let m = skew(&v);
        assert_eq!(m + m.transpose(), Mat3::zeros());
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, PI / 2.0));
        let rotated = r * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(rotated, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn exp_log_round_trip_random_rotations() {
        let mut rng = test_rng(42);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let round = so3_exp(&so3_log(&r).unwrap());
            assert_relative_eq!(round, r, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_identity_is_zero() {
        assert_eq!(so3_log(&Mat3::identity()).unwrap(), Vec3::zeros());
    }

    #[test]
    fn log_quarter_turn_about_z() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, PI / 2.0));
        assert_relative_eq!(
            so3_log(&r).unwrap(),
            Vec3::new(0.0, 0.0, PI / 2.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_rejects_non_orthonormal_input() {
        let mut m = Mat3::identity();
        m[(0, 0)] = 1.5;
        assert!(matches!(so3_log(&m), Err(Se3Error::NotARotation { .. })));
    }

    #[test]
    fn log_near_pi_matches_quaternion_oracle() {
        let axes = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 1.0, 0.0).normalize(),
            Vec3::new(-0.2, 0.5, 0.9).normalize(),
            Vec3::new(0.6, -0.6, 0.53).normalize(),
        ];
        for axis in axes {
            for angle in [PI, PI - 1e-5, PI - 1e-7] {
                let r = so3_exp(&(axis * angle));
                let log = so3_log(&r).unwrap();
                // Quaternion-based oracle, sign-insensitive at pi.
                let q = nalgebra::UnitQuaternion::from_rotation_matrix(
                    &nalgebra::Rotation3::from_matrix_unchecked(r),
                );
                let oracle = q.scaled_axis();
                let d_pos = (log - oracle).norm();
                let d_neg = (log + oracle).norm();
                assert!(
                    d_pos.min(d_neg) < 1e-6,
                    "axis {axis:?} angle {angle}: got {log:?}, oracle {oracle:?}"
                );
                assert_relative_eq!(so3_exp(&log), r, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn log_at_pi_sign_is_deterministic() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, PI));
        let log = so3_log(&r).unwrap();
        assert!(log.z > 0.0, "first nonzero component must be positive");
    }

    #[test]
    fn pseudo_exp_zero_is_identity() {
        assert_eq!(pseudo_exp(&StateVector::zero()), RigidTransform::identity());
    }

    #[test]
    fn pseudo_exp_pure_translation() {
        let u = StateVector::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        let t = pseudo_exp(&u);
        assert_eq!(t.rotation, Mat3::identity());
        assert_eq!(t.translation, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn pseudo_exp_translation_is_verbatim_not_twist() {
        let u = StateVector::new(Vec3::new(0.0, 0.0, PI / 2.0), Vec3::new(1.0, 0.0, 0.0));
        let t = pseudo_exp(&u);
        // Translation copied bit-for-bit.
        assert_eq!(t.translation, u.translation);
        // The exact SE(3) exponential would couple rotation into translation.
        let exact = exact_se3_exp(&u);
        assert!((exact.translation - t.translation).norm() > 0.1);
    }

    #[test]
    fn pseudo_log_trivial_cases() {
        assert_eq!(
            pseudo_log(&RigidTransform::identity()).unwrap(),
            StateVector::zero()
        );
        let t = RigidTransform::new(Mat3::identity(), Vec3::new(5.0, 0.0, 0.0));
        let u = pseudo_log(&t).unwrap();
        assert_eq!(u.rotation, Vec3::zeros());
        assert_eq!(u.translation, Vec3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn pseudo_round_trip_random_transforms() {
        let mut rng = test_rng(7);
        for _ in 0..100 {
            let t = RigidTransform::new(
                random_rotation(&mut rng),
                Vec3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                ),
            );
            let round = pseudo_exp(&pseudo_log(&t).unwrap());
            assert_relative_eq!(round.rotation, t.rotation, epsilon = 1e-12);
            assert_eq!(round.translation, t.translation);
        }
    }

    #[test]
    fn compose_inverse_is_identity() {
        let t = RigidTransform::new(
            so3_exp(&Vec3::new(0.2, -0.4, 0.9)),
            Vec3::new(1.0, -2.0, 0.5),
        );
        let id = t.compose(&t.inverse());
        assert_relative_eq!(id.rotation, Mat3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn transform_point_by_identity() {
        let p = Vec3::new(3.0, -1.0, 2.0);
        assert_eq!(RigidTransform::identity().transform_point(&p), p);
    }

    proptest! {
        #[test]
        fn prop_pseudo_round_trip(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            angle in 0.0f64..3.0,
            tx in -20.0f64..20.0, ty in -20.0f64..20.0, tz in -20.0f64..20.0,
        ) {
            let axis = Vec3::new(ax, ay, az);
            prop_assume!(axis.norm() > 1e-3);
            let u = StateVector::new(axis.normalize() * angle, Vec3::new(tx, ty, tz));
            let round = pseudo_log(&pseudo_exp(&u)).unwrap();
            prop_assert!((round.rotation - u.rotation).norm() < 1e-10);
            prop_assert_eq!(round.translation, u.translation);
        }

        #[test]
        fn prop_exp_is_orthonormal(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
        ) {
            let r = so3_exp(&Vec3::new(ax, ay, az));
            let gram = r.transpose() * r;
            prop_assert!((gram - Mat3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn prop_compose_is_associative(
            seed in 0u64..1000,
        ) {
            let mut rng = test_rng(seed);
            let make = |rng: &mut rand_chacha::ChaCha8Rng| RigidTransform::new(
                random_rotation(rng),
                Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
            );
            let (a, b, c) = (make(&mut rng), make(&mut rng), make(&mut rng));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.rotation - right.rotation).norm() < 1e-12);
            prop_assert!((left.translation - right.translation).norm() < 1e-12);
        }
    }
}
