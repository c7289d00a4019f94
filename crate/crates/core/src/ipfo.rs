//! Constrained surface-fitting solve: minimize the fitting error over the
//! gripper increment (R, t) and the jaw displacement delta_d, subject to the
//! width limits, by alternating a palm block (Gauss-Newton on the rigid
//! increment) and a finger block (closed-form 1-D width minimizer).
//!
//! All quantities live in the world frame of the current pose: the pairs
//! carry world-frame finger points and the jaw axis is the current world
//! jaw direction. The solved increment is applied on top of that pose.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::gripper::GripperModel;

/// Fitting-objective parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitParams {
    /// Weight of the normal-opposition penalty.
    pub normal_weight: f64,
    pub max_inner_iters: usize,
    /// Relative E change below which the alternation stops.
    pub inner_tol: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            normal_weight: 0.01,
            max_inner_iters: 30,
            inner_tol: 1e-6,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<()> {
        if self.normal_weight < 0.0 {
            return Err(Error::invalid("normal_weight must be >= 0"));
        }
        if self.max_inner_iters < 1 {
            return Err(Error::invalid("max_inner_iters must be >= 1"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::invalid("inner_tol must be > 0"));
        }
        Ok(())
    }
}

/// Result of one constrained fitting solve. The increment maps current
/// world-frame finger points; `error` is the final mean fitting error.
#[derive(Debug, Clone, Copy)]
pub struct IpfoResult {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub delta_width: f64,
    pub error: f64,
    pub inner_iters: usize,
    /// Width hit a jaw limit during the solve.
    pub clamped: bool,
    /// The palm system went rank-deficient at least once.
    pub degenerate: bool,
}

pub struct PalmStep {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub degenerate: bool,
}

pub struct FingerStep {
    pub delta_width: f64,
    /// The jaw axis is orthogonal to every contact normal; the objective
    /// does not depend on the width.
    pub insensitive: bool,
    pub clamped: bool,
}

/// Mean surface-fitting error at the given increment:
///
/// `E = (1/|C|) sum_i [ ((T(p_i) - q_i) . n_qi)^2
///                      + beta ((R n_pi) . n_qi + 1)^2 ]`
///
/// where `T(p) = R (p + s_i (delta_d/2) jaw_axis) + t`. E is zero exactly
/// when every transformed finger point lies on its object tangent plane
/// with exactly opposed normals.
pub fn fitting_error(
    corr: &CorrespondenceSet,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    delta_width: f64,
    jaw_axis: &Vector3<f64>,
    normal_weight: f64,
) -> Result<f64> {
    if corr.is_empty() {
        return Err(Error::UndefinedObjective(
            "fitting error over an empty correspondence set".into(),
        ));
    }
    let mut sum = 0.0;
    for pair in &corr.pairs {
        let sign = GripperModel::finger_sign(pair.finger);
        let shifted = pair.finger_point.position + jaw_axis * (sign * delta_width * 0.5);
        let moved = rotation * shifted + translation;
        let plane = (moved - pair.object_point.position).dot(&pair.object_point.normal);
        let opposition =
            (rotation * pair.finger_point.normal).dot(&pair.object_point.normal) + 1.0;
        sum += plane * plane + normal_weight * opposition * opposition;
    }
    Ok(sum / corr.len() as f64)
}

/// One Gauss-Newton step on the rigid increment with the width fixed.
///
/// Solves the 6x6 point-to-plane normal equations on the small-angle
/// parameterization, applies the exponential map, and backtracks (up to 8
/// halvings) so the accepted step never increases E. A rank-deficient
/// system returns the input pose with `degenerate` set.
pub fn palm_step(
    corr: &CorrespondenceSet,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    delta_width: f64,
    jaw_axis: &Vector3<f64>,
    normal_weight: f64,
) -> Result<PalmStep> {
    if corr.len() < 3 {
        return Ok(PalmStep {
            rotation: *rotation,
            translation: *translation,
            degenerate: true,
        });
    }
    let e_old = fitting_error(
        corr,
        rotation,
        translation,
        delta_width,
        jaw_axis,
        normal_weight,
    )?;

    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    let sqrt_beta = normal_weight.sqrt();
    for pair in &corr.pairs {
        let sign = GripperModel::finger_sign(pair.finger);
        let shifted = pair.finger_point.position + jaw_axis * (sign * delta_width * 0.5);
        let u = rotation * shifted;
        let nq = pair.object_point.normal;
        let r0 = (u + translation - pair.object_point.position).dot(&nq);
        let jrot = u.cross(&nq);
        let mut row = Vector6::zeros();
        row.fixed_rows_mut::<3>(0).copy_from(&jrot);
        row.fixed_rows_mut::<3>(3).copy_from(&nq);
        h += row * row.transpose();
        g -= row * r0;
        if normal_weight > 0.0 {
            let m = rotation * pair.finger_point.normal;
            let g0 = sqrt_beta * (m.dot(&nq) + 1.0);
            let jn = m.cross(&nq) * sqrt_beta;
            let mut nrow = Vector6::zeros();
            nrow.fixed_rows_mut::<3>(0).copy_from(&jn);
            h += nrow * nrow.transpose();
            g -= nrow * g0;
        }
    }

    let Some(chol) = h.cholesky() else {
        return Ok(PalmStep {
            rotation: *rotation,
            translation: *translation,
            degenerate: true,
        });
    };
    let step = chol.solve(&g);
    if !step.iter().all(|x| x.is_finite()) {
        return Ok(PalmStep {
            rotation: *rotation,
            translation: *translation,
            degenerate: true,
        });
    }
    let omega = Vector3::new(step[0], step[1], step[2]);
    let dt = Vector3::new(step[3], step[4], step[5]);

    let mut scale = 1.0;
    for _ in 0..=8 {
        let inc = UnitQuaternion::from_scaled_axis(omega * scale);
        let r_new = inc.to_rotation_matrix().into_inner() * rotation;
        let t_new = translation + dt * scale;
        let e_new = fitting_error(
            corr,
            &r_new,
            &t_new,
            delta_width,
            jaw_axis,
            normal_weight,
        )?;
        if e_new <= e_old {
            return Ok(PalmStep {
                rotation: reorthonormalized(&r_new),
                translation: t_new,
                degenerate: false,
            });
        }
        scale *= 0.5;
    }
    // No decrease found along the Gauss-Newton direction.
    Ok(PalmStep {
        rotation: *rotation,
        translation: *translation,
        degenerate: false,
    })
}

fn reorthonormalized(m: &Matrix3<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_matrix(m).to_rotation_matrix().into_inner()
}

/// Closed-form width block: with the pose fixed, the point-to-plane part of
/// E is quadratic in delta_d with per-pair slope
/// `b_i = (s_i/2) (R jaw_axis) . n_qi` and offset
/// `a_i = (R p_i + t - q_i) . n_qi`, giving the exact feasible minimizer
/// `delta_d* = clamp(-sum(a b) / sum(b^2))`. The normal term does not
/// depend on delta_d.
pub fn finger_step(
    corr: &CorrespondenceSet,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    jaw_axis: &Vector3<f64>,
    current_width: f64,
    width_limits: (f64, f64),
) -> FingerStep {
    let rotated_axis = rotation * jaw_axis;
    let mut num = 0.0;
    let mut den = 0.0;
    for pair in &corr.pairs {
        let sign = GripperModel::finger_sign(pair.finger);
        let a = (rotation * pair.finger_point.position + translation
            - pair.object_point.position)
            .dot(&pair.object_point.normal);
        let b = 0.5 * sign * rotated_axis.dot(&pair.object_point.normal);
        num += a * b;
        den += b * b;
    }
    if den < 1e-12 {
        return FingerStep {
            delta_width: 0.0,
            insensitive: true,
            clamped: false,
        };
    }
    let unclamped = -num / den;
    let lo = width_limits.0 - current_width;
    let hi = width_limits.1 - current_width;
    let delta = unclamped.clamp(lo, hi);
    FingerStep {
        delta_width: delta,
        insensitive: false,
        clamped: (delta - unclamped).abs() > 1e-15,
    }
}

/// Alternates palm and finger blocks until the relative E change drops
/// below `inner_tol` or `max_inner_iters` is reached. E never increases
/// across accepted steps for the fixed correspondence set.
pub fn ipfo_solve(
    corr: &CorrespondenceSet,
    initial_width: f64,
    width_limits: (f64, f64),
    jaw_axis: &Vector3<f64>,
    params: &FitParams,
) -> Result<IpfoResult> {
    if corr.is_empty() {
        return Err(Error::UndefinedObjective(
            "IPFO over an empty correspondence set".into(),
        ));
    }
    let beta = params.normal_weight;
    let mut rotation = Matrix3::identity();
    let mut translation = Vector3::zeros();
    let mut delta_width = 0.0;
    let mut error = fitting_error(corr, &rotation, &translation, delta_width, jaw_axis, beta)?;
    let mut clamped = false;
    let mut degenerate = false;
    let mut iters = 0;

    for _ in 0..params.max_inner_iters {
        iters += 1;
        let palm = palm_step(corr, &rotation, &translation, delta_width, jaw_axis, beta)?;
        degenerate |= palm.degenerate;
        rotation = palm.rotation;
        translation = palm.translation;

        let finger = finger_step(
            corr,
            &rotation,
            &translation,
            jaw_axis,
            initial_width,
            width_limits,
        );
        if !finger.insensitive {
            delta_width = finger.delta_width;
            clamped |= finger.clamped;
        }

        let e_new = fitting_error(corr, &rotation, &translation, delta_width, jaw_axis, beta)?;
        debug_assert!(
            e_new <= error + 1e-12,
            "fitting error increased: {error} -> {e_new}"
        );
        let rel = (error - e_new).abs() / error.max(1e-300);
        error = e_new;
        if rel < params.inner_tol {
            break;
        }
    }

    Ok(IpfoResult {
        rotation,
        translation,
        delta_width,
        error,
        inner_iters: iters,
        clamped,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::CorrespondencePair;
    use crate::geometry::OrientedPoint;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LIMITS: (f64, f64) = (0.01, 0.03);

    /// Builds an imprint-style correspondence set: finger points on a curved
    /// sheet, object points are exact copies moved by `offset` along their
    /// normal direction...scaled, with flipped normals.
    fn imprint_pairs(n: usize, seed: u64) -> CorrespondenceSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = CorrespondenceSet::default();
        for i in 0..n {
            let finger = i % 2;
            let sign = GripperModel::finger_sign(finger);
            let y = rng.random::<f64>() * 0.016 - 0.008;
            let z = rng.random::<f64>() * 0.014 - 0.007;
            let r_f = 0.06_f64;
            let radial = (r_f * r_f - y * y - z * z).sqrt();
            let sagitta = r_f - radial;
            let x = sign * (0.01 - sagitta);
            let normal = Vector3::new(-sign * radial / r_f, -y / r_f, -z / r_f);
            let p = OrientedPoint::new(Vector3::new(x, y, z), normal);
            let q = OrientedPoint::new(p.position, -normal);
            set.per_finger[finger] += 1;
            set.pairs.push(CorrespondencePair {
                finger,
                finger_point: p,
                object_point: q,
                distance: 0.0,
            });
        }
        set
    }

    fn shift_objects(set: &CorrespondenceSet, offset: Vector3<f64>) -> CorrespondenceSet {
        let mut out = set.clone();
        for pair in &mut out.pairs {
            pair.object_point.position += offset;
        }
        out
    }

    #[test]
    fn zero_residual_imprint_has_zero_error() {
        let set = imprint_pairs(200, 1);
        let e = fitting_error(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            0.0,
            &Vector3::x(),
            0.0,
        )
        .unwrap();
        assert!(e < 1e-28);
    }

    #[test]
    fn single_offset_pair_error_is_square_of_offset() {
        let mut set = CorrespondenceSet::default();
        let p = OrientedPoint::new(Vector3::zeros(), -Vector3::z());
        let q = OrientedPoint::new(Vector3::new(0.0, 0.0, -0.01), Vector3::z());
        set.pairs.push(CorrespondencePair {
            finger: 0,
            finger_point: p,
            object_point: q,
            distance: 0.01,
        });
        set.per_finger[0] = 1;
        let e = fitting_error(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            0.0,
            &Vector3::x(),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(e, 1e-4, epsilon = 1e-18);
    }

    /// Independent re-summation oracle for the objective value.
    #[test]
    fn error_matches_independent_summation() {
        let set = shift_objects(&imprint_pairs(150, 2), Vector3::new(0.0, 0.002, 0.0));
        let rotation = Matrix3::identity();
        let translation = Vector3::new(0.0005, -0.0003, 0.0002);
        let delta = 0.002;
        let axis = Vector3::x();
        let beta = 0.01;
        let got = fitting_error(&set, &rotation, &translation, delta, &axis, beta).unwrap();

        // Oracle: direct term-by-term accumulation written independently of
        // the implementation above.
        let mut acc = 0.0f64;
        for pair in &set.pairs {
            let s = if pair.finger == 0 { 1.0 } else { -1.0 };
            let tp = rotation * (pair.finger_point.position + axis * (s * delta / 2.0))
                + translation;
            let d = (tp - pair.object_point.position).dot(&pair.object_point.normal);
            let c = (rotation * pair.finger_point.normal).dot(&pair.object_point.normal) + 1.0;
            acc += d.powi(2) + beta * c.powi(2);
        }
        let want = acc / set.len() as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_undefined() {
        let set = CorrespondenceSet::default();
        assert!(fitting_error(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            0.0,
            &Vector3::x(),
            0.0
        )
        .is_err());
    }

    #[test]
    fn palm_step_fixed_point_stays_put() {
        let set = imprint_pairs(120, 3);
        let out = palm_step(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            0.0,
            &Vector3::x(),
            0.01,
        )
        .unwrap();
        assert!(!out.degenerate);
        assert!((out.translation).norm() < 1e-9);
        assert!((out.rotation - Matrix3::identity()).norm() < 1e-9);
    }

    /// Analytic oracle: a pure translation offset along the normal field is
    /// recovered by a single Gauss-Newton step.
    #[test]
    fn palm_step_recovers_pure_translation_in_one_step() {
        let set = shift_objects(&imprint_pairs(150, 4), Vector3::new(0.0, 0.0, 0.003));
        let out = palm_step(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            0.0,
            &Vector3::x(),
            0.01,
        )
        .unwrap();
        assert!((out.translation - Vector3::new(0.0, 0.0, 0.003)).norm() < 1e-6);
    }

    /// Ground-truth oracle: iterated palm steps recover a 5 degree rotation
    /// within 0.1 degree.
    #[test]
    fn palm_steps_recover_small_rotation() {
        let base = imprint_pairs(200, 5);
        let true_rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 5f64.to_radians());
        let mut set = base.clone();
        for pair in &mut set.pairs {
            pair.object_point.position = true_rot * pair.object_point.position;
            pair.object_point.normal = true_rot * pair.object_point.normal;
        }
        let mut rotation = Matrix3::identity();
        let mut translation = Vector3::zeros();
        for _ in 0..30 {
            let out = palm_step(&set, &rotation, &translation, 0.0, &Vector3::x(), 0.01)
                .unwrap();
            rotation = out.rotation;
            translation = out.translation;
        }
        let got = UnitQuaternion::from_matrix(&rotation);
        let err = got.rotation_to(&true_rot).angle();
        assert!(err < 0.1f64.to_radians(), "rotation error {err}");
        assert!(translation.norm() < 1e-5);
    }

    #[test]
    fn palm_step_flags_degenerate_input() {
        let mut set = CorrespondenceSet::default();
        for pair in imprint_pairs(2, 6).pairs {
            set.pairs.push(pair);
        }
        let out = palm_step(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            0.0,
            &Vector3::x(),
            0.0,
        )
        .unwrap();
        assert!(out.degenerate);
    }

    #[test]
    fn finger_step_zero_slope_is_insensitive() {
        // Contact normals all orthogonal to the jaw axis.
        let mut set = CorrespondenceSet::default();
        for i in 0..10 {
            let p = OrientedPoint::new(Vector3::new(i as f64 * 0.001, 0.0, 0.0), -Vector3::z());
            let q = OrientedPoint::new(p.position - Vector3::z() * 0.002, Vector3::z());
            set.pairs.push(CorrespondencePair {
                finger: i % 2,
                finger_point: p,
                object_point: q,
                distance: 0.002,
            });
        }
        let out = finger_step(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            &Vector3::x(),
            0.02,
            LIMITS,
        );
        assert!(out.insensitive);
        assert_eq!(out.delta_width, 0.0);
    }

    /// Grid-search oracle on the feasible interval, step 1e-5.
    fn grid_best_delta(
        set: &CorrespondenceSet,
        current_width: f64,
        limits: (f64, f64),
    ) -> f64 {
        let lo = limits.0 - current_width;
        let hi = limits.1 - current_width;
        let axis = Vector3::x();
        let mut best = (f64::INFINITY, lo);
        let steps = ((hi - lo) / 1e-5).round() as usize;
        for k in 0..=steps {
            let delta = lo + k as f64 * 1e-5;
            let e = fitting_error(
                set,
                &Matrix3::identity(),
                &Vector3::zeros(),
                delta,
                &axis,
                0.0,
            )
            .unwrap();
            if e < best.0 {
                best = (e, delta);
            }
        }
        best.1
    }

    #[test]
    fn finger_step_single_pair_closed_form() {
        // One pair with a = 0.004 and b = 0.5: minimizer of (a + b*dd)^2 is
        // -a/b = -0.008, here clamped against the lower width limit.
        let mut set = CorrespondenceSet::default();
        let p = OrientedPoint::new(Vector3::zeros(), -Vector3::x());
        let q = OrientedPoint::new(Vector3::new(-0.004, 0.0, 0.0), Vector3::x());
        set.pairs.push(CorrespondencePair {
            finger: 0,
            finger_point: p,
            object_point: q,
            distance: 0.004,
        });
        set.per_finger[0] = 1;
        let wide = (0.0, 1.0);
        let out = finger_step(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            &Vector3::x(),
            0.02,
            wide,
        );
        // a = (p - q) . n_q = 0.004, b = 0.5 * (x . x) = 0.5.
        assert_relative_eq!(out.delta_width, -0.008, epsilon = 1e-15);
        assert!(!out.clamped);
        // Against the real limits the step clamps at d_min.
        let clamped = finger_step(
            &set,
            &Matrix3::identity(),
            &Vector3::zeros(),
            &Vector3::x(),
            0.012,
            LIMITS,
        );
        assert_relative_eq!(clamped.delta_width, -0.002, epsilon = 1e-15);
        assert!(clamped.clamped);
        let oracle = grid_best_delta(&set, 0.012, LIMITS);
        assert!((clamped.delta_width - oracle).abs() < 1e-4);
    }

    #[test]
    fn finger_step_matches_grid_search_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for case in 0..20 {
            let mut set = CorrespondenceSet::default();
            for i in 0..50 {
                let finger = i % 2;
                let sign = if finger == 0 { 1.0 } else { -1.0 };
                let n = Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )
                .normalize();
                let p = OrientedPoint::new(
                    Vector3::new(
                        sign * 0.01 + 0.002 * (rng.random::<f64>() - 0.5),
                        0.02 * (rng.random::<f64>() - 0.5),
                        0.02 * (rng.random::<f64>() - 0.5),
                    ),
                    -n,
                );
                let q = OrientedPoint::new(
                    p.position + n * 0.004 * (rng.random::<f64>() - 0.5),
                    n,
                );
                set.pairs.push(CorrespondencePair {
                    finger,
                    finger_point: p,
                    object_point: q,
                    distance: 0.0,
                });
            }
            let out = finger_step(
                &set,
                &Matrix3::identity(),
                &Vector3::zeros(),
                &Vector3::x(),
                0.02,
                LIMITS,
            );
            let oracle = grid_best_delta(&set, 0.02, LIMITS);
            assert!(
                (out.delta_width - oracle).abs() < 1e-4,
                "case {case}: closed form {} vs grid {}",
                out.delta_width,
                oracle
            );
        }
    }

    #[test]
    fn ipfo_zero_residual_returns_identity() {
        let set = imprint_pairs(150, 10);
        let out = ipfo_solve(&set, 0.02, LIMITS, &Vector3::x(), &FitParams::default())
            .unwrap();
        assert!(out.error < 1e-20);
        assert!(out.translation.norm() < 1e-10);
        assert!(out.delta_width.abs() < 1e-10);
        assert!((out.rotation - Matrix3::identity()).norm() < 1e-10);
    }

    /// Synthetic ground truth: translation plus width change recovered.
    #[test]
    fn ipfo_recovers_translation_and_width() {
        let base = imprint_pairs(200, 11);
        let mut set = base.clone();
        let offset = Vector3::new(0.0, 0.002, 0.0);
        let width_change = 0.004;
        for pair in &mut set.pairs {
            let sign = GripperModel::finger_sign(pair.finger);
            pair.object_point.position += offset + Vector3::x() * (sign * width_change / 2.0);
        }
        let out = ipfo_solve(&set, 0.02, LIMITS, &Vector3::x(), &FitParams::default())
            .unwrap();
        assert!(
            (out.translation - offset).norm() < 1e-4,
            "translation {:?}",
            out.translation
        );
        assert!(
            (out.delta_width - width_change).abs() < 2e-4,
            "width {}",
            out.delta_width
        );
        assert!(!out.clamped);
    }

    /// Clamp case: the imprint asks for width 45 mm but the jaw stops at
    /// 30 mm; the solver must saturate at +10 mm and flag it.
    #[test]
    fn ipfo_clamps_width_at_limits() {
        let base = imprint_pairs(200, 12);
        let mut set = base.clone();
        for pair in &mut set.pairs {
            let sign = GripperModel::finger_sign(pair.finger);
            pair.object_point.position += Vector3::x() * (sign * 0.025 / 2.0);
        }
        let out = ipfo_solve(&set, 0.02, LIMITS, &Vector3::x(), &FitParams::default())
            .unwrap();
        assert!(out.clamped);
        assert_relative_eq!(out.delta_width, 0.01, epsilon = 1e-12);
        // Grid oracle restricted to the feasible set agrees.
        let oracle = grid_best_delta(&set, 0.02, LIMITS);
        assert!((out.delta_width - oracle).abs() < 1e-4);
    }

    #[test]
    fn ipfo_error_sequence_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let mut set = imprint_pairs(80, rng.random());
            let offset = Vector3::new(
                0.004 * (rng.random::<f64>() - 0.5),
                0.004 * (rng.random::<f64>() - 0.5),
                0.004 * (rng.random::<f64>() - 0.5),
            );
            set = shift_objects(&set, offset);
            // Track E across accepted alternation steps by hand.
            let params = FitParams::default();
            let mut rotation = Matrix3::identity();
            let mut translation = Vector3::zeros();
            let mut delta = 0.0;
            let axis = Vector3::x();
            let mut last = fitting_error(&set, &rotation, &translation, delta, &axis, params.normal_weight).unwrap();
            for _ in 0..params.max_inner_iters {
                let palm = palm_step(&set, &rotation, &translation, delta, &axis, params.normal_weight).unwrap();
                rotation = palm.rotation;
                translation = palm.translation;
                let mid = fitting_error(&set, &rotation, &translation, delta, &axis, params.normal_weight).unwrap();
                assert!(mid <= last + 1e-12);
                let finger = finger_step(&set, &rotation, &translation, &axis, 0.02, LIMITS);
                if !finger.insensitive {
                    delta = finger.delta_width;
                }
                let e = fitting_error(&set, &rotation, &translation, delta, &axis, params.normal_weight).unwrap();
                assert!(e <= mid + 1e-12);
                last = e;
            }
        }
    }

    /// Block optimality: perturbing the optimal width by +/-1e-4 inside the
    /// limits never decreases E.
    #[test]
    fn finger_step_is_block_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let set = shift_objects(
                &imprint_pairs(60, rng.random()),
                Vector3::new(0.001, 0.0, 0.002),
            );
            let out = finger_step(
                &set,
                &Matrix3::identity(),
                &Vector3::zeros(),
                &Vector3::x(),
                0.02,
                LIMITS,
            );
            let e_star = fitting_error(
                &set,
                &Matrix3::identity(),
                &Vector3::zeros(),
                out.delta_width,
                &Vector3::x(),
                0.0,
            )
            .unwrap();
            for perturbed in [out.delta_width - 1e-4, out.delta_width + 1e-4] {
                let width = 0.02 + perturbed;
                if width < LIMITS.0 || width > LIMITS.1 {
                    continue;
                }
                let e = fitting_error(
                    &set,
                    &Matrix3::identity(),
                    &Vector3::zeros(),
                    perturbed,
                    &Vector3::x(),
                    0.0,
                )
                .unwrap();
                assert!(e >= e_star - 1e-15);
            }
        }
    }

    /// Frame equivariance: conjugating the whole instance by a rigid motion
    /// leaves E* unchanged and conjugates the optimum.
    #[test]
    fn ipfo_is_frame_equivariant() {
        let base = shift_objects(
            &imprint_pairs(150, 15),
            Vector3::new(0.001, -0.002, 0.0015),
        );
        let params = FitParams::default();
        let axis = Vector3::x();
        let out = ipfo_solve(&base, 0.02, LIMITS, &axis, &params).unwrap();

        let g_rot = UnitQuaternion::from_euler_angles(0.4, -0.3, 0.9)
            .to_rotation_matrix()
            .into_inner();
        let g_t = Vector3::new(0.2, -0.1, 0.05);
        let mut moved = base.clone();
        for pair in &mut moved.pairs {
            pair.finger_point.position = g_rot * pair.finger_point.position + g_t;
            pair.finger_point.normal = g_rot * pair.finger_point.normal;
            pair.object_point.position = g_rot * pair.object_point.position + g_t;
            pair.object_point.normal = g_rot * pair.object_point.normal;
        }
        let moved_axis = g_rot * axis;
        let out2 = ipfo_solve(&moved, 0.02, LIMITS, &moved_axis, &params).unwrap();

        assert!((out.error - out2.error).abs() < 1e-9);
        assert!((out.delta_width - out2.delta_width).abs() < 1e-6);
        // Conjugated optimum: R' = G R G^T.
        let conj = g_rot * out.rotation * g_rot.transpose();
        assert!((conj - out2.rotation).norm() < 1e-5);
    }

    /// Orthonormality drift after 1000 chained palm steps stays below 1e-9.
    #[test]
    fn rotation_orthonormality_drift_is_negligible() {
        let set = shift_objects(&imprint_pairs(60, 16), Vector3::new(0.0, 0.001, 0.001));
        let mut rotation = Matrix3::identity();
        let mut translation = Vector3::zeros();
        for _ in 0..1000 {
            let out = palm_step(&set, &rotation, &translation, 0.0, &Vector3::x(), 0.01)
                .unwrap();
            rotation = out.rotation;
            translation = out.translation;
        }
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        assert!(defect < 1e-9, "drift {defect}");
    }
}
