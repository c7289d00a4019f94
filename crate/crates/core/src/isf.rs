//! Iterative surface fitting: multi-resolution refinement of a single
//! seeded grasp.
//!
//! Levels run coarse to fine. At level `l` the finger patches (at the
//! current pose) are downsampled by `2^l`, the iteration cap is
//! `max_iters / 2^l` and the convergence band is `2^l * tol`. Each inner
//! iteration matches correspondences, solves the constrained fit and folds
//! the increment into the running pose; the level ends when the ratio of
//! successive RMS sample displacements enters `[1 - eps, 1 + eps]`.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::correspondence::match_correspondences;
use crate::error::{Error, Result};
use crate::geometry::{
    apply_grasp_transform, downsample_cloud, median_nn_spacing, NnIndex, SurfaceCloud,
};
use crate::gripper::{GraspPose, GripperModel};
use crate::ipfo::{ipfo_solve, FitParams};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsfParams {
    /// Pyramid level count L.
    pub levels: u32,
    /// Iteration budget at the finest level.
    pub max_iters: usize,
    /// Convergence band half-width at the finest level.
    pub tol: f64,
    /// Correspondence distance gate in meters; `None` derives it per level
    /// from point spacing.
    pub tau_d: Option<f64>,
    /// Multiplier for the adaptive distance gate.
    pub tau_d_multiplier: f64,
    /// Normal-compatibility gate in radians.
    pub tau_theta: f64,
    pub fit: FitParams,
}

impl Default for IsfParams {
    fn default() -> Self {
        Self {
            levels: 4,
            max_iters: 200,
            tol: 0.008,
            tau_d: None,
            tau_d_multiplier: 3.0,
            tau_theta: 60f64.to_radians(),
            fit: FitParams::default(),
        }
    }
}

impl IsfParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.levels > 16 {
            return Err(Error::invalid("levels must lie in [1, 16]"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        if let Some(tau) = self.tau_d {
            if !(tau > 0.0) {
                return Err(Error::invalid("tau_d must be > 0"));
            }
        }
        if !(self.tau_d_multiplier > 0.0) {
            return Err(Error::invalid("tau_d_multiplier must be > 0"));
        }
        if !(self.tau_theta > 0.0 && self.tau_theta <= std::f64::consts::FRAC_PI_2) {
            return Err(Error::invalid("tau_theta must lie in (0, pi/2]"));
        }
        self.fit.validate()
    }

    /// Per-level (iteration cap, convergence band) from coarse to fine.
    pub fn level_schedule(&self) -> Vec<(usize, f64)> {
        (0..self.levels)
            .rev()
            .map(|l| {
                let cap = (self.max_iters >> l).max(1);
                (cap, (1u64 << l) as f64 * self.tol)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub iterations: usize,
    pub final_eta: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct IsfOutcome {
    pub grasp: GraspPose,
    /// Final fitting error; +infinity when the correspondence set emptied
    /// before convergence.
    pub error: f64,
    pub level_stats: Vec<LevelStats>,
    pub converged: bool,
}

/// RMS displacement of the samples from their level-start positions, plus
/// the ratio against the previous displacement.
///
/// Conventions: `eta = +inf` when the previous displacement was zero and the
/// current one is not; `eta = 1` when both are zero (a motionless gripper is
/// converged).
pub fn convergence_ratio(
    current: &[Vector3<f64>],
    level_start: &[Vector3<f64>],
    previous_es: f64,
) -> Result<(f64, f64)> {
    if current.len() != level_start.len() {
        return Err(Error::invalid(format!(
            "sample count mismatch: {} vs {}",
            current.len(),
            level_start.len()
        )));
    }
    if current.is_empty() {
        return Err(Error::invalid("convergence ratio over zero samples"));
    }
    let sum: f64 = current
        .iter()
        .zip(level_start)
        .map(|(c, s)| (c - s).norm_squared())
        .sum();
    let e_s = (sum / current.len() as f64).sqrt();
    let eta = if previous_es == 0.0 {
        if e_s == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        e_s / previous_es
    };
    Ok((e_s, eta))
}

/// Runs the full pyramid from one seed. Non-convergence (the gripper lost
/// the surface) is reported through the outcome, not as an error.
pub fn isf_run(
    object: &SurfaceCloud,
    object_index: &NnIndex,
    gripper: &GripperModel,
    seed: &GraspPose,
    params: &IsfParams,
) -> Result<IsfOutcome> {
    params.validate()?;
    if object.is_empty() {
        return Err(Error::invalid("ISF needs a non-empty object cloud"));
    }
    if !gripper.width_in_limits(seed.width) {
        return Err(Error::ConstraintViolation(format!(
            "seed width {} outside limits",
            seed.width
        )));
    }

    let tau_base = params
        .tau_d
        .unwrap_or_else(|| params.tau_d_multiplier * median_nn_spacing(object));

    let mut orientation = UnitQuaternion::from_matrix(&seed.rotation);
    let mut translation = seed.translation;
    let mut width = seed.width;
    let mut error = f64::INFINITY;
    let mut stats = Vec::with_capacity(params.levels as usize);
    let mut level_converged = false;

    for l in (0..params.levels).rev() {
        let cap = (params.max_iters >> l).max(1);
        let band = (1u64 << l) as f64 * params.tol;
        let pose = GraspPose::new(
            orientation.to_rotation_matrix().into_inner(),
            translation,
            width,
        );
        let (f1, f2) = gripper.transformed_finger_surfaces(&pose)?;
        let mut s1 = downsample_cloud(&f1, 1 << l)?;
        let mut s2 = downsample_cloud(&f2, 1 << l)?;
        // Widen the gate at coarse levels where samples are sparse.
        let sample_spacing = median_nn_spacing(&s1).max(median_nn_spacing(&s2));
        let tau_d = tau_base.max(params.tau_d_multiplier * sample_spacing);

        let level_start: Vec<Vector3<f64>> = s1
            .positions()
            .chain(s2.positions())
            .copied()
            .collect();
        let mut e_s = f64::INFINITY;
        let mut eta = 0.0_f64;
        let mut iterations = 0usize;
        level_converged = false;

        while iterations < cap {
            if eta >= 1.0 - band && eta <= 1.0 + band {
                level_converged = true;
                break;
            }
            iterations += 1;
            let previous_es = e_s;

            let corr = match_correspondences(
                [&s1, &s2],
                object_index,
                object,
                tau_d,
                params.tau_theta,
            )?;
            if corr.is_empty() {
                stats.push(LevelStats {
                    level: l,
                    iterations,
                    final_eta: eta,
                    samples: level_start.len(),
                });
                return Ok(IsfOutcome {
                    grasp: GraspPose::new(
                        orientation.to_rotation_matrix().into_inner(),
                        translation,
                        width,
                    ),
                    error: f64::INFINITY,
                    level_stats: stats,
                    converged: false,
                });
            }

            let jaw_world = orientation * gripper.jaw_axis;
            let fit = ipfo_solve(
                &corr,
                width,
                gripper.width_limits,
                &jaw_world,
                &params.fit,
            )?;

            // Fold the increment into the running pose.
            let inc = UnitQuaternion::from_matrix(&fit.rotation);
            orientation = inc * orientation;
            orientation.renormalize();
            translation = fit.rotation * translation + fit.translation;
            width += fit.delta_width;
            error = fit.error;

            // Move the level samples the same way.
            for (cloud, sign) in [(&mut s1, 1.0), (&mut s2, -1.0)] {
                for p in &mut cloud.points {
                    *p = apply_grasp_transform(
                        p,
                        &fit.rotation,
                        &fit.translation,
                        fit.delta_width,
                        &jaw_world,
                        sign,
                    );
                }
            }

            let current: Vec<Vector3<f64>> = s1
                .positions()
                .chain(s2.positions())
                .copied()
                .collect();
            let (new_es, new_eta) = convergence_ratio(&current, &level_start, previous_es)?;
            e_s = new_es;
            eta = new_eta;
        }
        if !level_converged && eta >= 1.0 - band && eta <= 1.0 + band {
            level_converged = true;
        }
        stats.push(LevelStats {
            level: l,
            iterations,
            final_eta: eta,
            samples: level_start.len(),
        });
    }

    Ok(IsfOutcome {
        grasp: GraspPose::new(
            orientation.to_rotation_matrix().into_inner(),
            translation,
            width,
        ),
        error,
        level_stats: stats,
        converged: level_converged && error.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_nn_index, OrientedPoint};
    use crate::gripper::example_gripper;
    use crate::synth;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_schedule_matches_expected_caps_and_bands() {
        let params = IsfParams::default();
        let schedule = params.level_schedule();
        assert_eq!(
            schedule.iter().map(|s| s.0).collect::<Vec<_>>(),
            vec![25, 50, 100, 200]
        );
        let bands: Vec<f64> = schedule.iter().map(|s| s.1).collect();
        assert_eq!(bands, vec![0.064, 0.032, 0.016, 0.008]);
    }

    #[test]
    fn convergence_ratio_conventions() {
        let a = vec![Vector3::zeros(), Vector3::zeros()];
        let (e, eta) = convergence_ratio(&a, &a, 0.0).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(eta, 1.0);

        let moved = vec![Vector3::new(0.004, 0.0, 0.0), Vector3::new(0.004, 0.0, 0.0)];
        let (e, eta) = convergence_ratio(&moved, &a, 0.0).unwrap();
        assert_eq!(e, 0.004);
        assert!(eta.is_infinite());

        let (e2, eta2) = convergence_ratio(
            &[Vector3::new(0.002, 0.0, 0.0)],
            &[Vector3::zeros()],
            0.004,
        )
        .unwrap();
        assert_eq!(e2, 0.002);
        assert_eq!(eta2, 0.5);

        assert!(convergence_ratio(&a, &[Vector3::zeros()], 1.0).is_err());
    }

    /// Re-summation oracle for the RMS displacement.
    #[test]
    fn rms_matches_independent_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let start: Vec<Vector3<f64>> = (0..64)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let current: Vec<Vector3<f64>> = start
            .iter()
            .map(|p| p + Vector3::new(rng.random::<f64>() * 0.01, 0.0, 0.0))
            .collect();
        let (e, _) = convergence_ratio(&current, &start, 1.0).unwrap();
        let mut acc = 0.0;
        for (c, s) in current.iter().zip(&start) {
            acc += (c.x - s.x).powi(2) + (c.y - s.y).powi(2) + (c.z - s.z).powi(2);
        }
        let want = (acc / start.len() as f64).sqrt();
        assert!((e - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_imprint_seed_is_a_fixed_point() {
        let gripper = example_gripper();
        let pose = GraspPose::identity(0.022);
        let scene = synth::imprint_tab_cloud(&gripper, &pose);
        let index = build_nn_index(&scene).unwrap();
        let outcome = isf_run(&scene, &index, &gripper, &pose, &IsfParams::default()).unwrap();
        assert!(outcome.converged);
        assert!(outcome.error < 1e-10, "error {}", outcome.error);
        assert!((outcome.grasp.translation - pose.translation).norm() < 1e-9);
        assert!((outcome.grasp.rotation - pose.rotation).norm() < 1e-9);
        assert!((outcome.grasp.width - pose.width).abs() < 1e-9);
    }

    #[test]
    fn recovery_from_perturbed_seeds() {
        let gripper = example_gripper();
        let true_pose = GraspPose::identity(0.022);
        let scene = synth::imprint_tab_cloud(&gripper, &true_pose);
        let index = build_nn_index(&scene).unwrap();
        let params = IsfParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut hits = 0;
        let trials = 12;
        for _ in 0..trials {
            let seed = synth::perturbed_pose(
                &true_pose,
                10f64.to_radians(),
                0.010,
                0.005,
                gripper.width_limits,
                &mut rng,
            );
            let outcome = isf_run(&scene, &index, &gripper, &seed, &params).unwrap();
            if synth::pose_close(
                &outcome.grasp,
                &true_pose,
                2f64.to_radians(),
                0.002,
                0.0005,
            ) {
                hits += 1;
            }
        }
        assert!(hits * 10 >= trials * 9, "recovered {hits}/{trials}");
    }

    #[test]
    fn width_constraint_holds_at_degenerate_limits() {
        let mut gripper = example_gripper();
        gripper.width_limits = (0.02, 0.02);
        gripper.reference_width = 0.02;
        let pose = GraspPose::identity(0.02);
        let scene = synth::imprint_tab_cloud(&gripper, &pose);
        let index = build_nn_index(&scene).unwrap();
        let seed = GraspPose::new(
            Matrix3::identity(),
            pose.translation + Vector3::new(0.002, 0.0, 0.001),
            0.02,
        );
        let outcome = isf_run(&scene, &index, &gripper, &seed, &IsfParams::default()).unwrap();
        assert_eq!(outcome.grasp.width, 0.02);
        assert!(outcome.error < 1e-6);
    }

    #[test]
    fn empty_correspondences_report_infinite_error_not_panic() {
        let gripper = example_gripper();
        // Object far away from the seeded gripper.
        let object = SurfaceCloud::new(
            (0..100)
                .map(|i| {
                    OrientedPoint::new(
                        Vector3::new(1.0 + i as f64 * 0.001, 0.0, 0.0),
                        Vector3::z(),
                    )
                })
                .collect(),
            "far",
        );
        let index = build_nn_index(&object).unwrap();
        let params = IsfParams {
            tau_d: Some(0.005),
            ..IsfParams::default()
        };
        let outcome = isf_run(
            &object,
            &index,
            &gripper,
            &GraspPose::identity(0.02),
            &params,
        )
        .unwrap();
        assert!(!outcome.converged);
        assert!(outcome.error.is_infinite());
    }

    #[test]
    fn seed_width_outside_limits_is_an_error() {
        let gripper = example_gripper();
        let scene = synth::imprint_tab_cloud(&gripper, &GraspPose::identity(0.02));
        let index = build_nn_index(&scene).unwrap();
        let seed = GraspPose::identity(0.05);
        assert!(isf_run(&scene, &index, &gripper, &seed, &IsfParams::default()).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let gripper = example_gripper();
        let true_pose = GraspPose::identity(0.022);
        let scene = synth::imprint_tab_cloud(&gripper, &true_pose);
        let index = build_nn_index(&scene).unwrap();
        let seed = GraspPose::new(
            Matrix3::identity(),
            Vector3::new(0.003, -0.002, 0.004),
            0.021,
        );
        let params = IsfParams::default();
        let a = isf_run(&scene, &index, &gripper, &seed, &params).unwrap();
        let b = isf_run(&scene, &index, &gripper, &seed, &params).unwrap();
        assert_eq!(a.grasp.rotation, b.grasp.rotation);
        assert_eq!(a.grasp.translation, b.grasp.translation);
        assert_eq!(a.grasp.width, b.grasp.width);
        assert_eq!(a.error, b.error);
    }

    /// Coarse-to-fine: sample counts never shrink as levels refine, and the
    /// final error is no worse than the seed-pose error on the finest level.
    #[test]
    fn pyramid_is_coarse_to_fine_and_improves_on_seed() {
        let gripper = example_gripper();
        let true_pose = GraspPose::identity(0.022);
        let scene = synth::imprint_tab_cloud(&gripper, &true_pose);
        let index = build_nn_index(&scene).unwrap();
        let seed = GraspPose::new(
            Matrix3::identity(),
            Vector3::new(0.004, 0.002, 0.003),
            0.02,
        );
        let params = IsfParams::default();
        let outcome = isf_run(&scene, &index, &gripper, &seed, &params).unwrap();
        let counts: Vec<usize> = outcome.level_stats.iter().map(|s| s.samples).collect();
        for w in counts.windows(2) {
            assert!(w[1] >= w[0], "sample counts {counts:?}");
        }

        // Seed-pose error on the finest level's samples.
        let (f1, f2) = gripper.transformed_finger_surfaces(&seed).unwrap();
        let corr = match_correspondences(
            [&f1, &f2],
            &index,
            &scene,
            3.0 * median_nn_spacing(&scene),
            params.tau_theta,
        )
        .unwrap();
        let seed_error = crate::ipfo::fitting_error(
            &corr,
            &Matrix3::identity(),
            &Vector3::zeros(),
            0.0,
            &gripper.jaw_axis,
            params.fit.normal_weight,
        )
        .unwrap();
        assert!(outcome.error <= seed_error + 1e-15);
    }
}
