use graspfit_core::geometry::build_nn_index;
use graspfit_core::gripper::example_gripper;
use graspfit_core::isf::{isf_run, IsfParams};
use graspfit_core::synth;
use graspfit_core::GraspPose;
use nalgebra::{Matrix3, Vector3};

fn main() {
    let gripper = example_gripper();
    let pose = GraspPose::identity(0.022);
    let scene = synth::imprint_tab_cloud(&gripper, &pose);
    println!("scene points: {}", scene.len());
    let index = build_nn_index(&scene).unwrap();
    let params = IsfParams::default();

    let outcome = isf_run(&scene, &index, &gripper, &pose, &params).unwrap();
    println!("== exact seed ==");
    println!(
        "converged {} error {:.3e} width {:.6}",
        outcome.converged, outcome.error, outcome.grasp.width
    );
    println!(
        "drift: rot {:.3e} trans {:.3e} width {:.3e}",
        (outcome.grasp.rotation - pose.rotation).norm(),
        (outcome.grasp.translation - pose.translation).norm(),
        (outcome.grasp.width - pose.width).abs()
    );
    for s in &outcome.level_stats {
        println!(
            "  level {} iters {} eta {:.4} samples {}",
            s.level, s.iterations, s.final_eta, s.samples
        );
    }

    let seed = GraspPose::new(
        Matrix3::identity(),
        pose.translation + Vector3::new(0.003, -0.002, 0.004),
        0.021,
    );
    let outcome = isf_run(&scene, &index, &gripper, &seed, &params).unwrap();
    println!("== perturbed seed ==");
    println!(
        "converged {} error {:.3e} width {:.6}",
        outcome.converged, outcome.error, outcome.grasp.width
    );
    println!(
        "drift from truth: rot {:.3e} trans {:.3e} width {:.3e}",
        (outcome.grasp.rotation - pose.rotation).norm(),
        (outcome.grasp.translation - pose.translation).norm(),
        (outcome.grasp.width - pose.width).abs()
    );
    for s in &outcome.level_stats {
        println!(
            "  level {} iters {} eta {:.4} samples {}",
            s.level, s.iterations, s.final_eta, s.samples
        );
    }
}
