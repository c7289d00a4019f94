//! graspfit — grasp planning for parallel-jaw grippers with customized
//! fingertip surfaces.
//!
//! The planner matches the designed fingertip contact patches against
//! object point clouds: a constrained iterative-surface-fitting loop
//! refines gripper pose and jaw width together across a resolution pyramid,
//! a regret-guided sampler spreads seeds over k-means clusters of the
//! scene, and a depth-image region proposer (or an external detector via
//! ROI files) narrows the search in clutter.
//!
//! Module map:
//! - [`geometry`]: clouds, exact NN index, downsampling, normals, the jaw
//!   transform
//! - [`io`]: PLY clouds, OBJ/OFF meshes with surface sampling
//! - [`gripper`]: the parametric gripper model and descriptor format
//! - [`correspondence`]: matched and filtered contact pairs
//! - [`ipfo`]: the alternating palm/finger fitting solve
//! - [`isf`]: the multi-resolution fitting loop
//! - [`explorer`]: k-means seeding and regret-guided sampling
//! - [`scene`]: scene composition, collision and reachability
//! - [`perception`]: depth rendering, region proposal, region-seeded
//!   planning
//! - [`config`]: the aggregated, hashable planner configuration
//! - [`synth`]: deterministic synthetic scenes for tests and benchmarks

pub mod config;
pub mod correspondence;
pub mod error;
pub mod explorer;
pub mod geometry;
pub mod gripper;
pub mod io;
pub mod ipfo;
pub mod isf;
pub mod perception;
pub mod scene;
pub mod seeds;
pub mod synth;

pub use config::{CameraConfig, PlannerConfig};
pub use correspondence::{match_correspondences, CorrespondencePair, CorrespondenceSet};
pub use error::{Error, Result};
pub use explorer::{
    baseline_plan, kmeans_clusters, sample_orientation, select_cluster, update_regret, Budget,
    ClusterRecord, ExplorerParams, PlanContext, PlanEntry, PlanResult, RegretWeights,
    TrialOutcome,
};
pub use geometry::{
    apply_grasp_transform, build_nn_index, downsample_cloud, estimate_normals, median_nn_spacing,
    NnIndex, OrientedPoint, RigidTransform, SurfaceCloud,
};
pub use gripper::{example_gripper, load_gripper, save_gripper, GraspPose, GripperModel};
pub use ipfo::{finger_step, fitting_error, ipfo_solve, palm_step, FitParams, IpfoResult};
pub use isf::{convergence_ratio, isf_run, IsfOutcome, IsfParams};
pub use perception::{
    export_colormap, import_roi, propose_regions, region_seeded_plan, region_to_3d, render_depth,
    CameraModel, DepthImage, ProposerParams, RegionPlanParams, RegionProposal,
};
pub use scene::{
    collision_check, compose_scene, generate_imprint_scene, load_scene, reachability_check,
    save_scene, Aabb, CollisionParams, CollisionReport, ConeReachability, ReachabilityModel,
    Scene, SupportPlane,
};
