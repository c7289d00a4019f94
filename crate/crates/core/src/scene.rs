//! Clutter scenes: merged world-frame clouds with collision checking of
//! candidate grasps and a pluggable reachability predicate.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_nn_index, NnIndex, OrientedPoint, RigidTransform, SurfaceCloud};
use crate::gripper::{GraspPose, GripperModel};
use crate::io::{read_ply, write_ply_binary};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupportPlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl SupportPlane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

/// Provenance of one merged object.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Placement {
    pub source: String,
    pub transform: RigidTransform,
}

/// A composed world-frame scene. The cloud may be empty (an empty scene is
/// trivially collision-free); planners that need points reject it.
#[derive(Debug)]
pub struct Scene {
    pub cloud: SurfaceCloud,
    pub nn_index: Option<NnIndex>,
    pub workspace_bounds: Aabb,
    pub support_plane: SupportPlane,
    pub placements: Vec<Placement>,
}

impl Scene {
    pub fn new(
        cloud: SurfaceCloud,
        workspace_bounds: Aabb,
        support_plane: SupportPlane,
        placements: Vec<Placement>,
    ) -> Result<Self> {
        let nn_index = if cloud.is_empty() {
            None
        } else {
            Some(build_nn_index(&cloud)?)
        };
        Ok(Self {
            cloud,
            nn_index,
            workspace_bounds,
            support_plane,
            placements,
        })
    }

    pub fn index(&self) -> Result<&NnIndex> {
        self.nn_index
            .as_ref()
            .ok_or_else(|| Error::invalid("scene cloud is empty"))
    }
}

/// Transforms and merges the object clouds, drops points below the support
/// plane or outside the workspace bounds, and rebuilds the index.
pub fn compose_scene(
    object_clouds: &[SurfaceCloud],
    placements: &[RigidTransform],
    support: SupportPlane,
    bounds: Aabb,
) -> Result<Scene> {
    if object_clouds.len() != placements.len() {
        return Err(Error::invalid(format!(
            "{} clouds vs {} placements",
            object_clouds.len(),
            placements.len()
        )));
    }
    let mut merged = Vec::new();
    let mut provenance = Vec::new();
    for (cloud, placement) in object_clouds.iter().zip(placements) {
        for p in &cloud.points {
            let moved = placement.apply_point(p);
            if support.signed_distance(&moved.position) < -1e-9 {
                continue;
            }
            if !bounds.contains(&moved.position) {
                continue;
            }
            merged.push(moved);
        }
        provenance.push(Placement {
            source: cloud.frame_id.clone(),
            transform: *placement,
        });
    }
    if merged.is_empty() {
        return Err(Error::invalid("scene composition produced no points"));
    }
    Scene::new(
        SurfaceCloud::new(merged, "scene"),
        bounds,
        support,
        provenance,
    )
}

/// Outcome of a grasp collision query.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CollisionReport {
    pub collided: bool,
    pub penetrating_point_count: usize,
    pub worst_penetration: f64,
}

/// Collision tolerances; defaults tolerate sensor-noise-level phantom
/// points without admitting real contacts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionParams {
    /// Penetrating points tolerated before the grasp counts as collided.
    pub point_tolerance: usize,
    /// Minimum penetration depth in meters for a point to count.
    pub penetration_tolerance: f64,
    /// Scene points within this distance of a fingertip patch are intended
    /// contact, not collision.
    pub contact_exclusion: f64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self {
            point_tolerance: 5,
            penetration_tolerance: 0.001,
            contact_exclusion: 0.003,
        }
    }
}

impl CollisionParams {
    pub fn validate(&self) -> Result<()> {
        if self.penetration_tolerance < 0.0 || self.contact_exclusion < 0.0 {
            return Err(Error::invalid("collision tolerances must be >= 0"));
        }
        Ok(())
    }
}

/// Counts scene points strictly inside the gripper's collision volumes
/// (deeper than `penetration_tolerance`), excluding points within
/// `contact_exclusion` of either fingertip patch. Collided when the count
/// exceeds `point_tolerance`.
pub fn collision_check(
    scene: &Scene,
    gripper: &GripperModel,
    pose: &GraspPose,
    params: &CollisionParams,
) -> Result<CollisionReport> {
    if !gripper.width_in_limits(pose.width) {
        return Err(Error::ConstraintViolation(format!(
            "collision query width {} outside limits",
            pose.width
        )));
    }
    let Some(index) = scene.nn_index.as_ref() else {
        return Ok(CollisionReport {
            collided: false,
            penetrating_point_count: 0,
            worst_penetration: 0.0,
        });
    };
    let volumes = gripper.transformed_volumes(pose);
    let (f1, f2) = gripper.transformed_finger_surfaces(pose)?;
    let patch_tree = crate::geometry::KdTree::build(
        f1.positions().chain(f2.positions()).copied().collect(),
    )?;

    let mut seen = std::collections::BTreeSet::new();
    let mut count = 0usize;
    let mut worst = 0.0f64;
    for volume in &volumes {
        let radius = volume.half_extents.norm() + 1e-9;
        for hit in index.within_radius(&volume.center, radius) {
            if !seen.insert(hit.index) {
                continue;
            }
            let p = &scene.cloud.points[hit.index].position;
            let pen = volumes
                .iter()
                .map(|v| v.penetration(p))
                .fold(f64::NEG_INFINITY, f64::max);
            if pen <= params.penetration_tolerance {
                continue;
            }
            if patch_tree.nearest(p).distance <= params.contact_exclusion {
                continue;
            }
            count += 1;
            worst = worst.max(pen);
        }
    }
    Ok(CollisionReport {
        collided: count > params.point_tolerance,
        penetrating_point_count: count,
        worst_penetration: worst,
    })
}

/// Pluggable reachability predicate over candidate grasps.
pub trait ReachabilityModel: Send + Sync {
    fn reachable(&self, pose: &GraspPose, gripper: &GripperModel, scene: &Scene) -> bool;
}

/// Default predicate: the grasp position must lie inside the workspace
/// bounds and the world approach direction must stay within a cone around
/// the downward (anti-support) direction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeReachability {
    pub cone_half_angle: f64,
}

impl Default for ConeReachability {
    fn default() -> Self {
        Self {
            cone_half_angle: 60f64.to_radians(),
        }
    }
}

impl ReachabilityModel for ConeReachability {
    fn reachable(&self, pose: &GraspPose, gripper: &GripperModel, scene: &Scene) -> bool {
        reachability_check(pose, gripper, scene, self.cone_half_angle)
    }
}

/// Grasp-from-above reachability: position in bounds and approach within
/// `cone_half_angle` of the negative support normal.
pub fn reachability_check(
    pose: &GraspPose,
    gripper: &GripperModel,
    scene: &Scene,
    cone_half_angle: f64,
) -> bool {
    if !scene.workspace_bounds.contains(&pose.translation) {
        return false;
    }
    let approach_world = pose.rotation * gripper.approach_axis;
    let down = -scene.support_plane.normal;
    approach_world.dot(&down) >= cone_half_angle.cos() - 1e-12
}

/// Builds a synthetic scene containing exact copies of both fingertip
/// patches at `true_pose` (normals flipped to the object convention) merged
/// with `extra_surface`, optionally perturbed by Gaussian position noise.
/// Returns the scene and the ground-truth grasp for recovery tests.
pub fn generate_imprint_scene(
    gripper: &GripperModel,
    true_pose: &GraspPose,
    noise_sigma: f64,
    extra_surface: &SurfaceCloud,
    rng_seed: u64,
) -> Result<(Scene, GraspPose)> {
    if !gripper.width_in_limits(true_pose.width) {
        return Err(Error::ConstraintViolation(
            "imprint pose width outside limits".into(),
        ));
    }
    let (f1, f2) = gripper.transformed_finger_surfaces(true_pose)?;
    let mut points: Vec<OrientedPoint> = f1
        .points
        .iter()
        .chain(&f2.points)
        .map(|p| OrientedPoint::new(p.position, -p.normal))
        .collect();
    points.extend(extra_surface.points.iter().copied());

    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut gauss = || {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        for p in &mut points {
            p.position += Vector3::new(gauss(), gauss(), gauss()) * noise_sigma;
        }
    }

    let cloud = SurfaceCloud::new(points, "imprint");
    let (lo, hi) = cloud.bounds().ok_or_else(|| Error::invalid("empty imprint"))?;
    let pad = Vector3::repeat(0.05);
    let bounds = Aabb::new(lo - pad, hi + pad);
    let support = SupportPlane {
        point: Vector3::new(0.0, 0.0, lo.z - 0.001),
        normal: Vector3::z(),
    };
    let scene = Scene::new(cloud, bounds, support, Vec::new())?;
    Ok((scene, *true_pose))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneSidecar {
    version: u32,
    cloud: String,
    workspace_bounds: Aabb,
    support_plane: SupportPlane,
    placements: Vec<Placement>,
}

/// Saves the scene as `<stem>.ply` plus the given JSON sidecar.
pub fn save_scene(scene: &Scene, json_path: impl AsRef<Path>) -> Result<()> {
    let json_path = json_path.as_ref();
    let ply_name = json_path
        .file_stem()
        .map(|s| format!("{}.ply", s.to_string_lossy()))
        .ok_or_else(|| Error::invalid("scene path has no file stem"))?;
    let ply_path = json_path.with_file_name(&ply_name);
    write_ply_binary(&scene.cloud, &ply_path)?;
    let sidecar = SceneSidecar {
        version: 1,
        cloud: ply_name,
        workspace_bounds: scene.workspace_bounds,
        support_plane: scene.support_plane,
        placements: scene.placements.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(json_path, json)?;
    Ok(())
}

/// Loads a scene from its JSON sidecar; the PLY path is resolved relative
/// to the sidecar.
pub fn load_scene(json_path: impl AsRef<Path>) -> Result<Scene> {
    let json_path = json_path.as_ref();
    let name = json_path.display().to_string();
    let text = std::fs::read_to_string(json_path)?;
    let sidecar: SceneSidecar =
        serde_json::from_str(&text).map_err(|e| Error::parse(&name, e.to_string()))?;
    if sidecar.version != 1 {
        return Err(Error::parse(
            &name,
            format!("unsupported scene version {}", sidecar.version),
        ));
    }
    let dir = json_path.parent().unwrap_or_else(|| Path::new("."));
    let cloud = read_ply(dir.join(&sidecar.cloud))?;
    Scene::new(
        cloud,
        sidecar.workspace_bounds,
        sidecar.support_plane,
        sidecar.placements,
    )
}
