//! Parametric parallel-jaw gripper with customized fingertip patches.
//!
//! The gripper frame puts the tool center point at the origin, midway
//! between the two fingertip patches. Finger 1 sits on the positive side of
//! the jaw axis and carries sign +1: a width change of `delta_d` moves each
//! finger `delta_d / 2` along the jaw axis in opposite directions. Patch
//! normals point out of the finger material, toward the object they touch.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_grasp_transform, OrientedPoint, SurfaceCloud};
use crate::io::{read_ply, write_ply_ascii};

/// The planner's decision variables: rigid gripper pose plus jaw width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: f64,
}

impl GraspPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, width: f64) -> Self {
        Self {
            rotation,
            translation,
            width,
        }
    }

    pub fn identity(width: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros(), width)
    }
}

/// Which rigid body a collision volume is attached to. Finger volumes
/// translate with their finger as the jaw opens; the palm is fixed in the
/// gripper frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperBody {
    Finger1,
    Finger2,
    Palm,
}

/// Oriented box in the gripper frame at the reference width.
#[derive(Debug, Clone)]
pub struct CollisionVolume {
    pub body: GripperBody,
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

/// An oriented box placed in the world; supports penetration queries.
#[derive(Debug, Clone)]
pub struct WorldBox {
    pub body: GripperBody,
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl WorldBox {
    /// Depth of `p` inside the box: the smallest distance to any face,
    /// positive inside, negative outside (distance along the most-violated
    /// axis).
    pub fn penetration(&self, p: &Vector3<f64>) -> f64 {
        let local = self.rotation.transpose() * (p - self.center);
        let mut depth = f64::INFINITY;
        for i in 0..3 {
            depth = depth.min(self.half_extents[i] - local[i].abs());
        }
        depth
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.penetration(p) >= 0.0
    }
}

#[derive(Debug, Clone)]
pub struct GripperModel {
    pub name: String,
    /// Fingertip patches in the gripper frame at `reference_width`.
    pub finger_patches: [SurfaceCloud; 2],
    pub jaw_axis: Vector3<f64>,
    /// Direction the gripper advances toward the object, in gripper frame.
    pub approach_axis: Vector3<f64>,
    pub width_limits: (f64, f64),
    pub reference_width: f64,
    pub collision_volumes: Vec<CollisionVolume>,
}

impl GripperModel {
    /// +1 for finger 1, -1 for finger 2.
    pub fn finger_sign(finger: usize) -> f64 {
        if finger == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn clamp_width(&self, d: f64) -> f64 {
        d.clamp(self.width_limits.0, self.width_limits.1)
    }

    pub fn width_in_limits(&self, d: f64) -> bool {
        d >= self.width_limits.0 - 1e-12 && d <= self.width_limits.1 + 1e-12
    }

    /// Both patches mapped to the world frame at `pose`.
    pub fn transformed_finger_surfaces(
        &self,
        pose: &GraspPose,
    ) -> Result<(SurfaceCloud, SurfaceCloud)> {
        if !self.width_in_limits(pose.width) {
            return Err(Error::ConstraintViolation(format!(
                "width {} outside limits [{}, {}]",
                pose.width, self.width_limits.0, self.width_limits.1
            )));
        }
        let delta = pose.width - self.reference_width;
        let map = |cloud: &SurfaceCloud, sign: f64| {
            SurfaceCloud::new(
                cloud
                    .points
                    .iter()
                    .map(|p| {
                        apply_grasp_transform(
                            p,
                            &pose.rotation,
                            &pose.translation,
                            delta,
                            &self.jaw_axis,
                            sign,
                        )
                    })
                    .collect(),
                "world",
            )
        };
        Ok((
            map(&self.finger_patches[0], 1.0),
            map(&self.finger_patches[1], -1.0),
        ))
    }

    /// Collision boxes in the world frame at `pose`; finger boxes follow
    /// their finger's width shift.
    pub fn transformed_volumes(&self, pose: &GraspPose) -> Vec<WorldBox> {
        let delta = pose.width - self.reference_width;
        self.collision_volumes
            .iter()
            .map(|v| {
                let shift = match v.body {
                    GripperBody::Finger1 => self.jaw_axis * (delta * 0.5),
                    GripperBody::Finger2 => self.jaw_axis * (-delta * 0.5),
                    GripperBody::Palm => Vector3::zeros(),
                };
                WorldBox {
                    body: v.body,
                    center: pose.rotation * (v.center + shift) + pose.translation,
                    half_extents: v.half_extents,
                    rotation: pose.rotation * v.rotation,
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (d_min, d_max) = self.width_limits;
        if !(d_min.is_finite() && d_max.is_finite()) || d_min <= 0.0 {
            return Err(Error::invalid("width limits must be finite and positive"));
        }
        if d_min > d_max {
            return Err(Error::invalid(format!(
                "d_min {d_min} exceeds d_max {d_max}"
            )));
        }
        if self.reference_width < d_min || self.reference_width > d_max {
            return Err(Error::invalid(format!(
                "reference width {} outside [{d_min}, {d_max}]",
                self.reference_width
            )));
        }
        for (j, patch) in self.finger_patches.iter().enumerate() {
            if patch.is_empty() {
                return Err(Error::invalid(format!("finger {} patch is empty", j + 1)));
            }
            patch.validate()?;
        }
        for axis in [&self.jaw_axis, &self.approach_axis] {
            if (axis.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("gripper axes must be unit length"));
            }
        }
        // Collision volumes must enclose the fingertip patches they move
        // with; tested at reference width, which is preserved under the
        // shared shift.
        for (j, patch) in self.finger_patches.iter().enumerate() {
            let body = if j == 0 {
                GripperBody::Finger1
            } else {
                GripperBody::Finger2
            };
            let boxes: Vec<WorldBox> = self
                .collision_volumes
                .iter()
                .filter(|v| v.body == body)
                .map(|v| WorldBox {
                    body: v.body,
                    center: v.center,
                    half_extents: v.half_extents,
                    rotation: v.rotation,
                })
                .collect();
            if boxes.is_empty() {
                return Err(Error::invalid(format!(
                    "finger {} has no collision volume",
                    j + 1
                )));
            }
            for p in &patch.points {
                if !boxes.iter().any(|b| b.penetration(&p.position) >= -1e-9) {
                    return Err(Error::invalid(format!(
                        "finger {} patch point escapes its collision volumes",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

fn mat3_to_rows(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

fn mat3_from_rows(rows: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::new(
        rows[0], rows[1], rows[2], rows[3], rows[4], rows[5], rows[6], rows[7], rows[8],
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeDescriptor {
    body: GripperBody,
    center: [f64; 3],
    half_extents: [f64; 3],
    #[serde(default = "identity_rows")]
    rotation: [f64; 9],
}

fn identity_rows() -> [f64; 9] {
    [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
}

/// On-disk gripper descriptor. Patch paths are relative to the descriptor
/// file; rotations are row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GripperDescriptor {
    #[serde(default)]
    name: String,
    finger_patches: [String; 2],
    jaw_axis: [f64; 3],
    approach_axis: [f64; 3],
    width_limits: [f64; 2],
    reference_width: f64,
    collision_volumes: Vec<VolumeDescriptor>,
}

/// Loads and validates a gripper from a JSON descriptor.
pub fn load_gripper(path: impl AsRef<Path>) -> Result<GripperModel> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let desc: GripperDescriptor =
        serde_json::from_str(&text).map_err(|e| Error::parse(&name, e.to_string()))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let patch1 = read_ply(dir.join(&desc.finger_patches[0]))?;
    let patch2 = read_ply(dir.join(&desc.finger_patches[1]))?;
    let model = GripperModel {
        name: if desc.name.is_empty() {
            "unnamed".into()
        } else {
            desc.name
        },
        finger_patches: [patch1, patch2],
        jaw_axis: Vector3::from(desc.jaw_axis).normalize(),
        approach_axis: Vector3::from(desc.approach_axis).normalize(),
        width_limits: (desc.width_limits[0], desc.width_limits[1]),
        reference_width: desc.reference_width,
        collision_volumes: desc
            .collision_volumes
            .iter()
            .map(|v| CollisionVolume {
                body: v.body,
                center: Vector3::from(v.center),
                half_extents: Vector3::from(v.half_extents),
                rotation: mat3_from_rows(&v.rotation),
            })
            .collect(),
    };
    model.validate()?;
    Ok(model)
}

/// Writes the descriptor JSON plus the two patch PLY files into `dir`.
pub fn save_gripper(model: &GripperModel, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_ply_ascii(&model.finger_patches[0], dir.join("finger1.ply"))?;
    write_ply_ascii(&model.finger_patches[1], dir.join("finger2.ply"))?;
    let desc = GripperDescriptor {
        name: model.name.clone(),
        finger_patches: ["finger1.ply".into(), "finger2.ply".into()],
        jaw_axis: model.jaw_axis.into(),
        approach_axis: model.approach_axis.into(),
        width_limits: [model.width_limits.0, model.width_limits.1],
        reference_width: model.reference_width,
        collision_volumes: model
            .collision_volumes
            .iter()
            .map(|v| VolumeDescriptor {
                body: v.body,
                center: v.center.into(),
                half_extents: v.half_extents.into(),
                rotation: mat3_to_rows(&v.rotation),
            })
            .collect(),
    };
    let path = dir.join("gripper.json");
    let json = serde_json::to_string_pretty(&desc).expect("descriptor serializes");
    std::fs::write(&path, json)?;
    Ok(path)
}

/// Builds the bundled example gripper: two concave biquadratic fingertip
/// patches (curvature radii 60 mm across the jaw, 100 mm along it, over a
/// 16 x 14 mm footprint), jaw along +x, approach along -z, width limits
/// [10, 30] mm at a 20 mm reference width.
///
/// The two curvature radii differ so that surface contact constrains all
/// six pose degrees of freedom plus the width: a patch with equal radii
/// (spherical cap) leaves rotation about the jaw axis as a zero-cost mode.
/// Patch centroids are calibrated to sit exactly at +/- reference_width/2
/// along the jaw axis, so the centroid gap measured along the jaw equals
/// the commanded width.
pub fn example_gripper() -> GripperModel {
    let r_y = 0.06; // curvature radius across the jaw
    let r_z = 0.10; // curvature radius along the finger
    let width = 0.016;
    let height = 0.014;
    let (ny, nz) = (21, 17);
    let d_ref = 0.02;

    let mut ys = Vec::with_capacity(ny);
    for i in 0..ny {
        ys.push(-width / 2.0 + width * i as f64 / (ny - 1) as f64);
    }
    let mut zs = Vec::with_capacity(nz);
    for i in 0..nz {
        zs.push(-height / 2.0 + height * i as f64 / (nz - 1) as f64);
    }
    let sag = |y: f64, z: f64| y * y / (2.0 * r_y) + z * z / (2.0 * r_z);
    let mean_sag = zs
        .iter()
        .flat_map(|&z| ys.iter().map(move |&y| sag(y, z)))
        .sum::<f64>()
        / (ny * nz) as f64;
    // Concave pocket: edges reach toward the object, the centroid sits at
    // exactly d_ref/2 along +x.
    let x0 = d_ref / 2.0 + mean_sag;

    let mut patch1 = Vec::with_capacity(ny * nz);
    let mut patch2 = Vec::with_capacity(ny * nz);
    for &z in &zs {
        for &y in &ys {
            let c = sag(y, z);
            let n1 = Vector3::new(-1.0, -y / r_y, -z / r_z).normalize();
            patch1.push(OrientedPoint::new(Vector3::new(x0 - c, y, z), n1));
            patch2.push(OrientedPoint::new(
                Vector3::new(-(x0 - c), y, z),
                Vector3::new(-n1.x, n1.y, n1.z),
            ));
        }
    }

    let tip_depth = 0.006; // material behind the patch
    let sag_max = sag(width / 2.0, height / 2.0);
    let tip_x_lo = x0 - sag_max - 0.0005;
    let tip_x_hi = x0 + tip_depth;
    let tip = |body: GripperBody, mirror: f64| {
        let cx = mirror * (tip_x_lo + tip_x_hi) / 2.0;
        CollisionVolume {
            body,
            center: Vector3::new(cx, 0.0, 0.0),
            half_extents: Vector3::new(
                (tip_x_hi - tip_x_lo) / 2.0,
                width / 2.0 + 0.001,
                height / 2.0 + 0.001,
            ),
            rotation: Matrix3::identity(),
        }
    };
    let body_len = 0.035;
    let body = |b: GripperBody, mirror: f64| {
        let cx = mirror * (x0 - 0.002 + x0 + tip_depth) / 2.0;
        CollisionVolume {
            body: b,
            center: Vector3::new(cx, 0.0, height / 2.0 + body_len / 2.0),
            half_extents: Vector3::new(
                (tip_depth + 0.002) / 2.0,
                width / 2.0 + 0.001,
                body_len / 2.0,
            ),
            rotation: Matrix3::identity(),
        }
    };
    let d_max = 0.03;
    let palm = CollisionVolume {
        body: GripperBody::Palm,
        center: Vector3::new(0.0, 0.0, height / 2.0 + body_len + 0.01),
        half_extents: Vector3::new(d_max / 2.0 + tip_depth + 0.002, 0.012, 0.01),
        rotation: Matrix3::identity(),
    };

    let model = GripperModel {
        name: "example-curved".into(),
        finger_patches: [
            SurfaceCloud::new(patch1, "finger1"),
            SurfaceCloud::new(patch2, "finger2"),
        ],
        jaw_axis: Vector3::x(),
        approach_axis: -Vector3::z(),
        width_limits: (0.01, d_max),
        reference_width: d_ref,
        collision_volumes: vec![
            tip(GripperBody::Finger1, 1.0),
            tip(GripperBody::Finger2, -1.0),
            body(GripperBody::Finger1, 1.0),
            body(GripperBody::Finger2, -1.0),
            palm,
        ],
    };
    debug_assert!(model.validate().is_ok());
    model
}
