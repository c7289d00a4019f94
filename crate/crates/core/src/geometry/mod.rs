//! Point-cloud containers, rigid transforms and the jaw-aware point
//! transform shared by every planner stage.
//!
//! Conventions: positions are meters, normals are unit length, rotation
//! matrices are right-handed (det +1). A [`SurfaceCloud`] is an oriented
//! point set sampled from either an object surface or a fingertip patch;
//! normals point out of the material they belong to.

mod downsample;
mod kdtree;
mod normals;

pub use downsample::{downsample_cloud, median_nn_spacing};
pub use kdtree::{build_nn_index, KdTree, Neighbor, NnIndex};
pub use normals::estimate_normals;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A surface sample: position plus an outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl OrientedPoint {
    pub fn new(position: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self { position, normal }
    }

    /// True when all coordinates are finite and the normal is unit length
    /// within 1e-6.
    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.normal.iter().all(|x| x.is_finite())
            && (self.normal.norm() - 1.0).abs() <= 1e-6
    }
}

/// An oriented point set with a frame label.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCloud {
    pub points: Vec<OrientedPoint>,
    pub frame_id: String,
}

impl SurfaceCloud {
    pub fn new(points: Vec<OrientedPoint>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn empty(frame_id: impl Into<String>) -> Self {
        Self::new(Vec::new(), frame_id)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points.iter().map(|p| &p.position)
    }

    /// Mean of all positions. Zero vector for an empty cloud.
    pub fn centroid(&self) -> Vector3<f64> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        let sum: Vector3<f64> = self.points.iter().map(|p| p.position).sum();
        sum / self.points.len() as f64
    }

    /// Rejects NaN/infinite coordinates and non-unit normals.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_valid() {
                return Err(Error::invalid(format!(
                    "cloud '{}': point {} has non-finite coordinates or non-unit normal",
                    self.frame_id, i
                )));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?.position;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            lo = lo.inf(&p.position);
            hi = hi.sup(&p.position);
        }
        Some((lo, hi))
    }
}

/// A proper rigid transform: `p' = R p + t` with `R` orthonormal, det +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &OrientedPoint) -> OrientedPoint {
        OrientedPoint::new(self.apply(&p.position), self.rotation * p.normal)
    }

    pub fn apply_cloud(&self, cloud: &SurfaceCloud) -> SurfaceCloud {
        SurfaceCloud::new(
            cloud.points.iter().map(|p| self.apply_point(p)).collect(),
            cloud.frame_id.clone(),
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// Composition: `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Orthonormality defect `max|RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .iter()
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|x| x.is_finite())
        {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        if self.orthonormality_error() > 1e-9 {
            return Err(Error::invalid("rotation is not orthonormal within 1e-9"));
        }
        if self.rotation.determinant() < 0.0 {
            return Err(Error::invalid("rotation has negative determinant"));
        }
        Ok(())
    }

    /// Snaps the rotation back onto SO(3) through the unit-quaternion
    /// round-trip. Keeps long iterative pipelines from accumulating drift.
    pub fn reorthonormalize(&mut self) {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        self.rotation = q.to_rotation_matrix().into_inner();
    }
}

/// Moves one finger point through the jaw kinematics and the rigid palm
/// transform.
///
/// The finger first slides `sign_j * delta_d / 2` along the jaw axis in its
/// current frame (the two fingers carry opposite signs, so a displacement of
/// `delta_d` changes the total jaw width by `delta_d`), then the whole
/// gripper moves by `(R, t)`:
///
/// `position' = R (position + sign_j (delta_d/2) jaw_axis) + t`,
/// `normal' = R normal`.
pub fn apply_grasp_transform(
    p: &OrientedPoint,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    delta_d: f64,
    jaw_axis: &Vector3<f64>,
    sign_j: f64,
) -> OrientedPoint {
    let shifted = p.position + jaw_axis * (sign_j * delta_d * 0.5);
    OrientedPoint::new(rotation * shifted + translation, rotation * p.normal)
}
