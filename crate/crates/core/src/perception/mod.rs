//! Depth-image pipeline: render the scene from a virtual camera, propose
//! regions of interest, lift them to 3-D search regions and run
//! region-seeded planning. The proposer is a heuristic stand-in for an
//! externally trained detector; external ROIs can be imported through the
//! same JSON schema the proposer exports.

mod proposer;
mod region;
mod render;

pub use proposer::{propose_regions, ProposerParams};
pub use region::{
    export_roi, import_roi, lift_proposals, region_seeded_plan, region_to_3d, PixelBox,
    RegionPlanParams, RegionProposal, SearchRegion,
};
pub use render::{
    export_colormap, export_depth_mm, export_intensity, jet_color, render_depth, DepthImage,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Pinhole camera with a world-to-camera rigid transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera transform: `p_cam = R p_world + t`.
    pub pose: RigidTransform,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::invalid("principal point outside the image"));
        }
        self.pose.validate()
    }

    /// Projects a world point; `None` when it lies on or behind the camera
    /// plane. Returns pixel coordinates and camera-frame depth.
    pub fn project(&self, p_world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p = self.pose.apply(p_world);
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        ))
    }

    /// Back-projects pixel `(u, v)` at camera depth `z` into the world
    /// frame.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let cam = Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z);
        self.pose.inverse().apply(&cam)
    }

    /// Straight-down camera at `height` meters above the world origin:
    /// image +u tracks world +x, +v tracks world -y.
    pub fn top_down(width: usize, height: usize, focal: f64, camera_height: f64) -> Self {
        let rotation = nalgebra::Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            pose: RigidTransform::new(rotation, Vector3::new(0.0, 0.0, camera_height)),
        }
    }
}
