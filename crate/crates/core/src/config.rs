//! Planner configuration: every tunable in one validated, hashable
//! document. Unknown keys are rejected; omitted sections fall back to the
//! defaults (jaw limits [0.01, 0.03] m, d_0 = 0.02 m, L = 4, I_0 = 200,
//! eps_0 = 0.008, K = 6).

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explorer::{Budget, ExplorerParams};
use crate::geometry::RigidTransform;
use crate::isf::IsfParams;
use crate::perception::{CameraModel, ProposerParams, RegionPlanParams};
use crate::scene::{CollisionParams, ConeReachability};

/// Camera section with a row-major world-to-camera rotation for easy hand
/// editing. Defaults to a straight-down view from 0.8 m.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 800.0,
            fy: 800.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            rotation: [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0],
            translation: [0.0, 0.0, 0.8],
        }
    }
}

impl CameraConfig {
    pub fn to_model(&self) -> Result<CameraModel> {
        let r = &self.rotation;
        let model = CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            pose: RigidTransform::new(
                Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]),
                Vector3::from(self.translation),
            ),
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub rng_seed: u64,
    /// Fitting error below which a grasp counts as a good surface fit.
    pub fit_threshold: f64,
    pub isf: IsfParams,
    pub explorer: ExplorerParams,
    pub collision: CollisionParams,
    pub reachability: ConeReachability,
    pub camera: CameraConfig,
    pub proposer: ProposerParams,
    pub region: RegionPlanParams,
    pub budget: Budget,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fit_threshold > 0.0) {
            return Err(Error::invalid("fit_threshold must be > 0"));
        }
        self.isf.validate()?;
        self.explorer.validate()?;
        self.collision.validate()?;
        self.proposer.validate()?;
        self.region.validate()?;
        self.camera.to_model().map(|_| ())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let config: PlannerConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path.as_ref(), json)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization; embedded in every
    /// output file for provenance.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            fit_threshold: 1e-6,
            isf: IsfParams::default(),
            explorer: ExplorerParams::default(),
            collision: CollisionParams::default(),
            reachability: ConeReachability::default(),
            camera: CameraConfig::default(),
            proposer: ProposerParams::default(),
            region: RegionPlanParams::default(),
            budget: Budget::default(),
        }
    }
}

impl PlannerConfig {
    pub fn standard() -> Self {
        Self::default()
    }
}
