//! Region lifting and region-seeded planning: image boxes become 3-D
//! search spheres that crop the scene cloud and seed the guided sampling
//! loop. External detectors plug in through the ROI JSON schema.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::render::DepthImage;
use super::CameraModel;
use crate::error::{Error, Result};
use crate::explorer::{baseline_plan, guided_loop, rank_entries, Budget, PlanContext, PlanResult};
use crate::geometry::SurfaceCloud;
use crate::seeds::derive_seed;

/// Image-plane box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn iou(&self, other: &PixelBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
        inter / (self.area() as f64 + other.area() as f64 - inter)
    }
}

/// Spherical 3-D search region derived from an image box.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchRegion {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// An image-plane proposal, optionally lifted to a 3-D region.
#[derive(Debug, Clone)]
pub struct RegionProposal {
    pub bbox: PixelBox,
    /// Normalized score in [0, 1].
    pub confidence: f64,
    pub region_3d: Option<SearchRegion>,
}

/// Lifts a box to a world-frame search sphere: the box center pixel is
/// back-projected at the median valid depth inside the box, and the radius
/// is the back-projected half-diagonal at that depth.
pub fn region_to_3d(
    bbox: &PixelBox,
    depth: &DepthImage,
    camera: &CameraModel,
) -> Result<SearchRegion> {
    let x1 = ((bbox.x + bbox.w) as usize).min(depth.width);
    let y1 = ((bbox.y + bbox.h) as usize).min(depth.height);
    let mut depths = Vec::new();
    for y in bbox.y as usize..y1 {
        for x in bbox.x as usize..x1 {
            if depth.is_valid(x, y) {
                depths.push(depth.depth(x, y));
            }
        }
    }
    if depths.is_empty() {
        return Err(Error::DegenerateRegion(format!(
            "box at ({}, {}) has no valid depth",
            bbox.x, bbox.y
        )));
    }
    depths.sort_by(f64::total_cmp);
    let median = depths[depths.len() / 2];
    let (cu, cv) = (
        bbox.x as f64 + bbox.w as f64 / 2.0,
        bbox.y as f64 + bbox.h as f64 / 2.0,
    );
    let center = camera.back_project(cu, cv, median);
    let half_diag = Vector3::new(
        bbox.w as f64 / 2.0 / camera.fx * median,
        bbox.h as f64 / 2.0 / camera.fy * median,
        0.0,
    )
    .norm();
    Ok(SearchRegion {
        center,
        radius: half_diag.max(1e-6),
    })
}

/// Fills `region_3d` for every proposal that covers valid depth; degenerate
/// boxes are left unlifted and logged.
pub fn lift_proposals(
    proposals: &mut [RegionProposal],
    depth: &DepthImage,
    camera: &CameraModel,
) {
    for proposal in proposals.iter_mut() {
        match region_to_3d(&proposal.bbox, depth, camera) {
            Ok(region) => proposal.region_3d = Some(region),
            Err(e) => {
                log::warn!("dropping proposal at ({}, {}): {e}", proposal.bbox.x, proposal.bbox.y);
                proposal.region_3d = None;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionPlanParams {
    /// k-means clusters inside each cropped region.
    pub clusters_per_region: usize,
    /// ISF runs allotted to one region before moving to the next.
    pub runs_per_region: usize,
}

impl Default for RegionPlanParams {
    fn default() -> Self {
        Self {
            clusters_per_region: 2,
            runs_per_region: 10,
        }
    }
}

impl RegionPlanParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters_per_region == 0 || self.runs_per_region == 0 {
            return Err(Error::invalid(
                "clusters_per_region and runs_per_region must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Region-seeded planning: regions are visited in descending confidence,
/// each cropping the scene to its search sphere and running the guided
/// sampling loop there until the shared budget runs out. Collision and
/// reachability checks always see the full scene. With no usable proposals
/// the call falls back to baseline planning (logged).
pub fn region_seeded_plan(
    ctx: &PlanContext,
    proposals: &[RegionProposal],
    params: &RegionPlanParams,
    budget: &Budget,
    rng_seed: u64,
) -> Result<PlanResult> {
    params.validate()?;
    if proposals.is_empty() {
        log::info!("no region proposals; falling back to baseline planning");
        return baseline_plan(ctx, budget, rng_seed);
    }
    let start = Instant::now();
    let deadline = budget
        .max_wall_time_s
        .map(|s| start + Duration::from_secs_f64(s));
    let index = ctx.scene.index()?;

    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .confidence
            .total_cmp(&proposals[a].confidence)
            .then(proposals[a].bbox.x.cmp(&proposals[b].bbox.x))
            .then(proposals[a].bbox.y.cmp(&proposals[b].bbox.y))
    });

    let mut entries = Vec::new();
    let mut records = Vec::new();
    let mut used_total = 0usize;
    for &pi in &order {
        if used_total >= budget.max_isf_runs {
            break;
        }
        if let Some(deadline) = deadline {
            if Instant::now() >= deadline {
                break;
            }
        }
        let Some(region) = proposals[pi].region_3d else {
            log::warn!("skipping unlifted proposal {pi}");
            continue;
        };
        let hits = index.within_radius(&region.center, region.radius);
        if hits.len() < params.clusters_per_region {
            log::warn!(
                "region {pi} crop holds {} points, fewer than {} clusters; skipping",
                hits.len(),
                params.clusters_per_region
            );
            continue;
        }
        let crop = SurfaceCloud::new(
            hits.iter().map(|h| ctx.scene.cloud.points[h.index]).collect(),
            "region-crop",
        );
        let sub_budget = params
            .runs_per_region
            .min(budget.max_isf_runs - used_total);
        let (mut sub_entries, mut sub_records, used) = guided_loop(
            ctx,
            &crop,
            params.clusters_per_region,
            sub_budget,
            deadline,
            derive_seed(rng_seed, "region", pi as u64),
            used_total,
        )?;
        entries.append(&mut sub_entries);
        records.append(&mut sub_records);
        used_total += used;
    }

    rank_entries(&mut entries);
    Ok(PlanResult {
        grasps: entries,
        isf_invocations: used_total,
        wall_time: start.elapsed(),
        cluster_records: records,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoiEntry {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    confidence: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSize {
    w: u32,
    h: u32,
}

/// ROI interchange schema (version 1):
/// `{ "version": 1, "image": {"w", "h"}, "camera_id": "...",
///    "rois": [{"x", "y", "w", "h", "confidence"}] }`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoiFile {
    #[serde(default = "default_version")]
    version: u32,
    image: ImageSize,
    #[serde(default)]
    camera_id: String,
    rois: Vec<RoiEntry>,
}

fn default_version() -> u32 {
    1
}

/// Reads externally produced region proposals. Boxes are clamped to the
/// image, confidences to [0, 1] (clamping logs a warning); unknown or
/// malformed fields are parse errors naming the field.
pub fn import_roi(path: impl AsRef<Path>) -> Result<Vec<RegionProposal>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let file: RoiFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(&name, e.to_string()))?;
    if file.version != 1 {
        return Err(Error::parse(
            &name,
            format!("unsupported ROI version {}", file.version),
        ));
    }
    let (img_w, img_h) = (file.image.w as f64, file.image.h as f64);
    let mut proposals = Vec::with_capacity(file.rois.len());
    for (i, roi) in file.rois.iter().enumerate() {
        if !(roi.x.is_finite() && roi.y.is_finite() && roi.w.is_finite() && roi.h.is_finite()) {
            return Err(Error::parse(&name, format!("roi {i} has non-finite box")));
        }
        let x0 = roi.x.clamp(0.0, img_w);
        let y0 = roi.y.clamp(0.0, img_h);
        let x1 = (roi.x + roi.w).clamp(0.0, img_w);
        let y1 = (roi.y + roi.h).clamp(0.0, img_h);
        if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
            log::warn!("roi {i} degenerates after clamping to the image; skipping");
            continue;
        }
        let mut confidence = roi.confidence;
        if !(0.0..=1.0).contains(&confidence) {
            log::warn!(
                "roi {i} confidence {} clamped into [0, 1]",
                roi.confidence
            );
            confidence = confidence.clamp(0.0, 1.0);
        }
        proposals.push(RegionProposal {
            bbox: PixelBox {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0) as u32,
                h: (y1 - y0) as u32,
            },
            confidence,
            region_3d: None,
        });
    }
    Ok(proposals)
}

/// Writes proposals in the ROI JSON schema (the inverse of [`import_roi`]).
pub fn export_roi(
    path: impl AsRef<Path>,
    image_size: (u32, u32),
    camera_id: &str,
    proposals: &[RegionProposal],
) -> Result<()> {
    let file = RoiFile {
        version: 1,
        image: ImageSize {
            w: image_size.0,
            h: image_size.1,
        },
        camera_id: camera_id.to_string(),
        rois: proposals
            .iter()
            .map(|p| RoiEntry {
                x: p.bbox.x as f64,
                y: p.bbox.y as f64,
                w: p.bbox.w as f64,
                h: p.bbox.h as f64,
                confidence: p.confidence,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("roi file serializes");
    std::fs::write(path.as_ref(), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::render_depth;
    use crate::scene::{Aabb, Scene, SupportPlane};
    use crate::synth;

    #[test]
    fn centered_box_back_projects_on_axis() {
        let camera = CameraModel::top_down(640, 480, 800.0, 0.5);
        let mut depth = DepthImage::new(640, 480);
        for y in 220..260 {
            for x in 300..340 {
                depth.write_min(x, y, 0.5);
            }
        }
        let bbox = PixelBox {
            x: 300,
            y: 220,
            w: 40,
            h: 40,
        };
        let region = region_to_3d(&bbox, &depth, &camera).unwrap();
        // Box center is the principal point, so the world center sits on
        // the optical axis at depth 0.5 below the camera at 0.5: z = 0.
        assert!((region.center - Vector3::zeros()).norm() < 1e-9);
    }

    #[test]
    fn radius_is_back_projected_half_diagonal() {
        let camera = CameraModel {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            pose: crate::geometry::RigidTransform::identity(),
        };
        let mut depth = DepthImage::new(640, 480);
        for y in 100..140 {
            for x in 100..140 {
                depth.write_min(x, y, 1.0);
            }
        }
        let bbox = PixelBox {
            x: 100,
            y: 100,
            w: 40,
            h: 40,
        };
        let region = region_to_3d(&bbox, &depth, &camera).unwrap();
        let expected = (20.0f64 * 2.0f64.sqrt()) / 400.0;
        assert!((region.radius - expected).abs() < 1e-9, "radius {}", region.radius);
    }

    #[test]
    fn empty_box_is_degenerate() {
        let camera = CameraModel::top_down(64, 48, 100.0, 1.0);
        let depth = DepthImage::new(64, 48);
        let bbox = PixelBox {
            x: 0,
            y: 0,
            w: 10,
            h: 10,
        };
        assert!(matches!(
            region_to_3d(&bbox, &depth, &camera),
            Err(Error::DegenerateRegion(_))
        ));
    }

    /// Ground truth geometry: the lifted center of a rendered object's
    /// proposal lies within the object's bounding sphere.
    #[test]
    fn lifted_center_lands_inside_object() {
        let cloud = synth::sphere_cloud(0.04, 4000);
        let scene = Scene::new(
            cloud,
            Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(1.0)),
            SupportPlane {
                point: Vector3::zeros(),
                normal: Vector3::z(),
            },
            Vec::new(),
        )
        .unwrap();
        let camera = CameraModel::top_down(640, 480, 800.0, 0.8);
        let depth = render_depth(&scene, &camera, 2).unwrap();
        let params = crate::perception::ProposerParams::default();
        let mut proposals = crate::perception::propose_regions(&depth, &params).unwrap();
        assert!(!proposals.is_empty());
        lift_proposals(&mut proposals, &depth, &camera);
        let region = proposals[0].region_3d.expect("lifted");
        // Object bounding sphere: center (0, 0, 0.04), radius 0.04.
        let object_center = Vector3::new(0.0, 0.0, 0.04);
        assert!(
            (region.center - object_center).norm() <= 0.04 + 1e-9,
            "center {:?}",
            region.center
        );
    }

    #[test]
    fn roi_round_trip_and_clamping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rois.json");
        std::fs::write(
            &path,
            r#"{"image": {"w": 640, "h": 480}, "camera_id": "cam0",
                "rois": [
                  {"x": 10, "y": 10, "w": 50, "h": 40, "confidence": 0.8},
                  {"x": 600, "y": 400, "w": 100, "h": 100, "confidence": 1.7}
                ]}"#,
        )
        .unwrap();
        let proposals = import_roi(&path).unwrap();
        assert_eq!(proposals.len(), 2);
        assert_eq!(
            proposals[0].bbox,
            PixelBox {
                x: 10,
                y: 10,
                w: 50,
                h: 40
            }
        );
        assert_eq!(proposals[1].confidence, 1.0);
        assert_eq!(proposals[1].bbox.w, 40); // clamped to the image edge
        assert_eq!(proposals[1].bbox.h, 80);

        let out = dir.path().join("echo.json");
        export_roi(&out, (640, 480), "cam0", &proposals).unwrap();
        let back = import_roi(&out).unwrap();
        assert_eq!(back.len(), proposals.len());
        assert_eq!(back[0].bbox, proposals[0].bbox);
    }

    #[test]
    fn malformed_field_names_fail_with_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"image": {"w": 640, "h": 480},
                "rois": [{"x": 1, "y": 1, "w": 5, "h": 5, "confidnce": 0.5}]}"#,
        )
        .unwrap();
        let err = import_roi(&path).unwrap_err();
        assert!(err.to_string().contains("confidnce"), "{err}");
    }
}
