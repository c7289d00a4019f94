//! Heuristic region proposer: multi-scale sliding windows scored by
//! closeness prominence, validity and a curvature band, pruned by greedy
//! non-maximum suppression.

use serde::{Deserialize, Serialize};

use super::region::{PixelBox, RegionProposal};
use super::render::DepthImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposerParams {
    /// Square window sizes in pixels; stride is half the scale.
    pub window_scales: Vec<u32>,
    pub top_n: usize,
    /// Greedy NMS IoU threshold.
    pub nms_overlap: f64,
    pub w_prominence: f64,
    pub w_validity: f64,
    pub w_curvature: f64,
    /// Acceptable |depth Laplacian| band in meters: smooth graspable relief
    /// rather than flat void or depth cliffs.
    pub curvature_band: (f64, f64),
    /// Proposals below this confidence (after normalization) are dropped.
    pub min_confidence: f64,
    /// Splat radius used when rendering for proposals.
    pub splat_radius_px: u32,
}

impl Default for ProposerParams {
    fn default() -> Self {
        Self {
            window_scales: vec![64, 96, 128],
            top_n: 5,
            nms_overlap: 0.3,
            w_prominence: 0.5,
            w_validity: 0.2,
            w_curvature: 0.3,
            curvature_band: (0.0, 0.005),
            min_confidence: 0.0,
            splat_radius_px: 2,
        }
    }
}

impl ProposerParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_scales.is_empty() || self.window_scales.iter().any(|&s| s < 2) {
            return Err(Error::invalid("window_scales must be >= 2 px"));
        }
        if self.top_n == 0 {
            return Err(Error::invalid("top_n must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.nms_overlap) {
            return Err(Error::invalid("nms_overlap must lie in [0, 1]"));
        }
        if self.curvature_band.0 > self.curvature_band.1 {
            return Err(Error::invalid("curvature_band must be ordered"));
        }
        Ok(())
    }
}

/// Summed-area table over an f64 grid for O(1) window sums.
struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn build(width: usize, height: usize, values: impl Fn(usize, usize) -> f64) -> Self {
        let mut sums = vec![0.0; (width + 1) * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += values(x, y);
                sums[(y + 1) * (width + 1) + (x + 1)] = sums[y * (width + 1) + (x + 1)] + row;
            }
        }
        Self { width, sums }
    }

    /// Sum over `[x0, x1) x [y0, y1)`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let w = self.width + 1;
        self.sums[y1 * w + x1] + self.sums[y0 * w + x0]
            - self.sums[y0 * w + x1]
            - self.sums[y1 * w + x0]
    }
}

/// Slides windows at every scale, scores them and returns at most `top_n`
/// NMS-pruned proposals sorted by descending confidence (ties by lower x,
/// then y). Confidences are scores normalized by the maximum score. An
/// all-invalid image yields no proposals.
pub fn propose_regions(depth: &DepthImage, params: &ProposerParams) -> Result<Vec<RegionProposal>> {
    params.validate()?;
    let (width, height) = (depth.width, depth.height);
    let closeness = depth.closeness_map();
    if closeness.iter().all(|c| c.is_none()) {
        return Ok(Vec::new());
    }

    let close_int = Integral::build(width, height, |x, y| {
        closeness[y * width + x].unwrap_or(0.0)
    });
    let valid_int = Integral::build(width, height, |x, y| {
        if closeness[y * width + x].is_some() {
            1.0
        } else {
            0.0
        }
    });
    let (band_lo, band_hi) = params.curvature_band;
    let band_int = Integral::build(width, height, |x, y| {
        if x == 0 || y == 0 || x + 1 >= width || y + 1 >= height {
            return 0.0;
        }
        let ok = depth.is_valid(x, y)
            && depth.is_valid(x - 1, y)
            && depth.is_valid(x + 1, y)
            && depth.is_valid(x, y - 1)
            && depth.is_valid(x, y + 1);
        if !ok {
            return 0.0;
        }
        let lap = depth.depth(x + 1, y) + depth.depth(x - 1, y) + depth.depth(x, y + 1)
            + depth.depth(x, y - 1)
            - 4.0 * depth.depth(x, y);
        if (band_lo..=band_hi).contains(&lap.abs()) {
            1.0
        } else {
            0.0
        }
    });

    let mut candidates: Vec<(f64, PixelBox)> = Vec::new();
    for &scale in &params.window_scales {
        let scale = scale as usize;
        if scale > width || scale > height {
            continue;
        }
        let stride = (scale / 2).max(1);
        let ring = scale / 2;
        let mut y = 0;
        while y + scale <= height {
            let mut x = 0;
            while x + scale <= width {
                let (x1, y1) = (x + scale, y + scale);
                let inner_valid = valid_int.sum(x, y, x1, y1);
                if inner_valid > 0.0 {
                    let inner_close = close_int.sum(x, y, x1, y1) / inner_valid;
                    let rx0 = x.saturating_sub(ring);
                    let ry0 = y.saturating_sub(ring);
                    let rx1 = (x1 + ring).min(width);
                    let ry1 = (y1 + ring).min(height);
                    let ring_valid = valid_int.sum(rx0, ry0, rx1, ry1) - inner_valid;
                    let ring_close = if ring_valid > 0.0 {
                        (close_int.sum(rx0, ry0, rx1, ry1) - close_int.sum(x, y, x1, y1))
                            / ring_valid
                    } else {
                        0.0
                    };
                    let prominence = (inner_close - ring_close).max(0.0);
                    let area = (scale * scale) as f64;
                    let validity = inner_valid / area;
                    let curvature = band_int.sum(x, y, x1, y1) / area;
                    let score = params.w_prominence * prominence
                        + params.w_validity * validity
                        + params.w_curvature * curvature;
                    if score > 0.0 {
                        candidates.push((
                            score,
                            PixelBox {
                                x: x as u32,
                                y: y as u32,
                                w: scale as u32,
                                h: scale as u32,
                            },
                        ));
                    }
                }
                x += stride;
            }
            y += stride;
        }
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.x.cmp(&b.1.x))
            .then(a.1.y.cmp(&b.1.y))
    });
    let max_score = candidates[0].0;

    let mut kept: Vec<(f64, PixelBox)> = Vec::new();
    for (score, bbox) in candidates {
        if kept.len() >= params.top_n {
            break;
        }
        if kept.iter().all(|(_, k)| k.iou(&bbox) <= params.nms_overlap) {
            kept.push((score, bbox));
        }
    }

    Ok(kept
        .into_iter()
        .map(|(score, bbox)| RegionProposal {
            bbox,
            confidence: score / max_score,
            region_3d: None,
        })
        .filter(|p| p.confidence >= params.min_confidence)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{OrientedPoint, SurfaceCloud};
    use crate::perception::{render_depth, CameraModel};
    use crate::scene::{Aabb, Scene, SupportPlane};
    use nalgebra::Vector3;

    fn make_scene(points: Vec<OrientedPoint>) -> Scene {
        Scene::new(
            SurfaceCloud::new(points, "scene"),
            Aabb::new(Vector3::repeat(-2.0), Vector3::repeat(2.0)),
            SupportPlane {
                point: Vector3::zeros(),
                normal: Vector3::z(),
            },
            Vec::new(),
        )
        .unwrap()
    }

    fn plane_with_boxes(centers: &[(f64, f64)]) -> Scene {
        let mut points = Vec::new();
        for i in -80..=80 {
            for j in -80..=80 {
                points.push(OrientedPoint::new(
                    Vector3::new(i as f64 * 0.004, j as f64 * 0.004, 0.0),
                    Vector3::z(),
                ));
            }
        }
        for &(cx, cy) in centers {
            for i in -12..=12 {
                for j in -12..=12 {
                    points.push(OrientedPoint::new(
                        Vector3::new(cx + i as f64 * 0.004, cy + j as f64 * 0.004, 0.12),
                        Vector3::z(),
                    ));
                }
            }
        }
        make_scene(points)
    }

    #[test]
    fn empty_image_gives_no_proposals() {
        let depth = DepthImage::new(640, 480);
        let out = propose_regions(&depth, &ProposerParams::default()).unwrap();
        assert!(out.is_empty());
    }

    /// A single raised box on a flat far plane: the top proposal must
    /// overlap the object's projected bounding box with IoU >= 0.3.
    #[test]
    fn raised_box_wins_top_proposal() {
        let scene = plane_with_boxes(&[(0.0, 0.0)]);
        let camera = CameraModel::top_down(640, 480, 800.0, 1.0);
        let depth = render_depth(&scene, &camera, 2).unwrap();
        let params = ProposerParams {
            window_scales: vec![64, 96],
            ..ProposerParams::default()
        };
        let proposals = propose_regions(&depth, &params).unwrap();
        assert!(!proposals.is_empty());
        // Projected bounding box of the raised object (z = 0.12, camera
        // depth 0.88): half extent 0.048 m * 800 / 0.88 = ~43.6 px.
        let half = 0.048 * 800.0 / 0.88;
        let object = PixelBox {
            x: (320.0 - half) as u32,
            y: (240.0 - half) as u32,
            w: (2.0 * half) as u32,
            h: (2.0 * half) as u32,
        };
        let top = &proposals[0];
        assert!(
            top.bbox.iou(&object) >= 0.3,
            "top box {:?} misses object {:?}",
            top.bbox,
            object
        );
        assert_eq!(top.confidence, 1.0);
    }

    /// Two identical separated objects yield two disjoint proposals.
    #[test]
    fn two_objects_give_two_disjoint_proposals() {
        let scene = plane_with_boxes(&[(-0.14, 0.0), (0.14, 0.0)]);
        let camera = CameraModel::top_down(640, 480, 800.0, 1.0);
        let depth = render_depth(&scene, &camera, 2).unwrap();
        let params = ProposerParams {
            window_scales: vec![96],
            top_n: 2,
            nms_overlap: 0.3,
            ..ProposerParams::default()
        };
        let proposals = propose_regions(&depth, &params).unwrap();
        assert_eq!(proposals.len(), 2);
        assert!(proposals[0].bbox.iou(&proposals[1].bbox) <= 0.3);
        // One proposal on each side of the image.
        let mut xs: Vec<u32> = proposals.iter().map(|p| p.bbox.x + p.bbox.w / 2).collect();
        xs.sort_unstable();
        assert!(xs[0] < 320 && xs[1] > 320);
    }

    /// NMS invariant: pairwise IoU of returned boxes never exceeds the
    /// overlap threshold.
    #[test]
    fn nms_bounds_pairwise_overlap() {
        let scene = plane_with_boxes(&[(0.0, 0.0), (0.1, 0.05), (-0.12, -0.08)]);
        let camera = CameraModel::top_down(640, 480, 800.0, 1.0);
        let depth = render_depth(&scene, &camera, 2).unwrap();
        let params = ProposerParams {
            top_n: 8,
            nms_overlap: 0.25,
            ..ProposerParams::default()
        };
        let proposals = propose_regions(&depth, &params).unwrap();
        for i in 0..proposals.len() {
            for j in i + 1..proposals.len() {
                assert!(proposals[i].bbox.iou(&proposals[j].bbox) <= 0.25 + 1e-12);
            }
        }
    }
}
