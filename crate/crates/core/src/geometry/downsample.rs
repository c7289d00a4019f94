//! Voxel-grid downsampling with a resolution-independent leaf rule.
//!
//! The pyramid planner asks for the sample count to drop by `factor` at each
//! coarser level. Clouds here are 2-manifold samplings, so the occupied voxel
//! count scales with (extent / leaf)^2 and the leaf that removes `factor` of
//! the points is `r0 * sqrt(factor)`, with `r0` the median nearest-neighbor
//! spacing of the input.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::{build_nn_index, OrientedPoint, SurfaceCloud};
use crate::error::{Error, Result};

/// Median distance from each point to its nearest other point.
///
/// Returns 0.0 for clouds dominated by exact duplicates and for singleton
/// clouds.
pub fn median_nn_spacing(cloud: &SurfaceCloud) -> f64 {
    if cloud.len() < 2 {
        return 0.0;
    }
    let index = match build_nn_index(cloud) {
        Ok(i) => i,
        Err(_) => return 0.0,
    };
    let mut spacings: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| {
            index
                .k_nearest(&p.position, 2)
                .last()
                .map(|n| n.distance)
                .unwrap_or(0.0)
        })
        .collect();
    spacings.sort_by(f64::total_cmp);
    spacings[spacings.len() / 2]
}

/// Reduces the cloud to roughly `1/factor` of its points by voxel-grid
/// binning; each voxel contributes its centroid with the renormalized mean
/// of member normals. `factor == 1` returns the input unchanged.
pub fn downsample_cloud(cloud: &SurfaceCloud, factor: u32) -> Result<SurfaceCloud> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    if factor == 1 || cloud.len() <= 1 {
        return Ok(cloud.clone());
    }
    let spacing = median_nn_spacing(cloud);
    let leaf = spacing.max(1e-9) * (factor as f64).sqrt();
    Ok(voxel_filter(cloud, leaf))
}

/// Voxel-grid filter at an explicit leaf size, anchored at the cloud's
/// minimum corner. Output order follows voxel key order, which makes the
/// operation deterministic.
pub fn voxel_filter(cloud: &SurfaceCloud, leaf: f64) -> SurfaceCloud {
    let Some((lo, _)) = cloud.bounds() else {
        return cloud.clone();
    };
    struct Acc {
        pos_sum: Vector3<f64>,
        normal_sum: Vector3<f64>,
        members: Vec<usize>,
    }
    let mut voxels: BTreeMap<(i64, i64, i64), Acc> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let rel = (p.position - lo) / leaf;
        let key = (
            rel.x.floor() as i64,
            rel.y.floor() as i64,
            rel.z.floor() as i64,
        );
        let acc = voxels.entry(key).or_insert_with(|| Acc {
            pos_sum: Vector3::zeros(),
            normal_sum: Vector3::zeros(),
            members: Vec::new(),
        });
        acc.pos_sum += p.position;
        acc.normal_sum += p.normal;
        acc.members.push(i);
    }
    let points = voxels
        .values()
        .map(|acc| {
            let n = acc.members.len() as f64;
            let centroid = acc.pos_sum / n;
            let normal = if acc.normal_sum.norm() > 1e-9 {
                acc.normal_sum.normalize()
            } else {
                // Opposing normals cancelled out; fall back to the member
                // closest to the centroid.
                let closest = acc
                    .members
                    .iter()
                    .min_by(|&&a, &&b| {
                        let da = (cloud.points[a].position - centroid).norm_squared();
                        let db = (cloud.points[b].position - centroid).norm_squared();
                        da.total_cmp(&db)
                    })
                    .copied()
                    .unwrap();
                cloud.points[closest].normal
            };
            OrientedPoint::new(centroid, normal)
        })
        .collect();
    SurfaceCloud::new(points, cloud.frame_id.clone())
}
