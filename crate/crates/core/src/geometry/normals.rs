//! PCA normal estimation with viewpoint sign disambiguation.

use nalgebra::{Matrix3, Vector3};

use super::{KdTree, OrientedPoint, SurfaceCloud};
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a neighborhood counts as
/// rank-deficient (collinear or coincident points).
const RANK_TOL: f64 = 1e-9;

/// Estimates a normal per position as the smallest-eigenvalue eigenvector of
/// the covariance over the k-neighborhood, sign-flipped to face `viewpoint`.
///
/// Points whose neighborhood covariance has rank < 2 are dropped from the
/// output rather than given a fabricated normal.
pub fn estimate_normals(
    positions: &[Vector3<f64>],
    k: usize,
    viewpoint: &Vector3<f64>,
) -> Result<SurfaceCloud> {
    if k < 3 {
        return Err(Error::invalid("normal estimation needs k >= 3"));
    }
    if positions.len() < k + 1 {
        return Err(Error::invalid(format!(
            "normal estimation needs at least k+1 = {} points, got {}",
            k + 1,
            positions.len()
        )));
    }
    let tree = KdTree::build(positions.to_vec())?;
    let mut points = Vec::with_capacity(positions.len());
    for p in positions {
        // k neighbors plus the query point itself.
        let hood = tree.k_nearest(p, k + 1);
        let n = hood.len() as f64;
        let mean: Vector3<f64> = hood
            .iter()
            .map(|nb| tree.point(nb.index))
            .sum::<Vector3<f64>>()
            / n;
        let mut cov = Matrix3::zeros();
        for nb in &hood {
            let d = tree.point(nb.index) - mean;
            cov += d * d.transpose();
        }
        cov /= n;
        let eig = cov.symmetric_eigen();
        // Ascending order of eigenvalues by index lookup.
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (lo, mid, hi) = (
            eig.eigenvalues[idx[0]].max(0.0),
            eig.eigenvalues[idx[1]].max(0.0),
            eig.eigenvalues[idx[2]].max(0.0),
        );
        let _ = lo;
        // Rank < 2: no plane is defined by this neighborhood.
        if hi <= 0.0 || mid <= RANK_TOL * hi {
            continue;
        }
        let mut normal: Vector3<f64> = eig.eigenvectors.column(idx[0]).into();
        normal.normalize_mut();
        if normal.dot(&(viewpoint - p)) < 0.0 {
            normal = -normal;
        }
        points.push(OrientedPoint::new(*p, normal));
    }
    Ok(SurfaceCloud::new(points, "estimated"))
}
