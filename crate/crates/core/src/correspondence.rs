//! Correspondence matching between transformed finger samples and the
//! object surface: exact nearest neighbors, then outlier, back-face and
//! duplicate filtering.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{NnIndex, OrientedPoint, SurfaceCloud};

/// One retained (finger point, object point) match.
#[derive(Debug, Clone, Copy)]
pub struct CorrespondencePair {
    /// 0 for finger 1, 1 for finger 2.
    pub finger: usize,
    /// Finger sample in world frame at the current pose.
    pub finger_point: OrientedPoint,
    pub object_point: OrientedPoint,
    pub distance: f64,
}

/// The filtered pair set feeding one fitting solve.
#[derive(Debug, Clone, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<CorrespondencePair>,
    pub per_finger: [usize; 2],
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Matches every finger sample to its exact nearest object point, then
/// drops pairs that are
/// (a) farther than `tau_d`,
/// (b) normal-incompatible: a valid contact needs the world-frame finger
///     normal and the object normal to oppose within `tau_theta`, i.e.
///     `dot(n_f, n_o) <= -cos(tau_theta)`,
/// (c) duplicates of an object point, keeping only the closest finger
///     sample (ties broken by finger point coordinates so the result does
///     not depend on input order).
///
/// An empty result is a valid outcome meaning "no contact possible here".
pub fn match_correspondences(
    finger_samples: [&SurfaceCloud; 2],
    object_index: &NnIndex,
    object_cloud: &SurfaceCloud,
    tau_d: f64,
    tau_theta: f64,
) -> Result<CorrespondenceSet> {
    if !(tau_d > 0.0) {
        return Err(Error::invalid("tau_d must be positive"));
    }
    if !(tau_theta > 0.0 && tau_theta <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::invalid("tau_theta must lie in (0, pi/2]"));
    }
    let opposition = -tau_theta.cos();

    // Best candidate per object point index.
    let mut best: BTreeMap<usize, CorrespondencePair> = BTreeMap::new();
    for (finger, cloud) in finger_samples.iter().enumerate() {
        for fp in &cloud.points {
            let nn = object_index.nearest(&fp.position);
            if nn.distance > tau_d {
                continue;
            }
            let op = object_cloud.points[nn.index];
            if fp.normal.dot(&op.normal) > opposition {
                continue;
            }
            let candidate = CorrespondencePair {
                finger,
                finger_point: *fp,
                object_point: op,
                distance: nn.distance,
            };
            match best.get(&nn.index) {
                Some(cur) if !beats(&candidate, cur) => {}
                _ => {
                    best.insert(nn.index, candidate);
                }
            }
        }
    }

    let mut set = CorrespondenceSet::default();
    for (_, pair) in best {
        set.per_finger[pair.finger] += 1;
        set.pairs.push(pair);
    }
    Ok(set)
}

/// Order-independent duplicate rule: smaller distance wins; exact ties fall
/// back to lexicographic finger-point coordinates.
fn beats(a: &CorrespondencePair, b: &CorrespondencePair) -> bool {
    match a.distance.total_cmp(&b.distance) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            let pa = a.finger_point.position;
            let pb = b.finger_point.position;
            (pa.x, pa.y, pa.z) < (pb.x, pb.y, pb.z)
        }
    }
}
