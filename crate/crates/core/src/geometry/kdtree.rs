//! Exact k-d tree over 3-D positions.
//!
//! Correctness of correspondences dominates planner quality, so the index is
//! exact (no approximation) and the tests cross-check every query against a
//! linear scan.

use nalgebra::Vector3;

use super::SurfaceCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// A query result: index into the indexed point set plus Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced median-split k-d tree over a borrowed-into-owned point array.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

impl KdTree {
    pub fn build(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot index an empty point set"));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 2);
        let root = build_node(&points, &mut order, 0, points.len(), &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    /// Exact nearest neighbor of `query`.
    pub fn nearest(&self, query: &Vector3<f64>) -> Neighbor {
        let mut best = Neighbor {
            index: usize::MAX,
            distance: f64::INFINITY,
        };
        self.search(self.root, query, &mut best);
        best.distance = best.distance.sqrt();
        best
    }

    /// Exact k nearest neighbors, ascending by distance.
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = KnnAcc::new(k);
        self.search_k(self.root, query, &mut heap);
        heap.into_sorted()
    }

    /// All points within `radius` of `query`, ascending by distance.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.collect_radius(self.root, query, radius * radius, &mut out);
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        for n in &mut out {
            n.distance = n.distance.sqrt();
        }
        out
    }

    fn search(&self, node: usize, query: &Vector3<f64>, best: &mut Neighbor) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    if d2 < best.distance
                        || (d2 == best.distance && (i as usize) < best.index)
                    {
                        *best = Neighbor {
                            index: i as usize,
                            distance: d2,
                        };
                    }
                }
            }
            Node::Split {
                axis, value, left, right,
            } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, query, best);
                if delta * delta <= best.distance {
                    self.search(far, query, best);
                }
            }
        }
    }

    fn search_k(&self, node: usize, query: &Vector3<f64>, acc: &mut KnnAcc) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    acc.offer(i as usize, d2);
                }
            }
            Node::Split {
                axis, value, left, right,
            } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search_k(near, query, acc);
                if delta * delta <= acc.bound() {
                    self.search_k(far, query, acc);
                }
            }
        }
    }

    fn collect_radius(
        &self,
        node: usize,
        query: &Vector3<f64>,
        r2: f64,
        out: &mut Vec<Neighbor>,
    ) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    if d2 <= r2 {
                        out.push(Neighbor {
                            index: i as usize,
                            distance: d2,
                        });
                    }
                }
            }
            Node::Split {
                axis, value, left, right,
            } => {
                let delta = query[*axis] - value;
                if delta <= 0.0 {
                    self.collect_radius(*left, query, r2, out);
                    if delta * delta <= r2 {
                        self.collect_radius(*right, query, r2, out);
                    }
                } else {
                    self.collect_radius(*right, query, r2, out);
                    if delta * delta <= r2 {
                        self.collect_radius(*left, query, r2, out);
                    }
                }
            }
        }
    }
}

fn build_node(
    points: &[Vector3<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    // Split the widest axis at the median point.
    let slice = &order[start..end];
    let mut lo = points[slice[0] as usize];
    let mut hi = lo;
    for &i in slice {
        lo = lo.inf(&points[i as usize]);
        hi = hi.sup(&points[i as usize]);
    }
    let extent = hi - lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let value = points[order[start + mid] as usize][axis];
    let placeholder = nodes.len();
    nodes.push(Node::Leaf { start, end });
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes[placeholder] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    placeholder
}

/// Fixed-capacity accumulator for the k best squared distances. k stays
/// small here (normal estimation uses ~16) so insertion into a sorted
/// vector beats a heap.
struct KnnAcc {
    k: usize,
    items: Vec<Neighbor>,
}

impl KnnAcc {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items.last().unwrap().distance
        }
    }

    fn offer(&mut self, index: usize, d2: f64) {
        if self.items.len() == self.k && d2 >= self.bound() {
            return;
        }
        let pos = self
            .items
            .partition_point(|n| (n.distance, n.index) <= (d2, index));
        self.items.insert(pos, Neighbor { index, distance: d2 });
        self.items.truncate(self.k);
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        let mut items = self.items;
        for n in &mut items {
            n.distance = n.distance.sqrt();
        }
        items
    }
}

/// Exact nearest-neighbor index bound to one [`SurfaceCloud`].
#[derive(Debug, Clone)]
pub struct NnIndex {
    tree: KdTree,
}

impl NnIndex {
    pub fn size(&self) -> usize {
        self.tree.len()
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Neighbor {
        self.tree.nearest(query)
    }

    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        self.tree.k_nearest(query, k)
    }

    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<Neighbor> {
        self.tree.within_radius(query, radius)
    }
}

/// Builds an exact 1-NN index over the cloud positions.
pub fn build_nn_index(cloud: &SurfaceCloud) -> Result<NnIndex> {
    if cloud.is_empty() {
        return Err(Error::invalid(format!(
            "cannot build NN index over empty cloud '{}'",
            cloud.frame_id
        )));
    }
    let tree = KdTree::build(cloud.positions().copied().collect())?;
    Ok(NnIndex { tree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> SurfaceCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                OrientedPoint::new(
                    Vector3::new(rng.random(), rng.random(), rng.random()),
                    Vector3::z(),
                )
            })
            .collect();
        SurfaceCloud::new(points, "test")
    }

    fn linear_scan(cloud: &SurfaceCloud, q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, p) in cloud.points.iter().enumerate() {
            let d = (p.position - q).norm();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert!(build_nn_index(&SurfaceCloud::empty("e")).is_err());
    }

    #[test]
    fn single_point_always_wins() {
        let cloud = SurfaceCloud::new(
            vec![OrientedPoint::new(Vector3::new(1.0, 2.0, 3.0), Vector3::z())],
            "one",
        );
        let index = build_nn_index(&cloud).unwrap();
        let n = index.nearest(&Vector3::new(-5.0, 0.0, 9.0));
        assert_eq!(n.index, 0);
    }

    #[test]
    fn two_point_distance_comparison() {
        let cloud = SurfaceCloud::new(
            vec![
                OrientedPoint::new(Vector3::zeros(), Vector3::z()),
                OrientedPoint::new(Vector3::new(1.0, 0.0, 0.0), Vector3::z()),
            ],
            "two",
        );
        let index = build_nn_index(&cloud).unwrap();
        assert_eq!(index.nearest(&Vector3::new(0.2, 0.0, 0.0)).index, 0);
    }

    #[test]
    fn matches_linear_scan_on_random_queries() {
        let cloud = random_cloud(1000, 7);
        let index = build_nn_index(&cloud).unwrap();
        assert_eq!(index.size(), 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            let got = index.nearest(&q);
            let (want_idx, want_dist) = linear_scan(&cloud, &q);
            assert_eq!(got.index, want_idx);
            assert!((got.distance - want_dist).abs() < 1e-12);
        }
    }

    #[test]
    fn k_nearest_matches_sorted_scan() {
        let cloud = random_cloud(300, 11);
        let index = build_nn_index(&cloud).unwrap();
        let q = Vector3::new(0.4, 0.4, 0.4);
        let got = index.k_nearest(&q, 9);
        let mut all: Vec<(usize, f64)> = cloud
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p.position - q).norm()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (g, w) in got.iter().zip(all.iter()) {
            assert_eq!(g.index, w.0);
        }
    }

    #[test]
    fn radius_query_matches_filtered_scan() {
        let cloud = random_cloud(500, 21);
        let index = build_nn_index(&cloud).unwrap();
        let q = Vector3::new(0.5, 0.5, 0.5);
        let r = 0.25;
        let got: Vec<usize> = index.within_radius(&q, r).iter().map(|n| n.index).collect();
        let mut want: Vec<(usize, f64)> = cloud
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d = (p.position - q).norm();
                (d <= r).then_some((i, d))
            })
            .collect();
        want.sort_by(|a, b| a.1.total_cmp(&b.1));
        assert_eq!(got, want.iter().map(|w| w.0).collect::<Vec<_>>());
    }
}
