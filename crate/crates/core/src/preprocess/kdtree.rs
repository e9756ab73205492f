//! 2D k-d tree over the (x, y) projections of a point cloud.
//!
//! Queries return the exact nearest neighbor under Euclidean (x, y) distance;
//! exact ties are broken toward the lowest point index, matching a linear
//! scan with the same rule.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

struct Node {
    point: u32,
    split: f64,
    axis: u8,
    left: i32,
    right: i32,
}

/// Balanced binary spatial partition over (x, y); contains every input point
/// exactly once.
pub struct KdTree2 {
    nodes: Vec<Node>,
    xy: Vec<(f64, f64)>,
    root: i32,
}

impl KdTree2 {
    pub fn build(cloud: &PointCloud) -> Self {
        let xy: Vec<(f64, f64)> = cloud.points.iter().map(|p| (p.x, p.y)).collect();
        let mut idxs: Vec<u32> = (0..xy.len() as u32).collect();
        let mut nodes = Vec::with_capacity(xy.len());
        let root = Self::build_rec(&xy, &mut idxs, 0, &mut nodes);
        Self { nodes, xy, root }
    }

    fn build_rec(xy: &[(f64, f64)], idxs: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> i32 {
        if idxs.is_empty() {
            return -1;
        }
        let axis = (depth % 2) as u8;
        let coord = |i: u32| if axis == 0 { xy[i as usize].0 } else { xy[i as usize].1 };
        // Sort by (coordinate, index) so the build is order-independent.
        idxs.sort_unstable_by(|&a, &b| {
            coord(a).partial_cmp(&coord(b)).unwrap().then(a.cmp(&b))
        });
        let mid = idxs.len() / 2;
        let point = idxs[mid];
        let split = coord(point);
        let id = nodes.len() as i32;
        nodes.push(Node { point, split, axis, left: -1, right: -1 });
        let (lo, rest) = idxs.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(xy, lo, depth + 1, nodes);
        let right = Self::build_rec(xy, hi, depth + 1, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    /// Exact nearest neighbor of `(qx, qy)`: returns (point index, distance).
    pub fn nearest(&self, qx: f64, qy: f64) -> Result<(usize, f64)> {
        if self.is_empty() {
            return Err(Error::EmptyInput("nearest neighbor of an empty tree".into()));
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.search(self.root, qx, qy, &mut best);
        Ok((best.1 as usize, best.0.sqrt()))
    }

    fn search(&self, node: i32, qx: f64, qy: f64, best: &mut (f64, u32)) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let (px, py) = self.xy[n.point as usize];
        let d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy);
        if d2 < best.0 || (d2 == best.0 && n.point < best.1) {
            *best = (d2, n.point);
        }
        let qc = if n.axis == 0 { qx } else { qy };
        let (near, far) = if qc < n.split { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, qx, qy, best);
        // The far side may still hold an equally close, lower-index point.
        let plane = (qc - n.split) * (qc - n.split);
        if plane <= best.0 {
            self.search(far, qx, qy, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(cloud: &PointCloud, qx: f64, qy: f64) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in cloud.points.iter().enumerate() {
            let d2 = p.dist2_xy(qx, qy);
            if d2 < best.0 || (d2 == best.0 && i < best.1) {
                best = (d2, i);
            }
        }
        (best.1, best.0.sqrt())
    }

    #[test]
    fn single_point_cloud() {
        let cloud = PointCloud::unlabeled(vec![Point3::new(3.0, 4.0, 1.0)]);
        let tree = KdTree2::build(&cloud);
        let (i, d) = tree.nearest(0.0, 0.0).unwrap();
        assert_eq!(i, 0);
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_tree_errors() {
        let tree = KdTree2::build(&PointCloud::unlabeled(vec![]));
        assert!(tree.nearest(0.0, 0.0).is_err());
    }

    #[test]
    fn equidistant_tie_prefers_lower_index() {
        // Two points symmetric about the query.
        let cloud = PointCloud::unlabeled(vec![
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(-2.0, 0.0, 0.0),
        ]);
        let tree = KdTree2::build(&cloud);
        assert_eq!(tree.nearest(0.0, 0.0).unwrap().0, 0);
        // And with the insertion order flipped.
        let cloud = PointCloud::unlabeled(vec![
            Point3::new(-2.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ]);
        let tree = KdTree2::build(&cloud);
        assert_eq!(tree.nearest(0.0, 0.0).unwrap().0, 0);
    }

    #[test]
    fn matches_linear_scan_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let pts: Vec<Point3> = (0..500)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-50.0..50.0),
                        rng.random_range(-50.0..50.0),
                        rng.random_range(0.0..10.0),
                    )
                })
                .collect();
            let cloud = PointCloud::unlabeled(pts);
            let tree = KdTree2::build(&cloud);
            for _ in 0..500 {
                let qx = rng.random_range(-60.0..60.0);
                let qy = rng.random_range(-60.0..60.0);
                let got = tree.nearest(qx, qy).unwrap();
                let want = linear_scan(&cloud, qx, qy);
                assert_eq!(got.0, want.0);
                assert!((got.1 - want.1).abs() < 1e-12);
            }
        }
    }
}
