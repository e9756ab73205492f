//! Density-based clustering for sparse-noise removal.
//!
//! Core points have at least `min_pts` neighbors (the point itself included)
//! within `eps` in 3D Euclidean distance. Clusters are the connected
//! components of the core points; non-core points within `eps` of a core
//! attach to the cluster of their nearest core (ties toward the lowest core
//! index), everything else is noise. The partition is therefore independent
//! of the input order, and cluster ids are assigned by ascending lowest
//! contained point index.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Clustering and cluster-selection thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    /// Maximal distance of neighboring points (mm).
    pub eps: f64,
    /// Minimum neighborhood size (self included) for a core point.
    pub min_pts: usize,
    /// Sub-clusters below this size are dropped as noise.
    pub min_subcluster: usize,
    /// Minimum total size of the kept object cluster; below this the scan is
    /// rejected as faulty.
    pub min_total: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 4.0, min_pts: 4, min_subcluster: 500, min_total: 6000 }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts < 1 {
            return Err(Error::InvalidArgument("min_pts must be at least 1".into()));
        }
        if self.min_subcluster > self.min_total {
            return Err(Error::InvalidArgument(format!(
                "min_subcluster {} exceeds min_total {}",
                self.min_subcluster, self.min_total
            )));
        }
        Ok(())
    }
}

/// Uniform grid hash with cell size `eps` for 3D neighbor queries.
struct CellGrid {
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    inv_eps: f64,
}

impl CellGrid {
    fn build(cloud: &PointCloud, eps: f64) -> Self {
        let inv_eps = 1.0 / eps;
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let key = (
                (p.x * inv_eps).floor() as i64,
                (p.y * inv_eps).floor() as i64,
                (p.z * inv_eps).floor() as i64,
            );
            cells.entry(key).or_default().push(i as u32);
        }
        Self { cells, inv_eps }
    }

    /// Indices within `eps` of point `i` (including `i`), in ascending order.
    fn neighbors(&self, cloud: &PointCloud, i: usize, eps2: f64, out: &mut Vec<u32>) {
        out.clear();
        let p = cloud.points[i];
        let cx = (p.x * self.inv_eps).floor() as i64;
        let cy = (p.y * self.inv_eps).floor() as i64;
        let cz = (p.z * self.inv_eps).floor() as i64;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in cell {
                            if cloud.points[j as usize].dist2(&p) <= eps2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Cluster the cloud; `None` marks noise.
pub fn dbscan(cloud: &PointCloud, params: &DbscanParams) -> Result<Vec<Option<usize>>> {
    params.validate()?;
    let n = cloud.len();
    let mut assignment: Vec<Option<usize>> = vec![None; n];
    if n == 0 {
        return Ok(assignment);
    }
    let eps2 = params.eps * params.eps;
    let grid = CellGrid::build(cloud, params.eps);

    let mut scratch = Vec::new();
    let neighbor_lists: Vec<Vec<u32>> = crate::par::map_indexed(n, |i| {
        let mut out = Vec::new();
        grid.neighbors(cloud, i, eps2, &mut out);
        out
    });
    let core: Vec<bool> = neighbor_lists.iter().map(|nb| nb.len() >= params.min_pts).collect();

    // Connected components over core points.
    let mut component: Vec<usize> = vec![usize::MAX; n];
    let mut next_component = 0usize;
    for seed in 0..n {
        if !core[seed] || component[seed] != usize::MAX {
            continue;
        }
        let comp = next_component;
        next_component += 1;
        component[seed] = comp;
        scratch.clear();
        scratch.push(seed as u32);
        while let Some(i) = scratch.pop() {
            for &j in &neighbor_lists[i as usize] {
                let j = j as usize;
                if core[j] && component[j] == usize::MAX {
                    component[j] = comp;
                    scratch.push(j as u32);
                }
            }
        }
    }

    for i in 0..n {
        if core[i] {
            assignment[i] = Some(component[i]);
        } else {
            // Border point: nearest core within eps, ties toward lowest index.
            let mut best: Option<(f64, u32)> = None;
            for &j in &neighbor_lists[i] {
                if core[j as usize] {
                    let d2 = cloud.points[i].dist2(&cloud.points[j as usize]);
                    let cand = (d2, j);
                    if best.map_or(true, |b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                        best = Some(cand);
                    }
                }
            }
            assignment[i] = best.map(|(_, j)| component[j as usize]);
        }
    }

    // Renumber cluster ids by ascending lowest contained point index.
    let mut first_seen: Vec<(usize, usize)> = Vec::new(); // (lowest index, old id)
    let mut seen: Vec<bool> = vec![false; next_component];
    for (i, a) in assignment.iter().enumerate() {
        if let Some(c) = a {
            if !seen[*c] {
                seen[*c] = true;
                first_seen.push((i, *c));
            }
        }
    }
    first_seen.sort_unstable();
    let mut remap: Vec<usize> = vec![0; next_component];
    for (new_id, &(_, old)) in first_seen.iter().enumerate() {
        remap[old] = new_id;
    }
    for a in &mut assignment {
        if let Some(c) = a {
            *c = remap[*c];
        }
    }
    Ok(assignment)
}

/// Sizes of the clusters in an assignment, indexed by cluster id.
pub fn cluster_sizes(assignment: &[Option<usize>]) -> Vec<usize> {
    let max = assignment.iter().flatten().copied().max();
    let mut sizes = vec![0usize; max.map_or(0, |m| m + 1)];
    for a in assignment.iter().flatten() {
        sizes[*a] += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(eps: f64, min_pts: usize) -> DbscanParams {
        DbscanParams { eps, min_pts, min_subcluster: 1, min_total: 1 }
    }

    fn blob(rng: &mut ChaCha8Rng, cx: f64, cy: f64, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    cx + rng.random_range(-1.0..1.0),
                    cy + rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn two_separated_blobs_form_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = blob(&mut rng, 0.0, 0.0, 40);
        pts.extend(blob(&mut rng, 20.0, 0.0, 40));
        let cloud = PointCloud::unlabeled(pts);
        let labels = dbscan(&cloud, &params(4.0, 4)).unwrap();
        assert!(labels.iter().all(|l| l.is_some()));
        assert_eq!(cluster_sizes(&labels).len(), 2);
        // Ids ordered by lowest contained index.
        assert_eq!(labels[0], Some(0));
        assert_eq!(labels[40], Some(1));
    }

    #[test]
    fn sparse_scatter_is_all_noise() {
        // Points on a 10 mm lattice, nearest neighbor 10 mm > eps.
        let pts: Vec<Point3> = (0..25)
            .map(|k| Point3::new((k % 5) as f64 * 10.0, (k / 5) as f64 * 10.0, 0.0))
            .collect();
        let cloud = PointCloud::unlabeled(pts);
        let labels = dbscan(&cloud, &params(4.0, 4)).unwrap();
        assert!(labels.iter().all(|l| l.is_none()));
    }

    #[test]
    fn empty_cloud() {
        let labels = dbscan(&PointCloud::unlabeled(vec![]), &params(4.0, 4)).unwrap();
        assert!(labels.is_empty());
    }

    #[test]
    fn permutation_invariance_as_set_of_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pts = blob(&mut rng, 0.0, 0.0, 60);
        pts.extend(blob(&mut rng, 9.0, 3.0, 60));
        pts.extend((0..20).map(|_| {
            Point3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), 5.0)
        }));
        let cloud = PointCloud::unlabeled(pts.clone());
        let base = dbscan(&cloud, &params(2.5, 4)).unwrap();

        // Reverse the point order and map the partition back.
        let rev: Vec<Point3> = pts.iter().rev().copied().collect();
        let n = rev.len();
        let shuffled = dbscan(&PointCloud::unlabeled(rev), &params(2.5, 4)).unwrap();
        let mapped: Vec<Option<usize>> = (0..n).map(|i| shuffled[n - 1 - i]).collect();

        let to_sets = |labels: &[Option<usize>]| {
            let mut sets: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for (i, l) in labels.iter().enumerate() {
                if let Some(c) = l {
                    sets.entry(*c).or_default().push(i);
                }
            }
            let mut v: Vec<Vec<usize>> = sets.into_values().collect();
            v.sort();
            v
        };
        assert_eq!(to_sets(&base), to_sets(&mapped));
        // Noise set is identical too.
        for i in 0..n {
            assert_eq!(base[i].is_none(), mapped[i].is_none());
        }
    }
}
