//! Scan filtering and grid interpolation: crop, DBSCAN noise removal,
//! cluster-size validation, k-d-tree matching onto the equidistant grid, and
//! top-object masking.

mod dbscan;
mod kdtree;

pub use dbscan::{cluster_sizes, dbscan, DbscanParams};
pub use kdtree::KdTree2;

use crate::error::{Error, Result};
use crate::geometry::{DepthImage, GridMapping, GridSpec, PointCloud, LABEL_BACKGROUND, LABEL_TOP};
use crate::par;

/// Crop box around the scan region: a centered band in x, a height window in
/// z, optional y limits (full belt width by default). All bounds closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    /// Center of the kept x band (mm).
    pub x_center: f64,
    /// Width of the kept x band (mm).
    pub x_width: f64,
    /// Lower edge of the kept height window (mm).
    pub z_min: f64,
    /// Height of the kept window above `z_min` (mm).
    pub z_depth: f64,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
}

impl Default for CropWindow {
    fn default() -> Self {
        Self { x_center: 46.0, x_width: 92.0, z_min: 0.0, z_depth: 18.0, y_min: None, y_max: None }
    }
}

impl CropWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_width > 0.0) || !(self.z_depth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "crop widths must be positive, got x_width={} z_depth={}",
                self.x_width, self.z_depth
            )));
        }
        Ok(())
    }

    fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let half = self.x_width / 2.0;
        x >= self.x_center - half
            && x <= self.x_center + half
            && z >= self.z_min
            && z <= self.z_min + self.z_depth
            && self.y_min.map_or(true, |lo| y >= lo)
            && self.y_max.map_or(true, |hi| y <= hi)
    }
}

/// Retain exactly the points inside the crop window, labels carried along.
pub fn crop(cloud: &PointCloud, w: &CropWindow) -> PointCloud {
    let keep: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| w.contains(p.x, p.y, p.z))
        .map(|(i, _)| i)
        .collect();
    cloud.subset(&keep)
}

/// Keep the clusters large enough to belong to an object; reject the scan
/// when the kept total is below `min_total`.
pub fn select_object_points(
    cloud: &PointCloud,
    assignment: &[Option<usize>],
    params: &DbscanParams,
) -> Result<PointCloud> {
    if assignment.len() != cloud.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cluster labels for {} points",
            assignment.len(),
            cloud.len()
        )));
    }
    let sizes = cluster_sizes(assignment);
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| assignment[i].is_some_and(|c| sizes[c] >= params.min_subcluster))
        .collect();
    if keep.len() < params.min_total {
        return Err(Error::ScanError { total: keep.len(), min_total: params.min_total });
    }
    Ok(cloud.subset(&keep))
}

/// Match every grid cell to its nearest cloud point in (x, y) and take that
/// point's z when the match is within `max_match_dist`.
///
/// Returns the depth image, the cell-to-point mapping for back-projection,
/// and the per-cell object label raster (background on unmatched cells).
pub fn interpolate_to_grid(
    cloud: &PointCloud,
    spec: &GridSpec,
    max_match_dist: f64,
) -> Result<(DepthImage, GridMapping, Vec<u8>)> {
    if !(max_match_dist > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_match_dist must be positive, got {max_match_dist}"
        )));
    }
    let n = spec.ncells();
    if cloud.is_empty() {
        let img = DepthImage::all_invalid(*spec);
        let mapping = GridMapping::new(vec![None; n], 0)?;
        return Ok((img, mapping, vec![LABEL_BACKGROUND; n]));
    }
    let tree = KdTree2::build(cloud);
    let ny = spec.ny;
    let max_d2 = max_match_dist * max_match_dist;
    let spec_copy = *spec;
    let cells: Vec<(f64, bool, Option<u32>, u8)> = par::map_indexed(n, |k| {
        let (i, j) = (k / ny, k % ny);
        let (cx, cy) = spec_copy.cell_center(i, j).expect("cell index in range");
        let (pi, _) = tree.nearest(cx, cy).expect("non-empty tree");
        let p = cloud.points[pi];
        if p.dist2_xy(cx, cy) <= max_d2 {
            (p.z, true, Some(pi as u32), cloud.label(pi))
        } else {
            (0.0, false, None, LABEL_BACKGROUND)
        }
    });
    let mut z = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut map = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (zi, v, m, l) in cells {
        z.push(zi);
        valid.push(v);
        map.push(m);
        labels.push(l);
    }
    let img = DepthImage::new(*spec, z, valid)?;
    let mapping = GridMapping::new(map, cloud.len())?;
    Ok((img, mapping, labels))
}

/// Replace every top-object cell's height by the constant
/// `single_object_height + 15` mm, leaving all other cells untouched.
///
/// Masked cells become valid: they carry a defined height for the network
/// input even where interpolation had no match.
pub fn mask_top_object(
    img: &DepthImage,
    segmap: &[u8],
    single_object_height: f64,
) -> Result<DepthImage> {
    let n = img.spec.ncells();
    if segmap.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "segmentation map {} vs {} grid cells",
            segmap.len(),
            n
        )));
    }
    let mask_value = single_object_height + 15.0;
    let mut z = img.z_data().to_vec();
    let mut valid = img.valid_data().to_vec();
    for k in 0..n {
        if segmap[k] == LABEL_TOP {
            z[k] = mask_value;
            valid[k] = true;
        }
    }
    DepthImage::new(img.spec, z, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, LABEL_LOWER};

    #[test]
    fn crop_keeps_band_and_window() {
        let cloud = PointCloud::unlabeled(vec![
            Point3::new(46.0, 10.0, 5.0),   // inside
            Point3::new(-10.0, 10.0, 5.0),  // wall, x outside band
            Point3::new(46.0, 10.0, -2.0),  // floor, z below window
            Point3::new(46.0, 10.0, 19.0),  // above window
            Point3::new(97.0, 10.0, 5.0),   // rail, x outside band
        ]);
        let out = crop(&cloud, &CropWindow::default());
        assert_eq!(out.points, vec![Point3::new(46.0, 10.0, 5.0)]);
    }

    #[test]
    fn crop_empty_and_boundary() {
        let w = CropWindow::default();
        assert!(crop(&PointCloud::unlabeled(vec![]), &w).is_empty());
        // Boundary points are retained (closed intervals).
        let cloud = PointCloud::unlabeled(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(92.0, 0.0, 18.0),
        ]);
        assert_eq!(crop(&cloud, &w).len(), 2);
    }

    #[test]
    fn crop_is_idempotent() {
        let cloud = PointCloud::unlabeled(
            (0..100)
                .map(|k| Point3::new(k as f64 * 1.5 - 20.0, k as f64, (k % 25) as f64))
                .collect(),
        );
        let w = CropWindow::default();
        let once = crop(&cloud, &w);
        let twice = crop(&once, &w);
        assert_eq!(once, twice);
    }

    fn cluster(n: usize, cx: f64) -> Vec<Point3> {
        // Dense line of points spaced 0.5 mm, anything within eps=4.
        (0..n).map(|k| Point3::new(cx + (k as f64) * 0.01, 0.0, 0.0)).collect()
    }

    #[test]
    fn select_keeps_single_large_cluster() {
        let pts = cluster(7000, 0.0);
        let cloud = PointCloud::unlabeled(pts);
        let assignment = vec![Some(0); 7000];
        let out = select_object_points(&cloud, &assignment, &DbscanParams::default()).unwrap();
        assert_eq!(out.len(), 7000);
    }

    #[test]
    fn select_threshold_arithmetic() {
        // Clusters of sizes 5500, 700, 300: keep the first two, drop 300.
        let mut pts = cluster(5500, 0.0);
        pts.extend(cluster(700, 1000.0));
        pts.extend(cluster(300, 2000.0));
        let cloud = PointCloud::unlabeled(pts);
        let mut assignment = vec![Some(0); 5500];
        assignment.extend(vec![Some(1); 700]);
        assignment.extend(vec![Some(2); 300]);
        let out = select_object_points(&cloud, &assignment, &DbscanParams::default()).unwrap();
        assert_eq!(out.len(), 6200);

        // Clusters 4000 + 1500 = 5500 < 6000: scan error.
        let mut pts = cluster(4000, 0.0);
        pts.extend(cluster(1500, 1000.0));
        let cloud = PointCloud::unlabeled(pts);
        let mut assignment = vec![Some(0); 4000];
        assignment.extend(vec![Some(1); 1500]);
        let err = select_object_points(&cloud, &assignment, &DbscanParams::default()).unwrap_err();
        match err {
            Error::ScanError { total, min_total } => {
                assert_eq!(total, 5500);
                assert_eq!(min_total, 6000);
            }
            other => panic!("expected scan error, got {other:?}"),
        }
    }

    #[test]
    fn interpolate_exact_grid_is_bijective() {
        let spec = GridSpec::new(8, 4, 0.3, 1.1, 2.0, -1.0).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            for j in 0..4 {
                let (x, y) = spec.cell_center(i, j).unwrap();
                pts.push(Point3::new(x, y, (i + j) as f64 * 0.25));
                labels.push(LABEL_LOWER);
            }
        }
        let cloud = PointCloud::labeled(pts.clone(), labels).unwrap();
        let (img, mapping, lab) = interpolate_to_grid(&cloud, &spec, 1.1).unwrap();
        let mut seen = vec![false; cloud.len()];
        for k in 0..spec.ncells() {
            let (i, j) = (k / spec.ny, k % spec.ny);
            assert!(img.valid(i, j));
            let pi = mapping.point_at(k).unwrap();
            assert!(!seen[pi]);
            seen[pi] = true;
            assert_eq!(img.z(i, j), pts[pi].z);
            assert_eq!(lab[k], LABEL_LOWER);
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn interpolate_empty_cloud_all_invalid() {
        let spec = GridSpec::new(8, 4, 0.3, 1.1, 0.0, 0.0).unwrap();
        let (img, mapping, labels) =
            interpolate_to_grid(&PointCloud::unlabeled(vec![]), &spec, 1.1).unwrap();
        assert_eq!(img.valid_count(), 0);
        assert!((0..spec.ncells()).all(|k| mapping.point_at(k).is_none()));
        assert!(labels.iter().all(|&l| l == LABEL_BACKGROUND));
    }

    #[test]
    fn interpolate_flat_plate_is_constant() {
        let spec = GridSpec::new(16, 8, 0.3, 1.1, 0.0, 0.0).unwrap();
        // Dense plate sampled off-grid, constant z = 5.
        let mut pts = Vec::new();
        let mut y = -0.4;
        while y < 8.5 {
            let mut x = -0.1;
            while x < 5.0 {
                pts.push(Point3::new(x, y, 5.0));
                x += 0.17;
            }
            y += 0.53;
        }
        let cloud = PointCloud::unlabeled(pts);
        let (img, _, _) = interpolate_to_grid(&cloud, &spec, 1.1).unwrap();
        for i in 0..16 {
            for j in 0..8 {
                if img.valid(i, j) {
                    assert_eq!(img.z(i, j), 5.0);
                }
            }
        }
        assert!(img.valid_count() > 0);
    }

    #[test]
    fn mask_top_object_constant_and_idempotent() {
        let spec = GridSpec::new(2, 2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let img =
            DepthImage::new(spec, vec![3.0, 7.0, 0.0, 2.0], vec![true, true, false, true]).unwrap();
        let seg = vec![LABEL_BACKGROUND, LABEL_TOP, LABEL_BACKGROUND, LABEL_LOWER];
        let masked = mask_top_object(&img, &seg, 5.0).unwrap();
        assert_eq!(masked.z(0, 0), 3.0);
        assert_eq!(masked.z(0, 1), 20.0);
        assert_eq!(masked.z(1, 1), 2.0);
        let twice = mask_top_object(&masked, &seg, 5.0).unwrap();
        assert_eq!(twice, masked);

        // All-background segmentation map leaves the image unchanged.
        let unchanged = mask_top_object(&img, &vec![LABEL_BACKGROUND; 4], 5.0).unwrap();
        assert_eq!(unchanged, img);

        // Shape mismatch is rejected.
        assert!(mask_top_object(&img, &[LABEL_TOP], 5.0).is_err());
    }
}
