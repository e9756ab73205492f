//! Geometric and raster types shared by the whole pipeline.
//!
//! Units are millimeters throughout: `x` runs along the conveyor (scan
//! travel), `y` across it (along the laser line), `z` is height above the
//! belt. Depth images live on an equidistant grid; network-facing rasters are
//! normalized to `[0, 1]`. Invalid grid cells carry the background sentinel
//! `z = 0` with `valid = false`.

use crate::error::{Error, Result};

/// Per-point object label: not on any object (noise, clutter, belt).
pub const LABEL_BACKGROUND: u8 = 0;
/// Per-point object label: the (partially occluded) lower object.
pub const LABEL_LOWER: u8 = 1;
/// Per-point object label: the occluding top object.
pub const LABEL_TOP: u8 = 2;

/// A scanner point in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite() && z.is_finite());
        Self { x, y, z }
    }

    /// Squared distance in the (x, y) projection.
    pub fn dist2_xy(&self, x: f64, y: f64) -> f64 {
        let dx = self.x - x;
        let dy = self.y - y;
        dx * dx + dy * dy
    }

    /// Squared 3D Euclidean distance.
    pub fn dist2(&self, o: &Point3) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        let dz = self.z - o.z;
        dx * dx + dy * dy + dz * dz
    }
}

/// An unordered scan: points in scanner coordinates, optionally with
/// per-point object labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn unlabeled(points: Vec<Point3>) -> Self {
        Self { points, labels: None }
    }

    /// A labeled cloud; `labels` must have exactly one entry per point.
    pub fn labeled(points: Vec<Point3>, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        Ok(Self { points, labels: Some(labels) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Label of point `i`; background when the cloud is unlabeled.
    pub fn label(&self, i: usize) -> u8 {
        self.labels.as_ref().map_or(LABEL_BACKGROUND, |l| l[i])
    }

    /// Retain the points at `keep` (ascending indices), carrying labels along.
    pub fn subset(&self, keep: &[usize]) -> PointCloud {
        let points = keep.iter().map(|&i| self.points[i]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| keep.iter().map(|&i| l[i]).collect());
        PointCloud { points, labels }
    }

    /// Count points with the given label.
    pub fn count_label(&self, label: u8) -> usize {
        match &self.labels {
            Some(l) => l.iter().filter(|&&v| v == label).count(),
            None => 0,
        }
    }
}

/// The equidistant target grid: `nx` columns along x at pitch `dx`, `ny`
/// samples along y at pitch `dy`, anchored at `(x0, y0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 2x2, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0) || !(dy > 0.0) || !dx.is_finite() || !dy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid pitches must be positive and finite, got dx={dx} dy={dy}"
            )));
        }
        if !x0.is_finite() || !y0.is_finite() {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(Self { nx, ny, dx, dy, x0, y0 })
    }

    /// Number of grid cells.
    pub fn ncells(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major (x-major) linear index of cell `(i, j)`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    /// Center of cell `(i, j)` in millimeters.
    pub fn cell_center(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        if i >= self.nx || j >= self.ny {
            return Err(Error::IndexOutOfRange { i, j, nx: self.nx, ny: self.ny });
        }
        Ok((self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy))
    }
}

/// z-heights on an equidistant grid with a validity mask.
///
/// Invalid cells (no matched point, background) always hold `z = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub spec: GridSpec,
    z: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthImage {
    /// Build from raw buffers in row-major `(i, j)` order. Rejects non-finite
    /// z on valid cells; invalid cells are forced to the `z = 0` sentinel.
    pub fn new(spec: GridSpec, mut z: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = spec.ncells();
        if z.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "depth image buffers ({}, {}) do not match {}x{} grid",
                z.len(),
                valid.len(),
                spec.nx,
                spec.ny
            )));
        }
        for (zi, &v) in z.iter_mut().zip(&valid) {
            if v {
                if !zi.is_finite() {
                    return Err(Error::Range(format!("non-finite z {zi} on valid cell")));
                }
            } else {
                *zi = 0.0;
            }
        }
        Ok(Self { spec, z, valid })
    }

    /// An image with every cell invalid (empty scene).
    pub fn all_invalid(spec: GridSpec) -> Self {
        let n = spec.ncells();
        Self { spec, z: vec![0.0; n], valid: vec![false; n] }
    }

    #[inline]
    pub fn z(&self, i: usize, j: usize) -> f64 {
        self.z[self.spec.idx(i, j)]
    }

    #[inline]
    pub fn valid(&self, i: usize, j: usize) -> bool {
        self.valid[self.spec.idx(i, j)]
    }

    pub fn z_data(&self) -> &[f64] {
        &self.z
    }

    pub fn valid_data(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Per-cell link from grid cells back to the matched source-point index.
///
/// Filled during grid interpolation and reused by back-projection to restore
/// the original non-equidistant (x, y) positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMapping {
    cell_to_point: Vec<Option<u32>>,
}

impl GridMapping {
    /// Build from a per-cell table; every stored index must address a point
    /// in a cloud of `source_len` points.
    pub fn new(cell_to_point: Vec<Option<u32>>, source_len: usize) -> Result<Self> {
        for &m in cell_to_point.iter().flatten() {
            if m as usize >= source_len {
                return Err(Error::Range(format!(
                    "mapped point index {m} out of range for cloud of {source_len}"
                )));
            }
        }
        Ok(Self { cell_to_point })
    }

    pub fn len(&self) -> usize {
        self.cell_to_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_to_point.is_empty()
    }

    /// Source-point index matched to linear cell `k`, if any.
    #[inline]
    pub fn point_at(&self, k: usize) -> Option<usize> {
        self.cell_to_point[k].map(|v| v as usize)
    }
}

/// A unit-interval raster with the same layout as a [`DepthImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "raster buffer {} does not match {}x{}",
                data.len(),
                nx,
                ny
            )));
        }
        Ok(Self { nx, ny, data })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self { nx, ny, data: vec![0.0; nx * ny] }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }
}

/// Map valid cells to `z / z_max ∈ [0, 1]`; invalid cells map to 0.
///
/// Errors when a valid cell lies outside `[0, z_max]`.
pub fn normalize_depth(img: &DepthImage, z_max: f64) -> Result<Raster> {
    if !(z_max > 0.0) {
        return Err(Error::InvalidArgument(format!("z_max must be positive, got {z_max}")));
    }
    let mut data = vec![0.0; img.spec.ncells()];
    for (k, out) in data.iter_mut().enumerate() {
        if img.valid[k] {
            let z = img.z[k];
            if !(0.0..=z_max).contains(&z) {
                return Err(Error::Range(format!(
                    "valid z {z} outside [0, {z_max}] at cell {k}"
                )));
            }
            *out = z / z_max;
        }
    }
    Raster::new(img.spec.nx, img.spec.ny, data)
}

/// Inverse of [`normalize_depth`]: `z = value * z_max` on valid cells.
///
/// Errors when a raster value lies outside `[0, 1]`.
pub fn denormalize_depth(raster: &Raster, z_max: f64, valid: &[bool], spec: GridSpec) -> Result<DepthImage> {
    if !(z_max > 0.0) {
        return Err(Error::InvalidArgument(format!("z_max must be positive, got {z_max}")));
    }
    if raster.nx != spec.nx || raster.ny != spec.ny || valid.len() != spec.ncells() {
        return Err(Error::ShapeMismatch(format!(
            "raster {}x{} / mask {} vs grid {}x{}",
            raster.nx,
            raster.ny,
            valid.len(),
            spec.nx,
            spec.ny
        )));
    }
    let mut z = vec![0.0; spec.ncells()];
    for (k, zk) in z.iter_mut().enumerate() {
        if valid[k] {
            let v = raster.data[k];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Range(format!("raster value {v} outside [0, 1] at cell {k}")));
            }
            *zk = v * z_max;
        }
    }
    DepthImage::new(spec, z, valid.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx, ny, 0.3, 1.1, 0.0, 0.0).unwrap()
    }

    #[test]
    fn cell_center_origin_and_far_corner() {
        let s = spec(256, 64);
        assert_eq!(s.cell_center(0, 0).unwrap(), (0.0, 0.0));
        let (x, y) = s.cell_center(255, 63).unwrap();
        assert!((x - 76.5).abs() < 1e-12);
        assert!((y - 69.3).abs() < 1e-12);
    }

    #[test]
    fn cell_center_offset_origin() {
        let s = GridSpec::new(4, 4, 0.3, 1.1, 10.0, -5.0).unwrap();
        let (x, y) = s.cell_center(1, 1).unwrap();
        assert!((x - 10.3).abs() < 1e-12);
        assert!((y - -3.9).abs() < 1e-12);
    }

    #[test]
    fn cell_center_rejects_out_of_range() {
        let s = spec(4, 4);
        assert!(matches!(s.cell_center(4, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(s.cell_center(0, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn cell_center_is_affine_in_i() {
        // Binary-representable pitches: consecutive centers differ by
        // exactly dx.
        let s = GridSpec::new(16, 8, 0.25, 1.5, 3.25, -2.0).unwrap();
        for i in 0..15 {
            for j in 0..8 {
                let a = s.cell_center(i, j).unwrap().0;
                let b = s.cell_center(i + 1, j).unwrap().0;
                assert_eq!(b - a, 0.25);
            }
        }
        // Non-representable pitches stay affine to rounding error.
        let s = GridSpec::new(256, 8, 0.3, 1.1, 0.0, 0.0).unwrap();
        for i in 0..255 {
            let a = s.cell_center(i, 0).unwrap().0;
            let b = s.cell_center(i + 1, 0).unwrap().0;
            assert!((b - a - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_all_invalid_is_zero() {
        let img = DepthImage::all_invalid(spec(8, 4));
        let r = normalize_depth(&img, 18.0).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_boundary_and_interior() {
        let s = spec(2, 2);
        let img = DepthImage::new(s, vec![18.0, 4.5, 0.0, 0.0], vec![true, true, false, false])
            .unwrap();
        let r = normalize_depth(&img, 18.0).unwrap();
        assert_eq!(r.data[0], 1.0);
        assert_eq!(r.data[1], 0.25);
        assert_eq!(r.data[2], 0.0);
    }

    #[test]
    fn normalize_rejects_out_of_range_z() {
        let s = spec(2, 2);
        let img =
            DepthImage::new(s, vec![19.0, 0.0, 0.0, 0.0], vec![true, false, false, false]).unwrap();
        assert!(matches!(normalize_depth(&img, 18.0), Err(Error::Range(_))));
    }

    #[test]
    fn denormalize_midpoint() {
        let s = spec(2, 2);
        let r = Raster::new(2, 2, vec![0.5, 0.0, 0.0, 0.0]).unwrap();
        let img = denormalize_depth(&r, 18.0, &[true, false, false, false], s).unwrap();
        assert_eq!(img.z(0, 0), 9.0);
        assert!(!img.valid(0, 1));
    }

    #[test]
    fn denormalize_rejects_out_of_range() {
        let s = spec(2, 2);
        let r = Raster::new(2, 2, vec![1.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            denormalize_depth(&r, 18.0, &[true, false, false, false], s),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn all_zero_raster_all_false_mask_is_all_invalid() {
        let s = spec(4, 4);
        let r = Raster::zeros(4, 4);
        let img = denormalize_depth(&r, 18.0, &vec![false; 16], s).unwrap();
        assert_eq!(img, DepthImage::all_invalid(s));
    }

    #[test]
    fn depth_image_rejects_nan_on_valid_cells() {
        let s = spec(2, 2);
        assert!(DepthImage::new(s, vec![f64::NAN, 0.0, 0.0, 0.0], vec![true; 4]).is_err());
        assert!(DepthImage::new(s, vec![f64::INFINITY, 0.0, 0.0, 0.0], vec![true; 4]).is_err());
        // NaN on an invalid cell is overwritten by the sentinel.
        let img = DepthImage::new(s, vec![f64::NAN, 1.0, 1.0, 1.0],
            vec![false, true, true, true]).unwrap();
        assert_eq!(img.z(0, 0), 0.0);
    }

    #[test]
    fn labeled_cloud_checks_lengths() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0)];
        assert!(PointCloud::labeled(pts.clone(), vec![1, 2]).is_err());
        assert!(PointCloud::labeled(pts, vec![1]).is_ok());
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalize_denormalize_round_trip(
            zs in proptest::collection::vec(0.0f64..18.0, 64),
            mask in proptest::collection::vec(proptest::bool::ANY, 64),
        ) {
            let spec = GridSpec::new(8, 8, 0.3, 1.1, 0.0, 0.0).unwrap();
            let z: Vec<f64> = zs.iter().zip(&mask).map(|(&z, &v)| if v { z } else { 0.0 }).collect();
            let img = DepthImage::new(spec, z, mask.clone()).unwrap();
            let r = normalize_depth(&img, 18.0).unwrap();
            let back = denormalize_depth(&r, 18.0, &mask, spec).unwrap();
            for k in 0..64 {
                prop_assert!((back.z_data()[k] - img.z_data()[k]).abs() < 1e-6);
                prop_assert_eq!(back.valid_data()[k], img.valid_data()[k]);
            }
        }
    }
}
