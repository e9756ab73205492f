//! Synthetic occluded/ground-truth scene generation.
//!
//! Each sample drops a lower object flat onto the belt and a top object onto
//! it at a random offset. The top object settles analytically: its bottom
//! plane pivots on the belt and leans on the lower object's surface (a
//! two-contact solution), which reproduces the characteristic protruding-at-
//! an-angle geometry. The occluded scene and the re-scanned lower object use
//! the same scanner lattice, so the visible lower points of the occluded
//! scan are exactly a subset of the ground-truth scan.

mod model;
mod scan;

pub use model::{Edge, ObjectModel, SurfaceFeature};
pub use scan::{simulate_scan, PlacedObject, Pose, Scene, ScannerConfig};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, LABEL_LOWER, LABEL_TOP};
use crate::io::write_point_cloud;
use crate::par;
use crate::rng::SeedTree;

const MAX_TILT: f64 = 30.0 * std::f64::consts::PI / 180.0;
const MAX_SCENE_HEIGHT: f64 = 15.0;
const MAX_OCCLUSION: f64 = 0.8;
const MAX_RESAMPLES: usize = 100;

/// Placement bounds for the lower object and the top-object offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpace {
    pub lower_x: (f64, f64),
    pub lower_y: (f64, f64),
    /// Top center offset from the lower center, uniform in `[-x, x]`.
    pub top_offset_x: f64,
    pub top_offset_y: f64,
}

impl Default for DesignSpace {
    fn default() -> Self {
        Self { lower_x: (38.0, 54.0), lower_y: (30.0, 40.0), top_offset_x: 14.0, top_offset_y: 12.0 }
    }
}

/// One dataset sample: the occluded scan, the ground-truth re-scan of the
/// lower object alone, both poses, and the resulting occlusion fraction.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub occluded_scan: PointCloud,
    pub ground_truth_lower: PointCloud,
    pub lower_pose: Pose,
    pub top_pose: Pose,
    pub occlusion_fraction: f64,
}

/// Settle the top object on the lower one: pivot the bottom plane on the
/// belt at the far footprint edge and raise it until it clears the lower
/// object everywhere, leaning on the highest obstruction. Returns the tilted
/// pose, or `None` when the footprints do not overlap or the result is
/// physically implausible (support in front of the center of mass, tilt
/// above 30 degrees, scene taller than 15 mm).
fn settle_top(
    lower: &PlacedObject,
    top_model: &ObjectModel,
    tx: f64,
    ty: f64,
    theta: f64,
) -> Option<Pose> {
    let to_lower = (lower.pose.tx - tx, lower.pose.ty - ty);
    let norm = (to_lower.0 * to_lower.0 + to_lower.1 * to_lower.1).sqrt();
    let axis = if norm < 1e-9 { (1.0, 0.0) } else { (to_lower.0 / norm, to_lower.1 / norm) };

    let flat = PlacedObject {
        model: top_model.clone(),
        pose: Pose { tx, ty, theta, tilt_axis: axis, tilt_angle: 0.0 },
        label: LABEL_TOP,
    };
    let half_span = flat.half_span_along_axis();

    // Scan the overlap for the sample that forces the steepest bottom plane.
    let step = 0.5;
    let (c, s) = (theta.cos(), theta.sin());
    let nu = (top_model.width_u / step).ceil() as usize;
    let nv = (top_model.width_v / step).ceil() as usize;
    let mut slope = 0.0f64;
    let mut support_s = f64::NEG_INFINITY;
    let mut overlap = false;
    for iu in 0..=nu {
        let u = -top_model.width_u / 2.0 + (iu as f64 / nu as f64) * top_model.width_u;
        for iv in 0..=nv {
            let v = -top_model.width_v / 2.0 + (iv as f64 / nv as f64) * top_model.width_v;
            if top_model.height_at(u, v).is_none() {
                continue;
            }
            let x = tx + c * u - s * v;
            let y = ty + s * u + c * v;
            if let Some(h_low) = lower.surface_at(x, y) {
                overlap = true;
                let sv = (x - tx) * axis.0 + (y - ty) * axis.1;
                let arm = sv + half_span;
                if arm > 0.5 {
                    let cand = h_low / arm;
                    if cand > slope {
                        slope = cand;
                        support_s = sv;
                    }
                }
            }
        }
    }
    if !overlap || slope <= 0.0 {
        return None;
    }
    // The center of mass must sit between the belt contact and the support.
    if support_s < 0.0 {
        return None;
    }
    let tilt = slope.atan();
    if tilt > MAX_TILT {
        return None;
    }
    let pose = Pose { tx, ty, theta, tilt_axis: axis, tilt_angle: tilt };
    let placed = PlacedObject { model: top_model.clone(), pose, label: LABEL_TOP };
    if placed.max_height() >= MAX_SCENE_HEIGHT {
        return None;
    }
    Some(pose)
}

/// Draw one scene pair: pose the objects, settle the top, scan both the
/// occluded scene and the lower object alone. Rejects and resamples until
/// the occlusion fraction lies in `(0, 0.8]`.
pub fn sample_scene(
    rng: &mut ChaCha8Rng,
    models: &(ObjectModel, ObjectModel),
    space: &DesignSpace,
    scanner: &ScannerConfig,
) -> Result<ScenePair> {
    models.0.validate()?;
    models.1.validate()?;
    for _ in 0..MAX_RESAMPLES {
        let lower_pose = Pose::flat(
            rng.random_range(space.lower_x.0..=space.lower_x.1),
            rng.random_range(space.lower_y.0..=space.lower_y.1),
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        let lower = PlacedObject { model: models.0.clone(), pose: lower_pose, label: LABEL_LOWER };
        let tx = lower_pose.tx + rng.random_range(-space.top_offset_x..=space.top_offset_x);
        let ty = lower_pose.ty + rng.random_range(-space.top_offset_y..=space.top_offset_y);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let Some(top_pose) = settle_top(&lower, &models.1, tx, ty, theta) else {
            continue;
        };
        let top = PlacedObject { model: models.1.clone(), pose: top_pose, label: LABEL_TOP };

        let occluded = Scene { objects: vec![lower.clone(), top] };
        let gt = Scene { objects: vec![lower] };
        let occluded_scan = simulate_scan(&occluded, scanner, rng);
        let ground_truth_lower = simulate_scan(&gt, scanner, rng);

        let gt_count = ground_truth_lower.count_label(LABEL_LOWER);
        if gt_count == 0 {
            continue;
        }
        let visible = occluded_scan.count_label(LABEL_LOWER);
        let occlusion_fraction = 1.0 - visible as f64 / gt_count as f64;
        if occlusion_fraction <= 0.0 || occlusion_fraction > MAX_OCCLUSION {
            continue;
        }
        return Ok(ScenePair {
            occluded_scan,
            ground_truth_lower,
            lower_pose,
            top_pose,
            occlusion_fraction,
        });
    }
    Err(Error::Sampling(format!(
        "no valid two-contact pose with occlusion in (0, {MAX_OCCLUSION}] after {MAX_RESAMPLES} draws"
    )))
}

/// Train/validation/test sizes for a dataset of `n` samples: 80 % train,
/// 20 % test, one fifth of train held out for validation.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 4 / 5;
    let test = n - train;
    let val = train / 5;
    (train, val, test)
}

/// Dataset generation settings and the derived manifest contents.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub models: (ObjectModel, ObjectModel),
    pub space: DesignSpace,
    pub scanner: ScannerConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            models: (ObjectModel::default_lower(), ObjectModel::default_top()),
            space: DesignSpace::default(),
            scanner: ScannerConfig::default(),
        }
    }
}

/// File-layout handle for a generated dataset.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub dir: PathBuf,
}

impl DatasetManifest {
    pub fn occluded_path(&self, index: usize) -> PathBuf {
        self.dir.join(format!("{index:06}_occluded.ocpc"))
    }

    pub fn gt_path(&self, index: usize) -> PathBuf {
        self.dir.join(format!("{index:06}_gt.ocpc"))
    }

    /// Sample indices of each split: training block first, then validation,
    /// then test.
    pub fn split_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let train_end = self.n_train - self.n_val;
        (0..train_end, train_end..self.n_train, self.n_train..self.n)
    }

    fn render(&self, cfg: &DatasetConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "n={}", self.n);
        let _ = writeln!(out, "n_train={}", self.n_train);
        let _ = writeln!(out, "n_val={}", self.n_val);
        let _ = writeln!(out, "n_test={}", self.n_test);
        let _ = writeln!(out, "line_pitch_x={}", cfg.scanner.line_pitch_x);
        let _ = writeln!(out, "sample_pitch_y={}", cfg.scanner.sample_pitch_y);
        let _ = writeln!(out, "height_divergence={}", cfg.scanner.height_divergence);
        let _ = writeln!(out, "outlier_rate={}", cfg.scanner.outlier_rate);
        let _ = writeln!(out, "clutter={}", cfg.scanner.clutter);
        let _ = writeln!(out, "shadow_margin={}", cfg.scanner.shadow_margin);
        let _ = writeln!(out, "lower_x={}..{}", cfg.space.lower_x.0, cfg.space.lower_x.1);
        let _ = writeln!(out, "lower_y={}..{}", cfg.space.lower_y.0, cfg.space.lower_y.1);
        let _ = writeln!(out, "top_offset_x={}", cfg.space.top_offset_x);
        let _ = writeln!(out, "top_offset_y={}", cfg.space.top_offset_y);
        out
    }
}

/// Generate `n` scene pairs under `out_dir` and write the manifest.
///
/// Every sample derives its own random stream from `(seed, index)`, so the
/// output is byte-identical for a fixed seed regardless of parallelism.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    out_dir: &Path,
    cfg: &DatasetConfig,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let tree = SeedTree::new(seed);
    let results: Vec<Result<()>> = par::map_indexed(n, |i| {
        let mut rng = tree.stream_indexed("scene", i as u64);
        let pair = sample_scene(&mut rng, &cfg.models, &cfg.space, &cfg.scanner)?;
        write_point_cloud(&out_dir.join(format!("{i:06}_occluded.ocpc")), &pair.occluded_scan)?;
        write_point_cloud(&out_dir.join(format!("{i:06}_gt.ocpc")), &pair.ground_truth_lower)?;
        Ok(())
    });
    for r in results {
        r?;
    }
    let (train, val, test) = split_sizes(n);
    let manifest = DatasetManifest {
        seed,
        n,
        n_train: train,
        n_val: val,
        n_test: test,
        dir: out_dir.to_path_buf(),
    };
    std::fs::write(out_dir.join("manifest.txt"), manifest.render(cfg))?;
    Ok(manifest)
}

/// Read back a manifest written by [`generate_dataset`].
pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut seed = None;
    let mut n = None;
    let mut n_train = None;
    let mut n_val = None;
    let mut n_test = None;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k {
            "seed" => seed = v.parse::<u64>().ok(),
            "n" => n = v.parse::<usize>().ok(),
            "n_train" => n_train = v.parse::<usize>().ok(),
            "n_val" => n_val = v.parse::<usize>().ok(),
            "n_test" => n_test = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    match (seed, n, n_train, n_val, n_test) {
        (Some(seed), Some(n), Some(n_train), Some(n_val), Some(n_test)) => Ok(DatasetManifest {
            seed,
            n,
            n_train,
            n_val,
            n_test,
            dir: dir.to_path_buf(),
        }),
        _ => Err(Error::Format(format!("incomplete manifest in {}", dir.display()))),
    }
}

/// Generate scene pairs in memory (no files), same per-index streams as
/// [`generate_dataset`].
pub fn generate_pairs(n: usize, seed: u64, cfg: &DatasetConfig) -> Result<Vec<ScenePair>> {
    let tree = SeedTree::new(seed);
    let results: Vec<Result<ScenePair>> = par::map_indexed(n, |i| {
        let mut rng = tree.stream_indexed("scene", i as u64);
        sample_scene(&mut rng, &cfg.models, &cfg.space, &cfg.scanner)
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn quiet_cfg() -> DatasetConfig {
        let mut cfg = DatasetConfig::default();
        cfg.scanner.outlier_rate = 0.0;
        cfg.scanner.clutter = false;
        cfg
    }

    #[test]
    fn split_arithmetic_matches_ratios() {
        assert_eq!(split_sizes(21_000), (16_800, 3_360, 4_200));
        assert_eq!(split_sizes(1_000), (800, 160, 200));
        assert_eq!(split_sizes(10), (8, 1, 2));
    }

    #[test]
    fn sampled_pairs_satisfy_occlusion_contracts() {
        let cfg = quiet_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..8 {
            let pair = sample_scene(&mut rng, &cfg.models, &cfg.space, &cfg.scanner).unwrap();
            assert!(pair.occlusion_fraction > 0.0 && pair.occlusion_fraction <= 0.8);
            let gt = pair.ground_truth_lower.count_label(LABEL_LOWER);
            let vis = pair.occluded_scan.count_label(LABEL_LOWER);
            assert!(gt >= vis);
            let expect = 1.0 - vis as f64 / gt as f64;
            assert!((pair.occlusion_fraction - expect).abs() < 1e-9);
            assert!(pair.top_pose.tilt_angle >= 0.0 && pair.top_pose.tilt_angle <= MAX_TILT);
        }
    }

    #[test]
    fn occluded_lower_points_are_subset_of_ground_truth() {
        let cfg = quiet_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pair = sample_scene(&mut rng, &cfg.models, &cfg.space, &cfg.scanner).unwrap();
        let gt_positions: std::collections::HashSet<(u64, u64, u64)> = pair
            .ground_truth_lower
            .points
            .iter()
            .map(|p| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits()))
            .collect();
        for (i, p) in pair.occluded_scan.points.iter().enumerate() {
            if pair.occluded_scan.label(i) == LABEL_LOWER {
                assert!(gt_positions.contains(&(p.x.to_bits(), p.y.to_bits(), p.z.to_bits())));
            }
        }
    }

    #[test]
    fn labels_lie_inside_posed_footprints() {
        let mut cfg = quiet_cfg();
        cfg.scanner.outlier_rate = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pair = sample_scene(&mut rng, &cfg.models, &cfg.space, &cfg.scanner).unwrap();
        let lower = PlacedObject {
            model: cfg.models.0.clone(),
            pose: pair.lower_pose,
            label: LABEL_LOWER,
        };
        let top = PlacedObject { model: cfg.models.1.clone(), pose: pair.top_pose, label: LABEL_TOP };
        let tol = cfg.scanner.sample_pitch_y;
        for (i, p) in pair.occluded_scan.points.iter().enumerate() {
            let obj = match pair.occluded_scan.label(i) {
                LABEL_LOWER => &lower,
                LABEL_TOP => &top,
                _ => continue,
            };
            assert!(
                obj.surface_at_margin(p.x, p.y, tol).is_some(),
                "labeled point off its footprint: {p:?}"
            );
        }
    }

    #[test]
    fn centered_top_matches_point_in_silhouette_oracle() {
        // Hand-built pair (no settle): top flat, centered on the lower
        // object; occlusion must equal the fraction of ground-truth points
        // inside the top silhouette.
        let cfg = quiet_cfg();
        let lower_pose = Pose::flat(46.0, 35.0, 0.4);
        let lower = PlacedObject { model: cfg.models.0.clone(), pose: lower_pose, label: LABEL_LOWER };
        // Raise the top clear of the lower object so the z-buffer always
        // prefers it inside its own footprint.
        let top_pose = Pose { tx: 46.0, ty: 35.0, theta: 1.1, tilt_axis: (1.0, 0.0), tilt_angle: 0.35 };
        let top = PlacedObject { model: cfg.models.1.clone(), pose: top_pose, label: LABEL_TOP };

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let occluded = simulate_scan(
            &Scene { objects: vec![lower.clone(), top.clone()] },
            &cfg.scanner,
            &mut rng,
        );
        let gt = simulate_scan(&Scene { objects: vec![lower] }, &cfg.scanner, &mut rng);

        let gt_n = gt.count_label(LABEL_LOWER);
        let vis = occluded.count_label(LABEL_LOWER);
        let occ = 1.0 - vis as f64 / gt_n as f64;

        // Brute-force: count ground-truth samples whose nominal footprint
        // position falls inside the top silhouette.
        let hidden = gt
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| gt.label(*i) == LABEL_LOWER)
            .filter(|(_, p)| {
                // Invert the divergence to recover the nominal y.
                let y_c = (cfg.scanner.y_range.0 + cfg.scanner.y_range.1) / 2.0;
                let y_nom = (p.y + cfg.scanner.height_divergence * p.z * y_c)
                    / (1.0 + cfg.scanner.height_divergence * p.z);
                top.surface_at(p.x, y_nom).is_some()
            })
            .count();
        let oracle = hidden as f64 / gt_n as f64;
        assert!((occ - oracle).abs() < 1e-9, "occ {occ} vs oracle {oracle}");
    }

    #[test]
    fn generate_dataset_is_deterministic_and_splits() {
        let mut cfg = quiet_cfg();
        // Tiny scan region keeps the test fast.
        cfg.scanner.line_pitch_x = 0.9;
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let m1 = generate_dataset(10, 7, dir_a.path(), &cfg).unwrap();
        let m2 = generate_dataset(10, 7, dir_b.path(), &cfg).unwrap();
        assert_eq!((m1.n_train, m1.n_val, m1.n_test), (8, 1, 2));
        for i in 0..10 {
            let a = std::fs::read(m1.occluded_path(i)).unwrap();
            let b = std::fs::read(m2.occluded_path(i)).unwrap();
            assert_eq!(a, b, "occluded scan {i} differs between runs");
            let a = std::fs::read(m1.gt_path(i)).unwrap();
            let b = std::fs::read(m2.gt_path(i)).unwrap();
            assert_eq!(a, b, "ground truth scan {i} differs between runs");
        }
        let back = read_manifest(dir_a.path()).unwrap();
        assert_eq!(back.n, 10);
        assert_eq!(back.seed, 7);
        assert_eq!(back.n_train, 8);
    }
}
