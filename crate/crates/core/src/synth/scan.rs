//! Single-viewpoint line-scan simulation.
//!
//! The scanner walks a nominal lattice (`line_pitch_x` between lines along
//! the conveyor, `sample_pitch_y` along the laser line) and returns the
//! highest surface at each sample: points of the lower object hidden under
//! the top object are simply absent. The reported y coordinate drifts with
//! surface height (`1 + height_divergence * z` local spacing), which makes
//! the recorded grid non-equidistant. Optional sparse outliers and dense
//! clutter bands (wall, floor, rails) emulate a raw factory scan.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Point3, PointCloud, LABEL_BACKGROUND};

use super::model::ObjectModel;

/// Rigid placement of an object on the belt.
///
/// `theta` rotates the object frame in-plane; a non-zero `tilt_angle` shears
/// the object upward along `tilt_axis`, pivoting on the footprint edge where
/// it touches the belt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
    /// Unit vector in the (x, y) plane; surface height grows along it.
    pub tilt_axis: (f64, f64),
    /// Tilt in radians, in `[0, 30 deg]`.
    pub tilt_angle: f64,
}

impl Pose {
    pub fn flat(tx: f64, ty: f64, theta: f64) -> Self {
        Self { tx, ty, theta, tilt_axis: (1.0, 0.0), tilt_angle: 0.0 }
    }
}

/// An object with its pose and label.
#[derive(Debug, Clone)]
pub struct PlacedObject {
    pub model: ObjectModel,
    pub pose: Pose,
    pub label: u8,
}

impl PlacedObject {
    /// Half-extent of the posed footprint along the tilt axis.
    pub fn half_span_along_axis(&self) -> f64 {
        let (c, s) = (self.pose.theta.cos(), self.pose.theta.sin());
        let (ax, ay) = self.pose.tilt_axis;
        // Rotated footprint axes projected on the tilt axis.
        let eu = (c * ax + s * ay).abs() * self.model.width_u / 2.0;
        let ev = (-s * ax + c * ay).abs() * self.model.width_v / 2.0;
        eu + ev
    }

    /// World-frame surface height at `(x, y)`, `None` outside the footprint.
    ///
    /// `margin` expands the footprint (used for shadow tests); the returned
    /// height is only meaningful for `margin = 0`.
    pub fn surface_at_margin(&self, x: f64, y: f64, margin: f64) -> Option<f64> {
        let p = &self.pose;
        let (c, s) = (p.theta.cos(), p.theta.sin());
        let dx = x - p.tx;
        let dy = y - p.ty;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let hu = self.model.width_u / 2.0 + margin;
        let hv = self.model.width_v / 2.0 + margin;
        if u < -hu || u > hu || v < -hv || v > hv {
            return None;
        }
        let h = self
            .model
            .height_at(u.clamp(-self.model.width_u / 2.0, self.model.width_u / 2.0),
                       v.clamp(-self.model.width_v / 2.0, self.model.width_v / 2.0))?;
        Some(h + self.lift_at(x, y))
    }

    pub fn surface_at(&self, x: f64, y: f64) -> Option<f64> {
        self.surface_at_margin(x, y, 0.0)
    }

    /// Height of the (sheared) bottom plane above the belt at `(x, y)`.
    pub fn lift_at(&self, x: f64, y: f64) -> f64 {
        let p = &self.pose;
        if p.tilt_angle == 0.0 {
            return 0.0;
        }
        let slope = p.tilt_angle.tan();
        let s = (x - p.tx) * p.tilt_axis.0 + (y - p.ty) * p.tilt_axis.1;
        slope * (s + self.half_span_along_axis())
    }

    /// Maximum surface height over the posed footprint, sampled at 0.5 mm.
    pub fn max_height(&self) -> f64 {
        let step = 0.5;
        let mut best = 0.0f64;
        let nu = (self.model.width_u / step).ceil() as usize;
        let nv = (self.model.width_v / step).ceil() as usize;
        let (c, s) = (self.pose.theta.cos(), self.pose.theta.sin());
        for iu in 0..=nu {
            let u = -self.model.width_u / 2.0 + (iu as f64 / nu as f64) * self.model.width_u;
            for iv in 0..=nv {
                let v = -self.model.width_v / 2.0 + (iv as f64 / nv as f64) * self.model.width_v;
                if let Some(h) = self.model.height_at(u, v) {
                    let x = self.pose.tx + c * u - s * v;
                    let y = self.pose.ty + s * u + c * v;
                    best = best.max(h + self.lift_at(x, y));
                }
            }
        }
        best
    }
}

/// A belt scene of zero or more placed objects.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub objects: Vec<PlacedObject>,
}

enum Sample {
    Hit { z: f64, label: u8 },
    Shadowed,
    Nothing,
}

impl Scene {
    /// Topmost surface at `(x, y)` with shadow handling: inside the widened
    /// silhouette of a higher object (but outside its true footprint) the
    /// beam returns nothing.
    fn sample(&self, x: f64, y: f64, shadow_margin: f64) -> Sample {
        let mut hit: Option<(f64, u8)> = None;
        for obj in &self.objects {
            if let Some(z) = obj.surface_at(x, y) {
                if hit.is_none_or(|(bz, _)| z > bz) {
                    hit = Some((z, obj.label));
                }
            }
        }
        if let Some((z, label)) = hit {
            return Sample::Hit { z, label };
        }
        if shadow_margin > 0.0 {
            for obj in &self.objects {
                if obj.surface_at_margin(x, y, shadow_margin).is_some() {
                    return Sample::Shadowed;
                }
            }
        }
        Sample::Nothing
    }
}

/// Scanner lattice, divergence, and noise configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScannerConfig {
    /// Pitch between scan lines along x (mm).
    pub line_pitch_x: f64,
    /// Nominal sample pitch along the laser line (mm).
    pub sample_pitch_y: f64,
    /// Per-mm spacing factor: local y spacing is `pitch * (1 + d * z)`.
    pub height_divergence: f64,
    /// Expected number of sparse outlier points per scan (Poisson).
    pub outlier_rate: f64,
    /// Emit wall / floor / rail clutter bands outside the crop region.
    pub clutter: bool,
    /// Widen occluder silhouettes by this margin when casting shadows (mm).
    pub shadow_margin: f64,
    /// Scanned x range (mm).
    pub x_range: (f64, f64),
    /// Scanned y range (mm).
    pub y_range: (f64, f64),
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self {
            line_pitch_x: 0.3,
            sample_pitch_y: 1.1,
            height_divergence: 0.003,
            outlier_rate: 30.0,
            clutter: true,
            shadow_margin: 0.0,
            x_range: (-15.0, 108.0),
            y_range: (0.0, 70.4),
        }
    }
}

impl ScannerConfig {
    /// Reported y coordinate for a nominal sample at height z: spacing
    /// stretches around the scan centerline as height increases.
    fn reported_y(&self, y_nominal: f64, z: f64) -> f64 {
        let y_center = (self.y_range.0 + self.y_range.1) / 2.0;
        y_nominal + self.height_divergence * z * (y_nominal - y_center)
    }
}

/// Top-down scan of a scene. Genuine surface points carry their object's
/// label; outliers and clutter are background.
pub fn simulate_scan(scene: &Scene, cfg: &ScannerConfig, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut points = Vec::new();
    let mut labels = Vec::new();

    let nx = ((cfg.x_range.1 - cfg.x_range.0) / cfg.line_pitch_x).floor() as usize;
    let ny = ((cfg.y_range.1 - cfg.y_range.0) / cfg.sample_pitch_y).floor() as usize;
    for i in 0..=nx {
        let x = cfg.x_range.0 + i as f64 * cfg.line_pitch_x;
        for j in 0..=ny {
            let y_nom = cfg.y_range.0 + j as f64 * cfg.sample_pitch_y;
            match scene.sample(x, y_nom, cfg.shadow_margin) {
                Sample::Hit { z, label } => {
                    points.push(Point3::new(x, cfg.reported_y(y_nom, z), z));
                    labels.push(label);
                }
                Sample::Shadowed | Sample::Nothing => {}
            }
        }
    }

    if cfg.clutter {
        let mut band = |x0: f64, x1: f64, x_step: f64, z: f64| {
            let n = ((x1 - x0) / x_step).floor() as usize;
            for i in 0..=n {
                let x = x0 + i as f64 * x_step;
                for j in 0..=ny {
                    let y = cfg.y_range.0 + j as f64 * cfg.sample_pitch_y;
                    points.push(Point3::new(x, y, z));
                    labels.push(LABEL_BACKGROUND);
                }
            }
        };
        // Wall on the left, above the height window.
        band(cfg.x_range.0, -3.0, cfg.line_pitch_x * 4.0, 25.0);
        // Floor band below the belt on the right.
        band(98.0, cfg.x_range.1, cfg.line_pitch_x * 4.0, -2.0);
        // Conveyor rails just outside the 92 mm frame.
        band(93.0, 96.0, cfg.line_pitch_x * 2.0, 8.0);
    }

    if cfg.outlier_rate > 0.0 {
        let poisson = Poisson::new(cfg.outlier_rate).expect("positive rate");
        let n_out = poisson.sample(rng) as usize;
        for _ in 0..n_out {
            points.push(Point3::new(
                rng.random_range(cfg.x_range.0..cfg.x_range.1),
                rng.random_range(cfg.y_range.0..cfg.y_range.1),
                rng.random_range(0.0..15.0),
            ));
            labels.push(LABEL_BACKGROUND);
        }
    }

    PointCloud::labeled(points, labels).expect("labels built alongside points")
}
