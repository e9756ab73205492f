//! Parametric heightfield object models.
//!
//! Objects are flat-bottomed plates (~30 mm x 25 mm, a few mm high) with a
//! small set of surface features that stand in for the key features of the
//! real parts: beveled edges, rectangular notches, raised studs. Heights are
//! evaluated in the object frame with `(u, v) = (0, 0)` at the footprint
//! center.

use crate::error::{Error, Result};

/// Which footprint edge a bevel runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    PosU,
    NegU,
    PosV,
    NegV,
}

/// One surface feature in the object frame.
#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceFeature {
    /// Linear ramp from the full height down by `drop` at the given edge,
    /// starting `width` mm inward.
    Bevel { edge: Edge, width: f64, drop: f64 },
    /// Rectangular cut of depth `depth` over `u0..u1` x `v0..v1`.
    Notch { u0: f64, u1: f64, v0: f64, v1: f64, depth: f64 },
    /// Raised rectangular stud of the given height.
    Stud { u0: f64, u1: f64, v0: f64, v1: f64, height: f64 },
}

/// A flat-bottomed plate with surface features.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    /// Footprint extent along the object's own u axis (mm).
    pub width_u: f64,
    /// Footprint extent along the object's own v axis (mm).
    pub width_v: f64,
    /// Plate height before features (mm).
    pub base_height: f64,
    pub features: Vec<SurfaceFeature>,
}

impl ObjectModel {
    /// The lower object of the default pair: beveled +u edge and a 2 mm
    /// notch.
    pub fn default_lower() -> Self {
        Self {
            width_u: 30.0,
            width_v: 25.0,
            base_height: 5.0,
            features: vec![
                SurfaceFeature::Bevel { edge: Edge::PosU, width: 6.0, drop: 3.0 },
                SurfaceFeature::Notch { u0: -9.0, u1: -3.0, v0: -5.0, v1: 5.0, depth: 2.0 },
            ],
        }
    }

    /// The top object of the default pair: beveled -v edge and a corner stud.
    pub fn default_top() -> Self {
        Self {
            width_u: 30.0,
            width_v: 25.0,
            base_height: 5.0,
            features: vec![
                SurfaceFeature::Bevel { edge: Edge::NegV, width: 5.0, drop: 2.5 },
                SurfaceFeature::Stud { u0: 8.0, u1: 13.0, v0: 5.5, v1: 10.5, height: 1.5 },
            ],
        }
    }

    /// Surface height at `(u, v)` in the object frame, `None` outside the
    /// footprint. Piecewise smooth and deterministic.
    pub fn height_at(&self, u: f64, v: f64) -> Option<f64> {
        let hu = self.width_u / 2.0;
        let hv = self.width_v / 2.0;
        if u < -hu || u > hu || v < -hv || v > hv {
            return None;
        }
        let mut h = self.base_height;
        for f in &self.features {
            match *f {
                SurfaceFeature::Bevel { edge, width, drop } => {
                    let dist_to_edge = match edge {
                        Edge::PosU => hu - u,
                        Edge::NegU => u + hu,
                        Edge::PosV => hv - v,
                        Edge::NegV => v + hv,
                    };
                    if dist_to_edge < width {
                        h -= drop * (1.0 - dist_to_edge / width);
                    }
                }
                SurfaceFeature::Notch { u0, u1, v0, v1, depth } => {
                    if u >= u0 && u <= u1 && v >= v0 && v <= v1 {
                        h -= depth;
                    }
                }
                SurfaceFeature::Stud { u0, u1, v0, v1, height } => {
                    if u >= u0 && u <= u1 && v >= v0 && v <= v1 {
                        h += height;
                    }
                }
            }
        }
        Some(h)
    }

    /// Check footprint and height bounds: the plate must fit in 35 x 30 mm
    /// and the surface must stay within (0, 7] mm everywhere.
    pub fn validate(&self) -> Result<()> {
        if !(self.width_u > 0.0) || self.width_u > 35.0 || !(self.width_v > 0.0) || self.width_v > 30.0 {
            return Err(Error::InvalidArgument(format!(
                "object footprint {}x{} outside (0, 35] x (0, 30] mm",
                self.width_u, self.width_v
            )));
        }
        let (min_h, max_h) = self.height_bounds();
        if max_h > 7.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "object height {max_h:.3} mm exceeds 7 mm"
            )));
        }
        if min_h <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "object surface dips to {min_h:.3} mm"
            )));
        }
        Ok(())
    }

    /// (min, max) surface height, sampled on a 0.25 mm lattice.
    pub fn height_bounds(&self) -> (f64, f64) {
        let step = 0.25;
        let mut min_h = f64::INFINITY;
        let mut max_h = f64::NEG_INFINITY;
        let nu = (self.width_u / step).ceil() as usize + 1;
        let nv = (self.width_v / step).ceil() as usize + 1;
        for iu in 0..=nu {
            let u = -self.width_u / 2.0 + (iu as f64 / nu as f64) * self.width_u;
            for iv in 0..=nv {
                let v = -self.width_v / 2.0 + (iv as f64 / nv as f64) * self.width_v;
                if let Some(h) = self.height_at(u, v) {
                    min_h = min_h.min(h);
                    max_h = max_h.max(h);
                }
            }
        }
        (min_h, max_h)
    }
}
