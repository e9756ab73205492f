//! Dense NCHW tensors in 64-bit floats.

use crate::error::{Error, Result};
use crate::geometry::Raster;

/// A batch of feature maps: `(N, C, H, W)`, row-major, f64 storage.
///
/// Training math runs in f64 so the finite-difference oracles hold to tight
/// tolerances; checkpoints store f32 at the serialization boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} values for ({n}, {c}, {h}, {w})",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Single-image, single-channel tensor from a raster (H = nx, W = ny).
    pub fn from_raster(r: &Raster) -> Self {
        Self { n: 1, c: 1, h: r.nx, w: r.ny, data: r.data.clone() }
    }

    /// Batch tensor from equally sized rasters.
    pub fn from_rasters(rs: &[&Raster]) -> Result<Self> {
        let Some(first) = rs.first() else {
            return Err(Error::EmptyInput("batch of zero rasters".into()));
        };
        let (h, w) = (first.nx, first.ny);
        let mut data = Vec::with_capacity(rs.len() * h * w);
        for r in rs {
            if r.nx != h || r.ny != w {
                return Err(Error::ShapeMismatch("rasters differ in size".into()));
            }
            data.extend_from_slice(&r.data);
        }
        Ok(Self { n: rs.len(), c: 1, h, w, data })
    }

    /// Item `i` of a single-channel batch as a raster.
    pub fn to_raster(&self, i: usize) -> Result<Raster> {
        if self.c != 1 || i >= self.n {
            return Err(Error::ShapeMismatch(format!(
                "raster view needs c=1 and i<{}, got c={} i={i}",
                self.n, self.c
            )));
        }
        let plane = self.plane(i, 0).to_vec();
        Raster::new(self.h, self.w, plane)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn same_shape(&self, o: &Tensor) -> bool {
        self.shape() == o.shape()
    }

    #[inline]
    pub fn plane_index(&self, n: usize, c: usize) -> usize {
        (n * self.c + c) * self.h * self.w
    }

    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.plane_index(n, c);
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let start = self.plane_index(n, c);
        let hw = self.h * self.w;
        &mut self.data[start..start + hw]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        self.data[((n * self.c + c) * self.h + y) * self.w + x] = v;
    }

    /// Debug-mode guard against NaN/Inf escaping a forward or backward pass.
    pub fn debug_assert_finite(&self, what: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite values in {what}"
        );
    }
}
