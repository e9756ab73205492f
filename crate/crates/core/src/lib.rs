//! Reconstruction of partially occluded objects in single-view line-scan
//! point clouds.
//!
//! The pipeline turns an unordered scanner point cloud into an equidistant
//! depth image, segments the occluding top object, inpaints the hidden parts
//! of the lower object with a small U-Net trained on synthetic scenes, and
//! maps the result back onto the original non-equidistant grid:
//!
//! crop → DBSCAN filter → cluster selection → k-d-tree grid interpolation →
//! segmentation → top-object masking → inpainting → Otsu thresholding →
//! back-projection → scene recombination.
//!
//! Training uses a combined pixel/perceptual/style objective evaluated on
//! the feature taps of a frozen autoencoder loss network. Everything is
//! deterministic for a fixed seed, independent of the thread count; build
//! with `--no-default-features` for a purely sequential core.

pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod nn;
mod par;
pub mod post;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Configure the global thread pool used by the data-parallel paths.
///
/// Has no effect when the crate is built without the `parallel` feature or
/// when a pool has already been installed. `0` keeps the default (one worker
/// per logical CPU).
pub fn configure_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
    }
}
