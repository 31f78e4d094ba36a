//! Pinhole projection of instance points and sparse mask construction.

use crate::error::{invalid, Result};
use crate::mask::BitMask2D;
use crate::scene::CameraView;
use alloc::format;
use alloc::vec::Vec;

/// Default depth agreement tolerance for the visibility test, in meters.
pub const DEFAULT_DEPTH_TOLERANCE: f64 = 0.10;

/// Distinct in-bounds pixels `(row, col)` hit by an instance in one view,
/// sorted in raster order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelSet {
    pub view: usize,
    pub pixels: Vec<(usize, usize)>,
}

impl PixelSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Projects a world point into `view`. Returns the rounded `(row, col)` and
/// camera-space depth, or `None` when the point is not in front of the
/// camera.
///
/// Rounding is to nearest with ties to even.
#[inline]
pub fn project_point(point: [f64; 3], view: &CameraView) -> Option<(i64, i64, f64)> {
    let p = view.rotation.mul_vec(point);
    let cam = [
        p[0] + view.translation[0],
        p[1] + view.translation[1],
        p[2] + view.translation[2],
    ];
    let z = cam[2];
    if !(z > 0.0) {
        return None;
    }
    let h = view.intrinsics.mul_vec(cam);
    let col = libm::rint(h[0] / h[2]);
    let row = libm::rint(h[1] / h[2]);
    if !col.is_finite() || !row.is_finite() {
        return None;
    }
    Some((row as i64, col as i64, z))
}

/// Projects `points` into `view`, keeping in-bounds projections with
/// positive depth. When the view carries a depth map, a projection is kept
/// only if `|z − depth(row, col)| ≤ depth_tolerance`; invalid (zero)
/// depth therefore rejects the point.
pub fn project_points(
    points: &[[f64; 3]],
    view: &CameraView,
    view_index: usize,
    height: usize,
    width: usize,
    depth_tolerance: f64,
) -> Result<PixelSet> {
    if !(depth_tolerance > 0.0) {
        return Err(invalid(
            "depth_tolerance",
            format!("must be > 0, got {depth_tolerance}"),
        ));
    }
    let depth = if view.has_depth() { view.depth() } else { None };
    let mut pixels = Vec::new();
    for &pt in points {
        let Some((row, col, z)) = project_point(pt, view) else {
            continue;
        };
        if row < 0 || col < 0 || row as usize >= height || col as usize >= width {
            continue;
        }
        let (row, col) = (row as usize, col as usize);
        if let Some(d) = depth {
            let observed = d.at(row, col) as f64;
            if !(libm::fabs(z - observed) <= depth_tolerance) {
                continue;
            }
        }
        pixels.push((row, col));
    }
    pixels.sort_unstable();
    pixels.dedup();
    Ok(PixelSet {
        view: view_index,
        pixels,
    })
}

/// Sets exactly the listed pixels of an `h × w` mask.
pub fn build_sparse_mask(pixels: &PixelSet, h: usize, w: usize) -> Result<BitMask2D> {
    let mut mask = BitMask2D::new(h, w);
    for &(u, v) in &pixels.pixels {
        if u >= h || v >= w {
            return Err(invalid(
                "pixels",
                format!("coordinate ({u}, {v}) outside {h}×{w}"),
            ));
        }
        mask.set(u, v);
    }
    Ok(mask)
}
