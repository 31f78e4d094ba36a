//! Multi-view selection: keep the most visible views, then drop views whose
//! camera rotation is too close to an already kept one.

use crate::error::{invalid, Result};
use crate::math::Mat3;
use alloc::format;
use alloc::vec::Vec;

pub const DEFAULT_K_PRE: usize = 6;
pub const DEFAULT_THETA_TH_DEG: f64 = 5.0;
pub const DEFAULT_FRAME_STRIDE: usize = 10;

/// Visibility of an instance in one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewCount {
    /// Position of the view in the scene.
    pub view: usize,
    pub frame_index: i64,
    /// Projected pixel count `‖M‖₁`.
    pub count: usize,
}

/// Outcome of view selection for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ViewSelection {
    pub ranked: Vec<ViewCount>,
    pub retained: Vec<ViewCount>,
}

/// Top-`k_pre` views by projected pixel count, descending, ties broken by
/// ascending frame index. Views with no projected pixel are never ranked.
pub fn rank_views(counts: &[ViewCount], k_pre: usize) -> Result<Vec<ViewCount>> {
    if k_pre == 0 {
        return Err(invalid("k_pre", "must be >= 1"));
    }
    let mut ranked: Vec<ViewCount> = counts.iter().copied().filter(|c| c.count > 0).collect();
    ranked.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.frame_index.cmp(&b.frame_index))
            .then(a.view.cmp(&b.view))
    });
    ranked.truncate(k_pre);
    Ok(ranked)
}

/// Geodesic angle between two rotations in degrees:
/// `acos((tr(R_a R_bᵀ) − 1) / 2)` with the argument clamped to `[−1, 1]`.
pub fn angular_difference(ra: &Mat3, rb: &Mat3) -> Result<f64> {
    ra.check_rotation("R_a")?;
    rb.check_rotation("R_b")?;
    Ok(angular_difference_unchecked(ra, rb))
}

pub(crate) fn angular_difference_unchecked(ra: &Mat3, rb: &Mat3) -> f64 {
    let tr = ra.mul(&rb.transpose()).trace();
    let c = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
    libm::acos(c).to_degrees()
}

/// Greedy pose filter over ranked candidates: a candidate is kept iff its
/// angle to every already kept view is at least `theta_th_deg`. The first
/// candidate is always kept.
pub fn filter_similar_poses(
    candidates: &[ViewCount],
    rotations: &[Mat3],
    theta_th_deg: f64,
) -> Result<Vec<ViewCount>> {
    if !(theta_th_deg >= 0.0) {
        return Err(invalid(
            "theta_th_deg",
            format!("must be >= 0, got {theta_th_deg}"),
        ));
    }
    for c in candidates {
        let r = rotations.get(c.view).ok_or_else(|| {
            invalid("rotations", format!("no rotation for view {}", c.view))
        })?;
        r.check_rotation("candidate rotation")?;
    }
    let mut kept: Vec<ViewCount> = Vec::new();
    for c in candidates {
        let r = &rotations[c.view];
        let far = kept
            .iter()
            .all(|k| angular_difference_unchecked(&rotations[k.view], r) >= theta_th_deg);
        if far {
            kept.push(*c);
        }
    }
    Ok(kept)
}

/// Ranks then filters.
pub fn select_views(
    counts: &[ViewCount],
    rotations: &[Mat3],
    k_pre: usize,
    theta_th_deg: f64,
) -> Result<ViewSelection> {
    let ranked = rank_views(counts, k_pre)?;
    let retained = filter_similar_poses(&ranked, rotations, theta_th_deg)?;
    Ok(ViewSelection { ranked, retained })
}
