//! In-memory scene model: point cloud, posed views, proposals and optional
//! ground truth.

use crate::error::{invalid, CoreError, Result};
use crate::label_guide::TextBank;
use crate::mask::BitMask2D;
use crate::math::Mat3;
use crate::teacher::ProjectionHead;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

/// `height × width` depth in meters; 0 marks an invalid reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.values[u * self.width + v]
    }
}

/// Channel-major `channels × height × width` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    #[inline]
    pub fn at(&self, c: usize, u: usize, v: usize) -> f32 {
        self.values[(c * self.height + u) * self.width + v]
    }

    /// The contiguous `height × width` plane of channel `c`.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

/// One posed frame. `rotation`/`translation` map world to camera
/// coordinates: `x_cam = R x_world + t`.
///
/// Reads of the depth and feature maps go through [`CameraView::depth`]
/// and [`CameraView::features`], which count accesses so callers can
/// prove that a code path never touched image-domain data.
#[derive(Debug)]
pub struct CameraView {
    pub frame_index: i64,
    pub intrinsics: Mat3,
    pub rotation: Mat3,
    pub translation: [f64; 3],
    depth: Option<DepthMap>,
    features: Option<FeatureMap>,
    image_accesses: AtomicU64,
}

impl Clone for CameraView {
    fn clone(&self) -> Self {
        Self {
            frame_index: self.frame_index,
            intrinsics: self.intrinsics,
            rotation: self.rotation,
            translation: self.translation,
            depth: self.depth.clone(),
            features: self.features.clone(),
            image_accesses: AtomicU64::new(self.image_accesses()),
        }
    }
}

impl PartialEq for CameraView {
    /// Compares content only; access counters are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.frame_index == other.frame_index
            && self.intrinsics == other.intrinsics
            && self.rotation == other.rotation
            && self.translation == other.translation
            && self.depth == other.depth
            && self.features == other.features
    }
}

impl CameraView {
    pub fn new(frame_index: i64, intrinsics: Mat3, rotation: Mat3, translation: [f64; 3]) -> Self {
        Self {
            frame_index,
            intrinsics,
            rotation,
            translation,
            depth: None,
            features: None,
            image_accesses: AtomicU64::new(0),
        }
    }

    pub fn with_depth(mut self, depth: DepthMap) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn with_features(mut self, features: FeatureMap) -> Self {
        self.features = Some(features);
        self
    }

    pub fn set_depth(&mut self, depth: Option<DepthMap>) {
        self.depth = depth;
    }

    pub fn set_features(&mut self, features: Option<FeatureMap>) {
        self.features = features;
    }

    pub fn has_depth(&self) -> bool {
        self.depth.is_some()
    }

    pub fn has_features(&self) -> bool {
        self.features.is_some()
    }

    /// Depth map access (counted).
    pub fn depth(&self) -> Option<&DepthMap> {
        self.image_accesses.fetch_add(1, Ordering::Relaxed);
        self.depth.as_ref()
    }

    /// Feature map access (counted).
    pub fn features(&self) -> Option<&FeatureMap> {
        self.image_accesses.fetch_add(1, Ordering::Relaxed);
        self.features.as_ref()
    }

    pub fn image_accesses(&self) -> u64 {
        self.image_accesses.load(Ordering::Relaxed)
    }

    pub fn reset_access_counter(&self) {
        self.image_accesses.store(0, Ordering::Relaxed);
    }

    /// Uncounted access for serialization.
    pub fn raw_depth(&self) -> Option<&DepthMap> {
        self.depth.as_ref()
    }

    /// Uncounted access for serialization.
    pub fn raw_features(&self) -> Option<&FeatureMap> {
        self.features.as_ref()
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> [f64; 3] {
        let c = self.rotation.transpose().mul_vec(self.translation);
        [-c[0], -c[1], -c[2]]
    }
}

/// One class-agnostic 3D instance hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceProposal {
    pub point_indices: Vec<u32>,
    /// Row-major `M × feature_dim`.
    pub point_features: Vec<f32>,
    pub feature_dim: usize,
    pub objectness: f64,
    /// Ground-truth class id, −1 when unknown.
    pub gt_label: i32,
}

impl InstanceProposal {
    pub fn num_points(&self) -> usize {
        self.point_indices.len()
    }

    pub fn feature_row(&self, m: usize) -> &[f32] {
        &self.point_features[m * self.feature_dim..(m + 1) * self.feature_dim]
    }

    /// Mean of the point feature rows.
    pub fn pooled_features(&self) -> Vec<f64> {
        mean_rows(&self.point_features, self.feature_dim)
    }

    pub fn gt_label(&self) -> Option<usize> {
        (self.gt_label >= 0).then_some(self.gt_label as usize)
    }

    fn validate(&self, index: usize, num_points: usize) -> Result<()> {
        let bad = |reason: String| CoreError::InvalidProposal { index, reason };
        if self.point_indices.is_empty() {
            return Err(bad("no points".into()));
        }
        if self.feature_dim == 0 {
            return Err(bad("zero feature dimension".into()));
        }
        if self.point_features.len() != self.point_indices.len() * self.feature_dim {
            return Err(bad(format!(
                "point_features has {} values, expected {} × {}",
                self.point_features.len(),
                self.point_indices.len(),
                self.feature_dim
            )));
        }
        if let Some(&p) = self.point_indices.iter().find(|&&p| p as usize >= num_points) {
            return Err(bad(format!("point index {p} out of bounds ({num_points} points)")));
        }
        let mut sorted = self.point_indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("duplicate point index".into()));
        }
        if !(0.0..=1.0).contains(&self.objectness) {
            return Err(bad(format!("objectness {} outside [0,1]", self.objectness)));
        }
        if self.point_features.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite point feature".into()));
        }
        Ok(())
    }
}

/// Mean over the rows of a row-major matrix with `cols` columns.
pub fn mean_rows(values: &[f32], cols: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0f64; cols];
    let rows = values.len() / cols.max(1);
    for row in values.chunks_exact(cols) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x as f64;
        }
    }
    for o in &mut out {
        *o /= rows as f64;
    }
    out
}

/// A labeled ground-truth instance, with optional per-view 2D masks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub point_indices: Vec<u32>,
    pub label: usize,
    /// One mask per scene view, or empty when not stored.
    pub view_masks: Vec<BitMask2D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    pub scene_id: String,
    pub image_height: usize,
    pub image_width: usize,
    pub feature_height: usize,
    pub feature_width: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub point_feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub meta: SceneMeta,
    pub points: Vec<[f64; 3]>,
    pub views: Vec<CameraView>,
    pub proposals: Vec<InstanceProposal>,
    pub ground_truth: Vec<GroundTruthInstance>,
    pub text_bank: Option<TextBank>,
    pub head: Option<ProjectionHead>,
}

impl Scene {
    /// Checks every structural invariant; the first violation is returned
    /// with the offending item named.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        for (name, v) in [
            ("image_height", m.image_height),
            ("image_width", m.image_width),
            ("feature_height", m.feature_height),
            ("feature_width", m.feature_width),
            ("channels", m.channels),
            ("embed_dim", m.embed_dim),
            ("point_feature_dim", m.point_feature_dim),
        ] {
            if v == 0 {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("points"));
        }
        for (j, view) in self.views.iter().enumerate() {
            view.rotation.check_rotation(&format!("views[{j}].rotation"))?;
            if !view.intrinsics.is_finite() || view.translation.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite("view intrinsics/translation"));
            }
            if let Some(d) = view.raw_depth() {
                if d.height != m.image_height || d.width != m.image_width {
                    return Err(CoreError::Shape {
                        what: format!("views[{j}].depth"),
                        expected: m.image_height * m.image_width,
                        actual: d.height * d.width,
                    });
                }
                if d.values.len() != d.height * d.width {
                    return Err(CoreError::Shape {
                        what: format!("views[{j}].depth"),
                        expected: d.height * d.width,
                        actual: d.values.len(),
                    });
                }
                if d.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(invalid("depth", format!("views[{j}].depth has negative or non-finite values")));
                }
            }
            if let Some(f) = view.raw_features() {
                let expected = m.channels * m.feature_height * m.feature_width;
                if f.channels != m.channels
                    || f.height != m.feature_height
                    || f.width != m.feature_width
                    || f.values.len() != expected
                {
                    return Err(CoreError::Shape {
                        what: format!("views[{j}].features"),
                        expected,
                        actual: f.values.len(),
                    });
                }
            }
        }
        for (i, p) in self.proposals.iter().enumerate() {
            p.validate(i, self.points.len())?;
            if p.feature_dim != m.point_feature_dim {
                return Err(CoreError::Shape {
                    what: format!("proposals[{i}].point_features columns"),
                    expected: m.point_feature_dim,
                    actual: p.feature_dim,
                });
            }
        }
        for (i, g) in self.ground_truth.iter().enumerate() {
            if g.point_indices.is_empty()
                || g.point_indices.iter().any(|&p| p as usize >= self.points.len())
            {
                return Err(invalid("ground_truth", format!("gt[{i}] has empty or out-of-bounds points")));
            }
            if !g.view_masks.is_empty() && g.view_masks.len() != self.views.len() {
                return Err(CoreError::Shape {
                    what: format!("gt[{i}].view_masks"),
                    expected: self.views.len(),
                    actual: g.view_masks.len(),
                });
            }
            if let Some(bank) = &self.text_bank {
                if g.label >= bank.num_classes() {
                    return Err(CoreError::LabelOutOfRange {
                        label: g.label,
                        classes: bank.num_classes(),
                    });
                }
            }
        }
        if let Some(bank) = &self.text_bank {
            if bank.dim() != m.embed_dim {
                return Err(CoreError::Shape {
                    what: "text.embeddings columns".into(),
                    expected: m.embed_dim,
                    actual: bank.dim(),
                });
            }
        }
        if let Some(head) = &self.head {
            if head.input_dim() != m.channels || head.output_dim() != m.embed_dim {
                return Err(CoreError::Shape {
                    what: "head.weight".into(),
                    expected: m.embed_dim * m.channels,
                    actual: head.output_dim() * head.input_dim(),
                });
            }
        }
        Ok(())
    }

    /// Points of a proposal, in proposal order.
    pub fn proposal_points(&self, proposal: &InstanceProposal) -> Vec<[f64; 3]> {
        proposal
            .point_indices
            .iter()
            .map(|&i| self.points[i as usize])
            .collect()
    }

    /// Sum of image-domain accesses over all views.
    pub fn image_accesses(&self) -> u64 {
        self.views.iter().map(CameraView::image_accesses).sum()
    }

    pub fn reset_access_counters(&self) {
        for v in &self.views {
            v.reset_access_counter();
        }
    }
}
