//! Per-view instance embeddings by mask pooling over a view's feature map,
//! and the teacher's per-instance view extraction.

use crate::embedding::Embedding;
use crate::error::{invalid, CoreError, Result};
use crate::geometry::{build_sparse_mask, project_points, DEFAULT_DEPTH_TOLERANCE};
use crate::mask::BitMask2D;
use crate::mask_complete::{complete_mask, CompletionParams};
use crate::scene::{FeatureMap, InstanceProposal, Scene};
use crate::view_select::{
    select_views, ViewCount, ViewSelection, DEFAULT_FRAME_STRIDE, DEFAULT_K_PRE,
    DEFAULT_THETA_TH_DEG,
};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Linear map from pooled feature space (`C`) to embedding space (`D`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `D × C`; empty for the identity head.
    weight: Vec<f64>,
    bias: Vec<f64>,
    identity: bool,
}

impl ProjectionHead {
    pub fn identity(dim: usize) -> Self {
        Self {
            in_dim: dim,
            out_dim: dim,
            weight: Vec::new(),
            bias: Vec::new(),
            identity: true,
        }
    }

    pub fn linear(out_dim: usize, in_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_dim * in_dim {
            return Err(CoreError::Shape {
                what: "head.weight".into(),
                expected: out_dim * in_dim,
                actual: weight.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(CoreError::Shape {
                what: "head.bias".into(),
                expected: out_dim,
                actual: bias.len(),
            });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("head"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            identity: false,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn input_dim(&self) -> usize {
        self.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(CoreError::Shape {
                what: "head input".into(),
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        if self.identity {
            return Ok(x.to_vec());
        }
        Ok(self
            .weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| crate::math::dot(row, x) + b)
            .collect())
    }
}

/// Maps each of `n_in` input rows to one of `n_out` contiguous blocks
/// (`floor(a·n_in/n_out)` starts block `a`).
fn block_index(n_in: usize, n_out: usize) -> Vec<usize> {
    let mut idx = vec![0; n_in];
    for a in 0..n_out {
        let start = a * n_in / n_out;
        let end = (a + 1) * n_in / n_out;
        for i in &mut idx[start..end] {
            *i = a;
        }
    }
    idx
}

/// Max-rule downsampling under a proportional block partition: an output
/// pixel is set iff any input pixel of its block is set.
pub fn downsample_mask(mask: &BitMask2D, h_out: usize, w_out: usize) -> Result<BitMask2D> {
    if h_out == 0 || w_out == 0 {
        return Err(invalid("output size", "zero output dimension"));
    }
    if h_out > mask.height() || w_out > mask.width() {
        return Err(invalid(
            "output size",
            format!(
                "{h_out}×{w_out} exceeds input {}×{}",
                mask.height(),
                mask.width()
            ),
        ));
    }
    let rows = block_index(mask.height(), h_out);
    let cols = block_index(mask.width(), w_out);
    let mut out = BitMask2D::new(h_out, w_out);
    for (u, v) in mask.iter_active() {
        out.set(rows[u], cols[v]);
    }
    Ok(out)
}

/// Per-channel mean of `features` over the active pixels of `mask`.
pub fn mask_pool(mask: &BitMask2D, features: &FeatureMap) -> Result<Vec<f64>> {
    if mask.height() != features.height || mask.width() != features.width {
        return Err(CoreError::Shape {
            what: "aligned mask".into(),
            expected: features.height * features.width,
            actual: mask.height() * mask.width(),
        });
    }
    if mask.is_empty() {
        return Err(CoreError::EmptyMask);
    }
    let active: Vec<usize> = mask
        .as_bytes()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0)
        .map(|(i, _)| i)
        .collect();
    let n = active.len() as f64;
    Ok((0..features.channels)
        .map(|c| {
            let plane = features.plane(c);
            active.iter().map(|&i| plane[i] as f64).sum::<f64>() / n
        })
        .collect())
}

/// `normalize(head(mask_pool(downsample(dense_mask), features)))`.
pub fn embed_view(
    dense_mask: &BitMask2D,
    features: Option<&FeatureMap>,
    head: &ProjectionHead,
) -> Result<Embedding> {
    let features = features.ok_or(CoreError::MissingFeatureMap)?;
    let aligned = downsample_mask(dense_mask, features.height, features.width)?;
    let pooled = mask_pool(&aligned, features)?;
    Embedding::normalized(head.apply(&pooled)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherParams {
    pub k_pre: usize,
    pub theta_th_deg: f64,
    pub frame_stride: usize,
    pub depth_tolerance: f64,
    pub completion: CompletionParams,
}

impl Default for TeacherParams {
    fn default() -> Self {
        Self {
            k_pre: DEFAULT_K_PRE,
            theta_th_deg: DEFAULT_THETA_TH_DEG,
            frame_stride: DEFAULT_FRAME_STRIDE,
            depth_tolerance: DEFAULT_DEPTH_TOLERANCE,
            completion: CompletionParams::default(),
        }
    }
}

impl TeacherParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_pre == 0 {
            return Err(invalid("k_pre", "must be >= 1"));
        }
        if !(self.theta_th_deg >= 0.0) {
            return Err(invalid("theta_th_deg", "must be >= 0"));
        }
        if self.frame_stride == 0 {
            return Err(invalid("frame_stride", "must be >= 1"));
        }
        if !(self.depth_tolerance > 0.0) {
            return Err(invalid("depth_tolerance", "must be > 0"));
        }
        self.completion.validate()
    }
}

/// Per-view record of the teacher's work on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub view: usize,
    pub frame_index: i64,
    pub sparse_count: usize,
    pub dense_count: usize,
    /// `None` when the view was dropped (no support after downsampling).
    pub embedding: Option<Embedding>,
}

/// The retained views of one instance and their embeddings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceViews {
    pub selection: ViewSelection,
    pub records: Vec<ViewRecord>,
}

impl InstanceViews {
    pub fn embeddings(&self) -> impl Iterator<Item = &Embedding> {
        self.records.iter().filter_map(|r| r.embedding.as_ref())
    }

    /// True when no view produced an embedding.
    pub fn is_unembeddable(&self) -> bool {
        self.embeddings().next().is_none()
    }
}

/// Projection, view selection, mask completion and per-view embedding for
/// one proposal. Only views whose frame index is a multiple of the frame
/// stride are considered.
pub fn extract_view_embeddings(
    scene: &Scene,
    proposal: &InstanceProposal,
    head: &ProjectionHead,
    params: &TeacherParams,
) -> Result<InstanceViews> {
    let (h, w) = (scene.meta.image_height, scene.meta.image_width);
    let points = scene.proposal_points(proposal);
    let mut sparse: Vec<Option<BitMask2D>> = vec![None; scene.views.len()];
    let mut counts = Vec::new();
    for (j, view) in scene.views.iter().enumerate() {
        if view.frame_index.rem_euclid(params.frame_stride as i64) != 0 {
            continue;
        }
        let pixels = project_points(&points, view, j, h, w, params.depth_tolerance)?;
        let mask = build_sparse_mask(&pixels, h, w)?;
        counts.push(ViewCount {
            view: j,
            frame_index: view.frame_index,
            count: mask.active_count(),
        });
        sparse[j] = Some(mask);
    }
    let rotations: Vec<_> = scene.views.iter().map(|v| v.rotation).collect();
    let selection = select_views(&counts, &rotations, params.k_pre, params.theta_th_deg)?;
    let mut records = Vec::with_capacity(selection.retained.len());
    for c in &selection.retained {
        let sparse_mask = sparse[c.view].as_ref().expect("ranked views were projected");
        let dense = complete_mask(sparse_mask, &params.completion)?;
        let embedding = match embed_view(&dense.mask, scene.views[c.view].features(), head) {
            Ok(e) => Some(e),
            Err(CoreError::EmptyMask | CoreError::DegenerateVector) => None,
            Err(e) => return Err(e),
        };
        records.push(ViewRecord {
            view: c.view,
            frame_index: c.frame_index,
            sparse_count: c.count,
            dense_count: dense.mask.active_count(),
            embedding,
        });
    }
    Ok(InstanceViews { selection, records })
}
