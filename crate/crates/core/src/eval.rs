//! Instance segmentation metrics over point-index masks: IoU, NMS,
//! average precision, matching rate, and per-stage timing aggregation.

use crate::error::{invalid, Result};
use alloc::vec;
use alloc::vec::Vec;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn map_thresholds() -> [f64; 10] {
    core::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Sorted, duplicate-free point indices.
    pub point_indices: Vec<u32>,
    pub label: usize,
    pub score: f64,
}

impl Prediction {
    pub fn new(mut point_indices: Vec<u32>, label: usize, score: f64) -> Self {
        point_indices.sort_unstable();
        point_indices.dedup();
        Self {
            point_indices,
            label,
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Sorted, duplicate-free point indices.
    pub point_indices: Vec<u32>,
    pub label: usize,
}

impl GroundTruth {
    pub fn new(mut point_indices: Vec<u32>, label: usize) -> Self {
        point_indices.sort_unstable();
        point_indices.dedup();
        Self {
            point_indices,
            label,
        }
    }
}

/// `|a ∩ b| / |a ∪ b|` for sorted duplicate-free index sets; 0 when both
/// are empty.
pub fn mask_iou(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Indices of `scores` sorted by descending score, ties by index.
fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Class-agnostic greedy NMS: visiting by descending score, a prediction
/// is dropped when its IoU with any kept one exceeds `iou_th`. Returns the
/// kept indices in visiting order.
pub fn nms_indices(preds: &[Prediction], iou_th: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(preds.iter().map(|p| p.score)) {
        let keep = kept
            .iter()
            .all(|&k| mask_iou(&preds[k].point_indices, &preds[i].point_indices) <= iou_th);
        if keep {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(preds: &[Prediction], iou_th: f64) -> Vec<Prediction> {
    nms_indices(preds, iou_th)
        .into_iter()
        .map(|i| preds[i].clone())
        .collect()
}

/// Predictions and ground truth of one scene; matches never cross scenes.
#[derive(Debug, Clone, Copy)]
pub struct EvalScene<'a> {
    pub preds: &'a [Prediction],
    pub gts: &'a [GroundTruth],
}

/// Greedy one-to-one matching of one scene's predictions of `class`
/// against same-class ground truth. Returns `(score, is_true_positive)` per
/// prediction in visiting order. Each prediction takes the unmatched
/// ground truth of highest IoU (lowest index on ties) if that IoU reaches
/// `iou_th`.
pub fn match_class(scene: &EvalScene<'_>, class: usize, iou_th: f64) -> Vec<(f64, bool)> {
    let gts: Vec<&GroundTruth> = scene.gts.iter().filter(|g| g.label == class).collect();
    let preds: Vec<&Prediction> = scene.preds.iter().filter(|p| p.label == class).collect();
    let mut used = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for i in score_order(preds.iter().map(|p| p.score)) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let iou = mask_iou(&preds[i].point_indices, &gt.point_indices);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let tp = match best {
            Some((g, iou)) if iou >= iou_th => {
                used[g] = true;
                true
            }
            _ => false,
        };
        out.push((preds[i].score, tp));
    }
    out
}

/// All-point interpolated area under the precision/recall curve of scored
/// detections; `num_gt` positives exist in total.
pub fn interpolated_ap(mut detections: Vec<(f64, bool)>, num_gt: usize) -> f64 {
    if num_gt == 0 || detections.is_empty() {
        return 0.0;
    }
    // stable: cross-scene ties keep scene order
    detections.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));
    let mut precision = Vec::with_capacity(detections.len());
    let mut recall = Vec::with_capacity(detections.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, hit) in &detections {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOptions {
    /// Classes excluded from evaluation.
    pub ignore_classes: Vec<usize>,
}

/// Per-class AP at one IoU threshold, for every class with at least one
/// ground truth instance across `scenes`.
pub fn per_class_ap(scenes: &[EvalScene<'_>], iou_th: f64, opts: &EvalOptions) -> Vec<(usize, f64)> {
    let max_class = scenes
        .iter()
        .flat_map(|s| s.gts.iter().map(|g| g.label))
        .max();
    let Some(max_class) = max_class else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for class in 0..=max_class {
        if opts.ignore_classes.contains(&class) {
            continue;
        }
        let num_gt: usize = scenes
            .iter()
            .map(|s| s.gts.iter().filter(|g| g.label == class).count())
            .sum();
        if num_gt == 0 {
            continue;
        }
        let dets: Vec<(f64, bool)> = scenes
            .iter()
            .flat_map(|s| match_class(s, class, iou_th))
            .collect();
        out.push((class, interpolated_ap(dets, num_gt)));
    }
    out
}

/// Mean AP over classes with ground truth; 0 when there is none.
pub fn average_precision(scenes: &[EvalScene<'_>], iou_th: f64, opts: &EvalOptions) -> f64 {
    let per = per_class_ap(scenes, iou_th, opts);
    if per.is_empty() {
        return 0.0;
    }
    per.iter().map(|(_, ap)| ap).sum::<f64>() / per.len() as f64
}

/// AP averaged over IoU thresholds 0.50:0.05:0.95.
pub fn mean_average_precision(scenes: &[EvalScene<'_>], opts: &EvalOptions) -> f64 {
    let th = map_thresholds();
    th.iter()
        .map(|&t| average_precision(scenes, t, opts))
        .sum::<f64>()
        / th.len() as f64
}

/// AP over the classes of one subset (e.g. head/common/tail).
pub fn subset_average_precision(
    scenes: &[EvalScene<'_>],
    iou_th: f64,
    subset: &[usize],
    opts: &EvalOptions,
) -> Option<f64> {
    let per: Vec<f64> = per_class_ap(scenes, iou_th, opts)
        .into_iter()
        .filter(|(c, _)| subset.contains(c))
        .map(|(_, ap)| ap)
        .collect();
    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

/// Number of predictions matched one-to-one to same-class ground truth at
/// IoU ≥ 0.5 in one scene.
pub fn matched_count(scene: &EvalScene<'_>) -> usize {
    let mut classes: Vec<usize> = scene.preds.iter().map(|p| p.label).collect();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| match_class(scene, c, 0.5).iter().filter(|(_, tp)| *tp).count())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingRate {
    pub proposals_per_scene: f64,
    pub rate_percent: f64,
}

/// Mean prediction count and mean per-scene matching rate (percent); a
/// scene with no predictions has rate 0.
pub fn matching_rate(scenes: &[EvalScene<'_>]) -> MatchingRate {
    if scenes.is_empty() {
        return MatchingRate {
            proposals_per_scene: 0.0,
            rate_percent: 0.0,
        };
    }
    let mut count = 0.0;
    let mut rate = 0.0;
    for s in scenes {
        count += s.preds.len() as f64;
        if !s.preds.is_empty() {
            rate += 100.0 * matched_count(s) as f64 / s.preds.len() as f64;
        }
    }
    let n = scenes.len() as f64;
    MatchingRate {
        proposals_per_scene: count / n,
        rate_percent: rate / n,
    }
}

/// Stage names, in pipeline order.
pub const STAGE_NAMES: [&str; 3] = [
    "3D Proposal Generation",
    "2D Data Processing & Extraction",
    "Prediction Label Inference",
];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub proposal_generation_s: f64,
    pub data_processing_extraction_s: f64,
    pub label_inference_s: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.proposal_generation_s + self.data_processing_extraction_s + self.label_inference_s
    }

    pub fn as_array(&self) -> [f64; 3] {
        [
            self.proposal_generation_s,
            self.data_processing_extraction_s,
            self.label_inference_s,
        ]
    }
}

/// Stage marker of an instrumented run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ProposalGeneration,
    DataProcessingExtraction,
    LabelInference,
}

/// One timed stage of one scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRecord {
    pub scene: usize,
    pub stage: Stage,
    pub seconds: f64,
}

/// Per-scene mean wall clock of each stage. Every scene must have a
/// proposal-generation and a label-inference marker; a missing
/// data-processing marker counts as zero seconds (student path).
pub fn runtime_breakdown(records: &[StageRecord]) -> Result<StageTimings> {
    let Some(max_scene) = records.iter().map(|r| r.scene).max() else {
        return Err(invalid("run log", "no stage markers"));
    };
    let mut seen = vec![[false; 3]; max_scene + 1];
    let mut sum = [0.0f64; 3];
    for r in records {
        if !(r.seconds >= 0.0) || !r.seconds.is_finite() {
            return Err(invalid("run log", "stage time must be finite and >= 0"));
        }
        let k = match r.stage {
            Stage::ProposalGeneration => 0,
            Stage::DataProcessingExtraction => 1,
            Stage::LabelInference => 2,
        };
        seen[r.scene][k] = true;
        sum[k] += r.seconds;
    }
    let scenes = seen.iter().filter(|s| s.iter().any(|&b| b)).count();
    if let Some(bad) = seen
        .iter()
        .position(|s| s.iter().any(|&b| b) && !(s[0] && s[2]))
    {
        return Err(invalid(
            "run log",
            alloc::format!("scene {bad} lacks a proposal-generation or label-inference marker"),
        ));
    }
    let n = scenes as f64;
    Ok(StageTimings {
        proposal_generation_s: sum[0] / n,
        data_processing_extraction_s: sum[1] / n,
        label_inference_s: sum[2] / n,
    })
}
