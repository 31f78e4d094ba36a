//! Scene-level teacher and student runs with per-stage timing, plus the
//! glue between them: distillation batches, accuracy and evaluation input.

use crate::config::RunConfig;
use crate::dataio::{ConsensusInstance, SceneConsensus, ViewDiagnostic};
use folk_core::eval::{nms_indices, GroundTruth, Prediction, StageTimings};
use folk_core::label_guide::{label_instance, TextBank};
use folk_core::student::{infer, AdapterParams, DistillBatch, Inference};
use folk_core::teacher::{extract_view_embeddings, ProjectionHead};
use folk_core::{CoreError, Scene};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{scene}: {reason}")]
    Scene { scene: String, reason: String },
    #[error("{scene}: {source}")]
    Core {
        scene: String,
        #[source]
        source: CoreError,
    },
}

fn core_err(scene: &Scene) -> impl FnOnce(CoreError) -> PipelineError + '_ {
    move |source| PipelineError::Core {
        scene: scene.meta.scene_id.clone(),
        source,
    }
}

pub fn scene_bank(scene: &Scene) -> Result<&TextBank, PipelineError> {
    scene.text_bank.as_ref().ok_or_else(|| PipelineError::Scene {
        scene: scene.meta.scene_id.clone(),
        reason: "no text bank (text.embeddings) in container".into(),
    })
}

/// The stored projection head, or identity when feature maps are already
/// in embedding space.
pub fn scene_head(scene: &Scene) -> Result<ProjectionHead, PipelineError> {
    match &scene.head {
        Some(h) => Ok(h.clone()),
        None if scene.meta.channels == scene.meta.embed_dim => Ok(ProjectionHead::identity(scene.meta.channels)),
        None => Err(PipelineError::Scene {
            scene: scene.meta.scene_id.clone(),
            reason: format!(
                "no projection head and channels ({}) != embed_dim ({})",
                scene.meta.channels, scene.meta.embed_dim
            ),
        }),
    }
}

/// Class-agnostic NMS over proposals ranked by objectness. Returns the kept
/// proposal indices in ascending order.
pub fn proposal_stage(scene: &Scene, nms_iou: f64) -> Vec<usize> {
    let preds: Vec<Prediction> = scene
        .proposals
        .iter()
        .map(|p| Prediction::new(p.point_indices.clone(), 0, p.objectness))
        .collect();
    let mut kept = nms_indices(&preds, nms_iou);
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherScene {
    pub consensus: SceneConsensus,
    pub timings: StageTimings,
}

impl TeacherScene {
    pub fn unembeddable(&self) -> impl Iterator<Item = usize> + '_ {
        self.consensus
            .instances
            .iter()
            .filter(|i| i.pseudo_label.is_none())
            .map(|i| i.proposal)
    }
}

/// Full teacher path on one scene: NMS, per-instance view extraction,
/// then classification and voting.
pub fn run_teacher(scene: &Scene, cfg: &RunConfig) -> Result<TeacherScene, PipelineError> {
    let bank = scene_bank(scene)?;
    let head = scene_head(scene)?;
    let params = cfg.teacher_params();

    let t0 = Instant::now();
    let kept = proposal_stage(scene, cfg.nms_iou);
    let t1 = Instant::now();
    let mut extracted = Vec::with_capacity(kept.len());
    for &i in &kept {
        let views = extract_view_embeddings(scene, &scene.proposals[i], &head, &params).map_err(core_err(scene))?;
        extracted.push((i, views));
    }
    let t2 = Instant::now();
    let mut instances = Vec::with_capacity(kept.len());
    for (i, views) in extracted {
        let embeddings: Vec<_> = views.embeddings().cloned().collect();
        let outcome = if embeddings.is_empty() {
            None
        } else {
            Some(label_instance(&embeddings, bank).map_err(core_err(scene))?)
        };
        let mut labels = outcome.as_ref().map(|o| o.view_labels.iter());
        let diagnostics = views
            .records
            .iter()
            .map(|r| ViewDiagnostic {
                view: r.view,
                frame_index: r.frame_index,
                sparse_count: r.sparse_count,
                dense_count: r.dense_count,
                label: match (&r.embedding, labels.as_mut()) {
                    (Some(_), Some(it)) => it.next().copied(),
                    _ => None,
                },
            })
            .collect();
        instances.push(ConsensusInstance {
            proposal: i,
            pseudo_label: outcome.as_ref().map(|o| o.pseudo_label),
            agreeing: outcome.as_ref().map_or(0, |o| o.agreeing),
            embedding: outcome.map(|o| o.embedding.into_values()),
            views: diagnostics,
        });
    }
    let t3 = Instant::now();
    Ok(TeacherScene {
        consensus: SceneConsensus {
            scene_id: scene.meta.scene_id.clone(),
            embed_dim: bank.dim(),
            instances,
        },
        timings: StageTimings {
            proposal_generation_s: (t1 - t0).as_secs_f64(),
            data_processing_extraction_s: (t2 - t1).as_secs_f64(),
            label_inference_s: (t3 - t2).as_secs_f64(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentScene {
    pub scene_id: String,
    /// `(proposal index, inference)` for every kept proposal.
    pub predictions: Vec<(usize, Inference)>,
    /// Stage 2 is always exactly zero: the student never touches images.
    pub timings: StageTimings,
    pub image_accesses: u64,
}

/// Student path on one scene: NMS, then direct inference from point
/// features.
pub fn run_student(scene: &Scene, params: &AdapterParams, cfg: &RunConfig) -> Result<StudentScene, PipelineError> {
    let bank = scene_bank(scene)?;
    let before = scene.image_accesses();
    let t0 = Instant::now();
    let kept = proposal_stage(scene, cfg.nms_iou);
    let t1 = Instant::now();
    let proposals: Vec<_> = kept.iter().map(|&i| scene.proposals[i].clone()).collect();
    let out = infer(&proposals, params, bank, cfg.tau).map_err(core_err(scene))?;
    let t2 = Instant::now();
    Ok(StudentScene {
        scene_id: scene.meta.scene_id.clone(),
        predictions: kept.into_iter().zip(out).collect(),
        timings: StageTimings {
            proposal_generation_s: (t1 - t0).as_secs_f64(),
            data_processing_extraction_s: 0.0,
            label_inference_s: (t2 - t1).as_secs_f64(),
        },
        image_accesses: scene.image_accesses() - before,
    })
}

/// One distillation batch from a scene's labeled instances, or `None`
/// when fewer than two instances carry a pseudo-label.
pub fn distill_batch(scene: &Scene, consensus: &SceneConsensus) -> Result<Option<DistillBatch>, PipelineError> {
    let mut targets = Vec::new();
    let mut pooled = Vec::new();
    let mut labels = Vec::new();
    for (inst, label, emb) in consensus.labeled() {
        let p = scene.proposals.get(inst.proposal).ok_or_else(|| PipelineError::Scene {
            scene: scene.meta.scene_id.clone(),
            reason: format!("consensus refers to missing proposal {}", inst.proposal),
        })?;
        targets.extend_from_slice(emb);
        pooled.extend(p.pooled_features());
        labels.push(label);
    }
    if labels.len() < 2 {
        return Ok(None);
    }
    DistillBatch::new(targets, pooled, labels).map(Some).map_err(core_err(scene))
}

/// Correct and total counts of labels against proposal ground truth, over
/// proposals that have one. `None` labels count as wrong.
pub fn label_accuracy(scene: &Scene, labels: impl IntoIterator<Item = (usize, Option<usize>)>) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (i, label) in labels {
        if let Some(gt) = scene.proposals[i].gt_label() {
            total += 1;
            correct += usize::from(label == Some(gt));
        }
    }
    (correct, total)
}

pub fn teacher_accuracy(scene: &Scene, t: &TeacherScene) -> (usize, usize) {
    label_accuracy(scene, t.consensus.instances.iter().map(|i| (i.proposal, i.pseudo_label)))
}

pub fn student_accuracy(scene: &Scene, s: &StudentScene) -> (usize, usize) {
    label_accuracy(scene, s.predictions.iter().map(|(i, inf)| (*i, Some(inf.label))))
}

/// Predictions over proposal masks, scored by confidence.
pub fn student_predictions(scene: &Scene, s: &[(usize, Inference)]) -> Vec<Prediction> {
    s.iter()
        .map(|(i, inf)| Prediction::new(scene.proposals[*i].point_indices.clone(), inf.label, inf.confidence))
        .collect()
}

pub fn ground_truth(scene: &Scene) -> Vec<GroundTruth> {
    scene
        .ground_truth
        .iter()
        .map(|g| GroundTruth::new(g.point_indices.clone(), g.label))
        .collect()
}

/// Runs `f` over `items` on a pool of `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(f).collect())
}
