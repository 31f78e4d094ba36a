use super::adapter::{AdapterGrads, AdapterParams};
use super::loss::{ce_loss, contrastive_loss, total_grad, total_loss};
use crate::error::{invalid, CoreError, Result};
use crate::label_guide::{argmax_first, TextBank};
use crate::math::{norm, softmax_into};
use crate::scene::InstanceProposal;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_ALPHA: f64 = 0.4;
pub const DEFAULT_BETA: f64 = 0.6;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: 3000,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(invalid("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) || !(self.alpha + self.beta > 0.0) {
            return Err(invalid(
                "alpha/beta",
                format!(
                    "need alpha >= 0, beta >= 0, alpha + beta > 0 (got {}, {})",
                    self.alpha, self.beta
                ),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("lr", "must be > 0"));
        }
        Ok(())
    }
}

/// The instances of one scene prepared for distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillBatch {
    pub n: usize,
    /// Unit-norm consensus embeddings, row-major `n × D`.
    pub targets: Vec<f64>,
    /// Mean point features, row-major `n × F`.
    pub pooled: Vec<f64>,
    pub labels: Vec<usize>,
}

impl DistillBatch {
    pub fn new(targets: Vec<f64>, pooled: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(invalid("batch", format!("needs at least 2 instances, got {n}")));
        }
        if targets.len() % n != 0 || pooled.len() % n != 0 {
            return Err(CoreError::Shape {
                what: "batch rows".into(),
                expected: n,
                actual: targets.len(),
            });
        }
        let d = targets.len() / n;
        for row in targets.chunks_exact(d) {
            if (norm(row) - 1.0).abs() > 1e-6 {
                return Err(invalid("batch targets", "rows must be unit norm"));
            }
        }
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("pooled features"));
        }
        Ok(Self {
            n,
            targets,
            pooled,
            labels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub batch: usize,
    pub contrastive: f64,
    pub ce: f64,
    pub total: f64,
}

/// Losses and parameter gradients of one batch.
pub fn batch_loss(
    params: &AdapterParams,
    batch: &DistillBatch,
    bank: &TextBank,
    config: &DistillConfig,
) -> Result<(f64, f64, AdapterGrads)> {
    let cache = params.forward_batch(&batch.pooled, batch.n)?;
    let d = params.output_dim;
    let lc = contrastive_loss(&batch.targets, &cache.output, batch.n, d, config.tau)?;
    let lce = ce_loss(&cache.output, batch.n, bank, &batch.labels, config.tau)?;
    let g = total_grad(&lc.grad, &lce.grad, config.alpha, config.beta);
    let (grads, _) = params.backward(&cache, &g);
    Ok((lc.loss, lce.loss, grads))
}

/// One adaptive-moment update with bias correction.
pub fn adam_step(params: &mut AdapterParams, grads: &AdapterGrads, lr: f64) {
    let g = grads.flat();
    let mut flat = params.flat();
    let st = &mut params.optimizer;
    st.step += 1;
    let t = st.step as f64;
    let c1 = 1.0 - libm::pow(ADAM_BETA1, t);
    let c2 = 1.0 - libm::pow(ADAM_BETA2, t);
    for (k, p) in flat.iter_mut().enumerate() {
        let m = &mut st.first_moment[k];
        let v = &mut st.second_moment[k];
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g[k];
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g[k] * g[k];
        *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + ADAM_EPS);
    }
    params.set_flat(&flat);
}

/// Visiting order of batches: a fresh seeded shuffle every epoch.
pub fn batch_schedule(num_batches: usize, steps: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ba7c);
    let mut order: Vec<usize> = (0..num_batches).collect();
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps && num_batches > 0 {
        order.shuffle(&mut rng);
        out.extend(order.iter().take(steps - out.len()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: AdapterParams,
    pub log: Vec<LogEntry>,
}

/// Trains a freshly initialized adapter for `config.steps` updates, one
/// scene batch per update.
pub fn train(batches: &[DistillBatch], bank: &TextBank, input_dim: usize, config: &DistillConfig) -> Result<TrainOutcome> {
    let params = AdapterParams::init(input_dim, bank.dim(), config.seed)?;
    train_from(params, batches, bank, config)
}

/// Continues training from `params`.
pub fn train_from(
    mut params: AdapterParams,
    batches: &[DistillBatch],
    bank: &TextBank,
    config: &DistillConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.validate()?;
    if config.steps > 0 && batches.is_empty() {
        return Err(CoreError::Empty("training batches"));
    }
    for b in batches {
        if b.pooled.len() != b.n * params.input_dim || b.targets.len() != b.n * params.output_dim {
            return Err(CoreError::Shape {
                what: "batch".into(),
                expected: b.n * params.input_dim,
                actual: b.pooled.len(),
            });
        }
    }
    let schedule = batch_schedule(batches.len(), config.steps, config.seed);
    let mut log = Vec::with_capacity(config.steps);
    for (step, &bi) in schedule.iter().enumerate() {
        let (lc, lce, grads) = batch_loss(&params, &batches[bi], bank, config)
            .map_err(|e| match e {
                CoreError::NonFinite(_) | CoreError::DegenerateVector => CoreError::NonFiniteLoss { step },
                other => other,
            })?;
        let total = total_loss(lc, lce, config.alpha, config.beta);
        if !total.is_finite() {
            return Err(CoreError::NonFiniteLoss { step });
        }
        log.push(LogEntry {
            step,
            batch: bi,
            contrastive: lc,
            ce: lce,
            total,
        });
        adam_step(&mut params, &grads, config.learning_rate);
    }
    Ok(TrainOutcome { params, log })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub label: usize,
    /// Softmax over `cosine / τ` at the predicted class.
    pub confidence: f64,
}

/// Labels pooled features directly with the adapter and the text bank.
pub fn infer_pooled(pooled: &[f64], n: usize, params: &AdapterParams, bank: &TextBank, tau: f64) -> Result<Vec<Inference>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let cache = params.forward_batch(pooled, n)?;
    let d = params.output_dim;
    let classes = bank.num_classes();
    let mut logits = vec![0.0; classes];
    let mut probs = vec![0.0; classes];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let e = &cache.output[i * d..(i + 1) * d];
        for (c, l) in logits.iter_mut().enumerate() {
            *l = crate::math::dot(e, bank.row(c));
        }
        let label = argmax_first(&logits);
        for l in logits.iter_mut() {
            *l /= tau;
        }
        softmax_into(&logits, &mut probs);
        out.push(Inference {
            label,
            confidence: probs[label],
        });
    }
    Ok(out)
}

/// Student inference over proposals. Reads only point features, adapter
/// parameters and the text bank.
pub fn infer(proposals: &[InstanceProposal], params: &AdapterParams, bank: &TextBank, tau: f64) -> Result<Vec<Inference>> {
    if !(tau > 0.0) {
        return Err(invalid("tau", "must be > 0"));
    }
    let mut pooled = Vec::with_capacity(proposals.len() * params.input_dim);
    for p in proposals {
        if p.feature_dim != params.input_dim {
            return Err(CoreError::Shape {
                what: "proposal feature dim".into(),
                expected: params.input_dim,
                actual: p.feature_dim,
            });
        }
        pooled.extend(p.pooled_features());
    }
    infer_pooled(&pooled, proposals.len(), params, bank, tau)
}
