//! Text-bank classification, multi-view label voting and the consensus
//! embedding used as the distillation target.

use crate::embedding::Embedding;
use crate::error::{invalid, CoreError, Result};
use crate::math;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Prompt template; `[category]` is replaced with the class name.
pub const DEFAULT_TEMPLATE: &str = "a [category] in the scene";

/// One unit-norm embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBank {
    names: Vec<String>,
    /// Row-major `C × D`.
    embeddings: Vec<f64>,
    dim: usize,
    template: String,
}

impl TextBank {
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.embeddings[c * self.dim..(c + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    /// The prompt for class `c`.
    pub fn prompt(&self, c: usize) -> String {
        self.template.replace("[category]", &self.names[c])
    }
}

/// Normalizes each row of `raw` (`names.len() × dim`).
pub fn build_text_bank(
    names: Vec<String>,
    raw: Vec<f64>,
    dim: usize,
    template: &str,
) -> Result<TextBank> {
    if names.len() < 2 {
        return Err(invalid("text bank", "needs at least 2 classes"));
    }
    if dim == 0 || raw.len() != names.len() * dim {
        return Err(CoreError::Shape {
            what: "text.embeddings".into(),
            expected: names.len() * dim,
            actual: raw.len(),
        });
    }
    check_names(&names)?;
    let mut embeddings = raw;
    for (c, row) in embeddings.chunks_exact_mut(dim).enumerate() {
        math::normalize_in_place(row)
            .map_err(|_| invalid("text.embeddings", format!("row {c} has zero norm")))?;
    }
    Ok(TextBank {
        names,
        embeddings,
        dim,
        template: String::from(template),
    })
}

/// Unit-norm tolerance for stored text-bank rows.
pub const UNIT_ROW_TOLERANCE: f64 = 1e-5;

/// Takes rows that are already unit norm (within [`UNIT_ROW_TOLERANCE`])
/// as they are, so stored banks load bit-exactly.
pub fn text_bank_from_unit_rows(
    names: Vec<String>,
    rows: Vec<f64>,
    dim: usize,
    template: &str,
) -> Result<TextBank> {
    if names.len() < 2 {
        return Err(invalid("text bank", "needs at least 2 classes"));
    }
    if dim == 0 || rows.len() != names.len() * dim {
        return Err(CoreError::Shape {
            what: "text.embeddings".into(),
            expected: names.len() * dim,
            actual: rows.len(),
        });
    }
    check_names(&names)?;
    for (c, row) in rows.chunks_exact(dim).enumerate() {
        let n = math::norm(row);
        if !((n - 1.0).abs() <= UNIT_ROW_TOLERANCE) {
            return Err(invalid("text.embeddings", format!("row {c} has norm {n}")));
        }
    }
    Ok(TextBank {
        names,
        embeddings: rows,
        dim,
        template: String::from(template),
    })
}

fn check_names(names: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(CoreError::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

/// Cosine similarity to every class and the argmax (lowest index on ties).
pub fn classify_embedding(e: &[f64], bank: &TextBank) -> Result<(usize, Vec<f64>)> {
    if e.len() != bank.dim {
        return Err(CoreError::Shape {
            what: "embedding".into(),
            expected: bank.dim,
            actual: e.len(),
        });
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("embedding"));
    }
    let n = math::norm(e);
    if !(n > 0.0) {
        return Err(CoreError::DegenerateVector);
    }
    // bank rows are unit norm
    let sims: Vec<f64> = (0..bank.num_classes())
        .map(|c| math::dot(e, bank.row(c)) / n)
        .collect();
    Ok((argmax_first(&sims), sims))
}

/// Index of the largest value; the first one on ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Most frequent label. Count ties go to the class with the larger mean
/// similarity over all views, then to the lowest class index.
///
/// `similarities[k]` is view `k`'s similarity vector; it may be empty, in
/// which case ties fall straight to the lowest index.
pub fn majority_vote(labels: &[usize], similarities: &[Vec<f64>]) -> Result<usize> {
    if labels.is_empty() {
        return Err(CoreError::Empty("labels"));
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mean_sim = |c: usize| -> f64 {
        if similarities.is_empty() {
            return 0.0;
        }
        similarities
            .iter()
            .map(|s| s.get(c).copied().unwrap_or(0.0))
            .sum::<f64>()
            / similarities.len() as f64
    };
    let mut best = labels[0];
    for c in 0..classes {
        if counts[c] == 0 || c == best {
            continue;
        }
        let better = counts[c] > counts[best]
            || (counts[c] == counts[best]
                && (mean_sim(c) > mean_sim(best)
                    || (mean_sim(c) == mean_sim(best) && c < best)));
        if better {
            best = c;
        }
    }
    Ok(best)
}

/// Mean of the embeddings whose label equals `pseudo_label`, normalized.
pub fn consensus_embedding(
    embeddings: &[Embedding],
    labels: &[usize],
    pseudo_label: usize,
) -> Result<Embedding> {
    if embeddings.len() != labels.len() {
        return Err(CoreError::Shape {
            what: "view labels".into(),
            expected: embeddings.len(),
            actual: labels.len(),
        });
    }
    let mut sum: Option<Vec<f64>> = None;
    for (e, &l) in embeddings.iter().zip(labels) {
        if l != pseudo_label {
            continue;
        }
        match &mut sum {
            None => sum = Some(e.values().to_vec()),
            Some(s) => {
                for (a, b) in s.iter_mut().zip(e.values()) {
                    *a += b;
                }
            }
        }
    }
    let mean = sum.ok_or(CoreError::NoAgreeingView)?;
    // scaling by 1/count does not change the direction
    Embedding::normalized(mean)
}

/// Classification and voting outcome for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConsensus {
    pub view_labels: Vec<usize>,
    pub view_similarities: Vec<Vec<f64>>,
    pub pseudo_label: usize,
    pub embedding: Embedding,
    pub agreeing: usize,
}

impl InstanceConsensus {
    pub fn agreement(&self) -> f64 {
        self.agreeing as f64 / self.view_labels.len() as f64
    }
}

/// Classifies every view, votes, and averages the agreeing views.
pub fn label_instance(embeddings: &[Embedding], bank: &TextBank) -> Result<InstanceConsensus> {
    if embeddings.is_empty() {
        return Err(CoreError::Empty("view embeddings"));
    }
    let mut view_labels = Vec::with_capacity(embeddings.len());
    let mut view_similarities = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        let (l, s) = classify_embedding(e.values(), bank)?;
        view_labels.push(l);
        view_similarities.push(s);
    }
    let pseudo_label = majority_vote(&view_labels, &view_similarities)?;
    let embedding = consensus_embedding(embeddings, &view_labels, pseudo_label)?;
    let agreeing = view_labels.iter().filter(|&&l| l == pseudo_label).count();
    Ok(InstanceConsensus {
        view_labels,
        view_similarities,
        pseudo_label,
        embedding,
        agreeing,
    })
}
