use super::{
    invalid, meta_str, meta_usize, read_container_of_kind, write_container, ArrayData, Container,
    Result,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;

pub const CONSENSUS_KIND: &str = "consensus";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDiagnostic {
    pub view: usize,
    pub frame_index: i64,
    pub sparse_count: usize,
    pub dense_count: usize,
    /// Per-view class, `None` when the view yielded no embedding.
    pub label: Option<usize>,
}

/// Teacher output for one proposal. `pseudo_label` and `embedding` are
/// `None` for an unembeddable instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusInstance {
    pub proposal: usize,
    pub pseudo_label: Option<usize>,
    pub agreeing: usize,
    pub embedding: Option<Vec<f64>>,
    pub views: Vec<ViewDiagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConsensus {
    pub scene_id: String,
    pub embed_dim: usize,
    pub instances: Vec<ConsensusInstance>,
}

impl SceneConsensus {
    /// Instances with a pseudo-label and embedding.
    pub fn labeled(&self) -> impl Iterator<Item = (&ConsensusInstance, usize, &[f64])> {
        self.instances.iter().filter_map(|i| {
            Some((i, i.pseudo_label?, i.embedding.as_deref()?))
        })
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceMeta {
    proposal: usize,
    status: String,
    views: Vec<ViewDiagnostic>,
}

pub fn consensus_to_container(s: &SceneConsensus, config: &Value) -> Container {
    let mut proposal = Vec::new();
    let mut labels = Vec::new();
    let mut agreeing = Vec::new();
    let mut emb = Vec::new();
    let mut inst_meta = Vec::with_capacity(s.instances.len());
    for i in &s.instances {
        let labeled = match (i.pseudo_label, &i.embedding) {
            (Some(l), Some(e)) => {
                proposal.push(i.proposal as u32);
                labels.push(l as u32);
                agreeing.push(i.agreeing as u32);
                emb.extend_from_slice(e);
                true
            }
            _ => false,
        };
        inst_meta.push(InstanceMeta {
            proposal: i.proposal,
            status: if labeled { "labeled" } else { "unembeddable" }.to_string(),
            views: i.views.clone(),
        });
    }
    let n = proposal.len();
    let mut c = Container::new(
        CONSENSUS_KIND,
        json!({
            "scene_id": s.scene_id,
            "embed_dim": s.embed_dim,
            "num_labeled": n,
            "instances": inst_meta,
            "config": config,
        }),
    );
    c.insert("consensus.proposal", vec![n], ArrayData::U32(proposal));
    c.insert("consensus.pseudo_label", vec![n], ArrayData::U32(labels));
    c.insert("consensus.agreeing", vec![n], ArrayData::U32(agreeing));
    c.insert("consensus.embeddings", vec![n, s.embed_dim], ArrayData::F64(emb));
    c
}

pub fn consensus_from_container(c: &Container) -> Result<SceneConsensus> {
    let scene_id = meta_str(&c.meta, "scene_id")?.to_string();
    let d = meta_usize(&c.meta, "embed_dim")?;
    let n = meta_usize(&c.meta, "num_labeled")?;
    let metas: Vec<InstanceMeta> = c
        .meta
        .get("instances")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| invalid("meta.instances", e.to_string()))?
        .ok_or_else(|| invalid("meta.instances", "missing"))?;
    let (_, proposal) = c.u32s("consensus.proposal", &[Some(n)])?;
    let (_, labels) = c.u32s("consensus.pseudo_label", &[Some(n)])?;
    let (_, agreeing) = c.u32s("consensus.agreeing", &[Some(n)])?;
    let (_, emb) = c.f64s("consensus.embeddings", &[Some(n), Some(d)])?;
    let mut k = 0;
    let mut instances = Vec::with_capacity(metas.len());
    for m in metas {
        let inst = match m.status.as_str() {
            "labeled" => {
                if k >= n || proposal[k] as usize != m.proposal {
                    return Err(invalid("consensus.proposal", format!("does not list proposal {}", m.proposal)));
                }
                let e = emb[k * d..(k + 1) * d].to_vec();
                let inst = ConsensusInstance {
                    proposal: m.proposal,
                    pseudo_label: Some(labels[k] as usize),
                    agreeing: agreeing[k] as usize,
                    embedding: Some(e),
                    views: m.views,
                };
                k += 1;
                inst
            }
            "unembeddable" => ConsensusInstance {
                proposal: m.proposal,
                pseudo_label: None,
                agreeing: 0,
                embedding: None,
                views: m.views,
            },
            other => return Err(invalid("meta.instances", format!("unknown status {other:?}"))),
        };
        instances.push(inst);
    }
    if k != n {
        return Err(invalid("consensus.proposal", format!("{n} rows but {k} labeled instances")));
    }
    Ok(SceneConsensus {
        scene_id,
        embed_dim: d,
        instances,
    })
}

pub fn write_consensus(s: &SceneConsensus, config: &Value, dir: &Path) -> Result<()> {
    write_container(&consensus_to_container(s, config), dir)
}

pub fn read_consensus(dir: &Path) -> Result<SceneConsensus> {
    consensus_from_container(&read_container_of_kind(dir, CONSENSUS_KIND)?)
}
