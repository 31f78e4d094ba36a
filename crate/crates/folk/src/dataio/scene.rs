use super::{
    core_err, invalid, meta_str, meta_usize, read_container_of_kind, write_container, ArrayData,
    Container, DataError, Result,
};
use folk_core::label_guide::{text_bank_from_unit_rows, DEFAULT_TEMPLATE};
use folk_core::scene::SceneMeta;
use folk_core::teacher::ProjectionHead;
use folk_core::{
    BitMask2D, CameraView, DepthMap, FeatureMap, GroundTruthInstance, InstanceProposal, Mat3,
    Scene,
};
use serde_json::{json, Value};
use std::path::Path;

pub const SCENE_KIND: &str = "scene";

fn view_name(j: usize, field: &str) -> String {
    format!("view.{j:04}.{field}")
}

fn proposal_name(i: usize, field: &str) -> String {
    format!("proposal.{i:04}.{field}")
}

fn gt_name(g: usize, field: &str) -> String {
    format!("gt.{g:04}.{field}")
}

fn mat3(c: &Container, name: &str) -> Result<Mat3> {
    let (_, v) = c.f64s(name, &[Some(3), Some(3)])?;
    Ok(Mat3::from_row_major(v).expect("3×3 checked"))
}

/// Lays a scene out as a container. Extra metadata can be added to the
/// returned container's `meta` before writing.
pub fn scene_to_container(scene: &Scene) -> Result<Container> {
    let m = &scene.meta;
    let head_kind = match &scene.head {
        None => Value::Null,
        Some(h) if h.is_identity() => json!("identity"),
        Some(_) => json!("linear"),
    };
    let mut meta = json!({
        "scene_id": m.scene_id,
        "image_height": m.image_height,
        "image_width": m.image_width,
        "feature_height": m.feature_height,
        "feature_width": m.feature_width,
        "channels": m.channels,
        "embed_dim": m.embed_dim,
        "point_feature_dim": m.point_feature_dim,
        "num_views": scene.views.len(),
        "num_proposals": scene.proposals.len(),
        "num_ground_truth": scene.ground_truth.len(),
        "frame_indices": scene.views.iter().map(|v| v.frame_index).collect::<Vec<_>>(),
        "head": head_kind,
    });
    let mut c = Container::new(SCENE_KIND, Value::Null);
    let points: Vec<f64> = scene.points.iter().flatten().copied().collect();
    c.insert("points", vec![scene.points.len(), 3], ArrayData::F64(points));

    for (j, v) in scene.views.iter().enumerate() {
        c.insert(view_name(j, "intrinsics"), vec![3, 3], ArrayData::F64(v.intrinsics.to_row_major().to_vec()));
        c.insert(view_name(j, "rotation"), vec![3, 3], ArrayData::F64(v.rotation.to_row_major().to_vec()));
        c.insert(view_name(j, "translation"), vec![3], ArrayData::F64(v.translation.to_vec()));
        if let Some(d) = v.raw_depth() {
            c.insert(view_name(j, "depth"), vec![d.height, d.width], ArrayData::F32(d.values.clone()));
        }
        if let Some(f) = v.raw_features() {
            c.insert(
                view_name(j, "features"),
                vec![f.channels, f.height, f.width],
                ArrayData::F32(f.values.clone()),
            );
        }
    }

    for (i, p) in scene.proposals.iter().enumerate() {
        c.insert(proposal_name(i, "point_indices"), vec![p.num_points()], ArrayData::U32(p.point_indices.clone()));
        c.insert(
            proposal_name(i, "point_features"),
            vec![p.num_points(), p.feature_dim],
            ArrayData::F32(p.point_features.clone()),
        );
    }
    let n = scene.proposals.len();
    c.insert("proposals.objectness", vec![n], ArrayData::F64(scene.proposals.iter().map(|p| p.objectness).collect()));
    c.insert("proposals.gt_label", vec![n], ArrayData::I32(scene.proposals.iter().map(|p| p.gt_label).collect()));

    let mut labels = Vec::with_capacity(scene.ground_truth.len());
    for (g, gt) in scene.ground_truth.iter().enumerate() {
        c.insert(gt_name(g, "point_indices"), vec![gt.point_indices.len()], ArrayData::U32(gt.point_indices.clone()));
        if !gt.view_masks.is_empty() {
            let bytes: Vec<u8> = gt.view_masks.iter().flat_map(|mk| mk.as_bytes().iter().copied()).collect();
            c.insert(
                gt_name(g, "view_masks"),
                vec![gt.view_masks.len(), m.image_height, m.image_width],
                ArrayData::U8(bytes),
            );
        }
        labels.push(u32::try_from(gt.label).map_err(|_| invalid(gt_name(g, "label"), "does not fit u32"))?);
    }
    c.insert("gt.labels", vec![labels.len()], ArrayData::U32(labels));

    if let Some(bank) = &scene.text_bank {
        if let Some(name) = bank.names().iter().find(|n| n.contains('\n') || n.is_empty()) {
            return Err(invalid("text.names", format!("class name {name:?} is empty or contains a newline")));
        }
        let joined = bank.names().join("\n").into_bytes();
        c.insert("text.names", vec![joined.len()], ArrayData::U8(joined));
        c.insert(
            "text.embeddings",
            vec![bank.num_classes(), bank.dim()],
            ArrayData::F64(bank.embeddings().to_vec()),
        );
        meta["text_template"] = json!(bank.template());
    }
    if let Some(h) = scene.head.as_ref().filter(|h| !h.is_identity()) {
        c.insert("head.weight", vec![h.output_dim(), h.input_dim()], ArrayData::F64(h.weight().to_vec()));
        c.insert("head.bias", vec![h.output_dim()], ArrayData::F64(h.bias().to_vec()));
    }
    c.meta = meta;
    Ok(c)
}

/// Rebuilds and validates a scene. Every error names the offending array
/// or metadata key.
pub fn scene_from_container(c: &Container) -> Result<Scene> {
    if c.kind != SCENE_KIND {
        return Err(invalid("kind", format!("{:?} is not a scene container", c.kind)));
    }
    let meta = &c.meta;
    let sm = SceneMeta {
        scene_id: meta_str(meta, "scene_id")?.to_string(),
        image_height: meta_usize(meta, "image_height")?,
        image_width: meta_usize(meta, "image_width")?,
        feature_height: meta_usize(meta, "feature_height")?,
        feature_width: meta_usize(meta, "feature_width")?,
        channels: meta_usize(meta, "channels")?,
        embed_dim: meta_usize(meta, "embed_dim")?,
        point_feature_dim: meta_usize(meta, "point_feature_dim")?,
    };
    for (key, v) in [
        ("image_height", sm.image_height),
        ("image_width", sm.image_width),
        ("feature_height", sm.feature_height),
        ("feature_width", sm.feature_width),
        ("channels", sm.channels),
        ("embed_dim", sm.embed_dim),
        ("point_feature_dim", sm.point_feature_dim),
    ] {
        if v == 0 {
            return Err(invalid(format!("meta.{key}"), "must be >= 1"));
        }
    }
    let (h, w) = (sm.image_height, sm.image_width);
    let num_views = meta_usize(meta, "num_views")?;
    let num_proposals = meta_usize(meta, "num_proposals")?;
    let num_gt = meta_usize(meta, "num_ground_truth")?;
    let frames: Vec<i64> = meta
        .get("frame_indices")
        .and_then(Value::as_array)
        .and_then(|a| a.iter().map(Value::as_i64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| invalid("meta.frame_indices", "missing or not a list of integers"))?;
    if frames.len() != num_views {
        return Err(invalid("meta.frame_indices", format!("has {} entries for {num_views} views", frames.len())));
    }

    let (_, pts) = c.f64s("points", &[None, Some(3)])?;
    let points: Vec<[f64; 3]> = pts.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();

    let mut views = Vec::with_capacity(num_views);
    for (j, &frame_index) in frames.iter().enumerate() {
        let rot_name = view_name(j, "rotation");
        let rotation = mat3(c, &rot_name)?;
        rotation.check_rotation(&rot_name).map_err(core_err(&rot_name))?;
        let intrinsics = mat3(c, &view_name(j, "intrinsics"))?;
        let (_, t) = c.f64s(&view_name(j, "translation"), &[Some(3)])?;
        let mut view = CameraView::new(frame_index, intrinsics, rotation, [t[0], t[1], t[2]]);
        let dn = view_name(j, "depth");
        if c.contains(&dn) {
            let (_, d) = c.f32s(&dn, &[Some(h), Some(w)])?;
            if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(invalid(dn, "depth must be finite and >= 0 (0 = invalid)"));
            }
            view.set_depth(Some(DepthMap {
                height: h,
                width: w,
                values: d.to_vec(),
            }));
        }
        let fname = view_name(j, "features");
        if c.contains(&fname) {
            let (_, f) = c.f32s(&fname, &[Some(sm.channels), Some(sm.feature_height), Some(sm.feature_width)])?;
            view.set_features(Some(FeatureMap {
                channels: sm.channels,
                height: sm.feature_height,
                width: sm.feature_width,
                values: f.to_vec(),
            }));
        }
        views.push(view);
    }

    let (_, objectness) = c.f64s("proposals.objectness", &[Some(num_proposals)])?;
    let (_, gt_labels) = c.i32s("proposals.gt_label", &[Some(num_proposals)])?;
    let mut proposals = Vec::with_capacity(num_proposals);
    for i in 0..num_proposals {
        let (shape, idx) = c.u32s(&proposal_name(i, "point_indices"), &[None])?;
        let m = shape[0];
        let (_, feats) = c.f32s(&proposal_name(i, "point_features"), &[Some(m), Some(sm.point_feature_dim)])?;
        proposals.push(InstanceProposal {
            point_indices: idx.to_vec(),
            point_features: feats.to_vec(),
            feature_dim: sm.point_feature_dim,
            objectness: objectness[i],
            gt_label: gt_labels[i],
        });
    }

    let (_, labels) = c.u32s("gt.labels", &[Some(num_gt)])?;
    let mut ground_truth = Vec::with_capacity(num_gt);
    for (g, &label) in labels.iter().enumerate() {
        let (_, idx) = c.u32s(&gt_name(g, "point_indices"), &[None])?;
        let mname = gt_name(g, "view_masks");
        let mut view_masks = Vec::new();
        if c.contains(&mname) {
            let (_, bytes) = c.u8s(&mname, &[Some(num_views), Some(h), Some(w)])?;
            for chunk in bytes.chunks_exact(h * w) {
                view_masks.push(BitMask2D::from_bytes(h, w, chunk.to_vec()).map_err(core_err(&mname))?);
            }
        }
        ground_truth.push(GroundTruthInstance {
            point_indices: idx.to_vec(),
            label: label as usize,
            view_masks,
        });
    }

    let text_bank = if c.contains("text.embeddings") {
        let (_, raw) = c.u8s("text.names", &[None])?;
        let joined = std::str::from_utf8(raw).map_err(|e| invalid("text.names", e.to_string()))?;
        let names: Vec<String> = joined.split('\n').map(str::to_string).collect();
        let (_, rows) = c.f64s("text.embeddings", &[Some(names.len()), Some(sm.embed_dim)])?;
        let template = meta
            .get("text_template")
            .and_then(Value::as_str)
            .unwrap_or(DEFAULT_TEMPLATE);
        Some(
            text_bank_from_unit_rows(names, rows.to_vec(), sm.embed_dim, template)
                .map_err(core_err("text.embeddings"))?,
        )
    } else {
        None
    };

    let head = match meta.get("head").and_then(Value::as_str) {
        None => None,
        Some("identity") => Some(ProjectionHead::identity(sm.channels)),
        Some("linear") => {
            let (_, wt) = c.f64s("head.weight", &[Some(sm.embed_dim), Some(sm.channels)])?;
            let (_, b) = c.f64s("head.bias", &[Some(sm.embed_dim)])?;
            Some(
                ProjectionHead::linear(sm.embed_dim, sm.channels, wt.to_vec(), b.to_vec())
                    .map_err(core_err("head.weight"))?,
            )
        }
        Some(other) => return Err(invalid("meta.head", format!("unknown head kind {other:?}"))),
    };

    let scene = Scene {
        meta: sm,
        points,
        views,
        proposals,
        ground_truth,
        text_bank,
        head,
    };
    scene.validate().map_err(|e| {
        let context = match &e {
            folk_core::CoreError::InvalidProposal { index, .. } => proposal_name(*index, "*"),
            _ => "scene".to_string(),
        };
        DataError::Core { context, source: e }
    })?;
    Ok(scene)
}

pub fn write_scene(scene: &Scene, dir: &Path) -> Result<()> {
    scene.validate().map_err(core_err("scene"))?;
    write_container(&scene_to_container(scene)?, dir)
}

pub fn read_scene(dir: &Path) -> Result<Scene> {
    scene_from_container(&read_container_of_kind(dir, SCENE_KIND)?)
}
