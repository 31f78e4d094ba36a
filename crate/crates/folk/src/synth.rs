//! Fully labeled synthetic scenes: box instances on a floor, an orbit of
//! cameras with near-duplicate twins, z-buffered depth, and feature maps
//! built from a synthetic text bank.

use folk_core::geometry::{build_sparse_mask, project_point, project_points, DEFAULT_DEPTH_TOLERANCE};
use folk_core::label_guide::{build_text_bank, TextBank, DEFAULT_TEMPLATE};
use folk_core::math::{dot, normalize_in_place};
use folk_core::scene::SceneMeta;
use folk_core::teacher::ProjectionHead;
use folk_core::{CameraView, DepthMap, FeatureMap, GroundTruthInstance, InstanceProposal, Mat3, Scene};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Upper bound on pairwise cosine between text-bank rows.
pub const MAX_CLASS_COSINE: f64 = 0.3;

const BANK_RETRIES: usize = 100_000;
const PLACEMENT_RETRIES: usize = 10_000;

const CLASS_NAMES: [&str; 24] = [
    "chair", "table", "sofa", "bed", "cabinet", "desk", "bookshelf", "lamp", "monitor", "plant",
    "box", "trash can", "toilet", "sink", "bathtub", "refrigerator", "door", "window", "pillow",
    "backpack", "dresser", "stool", "printer", "mirror",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub scenes: usize,
    pub instances_per_scene: usize,
    pub points_per_instance: usize,
    pub clutter_points: usize,
    /// Near-duplicate proposals per scene (a copy of an instance with a
    /// few points dropped and lower objectness).
    pub duplicate_proposals: usize,
    pub duplicate_drop_fraction: f64,
    pub views_per_scene: usize,
    /// Per-channel Gaussian noise on point and feature-map features.
    pub feature_noise: f64,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub look_at_height: f64,
    /// Azimuth offset of each view's twin, degrees.
    pub twin_offset_deg: f64,
    pub frame_step: i64,
    pub image_height: usize,
    pub image_width: usize,
    pub feature_height: usize,
    pub feature_width: usize,
    pub focal_length: f64,
    /// Half extent of the square floor area holding box centers, meters.
    pub room_half_extent: f64,
    pub min_box_size: f64,
    pub max_box_size: f64,
    /// Minimum floor clearance between boxes, meters.
    pub box_gap: f64,
    pub store_gt_masks: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 20,
            embed_dim: 64,
            scenes: 50,
            instances_per_scene: 8,
            points_per_instance: 300,
            clutter_points: 400,
            duplicate_proposals: 2,
            duplicate_drop_fraction: 0.05,
            views_per_scene: 12,
            feature_noise: 0.05,
            orbit_radius: 6.0,
            orbit_height: 2.0,
            look_at_height: 0.4,
            twin_offset_deg: 1.5,
            frame_step: 10,
            image_height: 240,
            image_width: 320,
            feature_height: 60,
            feature_width: 80,
            focal_length: 300.0,
            room_half_extent: 3.0,
            min_box_size: 0.4,
            max_box_size: 0.9,
            box_gap: 0.8,
            store_gt_masks: true,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("could not draw {classes} class embeddings in {dim} dimensions with cosine <= {MAX_CLASS_COSINE}")]
    BankInfeasible { classes: usize, dim: usize },
    #[error("could not place {0} non-overlapping boxes")]
    Placement(usize),
    #[error(transparent)]
    Core(#[from] folk_core::CoreError),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |s: &str| Err(SynthError::Config(s.to_string()));
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("scenes", self.scenes),
            ("instances_per_scene", self.instances_per_scene),
            ("points_per_instance", self.points_per_instance),
            ("views_per_scene", self.views_per_scene),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("feature_height", self.feature_height),
            ("feature_width", self.feature_width),
        ] {
            if v == 0 {
                return Err(SynthError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if !(self.feature_noise >= 0.0) || !self.feature_noise.is_finite() {
            return bad("feature_noise must be finite and >= 0");
        }
        if self.feature_height > self.image_height || self.feature_width > self.image_width {
            return bad("feature map must not exceed the image size");
        }
        if !(0.0..1.0).contains(&self.duplicate_drop_fraction) {
            return bad("duplicate_drop_fraction must be in [0, 1)");
        }
        if self.duplicate_proposals > self.instances_per_scene {
            return bad("duplicate_proposals must be <= instances_per_scene");
        }
        if !(self.min_box_size > 0.0 && self.min_box_size <= self.max_box_size) {
            return bad("need 0 < min_box_size <= max_box_size");
        }
        if !(self.box_gap >= 0.0) {
            return bad("need box_gap >= 0");
        }
        if !(self.focal_length > 0.0) || !(self.orbit_radius > self.room_half_extent) {
            return bad("need focal_length > 0 and orbit_radius > room_half_extent");
        }
        if self.frame_step < 1 {
            return bad("frame_step must be >= 1");
        }
        Ok(())
    }

    /// Class names: a fixed list of household objects, then `class_N`.
    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|c| match CLASS_NAMES.get(c) {
                Some(n) => n.to_string(),
                None => format!("class_{c}"),
            })
            .collect()
    }
}

/// SplitMix64 finalizer; derives independent stream seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const BANK_STREAM: u64 = u64::MAX;

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

/// Rejection-samples `num_classes` unit vectors with pairwise cosine at
/// most [`MAX_CLASS_COSINE`].
pub fn generate_text_bank(config: &SynthConfig) -> Result<TextBank, SynthError> {
    config.validate()?;
    let (c, d) = (config.num_classes, config.embed_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, BANK_STREAM));
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut tries = 0;
    while rows.len() < c {
        let v = gaussian_unit(&mut rng, d);
        if rows.iter().all(|r| dot(r, &v) <= MAX_CLASS_COSINE) {
            rows.push(v);
        } else {
            tries += 1;
            if tries > BANK_RETRIES {
                return Err(SynthError::BankInfeasible { classes: c, dim: d });
            }
        }
    }
    Ok(build_text_bank(config.class_names(), rows.concat(), d, DEFAULT_TEMPLATE)?)
}

/// Background feature direction: orthogonal to every class when the bank
/// does not span the space, otherwise any direction within the class
/// cosine bound.
pub fn distractor_vector(bank: &TextBank, seed: u64) -> Vec<f64> {
    let d = bank.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, BANK_STREAM - 1));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in 0..bank.num_classes() {
        let mut v = bank.row(c).to_vec();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if normalize_in_place(&mut v).map_or(false, |n| n > 1e-9) {
            basis.push(v);
        }
    }
    loop {
        let mut v = gaussian_unit(&mut rng, d);
        if basis.len() < d {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            if normalize_in_place(&mut v).map_or(false, |n| n > 1e-6) {
                return v;
            }
        } else if (0..bank.num_classes()).all(|c| dot(&v, bank.row(c)).abs() <= MAX_CLASS_COSINE) {
            return v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxInstance {
    pub center: [f64; 2],
    /// Full extents along x, y, z; the box stands on `z = 0`.
    pub size: [f64; 3],
    pub label: usize,
}

impl BoxInstance {
    pub fn corners(&self) -> [[f64; 3]; 8] {
        core::array::from_fn(|k| {
            let sx = if k & 1 == 0 { -0.5 } else { 0.5 };
            let sy = if k & 2 == 0 { -0.5 } else { 0.5 };
            let z = if k & 4 == 0 { 0.0 } else { self.size[2] };
            [self.center[0] + sx * self.size[0], self.center[1] + sy * self.size[1], z]
        })
    }
}

/// World-to-camera pose of a camera at `eye` looking at `target`, with
/// camera x right, y down and z forward.
pub fn look_at(eye: [f64; 3], target: [f64; 3]) -> (Mat3, [f64; 3]) {
    let mut f = [target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]];
    normalize_in_place(&mut f).expect("eye differs from target");
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let mut r = cross(f, [0.0, 0.0, 1.0]);
    normalize_in_place(&mut r).expect("camera not looking straight down");
    let d = cross(f, r);
    let rot = Mat3([r, d, f]);
    let c = rot.mul_vec(eye);
    (rot, [-c[0], -c[1], -c[2]])
}

pub fn intrinsics(config: &SynthConfig) -> Mat3 {
    let f = config.focal_length;
    Mat3([
        [f, 0.0, config.image_width as f64 / 2.0],
        [0.0, f, config.image_height as f64 / 2.0],
        [0.0, 0.0, 1.0],
    ])
}

/// Intrinsics rescaled to the feature-map grid.
fn feature_intrinsics(config: &SynthConfig) -> Mat3 {
    let sx = config.feature_width as f64 / config.image_width as f64;
    let sy = config.feature_height as f64 / config.image_height as f64;
    let k = intrinsics(config).0;
    Mat3([
        [k[0][0] * sx, 0.0, k[0][2] * sx],
        [0.0, k[1][1] * sy, k[1][2] * sy],
        [0.0, 0.0, 1.0],
    ])
}

/// Camera poses: orbit slots evenly spaced in azimuth, each followed by a
/// twin rotated by `twin_offset_deg`. Frame indices are `frame_step · k`.
pub fn camera_poses(config: &SynthConfig, phase: f64) -> Vec<(i64, Mat3, [f64; 3])> {
    let slots = config.views_per_scene.div_ceil(2);
    let target = [0.0, 0.0, config.look_at_height];
    (0..config.views_per_scene)
        .map(|k| {
            let slot = (k / 2) as f64;
            let twin = (k % 2) as f64;
            let az = phase
                + core::f64::consts::TAU * slot / slots as f64
                + twin * config.twin_offset_deg.to_radians();
            let eye = [
                config.orbit_radius * az.cos(),
                config.orbit_radius * az.sin(),
                config.orbit_height,
            ];
            let (r, t) = look_at(eye, target);
            (config.frame_step * k as i64, r, t)
        })
        .collect()
}

fn place_boxes(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<BoxInstance>, SynthError> {
    let mut boxes: Vec<BoxInstance> = Vec::new();
    let mut tries = 0;
    let e = config.room_half_extent;
    while boxes.len() < config.instances_per_scene {
        tries += 1;
        if tries > PLACEMENT_RETRIES {
            return Err(SynthError::Placement(config.instances_per_scene));
        }
        let size = [
            rng.random_range(config.min_box_size..=config.max_box_size),
            rng.random_range(config.min_box_size..=config.max_box_size),
            rng.random_range(config.min_box_size..=config.max_box_size),
        ];
        let hx = e - size[0] / 2.0;
        let hy = e - size[1] / 2.0;
        if hx <= 0.0 || hy <= 0.0 {
            continue;
        }
        let center = [rng.random_range(-hx..=hx), rng.random_range(-hy..=hy)];
        let clear = boxes.iter().all(|b| {
            (b.center[0] - center[0]).abs() >= (b.size[0] + size[0]) / 2.0 + config.box_gap
                || (b.center[1] - center[1]).abs() >= (b.size[1] + size[1]) / 2.0 + config.box_gap
        });
        if clear {
            let label = rng.random_range(0..config.num_classes);
            boxes.push(BoxInstance { center, size, label });
        }
    }
    Ok(boxes)
}

/// Owner of each point: instance index or `None` for floor clutter.
struct PointCloud {
    points: Vec<[f64; 3]>,
    owner: Vec<Option<usize>>,
}

fn sample_points(config: &SynthConfig, boxes: &[BoxInstance], rng: &mut ChaCha8Rng) -> PointCloud {
    let mut points = Vec::new();
    let mut owner = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        for _ in 0..config.points_per_instance {
            let u: [f64; 3] = core::array::from_fn(|_| rng.random_range(-0.5..0.5));
            points.push([
                b.center[0] + u[0] * b.size[0],
                b.center[1] + u[1] * b.size[1],
                (u[2] + 0.5) * b.size[2],
            ]);
            owner.push(Some(i));
        }
    }
    let e = config.room_half_extent + 0.5;
    for _ in 0..config.clutter_points {
        points.push([rng.random_range(-e..e), rng.random_range(-e..e), 0.0]);
        owner.push(None);
    }
    PointCloud { points, owner }
}

/// Nearest-point z-buffer: per pixel, the depth and index of the closest
/// projected point.
fn zbuffer(points: &[[f64; 3]], view: &CameraView, h: usize, w: usize) -> Vec<Option<(f64, usize)>> {
    let mut buf: Vec<Option<(f64, usize)>> = vec![None; h * w];
    for (k, &p) in points.iter().enumerate() {
        let Some((row, col, z)) = project_point(p, view) else {
            continue;
        };
        if row < 0 || col < 0 || row as usize >= h || col as usize >= w {
            continue;
        }
        let slot = &mut buf[row as usize * w + col as usize];
        if slot.map_or(true, |(d, _)| z < d) {
            *slot = Some((z, k));
        }
    }
    buf
}

fn noisy_row<'a>(base: &'a [f64], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> impl Iterator<Item = f32> + 'a {
    let draws: Vec<f64> = base.iter().map(|_| noise.sample(rng)).collect();
    base.iter().zip(draws).map(|(b, n)| (b + n) as f32)
}

/// The box layout of a scene, for oracles that need the generator's truth.
pub fn scene_boxes(config: &SynthConfig, scene_index: usize) -> Result<Vec<BoxInstance>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, scene_index as u64));
    place_boxes(config, &mut rng)
}

/// Generates scene `scene_index`; its randomness is seeded from
/// `(config.seed, scene_index)` only.
pub fn generate_scene(config: &SynthConfig, bank: &TextBank, scene_index: usize) -> Result<Scene, SynthError> {
    config.validate()?;
    if bank.num_classes() != config.num_classes || bank.dim() != config.embed_dim {
        return Err(SynthError::Config("text bank does not match config".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, scene_index as u64));
    let boxes = place_boxes(config, &mut rng)?;
    let cloud = sample_points(config, &boxes, &mut rng);
    let noise = Normal::new(0.0, config.feature_noise).expect("validated sigma");
    let distractor = distractor_vector(bank, config.seed);
    let (h, w) = (config.image_height, config.image_width);
    let (fh, fw, d) = (config.feature_height, config.feature_width, config.embed_dim);

    let phase = rng.random_range(0.0..core::f64::consts::TAU);
    let k = intrinsics(config);
    let kf = feature_intrinsics(config);
    let mut views = Vec::with_capacity(config.views_per_scene);
    for (frame, rot, t) in camera_poses(config, phase) {
        let zb = zbuffer(&cloud.points, &CameraView::new(frame, k, rot, t), h, w);
        let depth = DepthMap {
            height: h,
            width: w,
            values: zb.iter().map(|s| s.map_or(0.0, |(z, _)| z as f32)).collect(),
        };
        let fb = zbuffer(&cloud.points, &CameraView::new(frame, kf, rot, t), fh, fw);
        let mut pixel_rows: Vec<f32> = Vec::with_capacity(fh * fw * d);
        for slot in &fb {
            let base = match slot.and_then(|(_, p)| cloud.owner[p]) {
                Some(i) => bank.row(boxes[i].label),
                None => &distractor[..],
            };
            pixel_rows.extend(noisy_row(base, &noise, &mut rng));
        }
        // pixel-major to channel-major
        let mut values = vec![0.0f32; d * fh * fw];
        for (px, row) in pixel_rows.chunks_exact(d).enumerate() {
            for (c, &v) in row.iter().enumerate() {
                values[c * fh * fw + px] = v;
            }
        }
        let features = FeatureMap {
            channels: d,
            height: fh,
            width: fw,
            values,
        };
        views.push(CameraView::new(frame, k, rot, t).with_depth(depth).with_features(features));
    }

    let mut proposals = Vec::with_capacity(boxes.len() + config.duplicate_proposals);
    let mut ground_truth = Vec::with_capacity(boxes.len());
    let npi = config.points_per_instance;
    for (i, b) in boxes.iter().enumerate() {
        let idx: Vec<u32> = ((i * npi) as u32..((i + 1) * npi) as u32).collect();
        let mut feats = Vec::with_capacity(npi * d);
        for _ in 0..npi {
            feats.extend(noisy_row(bank.row(b.label), &noise, &mut rng));
        }
        let objectness = rng.random_range(0.7..1.0);
        let view_masks = if config.store_gt_masks {
            let pts: Vec<[f64; 3]> = idx.iter().map(|&p| cloud.points[p as usize]).collect();
            views
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let px = project_points(&pts, v, j, h, w, DEFAULT_DEPTH_TOLERANCE)?;
                    build_sparse_mask(&px, h, w)
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        ground_truth.push(GroundTruthInstance {
            point_indices: idx.clone(),
            label: b.label,
            view_masks,
        });
        proposals.push(InstanceProposal {
            point_indices: idx,
            point_features: feats,
            feature_dim: d,
            objectness,
            gt_label: b.label as i32,
        });
    }
    let dup_sources = sample(&mut rng, boxes.len(), config.duplicate_proposals).into_vec();
    let drop = ((npi as f64) * config.duplicate_drop_fraction).round() as usize;
    for src in dup_sources {
        let p = &proposals[src];
        let mut dropped = sample(&mut rng, npi, drop.min(npi - 1)).into_vec();
        dropped.sort_unstable();
        let mut idx = Vec::with_capacity(npi - dropped.len());
        let mut feats = Vec::with_capacity((npi - dropped.len()) * d);
        for m in 0..npi {
            if dropped.binary_search(&m).is_err() {
                idx.push(p.point_indices[m]);
                feats.extend_from_slice(p.feature_row(m));
            }
        }
        let objectness = (p.objectness - rng.random_range(0.05..0.2)).max(0.0);
        proposals.push(InstanceProposal {
            point_indices: idx,
            point_features: feats,
            feature_dim: d,
            objectness,
            gt_label: p.gt_label,
        });
    }

    views.iter().for_each(CameraView::reset_access_counter);

    let scene = Scene {
        meta: SceneMeta {
            scene_id: format!("scene_{scene_index:04}"),
            image_height: h,
            image_width: w,
            feature_height: fh,
            feature_width: fw,
            channels: d,
            embed_dim: d,
            point_feature_dim: d,
        },
        points: cloud.points,
        views,
        proposals,
        ground_truth,
        text_bank: Some(bank.clone()),
        head: Some(ProjectionHead::identity(d)),
    };
    scene.validate()?;
    Ok(scene)
}
