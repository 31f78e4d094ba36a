#[path = "../../core/tests/common/mod.rs"]
mod oracles;

use folk::synth::{generate_scene, generate_text_bank, scene_boxes, SynthConfig};
use oracles::{active_set, visible_pixel_set};

fn config() -> SynthConfig {
    SynthConfig {
        scenes: 3,
        instances_per_scene: 4,
        views_per_scene: 4,
        image_height: 96,
        image_width: 128,
        feature_height: 24,
        feature_width: 32,
        focal_length: 120.0,
        points_per_instance: 120,
        clutter_points: 80,
        ..Default::default()
    }
}

/// Pixel bounding box of the eight projected corners, or `None` if any
/// corner is behind the camera.
fn corner_box(corners: &[[f64; 3]; 8], view: &folk_core::CameraView) -> Option<[f64; 4]> {
    let (r, t, k) = (view.rotation.0, view.translation, view.intrinsics.0);
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in corners {
        let c: [f64; 3] = std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i]);
        if c[2] <= 0.0 {
            return None;
        }
        let row = k[1][1] * c[1] / c[2] + k[1][2];
        let col = k[0][0] * c[0] / c[2] + k[0][2];
        b = [b[0].min(row), b[1].min(col), b[2].max(row), b[3].max(col)];
    }
    Some(b)
}

#[test]
fn ground_truth_masks_lie_inside_projected_boxes() {
    let cfg = config();
    let bank = generate_text_bank(&cfg).unwrap();
    for s in 0..cfg.scenes {
        let scene = generate_scene(&cfg, &bank, s).unwrap();
        let boxes = scene_boxes(&cfg, s).unwrap();
        for (gt, b) in scene.ground_truth.iter().zip(&boxes) {
            assert_eq!(gt.label, b.label);
            for (view, mask) in scene.views.iter().zip(&gt.view_masks) {
                let bb = corner_box(&b.corners(), view).expect("cameras see every box from the front");
                for (u, v) in mask.iter_active() {
                    let (u, v) = (u as f64, v as f64);
                    assert!(u >= bb[0] - 0.5 && u <= bb[2] + 0.5 && v >= bb[1] - 0.5 && v <= bb[3] + 0.5);
                }
            }
        }
    }
}

#[test]
fn ground_truth_masks_are_the_visible_projections() {
    let cfg = config();
    let bank = generate_text_bank(&cfg).unwrap();
    let scene = generate_scene(&cfg, &bank, 1).unwrap();
    let (h, w) = (cfg.image_height, cfg.image_width);
    let mut nonempty = 0;
    for gt in &scene.ground_truth {
        let pts: Vec<[f64; 3]> = gt.point_indices.iter().map(|&p| scene.points[p as usize]).collect();
        for (view, mask) in scene.views.iter().zip(&gt.view_masks) {
            let want = visible_pixel_set(&pts, view, h, w, 0.10);
            assert_eq!(active_set(mask), want);
            nonempty += usize::from(!want.is_empty());
        }
    }
    assert!(nonempty > scene.ground_truth.len() * scene.views.len() / 2);
}

#[test]
fn instance_points_lie_in_their_boxes() {
    let cfg = config();
    let bank = generate_text_bank(&cfg).unwrap();
    let scene = generate_scene(&cfg, &bank, 2).unwrap();
    let boxes = scene_boxes(&cfg, 2).unwrap();
    for (gt, b) in scene.ground_truth.iter().zip(&boxes) {
        for &p in &gt.point_indices {
            let x = scene.points[p as usize];
            assert!((x[0] - b.center[0]).abs() <= b.size[0] / 2.0);
            assert!((x[1] - b.center[1]).abs() <= b.size[1] / 2.0);
            assert!(x[2] >= 0.0 && x[2] <= b.size[2]);
        }
    }
}
