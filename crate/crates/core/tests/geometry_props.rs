mod common;

use common::visible_pixel_set;
use folk_core::geometry::{build_sparse_mask, project_points};
use folk_core::{CameraView, DepthMap, Mat3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 48;
const W: usize = 64;

fn k() -> Mat3 {
    Mat3([[50.0, 0.0, 32.0], [0.0, 50.0, 24.0], [0.0, 0.0, 1.0]])
}

fn yaw(deg: f64) -> Mat3 {
    Mat3::from_axis_angle([0.0, 1.0, 0.0], deg.to_radians())
}

/// Depth map holding, per pixel, the nearest projected depth of `points`.
fn nearest_depth(points: &[[f64; 3]], view: &CameraView) -> DepthMap {
    let mut values = vec![0.0f32; H * W];
    for &p in points {
        if let Some((row, col, z)) = folk_core::geometry::project_point(p, view) {
            if row >= 0 && col >= 0 && (row as usize) < H && (col as usize) < W {
                let d = &mut values[row as usize * W + col as usize];
                if *d == 0.0 || (z as f32) < *d {
                    *d = z as f32;
                }
            }
        }
    }
    DepthMap { height: H, width: W, values }
}

#[test]
fn occluded_point_on_same_pixel_is_dropped() {
    // both points land on the principal point
    let near = [0.0, 0.0, 1.0];
    let far = [0.0, 0.0, 3.0];
    let mut depth = vec![0.0f32; H * W];
    depth[24 * W + 32] = 1.0;
    let view = CameraView::new(0, k(), Mat3::IDENTITY, [0.0; 3]).with_depth(DepthMap {
        height: H,
        width: W,
        values: depth,
    });
    let set = project_points(&[near, far], &view, 0, H, W, 0.10).unwrap();
    assert_eq!(set.pixels, vec![(24, 32)]);
    let oracle = visible_pixel_set(&[near, far], &view, H, W, 0.10);
    assert_eq!(oracle.into_iter().collect::<Vec<_>>(), set.pixels);
}

#[test]
fn random_instance_counts_match_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let points: Vec<[f64; 3]> = (0..1000)
            .map(|_| [rng.random_range(-0.6..0.6), rng.random_range(-0.5..0.5), rng.random_range(1.5..3.0)])
            .collect();
        let rot = yaw(rng.random_range(-10.0..10.0));
        let bare = CameraView::new(0, k(), rot, [0.0, 0.0, 0.2]);
        let view = if trial % 2 == 0 {
            let d = nearest_depth(&points, &bare);
            bare.with_depth(d)
        } else {
            bare
        };
        let set = project_points(&points, &view, 0, H, W, 0.10).unwrap();
        let mask = build_sparse_mask(&set, H, W).unwrap();
        let oracle = visible_pixel_set(&points, &view, H, W, 0.10);
        assert_eq!(mask.active_count(), oracle.len());
        assert_eq!(set.pixels, oracle.into_iter().collect::<Vec<_>>());
    }
}

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(
        (-1.0..1.0f64, -1.0..1.0f64, 0.5..4.0f64).prop_map(|(x, y, z)| [x, y, z]),
        1..300,
    )
}

proptest! {
    #[test]
    fn projection_is_deterministic(points in cloud(), angle in -20.0..20.0f64) {
        let bare = CameraView::new(3, k(), yaw(angle), [0.1, 0.0, 0.3]);
        let view = bare.clone().with_depth(nearest_depth(&points, &bare));
        let a = project_points(&points, &view, 0, H, W, 0.1).unwrap();
        let b = project_points(&points, &view, 0, H, W, 0.1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn larger_tolerance_never_shrinks(points in cloud(), t1 in 0.001..0.5f64, extra in 0.0..1.0f64) {
        let bare = CameraView::new(0, k(), Mat3::IDENTITY, [0.0; 3]);
        let view = bare.clone().with_depth(nearest_depth(&points[..points.len() / 2 + 1], &bare));
        let small = project_points(&points, &view, 0, H, W, t1).unwrap();
        let large = project_points(&points, &view, 0, H, W, t1 + extra).unwrap();
        prop_assert!(small.pixels.iter().all(|p| large.pixels.binary_search(p).is_ok()));
    }

    #[test]
    fn active_count_is_bit_count(points in cloud()) {
        let view = CameraView::new(0, k(), Mat3::IDENTITY, [0.0; 3]);
        let set = project_points(&points, &view, 0, H, W, 0.1).unwrap();
        let mask = build_sparse_mask(&set, H, W).unwrap();
        let bits = mask.as_bytes().iter().filter(|&&b| b != 0).count();
        prop_assert_eq!(mask.active_count(), bits);
        prop_assert_eq!(bits, set.len());
    }
}
