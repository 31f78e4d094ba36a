//! Independent reference implementations used as test oracles. They favor
//! the most literal formulation over speed.

#![allow(dead_code)]

use folk_core::eval::{GroundTruth, Prediction};
use folk_core::label_guide::TextBank;
use folk_core::{BitMask2D, CameraView, FeatureMap, Mat3};
use std::collections::{BTreeMap, BTreeSet};

/// Visible pixels by brute force: for each point, project and compare with
/// the stored depth; collect into a set.
pub fn visible_pixel_set(
    points: &[[f64; 3]],
    view: &CameraView,
    h: usize,
    w: usize,
    tol: f64,
) -> BTreeSet<(usize, usize)> {
    let r = view.rotation.0;
    let t = view.translation;
    let k = view.intrinsics.0;
    let mut out = BTreeSet::new();
    for p in points {
        let c: Vec<f64> = (0..3)
            .map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
            .collect();
        if c[2] <= 0.0 {
            continue;
        }
        let hx = k[0][0] * c[0] + k[0][1] * c[1] + k[0][2] * c[2];
        let hy = k[1][0] * c[0] + k[1][1] * c[1] + k[1][2] * c[2];
        let hz = k[2][0] * c[0] + k[2][1] * c[1] + k[2][2] * c[2];
        let col = (hx / hz).round_ties_even();
        let row = (hy / hz).round_ties_even();
        if row < 0.0 || col < 0.0 || row >= h as f64 || col >= w as f64 {
            continue;
        }
        let (row, col) = (row as usize, col as usize);
        if let Some(d) = view.raw_depth() {
            if (c[2] - d.values[row * w + col] as f64).abs() > tol {
                continue;
            }
        }
        out.insert((row, col));
    }
    out
}

/// Rotation about a unit axis by `angle` radians:
/// `I + sin φ K + (1 − cos φ) K²` with `K` the cross-product matrix.
pub fn rodrigues(axis: [f64; 3], angle: f64) -> Mat3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let kk = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let mut k2 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k2[i][j] = (0..3).map(|m| kk[i][m] * kk[m][j]).sum();
        }
    }
    let (s, c) = angle.sin_cos();
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            out[i][j] = id + s * kk[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    Mat3(out)
}

/// Greedy keep-if-far scan with angles from an explicit quaternion-free
/// formula: the angle of `R_aᵀ R_b` from its trace.
pub fn greedy_scan(rotations: &[Mat3], order: &[usize], theta_deg: f64) -> Vec<usize> {
    let angle = |a: &Mat3, b: &Mat3| {
        let mut tr = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                tr += a.0[j][i] * b.0[j][i];
            }
        }
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
    };
    let mut kept: Vec<usize> = Vec::new();
    for &i in order {
        if kept.iter().all(|&k| angle(&rotations[k], &rotations[i]) >= theta_deg) {
            kept.push(i);
        }
    }
    kept
}

/// Mask from a set of pixels.
pub fn mask_from(h: usize, w: usize, pixels: impl IntoIterator<Item = (usize, usize)>) -> BitMask2D {
    let mut m = BitMask2D::new(h, w);
    for (u, v) in pixels {
        m.set(u, v);
    }
    m
}

pub fn active_set(m: &BitMask2D) -> BTreeSet<(usize, usize)> {
    let mut s = BTreeSet::new();
    for u in 0..m.height() {
        for v in 0..m.width() {
            if m.get(u, v) {
                s.insert((u, v));
            }
        }
    }
    s
}

/// Fraction of the rectangle's pixels covered by `m`.
pub fn rect_recall(m: &BitMask2D, u0: usize, v0: usize, hh: usize, ww: usize) -> f64 {
    let mut hit = 0;
    for u in u0..u0 + hh {
        for v in v0..v0 + ww {
            hit += usize::from(m.get(u, v));
        }
    }
    hit as f64 / (hh * ww) as f64
}

/// Gaussian density at `(u, v)` by direct summation over every pixel of
/// the image: weights `exp(−d²/2σ²)` inside the radius-`k` disc, divided
/// by the disc mass.
pub fn direct_density(m: &BitMask2D, u: usize, v: usize, k: usize, sigma: f64) -> f64 {
    let mut mass = 0.0;
    for dy in -(k as i64)..=k as i64 {
        for dx in -(k as i64)..=k as i64 {
            let d2 = (dy * dy + dx * dx) as f64;
            if d2 <= (k * k) as f64 {
                mass += (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let mut acc = 0.0;
    for a in 0..m.height() {
        for b in 0..m.width() {
            if !m.get(a, b) {
                continue;
            }
            let d2 = ((a as f64 - u as f64).powi(2) + (b as f64 - v as f64).powi(2)).round();
            if d2 <= (k * k) as f64 {
                acc += (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    acc / mass
}

/// Max-rule downsampling by scanning each output block.
pub fn block_max(m: &BitMask2D, ho: usize, wo: usize) -> BitMask2D {
    let (h, w) = (m.height(), m.width());
    let mut out = BitMask2D::new(ho, wo);
    for a in 0..ho {
        for b in 0..wo {
            let rows = a * h / ho..(a + 1) * h / ho;
            let cols = b * w / wo..(b + 1) * w / wo;
            let any = rows.clone().any(|u| cols.clone().any(|v| m.get(u, v)));
            if any {
                out.set(a, b);
            }
        }
    }
    out
}

/// Per-channel average of the features at the listed active pixels.
pub fn gather_average(m: &BitMask2D, f: &FeatureMap) -> Vec<f64> {
    let pixels: Vec<(usize, usize)> = active_set(m).into_iter().collect();
    (0..f.channels)
        .map(|c| {
            let vals: Vec<f64> = pixels.iter().map(|&(u, v)| f.values[(c * f.height + u) * f.width + v] as f64).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

/// Cosine argmax by linear scan; the first maximum wins.
pub fn scan_argmax(e: &[f64], bank: &TextBank) -> usize {
    let ne = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..bank.num_classes() {
        let row = bank.row(c);
        let s = e.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() / ne;
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// Vote by counting into a map, then picking among all classes with the
/// top count by (mean similarity desc, index asc).
pub fn vote_oracle(labels: &[usize], sims: &[Vec<f64>]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let top = *counts.values().max().unwrap();
    let mean = |c: usize| {
        if sims.is_empty() {
            0.0
        } else {
            sims.iter().map(|s| s[c]).sum::<f64>() / sims.len() as f64
        }
    };
    let mut tied: Vec<usize> = counts.iter().filter(|(_, &n)| n == top).map(|(&c, _)| c).collect();
    tied.sort_by(|&a, &b| mean(b).partial_cmp(&mean(a)).unwrap().then(a.cmp(&b)));
    tied[0]
}

/// Mean then normalize.
pub fn mean_normalize(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b / rows.len() as f64;
        }
    }
    let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    m.iter().map(|x| x / n).collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let hi = f(&x);
            x[i] = orig - step;
            let lo = f(&x);
            x[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// Max over components of `|a − n| / max(|a|, |n|, floor)` where the
/// floor is `max(1e-6, 1e-3 · max|a|)`, so components dominated by
/// difference rounding do not count.
pub fn gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn set_iou(a: &[u32], b: &[u32]) -> f64 {
    let a: BTreeSet<u32> = a.iter().copied().collect();
    let b: BTreeSet<u32> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Order of predictions by descending score, ties by index, via repeated
/// selection of the best remaining.
pub fn selection_order(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for (k, &i) in left.iter().enumerate() {
            let b = left[best];
            if scores[i] > scores[b] || (scores[i] == scores[b] && i < b) {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// Exhaustive NMS: a prediction survives iff no higher-ranked survivor
/// overlaps it above the threshold.
pub fn nms_oracle(preds: &[Prediction], th: f64) -> Vec<usize> {
    let order = selection_order(&preds.iter().map(|p| p.score).collect::<Vec<_>>());
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let suppressed = order[..pos]
            .iter()
            .filter(|j| kept.contains(*j))
            .any(|&j| set_iou(&preds[j].point_indices, &preds[i].point_indices) > th);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// All partial one-to-one assignments of `n` predictions to `m` ground
/// truths (`None` = unmatched).
fn assignments(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::new();
        for a in &out {
            next.push([a.clone(), vec![None]].concat());
            for g in 0..m {
                if !a.contains(&Some(g)) {
                    next.push([a.clone(), vec![Some(g)]].concat());
                }
            }
        }
        out = next;
    }
    out
}

/// The unique assignment consistent with greedy highest-score-first
/// matching, found by enumerating every assignment and checking the
/// greedy conditions. Returns `(score, tp)` in rank order.
pub fn greedy_match_by_enumeration(preds: &[&Prediction], gts: &[&GroundTruth], th: f64) -> Vec<(f64, bool)> {
    let order = selection_order(&preds.iter().map(|p| p.score).collect::<Vec<_>>());
    let iou = |p: usize, g: usize| set_iou(&preds[p].point_indices, &gts[g].point_indices);
    let consistent = |a: &Vec<Option<usize>>| {
        for (pos, &p) in order.iter().enumerate() {
            let taken: Vec<usize> = order[..pos].iter().filter_map(|&q| a[q]).collect();
            let free: Vec<usize> = (0..gts.len()).filter(|g| !taken.contains(g)).collect();
            let best = free.iter().copied().fold(None, |acc: Option<usize>, g| match acc {
                Some(b) if iou(p, b) >= iou(p, g) => Some(b),
                _ => Some(g),
            });
            let expected = best.filter(|&g| iou(p, g) >= th);
            if a[p] != expected {
                return false;
            }
        }
        true
    };
    let hits: Vec<Vec<Option<usize>>> = assignments(preds.len(), gts.len()).into_iter().filter(consistent).collect();
    assert_eq!(hits.len(), 1, "greedy assignment must be unique");
    order.iter().map(|&p| (preds[p].score, hits[0][p].is_some())).collect()
}

/// All-point AP: for every rank cutoff, interpolated precision is the best
/// precision at any cutoff with recall at least as high; summed over
/// recall increments.
pub fn ap_by_definition(ranked: &[(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 || ranked.is_empty() {
        return 0.0;
    }
    let mut pr = Vec::new();
    for k in 1..=ranked.len() {
        let tp = ranked[..k].iter().filter(|(_, t)| *t).count();
        pr.push((tp as f64 / k as f64, tp as f64 / num_gt as f64));
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for &(_, r) in &pr {
        let p_interp = pr.iter().filter(|(_, r2)| *r2 >= r).map(|(p, _)| *p).fold(0.0, f64::max);
        ap += (r - prev) * p_interp;
        prev = r;
    }
    ap
}

/// Mean AP over classes with ground truth in a single scene, computed
/// with the enumeration oracles.
pub fn scene_ap_oracle(preds: &[Prediction], gts: &[GroundTruth], th: f64) -> f64 {
    let classes: BTreeSet<usize> = gts.iter().map(|g| g.label).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &c in &classes {
        let p: Vec<&Prediction> = preds.iter().filter(|p| p.label == c).collect();
        let g: Vec<&GroundTruth> = gts.iter().filter(|g| g.label == c).collect();
        let ranked = greedy_match_by_enumeration(&p, &g, th);
        sum += ap_by_definition(&ranked, g.len());
    }
    sum / classes.len() as f64
}
