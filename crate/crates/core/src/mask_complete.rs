//! Density-guided completion of sparse projected masks.
//!
//! The sparse mask is first dilated with a square (Chebyshev) window of
//! radius `r`. Each following round estimates a truncated-Gaussian density
//! of the current mask and, from every sufficiently dense mask pixel, fills
//! a radius-`r` window displaced by `r` toward each of the (at most `S`)
//! neighbors where the density rises fastest.

use crate::error::{invalid, Result};
use crate::mask::BitMask2D;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// The 8 unit directions `(dy, dx)`, in tie-break order.
pub const DIRECTIONS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionParams {
    /// Square window radius `r` in pixels.
    pub window_radius: usize,
    /// Density kernel radius `k_s` in pixels.
    pub kernel_size: usize,
    pub sigma: f64,
    pub density_threshold: f64,
    /// Number of expansion directions `S`.
    pub top_directions: usize,
    pub iterations: usize,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            window_radius: 7,
            kernel_size: 10,
            sigma: 10.0 / 3.0,
            density_threshold: 0.02,
            top_directions: 3,
            iterations: 2,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(invalid("r", "must be >= 1"));
        }
        if self.kernel_size < 1 {
            return Err(invalid("k_s", "must be >= 1"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if !(self.density_threshold > 0.0 && self.density_threshold < 1.0) {
            return Err(invalid(
                "rho_th",
                format!("must be in (0, 1), got {}", self.density_threshold),
            ));
        }
        if !(1..=8).contains(&self.top_directions) {
            return Err(invalid(
                "S",
                format!("must be in 1..=8, got {}", self.top_directions),
            ));
        }
        Ok(())
    }
}

/// Normalized local density of a mask; values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl DensityField {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.width + v]
    }

    /// Density at a possibly out-of-bounds coordinate.
    #[inline]
    fn get_signed(&self, u: isize, v: isize) -> Option<f64> {
        (u >= 0 && v >= 0 && (u as usize) < self.height && (v as usize) < self.width)
            .then(|| self.at(u as usize, v as usize))
    }
}

/// Truncated Gaussian kernel: the integer offsets within Euclidean radius
/// `k_s`, their weights divided by the total disc mass `Z`.
#[derive(Debug, Clone)]
pub struct DensityKernel {
    pub offsets: Vec<(isize, isize, f64)>,
    pub radius: usize,
    pub mass: f64,
}

impl DensityKernel {
    pub fn new(kernel_size: usize, sigma: f64) -> Self {
        let k = kernel_size as isize;
        let mut raw = Vec::new();
        let mut mass = 0.0;
        for dy in -k..=k {
            for dx in -k..=k {
                let d2 = (dy * dy + dx * dx) as f64;
                if d2 <= (k * k) as f64 {
                    let g = libm::exp(-d2 / (2.0 * sigma * sigma));
                    mass += g;
                    raw.push((dy, dx, g));
                }
            }
        }
        let offsets = raw.into_iter().map(|(dy, dx, g)| (dy, dx, g / mass)).collect();
        Self {
            offsets,
            radius: kernel_size,
            mass,
        }
    }

    /// Density at `(u, v)`: weighted count of active pixels in the disc.
    #[inline]
    pub fn density_at(&self, mask: &BitMask2D, u: usize, v: usize) -> f64 {
        let (u, v) = (u as isize, v as isize);
        let mut acc = 0.0;
        for &(dy, dx, g) in &self.offsets {
            if mask.get_signed(u + dy, v + dx) {
                acc += g;
            }
        }
        acc
    }
}

/// Chebyshev dilation by `r`, clipped to the image.
pub fn uniform_expand(sparse: &BitMask2D, r: usize) -> Result<BitMask2D> {
    if r < 1 {
        return Err(invalid("r", "must be >= 1"));
    }
    let (h, w) = (sparse.height(), sparse.width());
    if sparse.is_empty() {
        return Ok(BitMask2D::new(h, w));
    }
    // Separable max filter: horizontal then vertical.
    let r = r as isize;
    let mut horiz = vec![0u8; h * w];
    for u in 0..h {
        let mut last: isize = isize::MIN / 2;
        // distance to the nearest active pixel on the left (inclusive)
        let mut left = vec![isize::MAX; w];
        for v in 0..w {
            if sparse.get(u, v) {
                last = v as isize;
            }
            left[v] = v as isize - last;
        }
        let mut next: isize = isize::MAX / 2;
        for v in (0..w).rev() {
            if sparse.get(u, v) {
                next = v as isize;
            }
            if left[v] <= r || next - v as isize <= r {
                horiz[u * w + v] = 1;
            }
        }
    }
    let mut out = BitMask2D::new(h, w);
    for v in 0..w {
        let mut last: isize = isize::MIN / 2;
        let mut up = vec![isize::MAX; h];
        for u in 0..h {
            if horiz[u * w + v] != 0 {
                last = u as isize;
            }
            up[u] = u as isize - last;
        }
        let mut next: isize = isize::MAX / 2;
        for u in (0..h).rev() {
            if horiz[u * w + v] != 0 {
                next = u as isize;
            }
            if up[u] <= r || next - u as isize <= r {
                out.set(u, v);
            }
        }
    }
    Ok(out)
}

/// Normalized truncated-Gaussian density of `mask` at every pixel.
pub fn density_map(mask: &BitMask2D, kernel_size: usize, sigma: f64) -> Result<DensityField> {
    if kernel_size < 1 {
        return Err(invalid("k_s", "must be >= 1"));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    let kernel = DensityKernel::new(kernel_size, sigma);
    Ok(density_map_with(mask, &kernel))
}

fn density_map_with(mask: &BitMask2D, kernel: &DensityKernel) -> DensityField {
    let (h, w) = (mask.height(), mask.width());
    let mut values = vec![0.0; h * w];
    if let Some((u0, u1, v0, v1)) = mask.bounding_box() {
        let k = kernel.radius;
        let (u0, v0) = (u0.saturating_sub(k), v0.saturating_sub(k));
        let (u1, v1) = ((u1 + k).min(h - 1), (v1 + k).min(w - 1));
        for u in u0..=u1 {
            for v in v0..=v1 {
                values[u * w + v] = kernel.density_at(mask, u, v);
            }
        }
    }
    DensityField {
        height: h,
        width: w,
        values,
    }
}

/// Density only where [`directional_expand`] reads it: active pixels and
/// their 8-neighbors. Other entries are left at 0.
fn sparse_density(mask: &BitMask2D, kernel: &DensityKernel) -> DensityField {
    let (h, w) = (mask.height(), mask.width());
    let mut values = vec![0.0; h * w];
    let mut done = vec![false; h * w];
    for (u, v) in mask.iter_active() {
        for du in -1isize..=1 {
            for dv in -1isize..=1 {
                let (a, b) = (u as isize + du, v as isize + dv);
                if a < 0 || b < 0 || a as usize >= h || b as usize >= w {
                    continue;
                }
                let idx = a as usize * w + b as usize;
                if !done[idx] {
                    done[idx] = true;
                    values[idx] = kernel.density_at(mask, a as usize, b as usize);
                }
            }
        }
    }
    DensityField {
        height: h,
        width: w,
        values,
    }
}

/// The directions chosen at `(u, v)`: up to `s` directions with the largest
/// strictly positive density increments, ties in enumeration order.
pub fn expansion_directions(
    density: &DensityField,
    u: usize,
    v: usize,
    s: usize,
) -> Vec<(isize, isize)> {
    let here = density.at(u, v);
    let mut cands: Vec<(f64, usize)> = DIRECTIONS
        .iter()
        .enumerate()
        .filter_map(|(i, &(dy, dx))| {
            let delta = density.get_signed(u as isize + dy, v as isize + dx)? - here;
            (delta > 0.0).then_some((delta, i))
        })
        .collect();
    // stable: equal increments keep enumeration order
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));
    cands.truncate(s);
    cands.into_iter().map(|(_, i)| DIRECTIONS[i]).collect()
}

/// One round of density-guided expansion. Every active pixel with density
/// above the threshold fills, for each chosen direction `(dy, dx)`, the
/// radius-`r` window centered at `(u + dy·r, v + dx·r)`.
pub fn directional_expand(
    mask: &BitMask2D,
    density: &DensityField,
    params: &CompletionParams,
) -> Result<BitMask2D> {
    params.validate()?;
    if density.height != mask.height() || density.width != mask.width() {
        return Err(crate::error::CoreError::Shape {
            what: "density field".into(),
            expected: mask.height() * mask.width(),
            actual: density.height * density.width,
        });
    }
    let r = params.window_radius as isize;
    let mut out = mask.clone();
    for (u, v) in mask.iter_active() {
        if !(density.at(u, v) > params.density_threshold) {
            continue;
        }
        for (dy, dx) in expansion_directions(density, u, v, params.top_directions) {
            let cu = u as isize + dy * r;
            let cv = v as isize + dx * r;
            out.fill_window(cu - r, cu + r, cv - r, cv + r);
        }
    }
    Ok(out)
}

/// Diagnostics from [`complete_mask`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub mask: BitMask2D,
    /// Active count after the uniform expansion.
    pub uniform_count: usize,
    /// Set when the input had no active pixel.
    pub empty_input: bool,
}

/// Uniform expansion followed by `iterations` rounds of density-guided
/// expansion. Density is recomputed between rounds, not within one.
pub fn complete_mask(sparse: &BitMask2D, params: &CompletionParams) -> Result<Completion> {
    params.validate()?;
    if sparse.is_empty() {
        return Ok(Completion {
            mask: sparse.clone(),
            uniform_count: 0,
            empty_input: true,
        });
    }
    let mut mask = uniform_expand(sparse, params.window_radius)?;
    let uniform_count = mask.active_count();
    let kernel = DensityKernel::new(params.kernel_size, params.sigma);
    for _ in 0..params.iterations {
        let density = sparse_density(&mask, &kernel);
        let next = directional_expand(&mask, &density, params)?;
        if next.active_count() == mask.active_count() {
            // no growth: later rounds see the same mask and density
            break;
        }
        mask = next;
    }
    Ok(Completion {
        mask,
        uniform_count,
        empty_input: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(h: usize, w: usize, u: usize, v: usize) -> BitMask2D {
        let mut m = BitMask2D::new(h, w);
        m.set(u, v);
        m
    }

    #[test]
    fn uniform_expand_examples() {
        let empty = BitMask2D::new(9, 9);
        assert_eq!(uniform_expand(&empty, 2).unwrap().active_count(), 0);
        assert_eq!(
            uniform_expand(&single(11, 11, 5, 5), 2).unwrap().active_count(),
            25
        );
        assert_eq!(
            uniform_expand(&single(30, 30, 0, 0), 7).unwrap().active_count(),
            64
        );
        assert!(uniform_expand(&empty, 0).is_err());
    }

    #[test]
    fn uniform_expand_matches_window_fill() {
        let mut m = BitMask2D::new(20, 25);
        for &(u, v) in &[(0, 3), (7, 7), (19, 24), (10, 0)] {
            m.set(u, v);
        }
        let mut oracle = BitMask2D::new(20, 25);
        for (u, v) in m.iter_active() {
            let (u, v) = (u as isize, v as isize);
            oracle.fill_window(u - 3, u + 3, v - 3, v + 3);
        }
        assert_eq!(uniform_expand(&m, 3).unwrap(), oracle);
    }

    #[test]
    fn density_of_single_pixel_is_inverse_mass() {
        let m = single(41, 41, 20, 20);
        let d = density_map(&m, 10, 10.0 / 3.0).unwrap();
        // direct summation of the disc mass
        let s: f64 = 10.0 / 3.0;
        let mut z = 0.0;
        for dy in -10i32..=10 {
            for dx in -10i32..=10 {
                if dy * dy + dx * dx <= 100 {
                    z += (-((dy * dy + dx * dx) as f64) / (2.0 * s * s)).exp();
                }
            }
        }
        assert!((d.at(20, 20) - 1.0 / z).abs() < 1e-15);
        assert_eq!(d.at(0, 0), 0.0);
    }

    #[test]
    fn full_mask_saturates_interior() {
        let m = BitMask2D::full(30, 30);
        let d = density_map(&m, 10, 10.0 / 3.0).unwrap();
        assert!((d.at(15, 15) - 1.0).abs() < 1e-12);
        assert!(d.at(0, 0) < 1.0);
        let empty = density_map(&BitMask2D::new(5, 5), 10, 3.0).unwrap();
        assert!(empty.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_density_does_not_expand() {
        let mut m = BitMask2D::new(20, 20);
        m.fill_window(5, 10, 5, 10);
        let d = DensityField {
            height: 20,
            width: 20,
            values: vec![0.5; 400],
        };
        let out = directional_expand(&m, &d, &CompletionParams::default()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn below_threshold_does_not_expand() {
        let mut m = BitMask2D::new(20, 20);
        m.fill_window(5, 10, 5, 10);
        let values = (0..400).map(|i| 0.01 * (i as f64) / 400.0).collect();
        let d = DensityField {
            height: 20,
            width: 20,
            values,
        };
        let out = directional_expand(&m, &d, &CompletionParams::default()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn direction_ties_follow_enumeration_order() {
        let mut values = vec![0.0; 9];
        values[4] = 0.1;
        for &i in &[0, 2, 6, 8] {
            values[i] = 0.3;
        }
        values[1] = 0.2;
        let d = DensityField {
            height: 3,
            width: 3,
            values,
        };
        assert_eq!(
            expansion_directions(&d, 1, 1, 3),
            vec![(-1, -1), (-1, 1), (1, -1)]
        );
        // fewer positive increments than S: take all of them
        assert_eq!(expansion_directions(&d, 1, 1, 8).len(), 5);
    }

    #[test]
    fn zero_iterations_is_uniform_expansion() {
        let m = single(30, 30, 12, 12);
        let p = CompletionParams {
            iterations: 0,
            ..Default::default()
        };
        let c = complete_mask(&m, &p).unwrap();
        assert_eq!(c.mask, uniform_expand(&m, 7).unwrap());
    }

    #[test]
    fn full_mask_is_fixed_point() {
        let m = BitMask2D::full(25, 31);
        let c = complete_mask(&m, &CompletionParams::default()).unwrap();
        assert_eq!(c.mask, m);
    }

    #[test]
    fn empty_input_is_flagged() {
        let c = complete_mask(&BitMask2D::new(8, 8), &CompletionParams::default()).unwrap();
        assert!(c.empty_input);
        assert!(c.mask.is_empty());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = CompletionParams::default();
        p.top_directions = 9;
        assert!(p.validate().is_err());
        p = CompletionParams {
            density_threshold: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
