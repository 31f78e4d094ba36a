use crate::error::{invalid, CoreError, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Binary `height × width` mask, one byte per pixel, with a cached count
/// of active pixels.
///
/// Row `u` and column `v` index the pixel at `u * width + v`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask2D {
    height: usize,
    width: usize,
    bits: Vec<u8>,
    active: usize,
}

impl BitMask2D {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
            active: 0,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![1; height * width],
            active: height * width,
        }
    }

    /// Builds a mask from raw bytes, which must all be 0 or 1.
    pub fn from_bytes(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(CoreError::Shape {
                what: "mask bytes".into(),
                expected: height * width,
                actual: bits.len(),
            });
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(invalid("mask", format!("byte value {bad} outside {{0,1}}")));
        }
        let active = bits.iter().filter(|&&b| b == 1).count();
        Ok(Self {
            height,
            width,
            bits,
            active,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of active pixels, `‖M‖₁`.
    pub fn active_count(&self) -> usize {
        self.active
    }

    pub fn is_empty(&self) -> bool {
        self.active == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.width + v] != 0
    }

    /// Returns `false` for coordinates outside the image.
    #[inline]
    pub fn get_signed(&self, u: isize, v: isize) -> bool {
        u >= 0
            && v >= 0
            && (u as usize) < self.height
            && (v as usize) < self.width
            && self.get(u as usize, v as usize)
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize) {
        let b = &mut self.bits[u * self.width + v];
        if *b == 0 {
            *b = 1;
            self.active += 1;
        }
    }

    /// Sets every pixel of the square window `[u0, u1] × [v0, v1]` clipped
    /// to the image.
    pub fn fill_window(&mut self, u0: isize, u1: isize, v0: isize, v1: isize) {
        let u0 = u0.max(0);
        let v0 = v0.max(0);
        let u1 = u1.min(self.height as isize - 1);
        let v1 = v1.min(self.width as isize - 1);
        if u0 > u1 || v0 > v1 {
            return;
        }
        for u in u0 as usize..=u1 as usize {
            let row = &mut self.bits[u * self.width..(u + 1) * self.width];
            for b in &mut row[v0 as usize..=v1 as usize] {
                if *b == 0 {
                    *b = 1;
                    self.active += 1;
                }
            }
        }
    }

    /// Active pixels as `(row, col)` in raster order.
    pub fn iter_active(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Inclusive bounding box `(u0, u1, v0, v1)` of the active pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (u, v) in self.iter_active() {
            bb = Some(match bb {
                None => (u, u, v, v),
                Some((a, b, c, d)) => (a.min(u), b.max(u), c.min(v), d.max(v)),
            });
        }
        bb
    }

    /// True when every active pixel of `self` is also active in `other`.
    pub fn is_subset_of(&self, other: &BitMask2D) -> bool {
        self.height == other.height
            && self.width == other.width
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Number of pixels active in both masks.
    pub fn intersection_count(&self, other: &BitMask2D) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a != 0 && b != 0)
            .count()
    }

    pub fn union_with(&mut self, other: &BitMask2D) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            if *a == 0 && b != 0 {
                *a = 1;
                self.active += 1;
            }
        }
    }
}
