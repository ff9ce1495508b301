//! Multi-scale patch decomposition of a frame and the 3D anchor point of
//! each patch.
//!
//! A scale index `i` selects square patches of side `s_i = 2^i * S`, where
//! `S` is the embedder input size. For every scale the image is
//! center-cropped to the largest multiple of `s_i` in each direction and
//! tiled row-major. Batch indices run over `(scale, row, col)` in the order
//! the scales are given.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointImage};
use crate::scalar::Scalar;

/// Axis-aligned square region of the source image, pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRect {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
}

impl PatchRect {
    #[inline]
    pub fn contains(&self, u: u32, v: u32) -> bool {
        u >= self.x0 && u < self.x0 + self.side && v >= self.y0 && v < self.y0 + self.side
    }

    #[inline]
    pub fn area(&self) -> u64 {
        self.side as u64 * self.side as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub scale: i32,
    pub rect: PatchRect,
    pub batch_index: usize,
}

/// Per-scale tiling summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleTiling {
    pub scale: i32,
    pub side: u32,
    pub cols: u32,
    pub rows: u32,
    /// Top-left corner of the center crop.
    pub crop_offset: (u32, u32),
}

impl ScaleTiling {
    #[inline]
    pub fn count(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    pub fn crop_size(&self) -> (u32, u32) {
        (self.cols * self.side, self.rows * self.side)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub width: u32,
    pub height: u32,
    pub base_size: u32,
    pub scales: Vec<i32>,
    pub tilings: Vec<ScaleTiling>,
    pub patches: Vec<PatchSpec>,
}

impl PatchLayout {
    pub fn total(&self) -> usize {
        self.patches.len()
    }

    pub fn tiling(&self, scale: i32) -> Option<&ScaleTiling> {
        self.tilings.iter().find(|t| t.scale == scale)
    }

    /// `N_i` for one scale (0 for unknown scales).
    pub fn count(&self, scale: i32) -> usize {
        self.tiling(scale).map_or(0, ScaleTiling::count)
    }
}

/// Patch side `2^scale * base`, or `None` when it rounds to zero pixels.
pub fn patch_side(base: u32, scale: i32) -> Option<u32> {
    let side = if scale >= 0 {
        (base as u64).checked_shl(scale as u32)?
    } else {
        let shift = scale.unsigned_abs();
        if shift >= 32 {
            0
        } else {
            (base >> shift) as u64
        }
    };
    u32::try_from(side).ok().filter(|s| *s > 0)
}

/// Tiles a `width x height` frame at every requested scale.
///
/// Scales whose patch does not fit in the frame contribute no patches and
/// log a warning.
pub fn patch_grid(width: u32, height: u32, base_size: u32, scales: &[i32]) -> Result<PatchLayout> {
    if base_size == 0 {
        return Err(Error::Config("base patch size must be positive".into()));
    }
    if scales.is_empty() {
        return Err(Error::Config("at least one scale is required".into()));
    }
    if scales.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Config(format!(
            "scales must be strictly decreasing, got {scales:?}"
        )));
    }
    let mut tilings = Vec::with_capacity(scales.len());
    let mut patches = Vec::new();
    for &scale in scales {
        let side = patch_side(base_size, scale)
            .ok_or_else(|| Error::Config(format!("scale {scale} gives a zero-pixel patch")))?;
        let cols = width / side;
        let rows = height / side;
        if cols == 0 || rows == 0 {
            log::warn!("scale {scale} (side {side}px) does not fit a {width}x{height} frame");
        }
        let crop_offset = ((width - cols * side) / 2, (height - rows * side) / 2);
        let tiling = ScaleTiling {
            scale,
            side,
            cols,
            rows,
            crop_offset,
        };
        for r in 0..rows {
            for c in 0..cols {
                patches.push(PatchSpec {
                    scale,
                    rect: PatchRect {
                        x0: crop_offset.0 + c * side,
                        y0: crop_offset.1 + r * side,
                        side,
                    },
                    batch_index: patches.len(),
                });
            }
        }
        tilings.push(tiling);
    }
    Ok(PatchLayout {
        width,
        height,
        base_size,
        scales: scales.to_vec(),
        tilings,
        patches,
    })
}

/// Options for [`patch_centroid`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidOptions {
    /// Patches with a smaller fraction of valid depth pixels are skipped.
    pub min_valid_fraction: f64,
    /// Pixel stride used when summing; 1 visits every pixel.
    pub stride: u32,
}

impl Default for CentroidOptions {
    fn default() -> Self {
        Self {
            min_valid_fraction: 0.25,
            stride: 1,
        }
    }
}

/// Mean world point over the valid pixels of `rect`.
pub fn patch_centroid<T: Scalar>(
    rect: &PatchRect,
    points: &PointImage<T>,
    opts: &CentroidOptions,
) -> Option<Point3<T>> {
    let stride = opts.stride.max(1) as usize;
    let w = points.width() as usize;
    let x_end = (rect.x0 + rect.side).min(points.width()) as usize;
    let y_end = (rect.y0 + rect.side).min(points.height()) as usize;
    let (pts, valid) = (points.points(), points.valid());
    let mut sum = Point3::<T>::zero();
    let mut n_valid = 0usize;
    let mut n_total = 0usize;
    for v in (rect.y0 as usize..y_end).step_by(stride) {
        let row = v * w;
        for u in (rect.x0 as usize..x_end).step_by(stride) {
            n_total += 1;
            if valid[row + u] {
                sum = sum + pts[row + u];
                n_valid += 1;
            }
        }
    }
    if n_total == 0 || n_valid == 0 {
        return None;
    }
    if (n_valid as f64) < opts.min_valid_fraction * n_total as f64 {
        return None;
    }
    Some(sum * (T::one() / T::lit(n_valid as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_scale_counts_match_closed_form() {
        for (scale, n) in [(1, 1), (0, 4), (-1, 20), (-2, 88)] {
            let layout = patch_grid(640, 480, 224, &[scale]).unwrap();
            assert_eq!(layout.total(), n, "scale {scale}");
        }
        let layout = patch_grid(640, 480, 224, &[1, 0, -1]).unwrap();
        assert_eq!(layout.total(), 25);
        assert_eq!(
            layout.patches.iter().map(|p| p.batch_index).collect::<Vec<_>>(),
            (0..25).collect::<Vec<_>>()
        );
    }

    #[test]
    fn scale_zero_crop() {
        let layout = patch_grid(640, 480, 224, &[0]).unwrap();
        let t = layout.tiling(0).unwrap();
        assert_eq!(t.crop_offset, (96, 16));
        assert_eq!(t.crop_size(), (448, 448));
        assert_eq!(layout.patches[0].rect, PatchRect { x0: 96, y0: 16, side: 224 });
        assert_eq!(layout.patches[3].rect, PatchRect { x0: 320, y0: 240, side: 224 });
    }

    #[test]
    fn oversized_scale_yields_no_patches() {
        let layout = patch_grid(640, 480, 224, &[2, 0]).unwrap();
        assert_eq!(layout.count(2), 0);
        assert_eq!(layout.total(), 4);
    }

    #[test]
    fn invalid_scale_lists() {
        assert!(patch_grid(640, 480, 224, &[]).is_err());
        assert!(patch_grid(640, 480, 224, &[0, 1]).is_err());
        assert!(patch_grid(640, 480, 224, &[0, 0]).is_err());
        assert!(patch_grid(640, 480, 0, &[0]).is_err());
        assert!(patch_grid(640, 480, 4, &[-3]).is_err());
    }

    #[test]
    fn quarter_resolution_keeps_full_resolution_counts() {
        let layout = patch_grid(160, 120, 56, &[1, 0, -1]).unwrap();
        assert_eq!(layout.total(), 25);
    }
}
