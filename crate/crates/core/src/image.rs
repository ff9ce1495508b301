//! Label and color images produced by the simulator or read from logs.

use crate::error::{Error, Result};
use crate::patching::PatchRect;

/// Per-pixel label ids (indices into a [`crate::vocab::LabelVocabulary`]),
/// row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelImage {
    width: u32,
    height: u32,
    ids: Vec<u16>,
}

impl LabelImage {
    pub fn new(width: u32, height: u32, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != width as usize * height as usize {
            return Err(Error::Input(format!(
                "label buffer has {} values, expected {width}x{height}",
                ids.len()
            )));
        }
        Ok(Self { width, height, ids })
    }

    pub fn filled(width: u32, height: u32, id: u16) -> Self {
        Self {
            width,
            height,
            ids: vec![id; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.ids[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, id: u16) {
        self.ids[v as usize * self.width as usize + u as usize] = id;
    }

    /// Pixel counts per label id inside `rect` (ids beyond `n_labels` are
    /// folded into the last bucket).
    pub fn histogram(&self, rect: &PatchRect, n_labels: usize) -> Vec<u32> {
        let mut counts = vec![0u32; n_labels.max(1)];
        let last = counts.len() - 1;
        let w = self.width as usize;
        let x_end = (rect.x0 + rect.side).min(self.width) as usize;
        let y_end = (rect.y0 + rect.side).min(self.height) as usize;
        for v in rect.y0 as usize..y_end {
            for &id in &self.ids[v * w + rect.x0 as usize..v * w + x_end] {
                counts[(id as usize).min(last)] += 1;
            }
        }
        counts
    }

    /// Renders ids through a color palette (for RGB-only embedders).
    pub fn colorize(&self, palette: impl Fn(u16) -> [u8; 3]) -> RgbImage {
        let mut data = Vec::with_capacity(self.ids.len() * 3);
        for &id in &self.ids {
            data.extend_from_slice(&palette(id));
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::Input(format!(
                "rgb buffer has {} bytes, expected {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = (v as usize * self.width as usize + u as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Area-averaging resample of `rect` to an `out x out` RGB patch.
///
/// Every output pixel is the exact area-weighted mean of the source pixels
/// its footprint covers, rounded to nearest.
pub fn resample_area(img: &RgbImage, rect: &PatchRect, out: u32) -> Vec<u8> {
    let weights = axis_weights(rect.side, out);
    let src_w = img.width as usize;
    // Horizontal pass into f64 rows.
    let mut tmp = vec![0.0f64; rect.side as usize * out as usize * 3];
    for sy in 0..rect.side as usize {
        let v = rect.y0 as usize + sy;
        for (ox, taps) in weights.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            for &(sx, w) in taps {
                let i = (v * src_w + rect.x0 as usize + sx) * 3;
                for c in 0..3 {
                    acc[c] += w * img.data[i + c] as f64;
                }
            }
            let o = (sy * out as usize + ox) * 3;
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }
    let mut result = vec![0u8; out as usize * out as usize * 3];
    for (oy, taps) in weights.iter().enumerate() {
        for ox in 0..out as usize {
            let mut acc = [0.0f64; 3];
            for &(sy, w) in taps {
                let i = (sy * out as usize + ox) * 3;
                for c in 0..3 {
                    acc[c] += w * tmp[i + c];
                }
            }
            let o = (oy * out as usize + ox) * 3;
            for c in 0..3 {
                result[o + c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    result
}

/// For each output index, the source indices it overlaps and their
/// normalized overlap weights.
fn axis_weights(src: u32, out: u32) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / out as f64;
    (0..out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src as usize);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}
