//! Image-patch and text embedders sharing one feature space.
//!
//! Every provider embeds a whole frame's patches in a single
//! [`EmbeddingProvider::embed_patches`] call. Two implementations ship: a
//! deterministic [`SyntheticProvider`] that works on label images and a
//! [`RemoteProvider`] speaking the HTTP sidecar protocol.

mod remote;
mod synthetic;

use std::ops::Deref;
use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LabelImage, RgbImage};
use crate::vocab::LabelVocabulary;
use crate::patching::PatchRect;

pub use remote::{default_palette, RemoteProvider, WireFeatures, WireImageBatch, WireInfo, WireText, WireTextFeature};
pub use synthetic::{room_context_weight, SyntheticConfig, SyntheticProvider};

/// Unit-norm embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    /// Normalizes `values` to unit length (accumulated in f64).
    pub fn normalize(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Input("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    pub fn normalize_f32(values: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        Self::normalize(&wide)
    }

    /// Wraps stored values that are already unit-norm (within 1e-3).
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let n = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-3 {
            return Err(Error::Input(format!("feature norm {n} is not 1")));
        }
        Ok(Self(values))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    }
}

impl Deref for FeatureVector {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// Pixel source of a patch.
#[derive(Clone, Copy, Debug)]
pub enum PatchSource<'a> {
    Labels(&'a LabelImage),
    Rgb(&'a RgbImage),
}

/// One patch of a frame: the rectangle plus the full source image.
/// Resampling to the encoder input size happens inside the provider.
#[derive(Clone, Copy, Debug)]
pub struct PatchContent<'a> {
    pub rect: PatchRect,
    pub source: PatchSource<'a>,
}

/// Provider metadata written next to saved maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub kind: String,
    pub dim: usize,
    pub image_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

/// Which embedder to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Synthetic(SyntheticConfig),
    Remote {
        endpoint: String,
        dim: usize,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn default_timeout() -> f64 {
    30.0
}

/// The synthetic provider as configured for the 160x120 simulator: input
/// side 56 (224 at 640x480) and label-query similarities scaled to 0.32.
impl Default for ProviderConfig {
    fn default() -> Self {
        Self::Synthetic(SyntheticConfig {
            image_size: 56,
            text_alignment: 0.32,
            ..Default::default()
        })
    }
}

impl ProviderConfig {
    pub fn build(&self, vocab: &LabelVocabulary) -> Result<Arc<dyn EmbeddingProvider>> {
        Ok(match self {
            Self::Synthetic(c) => Arc::new(SyntheticProvider::new(c.clone(), vocab.clone())?),
            Self::Remote {
                endpoint,
                dim,
                timeout_s,
            } => {
                if !(timeout_s.is_finite() && *timeout_s > 0.0) {
                    return Err(Error::Config(format!("timeout_s must be positive, got {timeout_s}")));
                }
                Arc::new(RemoteProvider::connect(
                    endpoint,
                    *dim,
                    std::time::Duration::from_secs_f64(*timeout_s),
                )?)
            }
        })
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Feature dimension `d`.
    fn dim(&self) -> usize;

    /// Encoder input side `S` in pixels.
    fn image_size(&self) -> u32;

    /// Embeds all patches of one frame in one invocation. Output order
    /// matches input order.
    fn embed_patches(&self, batch: &[PatchContent<'_>]) -> Result<Vec<FeatureVector>>;

    /// Embeds a free-form text query.
    fn embed_text(&self, query: &str) -> Result<FeatureVector>;

    fn info(&self) -> ProviderInfo;
}

/// Validates a provider response against the request.
pub(crate) fn check_batch_output(
    expected_len: usize,
    dim: usize,
    out: &[FeatureVector],
) -> Result<()> {
    if out.len() != expected_len {
        return Err(Error::Transport(format!(
            "provider returned {} features for {} patches",
            out.len(),
            expected_len
        )));
    }
    if let Some(f) = out.iter().find(|f| f.dim() != dim) {
        return Err(Error::Config(format!(
            "provider returned dimension {} but {} is configured",
            f.dim(),
            dim
        )));
    }
    Ok(())
}

/// Wrapper recording every batch call, for checking the one-call-per-frame
/// contract.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicU64,
    batch_sizes: Mutex<Vec<usize>>,
}

impl<P: EmbeddingProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            batch_sizes: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batch_sizes.lock().expect("poisoned").clone()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CountingProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn image_size(&self) -> u32 {
        self.inner.image_size()
    }

    fn embed_patches(&self, batch: &[PatchContent<'_>]) -> Result<Vec<FeatureVector>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.batch_sizes.lock().expect("poisoned").push(batch.len());
        self.inner.embed_patches(batch)
    }

    fn embed_text(&self, query: &str) -> Result<FeatureVector> {
        self.inner.embed_text(query)
    }

    fn info(&self) -> ProviderInfo {
        self.inner.info()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn image_size(&self) -> u32 {
        (**self).image_size()
    }

    fn embed_patches(&self, batch: &[PatchContent<'_>]) -> Result<Vec<FeatureVector>> {
        (**self).embed_patches(batch)
    }

    fn embed_text(&self, query: &str) -> Result<FeatureVector> {
        (**self).embed_text(query)
    }

    fn info(&self) -> ProviderInfo {
        (**self).info()
    }
}

/// Stable 64-bit FNV-1a, used to key deterministic generators.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        // separator so ("ab","c") != ("a","bc")
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
