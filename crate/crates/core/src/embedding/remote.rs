//! Client for an embedding sidecar served over HTTP/JSON.
//!
//! Protocol:
//! - `GET  /v1/info` -> `{"dim": d, "image_size": S}`
//! - `POST /v1/embed_image_batch` `{"patches": [base64 RGB S*S*3, ...]}`
//!   -> `{"features": [[f32; d], ...]}`
//! - `POST /v1/embed_text` `{"text": "..."}` -> `{"feature": [f32; d]}`
//!
//! Patches are area-resampled to `S x S` before upload. Returned vectors are
//! renormalized on arrival.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{check_batch_output, EmbeddingProvider, FeatureVector, PatchContent, PatchSource, ProviderInfo};
use crate::error::{Error, Result};
use crate::image::{resample_area, LabelImage, RgbImage};
use crate::patching::PatchRect;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireInfo {
    pub dim: usize,
    pub image_size: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireImageBatch {
    pub patches: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireFeatures {
    pub features: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireText {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireTextFeature {
    pub feature: Vec<f32>,
}

type Palette = Box<dyn Fn(u16) -> [u8; 3] + Send + Sync>;

pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
    dim: usize,
    image_size: u32,
    palette: Palette,
}

impl RemoteProvider {
    /// Connects to `endpoint` (e.g. `http://127.0.0.1:8500`) and checks that
    /// the served dimension equals `expected_dim`.
    pub fn connect(endpoint: &str, expected_dim: usize, timeout: Duration) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let info: WireInfo = agent
            .get(format!("{endpoint}/v1/info"))
            .call()
            .map_err(|e| transport(&endpoint, e))?
            .body_mut()
            .read_json()
            .map_err(|e| transport(&endpoint, e))?;
        if info.dim != expected_dim {
            return Err(Error::Config(format!(
                "embedding service at {endpoint} serves dimension {} but {expected_dim} is configured",
                info.dim
            )));
        }
        if info.image_size == 0 {
            return Err(Error::Config(format!(
                "embedding service at {endpoint} reports image size 0"
            )));
        }
        Ok(Self {
            endpoint,
            agent,
            dim: info.dim,
            image_size: info.image_size,
            palette: Box::new(default_palette),
        })
    }

    /// Color map used when the frame only carries labels.
    pub fn with_palette(mut self, palette: impl Fn(u16) -> [u8; 3] + Send + Sync + 'static) -> Self {
        self.palette = Box::new(palette);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn encode(&self, rgb: &RgbImage, rect: &PatchRect) -> Result<String> {
        if rect.x0 + rect.side > rgb.width() || rect.y0 + rect.side > rgb.height() {
            return Err(Error::Input(format!("patch {rect:?} outside the source image")));
        }
        Ok(B64.encode(resample_area(rgb, rect, self.image_size)))
    }
}

/// Deterministic distinct colors per label id.
pub fn default_palette(id: u16) -> [u8; 3] {
    let h = super::fnv1a(&[b"palette", &id.to_le_bytes()]);
    [(h >> 16) as u8, (h >> 24) as u8, (h >> 32) as u8]
}

fn transport(endpoint: &str, e: ureq::Error) -> Error {
    Error::Transport(format!("embedding service at {endpoint}: {e}"))
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn image_size(&self) -> u32 {
        self.image_size
    }

    fn embed_patches(&self, batch: &[PatchContent<'_>]) -> Result<Vec<FeatureVector>> {
        if batch.is_empty() {
            return Err(Error::Input("empty patch batch".into()));
        }
        // Colorize each distinct label image once.
        let mut colored: Option<(*const LabelImage, RgbImage)> = None;
        let mut patches = Vec::with_capacity(batch.len());
        for p in batch {
            let encoded = match p.source {
                PatchSource::Rgb(img) => self.encode(img, &p.rect)?,
                PatchSource::Labels(labels) => {
                    let key = labels as *const LabelImage;
                    if colored.as_ref().map(|c| c.0) != Some(key) {
                        colored = Some((key, labels.colorize(|id| (self.palette)(id))));
                    }
                    let rgb = &colored.as_ref().expect("just set").1;
                    self.encode(rgb, &p.rect)?
                }
            };
            patches.push(encoded);
        }
        let reply: WireFeatures = self
            .agent
            .post(format!("{}/v1/embed_image_batch", self.endpoint))
            .send_json(&WireImageBatch { patches })
            .map_err(|e| transport(&self.endpoint, e))?
            .body_mut()
            .read_json()
            .map_err(|e| transport(&self.endpoint, e))?;
        let out = reply
            .features
            .iter()
            .map(|f| FeatureVector::normalize_f32(f))
            .collect::<Result<Vec<_>>>()?;
        check_batch_output(batch.len(), self.dim, &out)?;
        Ok(out)
    }

    fn embed_text(&self, query: &str) -> Result<FeatureVector> {
        let q = query.trim();
        if q.is_empty() {
            return Err(Error::Input("empty query".into()));
        }
        let reply: WireTextFeature = self
            .agent
            .post(format!("{}/v1/embed_text", self.endpoint))
            .send_json(&WireText { text: q.to_string() })
            .map_err(|e| transport(&self.endpoint, e))?
            .body_mut()
            .read_json()
            .map_err(|e| transport(&self.endpoint, e))?;
        if reply.feature.len() != self.dim {
            return Err(Error::Config(format!(
                "text feature has dimension {} but {} is configured",
                reply.feature.len(),
                self.dim
            )));
        }
        FeatureVector::normalize_f32(&reply.feature)
    }

    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            kind: "remote".into(),
            dim: self.dim,
            image_size: self.image_size,
            seed: None,
            noise_sigma: None,
            endpoint: Some(self.endpoint.clone()),
        }
    }
}
