//! Deterministic prototype embedder driven by label images.
//!
//! Each label owns a fixed unit prototype drawn from a generator keyed by
//! `(seed, label)`. A patch embeds to the renormalized coverage-weighted
//! mixture of the prototypes of the labels it contains, plus optional
//! Gaussian noise keyed by the patch content.
//!
//! Room labels are painted on floors and walls. How much of a room-painted
//! pixel counts toward its room prototype depends on how far the patch is
//! zoomed out relative to the encoder input (see [`room_context_weight`]);
//! the rest counts as background. Coarse patches therefore carry room
//! semantics while fine patches isolate objects.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{fnv1a, EmbeddingProvider, FeatureVector, PatchContent, PatchSource, ProviderInfo};
use crate::error::{Error, Result};
use crate::vocab::{LabelGroup, LabelVocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub seed: u64,
    /// Expected norm of the additive noise vector before renormalization.
    pub noise_sigma: f64,
    /// Encoder input side `S`, pixels.
    pub image_size: u32,
    /// Largest accepted |cosine| between two prototypes.
    pub max_prototype_overlap: f64,
    /// Cosine between a label's text embedding and its prototype. Below 1
    /// the rest of the text vector points along a direction orthogonal to
    /// every prototype, which scales all label-query similarities by this
    /// factor (contrastive encoders score matching pairs around 0.3).
    pub text_alignment: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            seed: 7,
            noise_sigma: 0.05,
            image_size: 224,
            max_prototype_overlap: 0.2,
            text_alignment: 1.0,
        }
    }
}

const MAX_RESEED_ATTEMPTS: u32 = 100_000;

/// Fraction of a room-painted pixel attributed to its room prototype for a
/// patch of side `side` when the encoder input is `image_size`:
/// 1 at two times the input size and above, 1/2 at the input size, 0 at
/// half the input size and below (linear in log2 of the zoom factor).
pub fn room_context_weight(side: u32, image_size: u32) -> f64 {
    let zoom = (side as f64 / image_size as f64).log2();
    (0.5 + 0.5 * zoom).clamp(0.0, 1.0)
}

pub struct SyntheticProvider {
    config: SyntheticConfig,
    vocab: LabelVocabulary,
    prototypes: Vec<FeatureVector>,
    /// Unit vector orthogonal to all prototypes, mixed into label text
    /// embeddings when `text_alignment < 1`.
    text_direction: Option<Vec<f64>>,
}

impl SyntheticProvider {
    pub fn new(config: SyntheticConfig, vocab: LabelVocabulary) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if config.image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if !(config.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        if !(config.text_alignment > 0.0 && config.text_alignment <= 1.0) {
            return Err(Error::Config("text alignment must lie in (0, 1]".into()));
        }
        let mut prototypes: Vec<FeatureVector> = Vec::with_capacity(vocab.len());
        for label in vocab.labels() {
            let key = label.name.to_lowercase();
            let mut accepted = None;
            for attempt in 0..MAX_RESEED_ATTEMPTS {
                let v = seeded_unit(
                    config.dim,
                    fnv1a(&[b"proto", &config.seed.to_le_bytes(), key.as_bytes(), &attempt.to_le_bytes()]),
                );
                if prototypes
                    .iter()
                    .all(|p| p.dot(&v).abs() < config.max_prototype_overlap)
                {
                    accepted = Some(v);
                    break;
                }
            }
            let v = accepted.ok_or_else(|| {
                Error::Config(format!(
                    "could not place prototype {:?} under overlap {} in dimension {}",
                    label.name, config.max_prototype_overlap, config.dim
                ))
            })?;
            prototypes.push(v);
        }
        let text_direction = if config.text_alignment < 1.0 {
            Some(orthogonal_direction(&config, &prototypes)?)
        } else {
            None
        };
        Ok(Self {
            config,
            vocab,
            prototypes,
            text_direction,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &LabelVocabulary {
        &self.vocab
    }

    /// The fixed embedding of a vocabulary label.
    pub fn prototype(&self, label: &str) -> Result<&FeatureVector> {
        let id = self.vocab.require(label)?;
        Ok(&self.prototypes[id as usize])
    }

    pub fn prototype_by_id(&self, id: u16) -> Option<&FeatureVector> {
        self.prototypes.get(id as usize)
    }

    /// Largest |cosine| between two distinct prototypes.
    pub fn max_pairwise_overlap(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.prototypes.iter().enumerate() {
            for b in &self.prototypes[..i] {
                worst = worst.max(a.dot(b).abs());
            }
        }
        worst
    }

    /// Label weights of a patch after the room-context split.
    pub fn patch_weights(&self, counts: &[u32], side: u32) -> Vec<f64> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let mut w = vec![0.0; counts.len()];
        if total == 0 {
            return w;
        }
        let rho = room_context_weight(side, self.config.image_size);
        let bg = self.vocab.background() as usize;
        for (id, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let frac = c as f64 / total as f64;
            if self.vocab.group(id as u16) == LabelGroup::Room {
                w[id] += rho * frac;
                w[bg] += (1.0 - rho) * frac;
            } else {
                w[id] += frac;
            }
        }
        w
    }

    fn embed_one(&self, content: &PatchContent<'_>) -> Result<FeatureVector> {
        let labels = match content.source {
            PatchSource::Labels(img) => img,
            PatchSource::Rgb(_) => {
                return Err(Error::Config(
                    "synthetic provider requires label images".into(),
                ))
            }
        };
        let rect = &content.rect;
        if rect.x0 + rect.side > labels.width() || rect.y0 + rect.side > labels.height() {
            return Err(Error::Input(format!("patch {rect:?} outside the source image")));
        }
        let counts = labels.histogram(rect, self.vocab.len());
        let weights = self.patch_weights(&counts, rect.side);
        let d = self.config.dim;
        let mut mix = vec![0.0f64; d];
        for (id, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (m, &p) in mix.iter_mut().zip(self.prototypes[id].as_slice()) {
                *m += w * p as f64;
            }
        }
        let mixed = FeatureVector::normalize(&mix)?;
        if self.config.noise_sigma == 0.0 {
            return Ok(mixed);
        }
        // Noise is a function of the patch content so identical inputs embed
        // identically, like a real encoder.
        let mut key = Vec::with_capacity(16 + counts.len() * 4);
        key.extend_from_slice(&rect.side.to_le_bytes());
        for (id, c) in counts.iter().enumerate() {
            if *c > 0 {
                key.extend_from_slice(&(id as u32).to_le_bytes());
                key.extend_from_slice(&c.to_le_bytes());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&[
            b"noise",
            &self.config.seed.to_le_bytes(),
            &rect.x0.to_le_bytes(),
            &rect.y0.to_le_bytes(),
            &key,
        ]));
        let scale = self.config.noise_sigma / (d as f64).sqrt();
        let noisy: Vec<f64> = mixed
            .as_slice()
            .iter()
            .map(|&m| {
                let n: f64 = StandardNormal.sample(&mut rng);
                m as f64 + scale * n
            })
            .collect();
        FeatureVector::normalize(&noisy)
    }
}

/// A seeded unit vector with every prototype component projected out.
fn orthogonal_direction(config: &SyntheticConfig, prototypes: &[FeatureVector]) -> Result<Vec<f64>> {
    if prototypes.len() >= config.dim {
        return Err(Error::Config(format!(
            "text alignment below 1 needs dimension above the vocabulary size {}",
            prototypes.len()
        )));
    }
    let mut v: Vec<f64> = seeded_unit(config.dim, fnv1a(&[b"text-direction", &config.seed.to_le_bytes()]))
        .iter()
        .map(|&x| x as f64)
        .collect();
    // Prototypes are not mutually orthogonal, so orthonormalize them first.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(prototypes.len());
    for p in prototypes {
        let mut u: Vec<f64> = p.iter().map(|&x| x as f64).collect();
        for b in &basis {
            let d: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            u.iter_mut().for_each(|x| *x /= n);
            basis.push(u);
        }
    }
    for _ in 0..2 {
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-6 {
        return Err(Error::Config("no direction orthogonal to the prototypes".into()));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

fn seeded_unit(dim: usize, seed: u64) -> FeatureVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Ok(f) = FeatureVector::normalize(&v) {
            return f;
        }
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn image_size(&self) -> u32 {
        self.config.image_size
    }

    fn embed_patches(&self, batch: &[PatchContent<'_>]) -> Result<Vec<FeatureVector>> {
        if batch.is_empty() {
            return Err(Error::Input("empty patch batch".into()));
        }
        batch.iter().map(|p| self.embed_one(p)).collect()
    }

    fn embed_text(&self, query: &str) -> Result<FeatureVector> {
        let q = query.trim();
        if q.is_empty() {
            return Err(Error::Input("empty query".into()));
        }
        if let Some(id) = self.vocab.id(q) {
            let p = &self.prototypes[id as usize];
            let Some(dir) = &self.text_direction else {
                return Ok(p.clone());
            };
            let a = self.config.text_alignment;
            let b = (1.0 - a * a).sqrt();
            let v: Vec<f64> = p.iter().zip(dir).map(|(&x, &e)| a * x as f64 + b * e).collect();
            return FeatureVector::normalize(&v);
        }
        let key = q.to_lowercase();
        Ok(seeded_unit(
            self.config.dim,
            fnv1a(&[b"text", &self.config.seed.to_le_bytes(), key.as_bytes()]),
        ))
    }

    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            kind: "synthetic".into(),
            dim: self.config.dim,
            image_size: self.config.image_size,
            seed: Some(self.config.seed),
            noise_sigma: Some(self.config.noise_sigma),
            endpoint: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::LabelImage;
    use crate::patching::PatchRect;

    fn vocab() -> LabelVocabulary {
        LabelVocabulary::from_names(&["sink", "sofa", "bed"], &["kitchen"]).unwrap()
    }

    fn quiet() -> SyntheticProvider {
        SyntheticProvider::new(
            SyntheticConfig {
                noise_sigma: 0.0,
                ..Default::default()
            },
            vocab(),
        )
        .unwrap()
    }

    fn patch(img: &LabelImage) -> PatchContent<'_> {
        PatchContent {
            rect: PatchRect { x0: 0, y0: 0, side: img.width() },
            source: PatchSource::Labels(img),
        }
    }

    #[test]
    fn pure_patch_returns_prototype() {
        let p = quiet();
        let sink = p.vocabulary().id("sink").unwrap();
        let img = LabelImage::filled(224, 224, sink);
        let f = p.embed_patches(&[patch(&img)]).unwrap();
        assert_eq!(&f[0], p.prototype("sink").unwrap());
    }

    #[test]
    fn half_half_mixture() {
        let p = quiet();
        let (a, b) = (p.vocabulary().id("sink").unwrap(), p.vocabulary().id("sofa").unwrap());
        let mut img = LabelImage::filled(224, 224, a);
        for v in 0..224 {
            for u in 112..224 {
                img.set(u, v, b);
            }
        }
        let f = &p.embed_patches(&[patch(&img)]).unwrap()[0];
        let pa = p.prototype("sink").unwrap();
        let pb = p.prototype("sofa").unwrap();
        let expected: Vec<f64> = pa
            .iter()
            .zip(pb.iter())
            .map(|(x, y)| 0.5 * *x as f64 + 0.5 * *y as f64)
            .collect();
        let expected = FeatureVector::normalize(&expected).unwrap();
        for (x, y) in f.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
        // with orthogonal prototypes the dot would be 1/sqrt(2); in general
        // it is (1 + c) / sqrt(2 + 2c) for c = <a, b>
        let c = pa.dot(pb);
        let want = (1.0 + c) / (2.0 + 2.0 * c).sqrt();
        assert!((f.dot(pa) - want).abs() < 1e-6);
    }

    #[test]
    fn deterministic_with_and_without_noise() {
        for sigma in [0.0, 0.05] {
            let cfg = SyntheticConfig {
                noise_sigma: sigma,
                ..Default::default()
            };
            let p1 = SyntheticProvider::new(cfg.clone(), vocab()).unwrap();
            let p2 = SyntheticProvider::new(cfg, vocab()).unwrap();
            let img = LabelImage::filled(112, 112, 2);
            let a = p1.embed_patches(&[patch(&img)]).unwrap();
            let b = p2.embed_patches(&[patch(&img)]).unwrap();
            let c = p1.embed_patches(&[patch(&img)]).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
    }

    #[test]
    fn text_matches_prototypes_case_insensitively() {
        let p = quiet();
        assert_eq!(&p.embed_text("sink").unwrap(), p.prototype("sink").unwrap());
        assert_eq!(p.embed_text("SINK").unwrap(), p.embed_text(" sink ").unwrap());
        let oov = p.embed_text("a kid's room").unwrap();
        assert_eq!(oov, p.embed_text("a kid's room").unwrap());
        assert!((oov.dot(&oov) - 1.0).abs() < 1e-6);
        assert!(p.embed_text("   ").is_err());
    }

    #[test]
    fn text_alignment_scales_label_similarities() {
        let cfg = SyntheticConfig {
            noise_sigma: 0.0,
            text_alignment: 0.3,
            ..Default::default()
        };
        let p = SyntheticProvider::new(cfg, vocab()).unwrap();
        let t = p.embed_text("sink").unwrap();
        assert!((t.dot(p.prototype("sink").unwrap()) - 0.3).abs() < 1e-6);
        for other in ["bed", "kitchen", "background"] {
            let raw = p.prototype("sink").unwrap().dot(p.prototype(other).unwrap());
            assert!((t.dot(p.prototype(other).unwrap()) - 0.3 * raw).abs() < 1e-6);
        }
        let bad = SyntheticConfig {
            text_alignment: 0.0,
            ..Default::default()
        };
        assert!(SyntheticProvider::new(bad, vocab()).is_err());
    }

    #[test]
    fn prototypes_are_distinct_and_bounded() {
        let p = SyntheticProvider::new(SyntheticConfig::default(), LabelVocabulary::standard()).unwrap();
        assert!(p.max_pairwise_overlap() < 0.5);
        assert!(p.prototype("nope").is_err());
    }

    #[test]
    fn room_context_weight_by_zoom() {
        assert_eq!(room_context_weight(448, 224), 1.0);
        assert_eq!(room_context_weight(224, 224), 0.5);
        assert_eq!(room_context_weight(112, 224), 0.0);
        assert_eq!(room_context_weight(56, 224), 0.0);
    }

    #[test]
    fn rgb_patches_rejected() {
        let p = quiet();
        let rgb = crate::image::RgbImage::new(2, 2, vec![0; 12]).unwrap();
        let c = PatchContent {
            rect: PatchRect { x0: 0, y0: 0, side: 2 },
            source: PatchSource::Rgb(&rgb),
        };
        assert!(matches!(p.embed_patches(&[c]), Err(Error::Config(_))));
        assert!(p.embed_patches(&[]).is_err());
    }
}
