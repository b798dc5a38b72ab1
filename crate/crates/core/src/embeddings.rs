//! Visual and text embedding providers.
//!
//! The built-in providers are small deterministic feature extractors; neural
//! models plug in through [`HttpEmbedder`], which speaks a tiny JSON protocol
//! (`{"kind": "visual"|"text", "payload": ...}` -> `{"vector": [...]}`).

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vector: Vec<f32>,
}

impl Embedding {
    /// L2-normalizes `raw`; an all-zero (or empty-norm) input stays zero.
    pub fn normalized(raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let vector = if norm > 0.0 && norm.is_finite() {
            raw.iter().map(|v| (v / norm) as f32).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Embedding { vector }
    }

    pub fn zeros(dimension: usize) -> Self {
        Embedding {
            vector: vec![0.0; dimension],
        }
    }

    pub fn from_stored(vector: Vec<f32>) -> Self {
        Embedding { vector }
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vector
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// Cosine similarity; zero vectors are similar to nothing.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::usage(format!(
            "embedding dimensions differ: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a
        .vector
        .iter()
        .zip(&b.vector)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Same as [`cosine`] but treats a dimension mismatch as "unrelated".
pub fn similarity(a: &Embedding, b: &Embedding) -> f64 {
    cosine(a, b).unwrap_or(0.0)
}

/// Grayscale image region with an optional foreground mask.
#[derive(Debug, Clone, Copy)]
pub struct Region<'a> {
    pub width: usize,
    pub height: usize,
    pub intensity: &'a [u8],
    pub mask: Option<&'a [bool]>,
}

impl Region<'_> {
    fn selected(&self, r: usize, c: usize) -> bool {
        self.mask.is_none_or(|m| m[r * self.width + c])
    }
}

pub trait VisualEmbedder: Send + Sync {
    fn embed_visual(&self, region: &Region<'_>) -> Result<Embedding>;
}

pub trait TextEmbedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding>;
}

const GRID: usize = 8;
const ORIENTATION_BINS: usize = 8;
pub const DEFAULT_VISUAL_DIM: usize = GRID * GRID + ORIENTATION_BINS;
pub const DEFAULT_TEXT_DIM: usize = 128;

/// Mean-centered 8x8 intensity layout plus an 8-bin gradient orientation
/// histogram, each part unit-normalized before the final normalization.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultVisualEmbedder;

impl VisualEmbedder for DefaultVisualEmbedder {
    fn embed_visual(&self, region: &Region<'_>) -> Result<Embedding> {
        let (w, h) = (region.width, region.height);
        if region.intensity.len() != w * h || region.mask.is_some_and(|m| m.len() != w * h) {
            return Err(Error::usage("region buffers do not match its dimensions"));
        }
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..h {
            for c in 0..w {
                if region.selected(r, c) {
                    sum += region.intensity[r * w + c] as f64;
                    count += 1;
                    bounds = Some(match bounds {
                        None => (r, c, r, c),
                        Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                    });
                }
            }
        }
        let Some((r0, c0, r1, c1)) = bounds else {
            return Ok(Embedding::zeros(DEFAULT_VISUAL_DIM));
        };
        let mean = sum / count as f64;
        let (bh, bw) = (r1 - r0 + 1, c1 - c0 + 1);

        let mut cell_sum = [0.0f64; GRID * GRID];
        let mut cell_n = [0usize; GRID * GRID];
        let mut hist = [0.0f64; ORIENTATION_BINS];
        for r in r0..=r1 {
            for c in c0..=c1 {
                if !region.selected(r, c) {
                    continue;
                }
                let i = region.intensity[r * w + c] as f64;
                let cell = ((r - r0) * GRID / bh) * GRID + (c - c0) * GRID / bw;
                cell_sum[cell] += (i - mean) / 255.0;
                cell_n[cell] += 1;
                if c + 1 < w && r + 1 < h && region.selected(r, c + 1) && region.selected(r + 1, c) {
                    let gx = (region.intensity[r * w + c + 1] as f64 - i) / 255.0;
                    let gy = (region.intensity[(r + 1) * w + c] as f64 - i) / 255.0;
                    let mag = gx.hypot(gy);
                    if mag > 0.0 {
                        let t = (gy.atan2(gx) + std::f64::consts::PI) / std::f64::consts::TAU;
                        let bin = ((t * ORIENTATION_BINS as f64) as usize) % ORIENTATION_BINS;
                        hist[bin] += mag;
                    }
                }
            }
        }
        let layout: Vec<f64> = cell_sum
            .iter()
            .zip(cell_n)
            .map(|(&s, n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        let unit = |v: &[f64]| -> Vec<f64> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter().map(|x| x / n).collect()
            } else {
                v.to_vec()
            }
        };
        let mut raw = unit(&layout);
        raw.extend(unit(&hist));
        Ok(Embedding::normalized(raw))
    }
}

/// Bag of hashed character trigrams over the lower-cased, space-padded text.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTextEmbedder;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl TextEmbedder for DefaultTextEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Ok(Embedding::zeros(DEFAULT_TEXT_DIM));
        }
        let padded: Vec<char> = format!(" {} ", trimmed.to_lowercase()).chars().collect();
        let mut bag = vec![0.0; DEFAULT_TEXT_DIM];
        for tri in padded.windows(3) {
            let s: String = tri.iter().collect();
            bag[(fnv1a(s.as_bytes()) % DEFAULT_TEXT_DIM as u64) as usize] += 1.0;
        }
        Ok(Embedding::normalized(bag))
    }
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    kind: &'a str,
    payload: serde_json::Value,
}

#[derive(Deserialize)]
struct ProviderResponse {
    vector: Vec<f64>,
}

/// Adapter for an out-of-process embedding service on a local HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    url: String,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEmbedder { url: url.into() }
    }

    fn call(&self, kind: &str, payload: serde_json::Value) -> Result<Embedding> {
        let request = ProviderRequest { kind, payload };
        let mut response = ureq::post(&self.url)
            .send_json(&request)
            .map_err(|e| Error::Provider(format!("{}: {e}", self.url)))?;
        let body: ProviderResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Provider(format!("bad response from {}: {e}", self.url)))?;
        Ok(Embedding::normalized(body.vector))
    }
}

impl VisualEmbedder for HttpEmbedder {
    fn embed_visual(&self, region: &Region<'_>) -> Result<Embedding> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let mask = region
            .mask
            .map(|m| b64.encode(m.iter().map(|&v| v as u8).collect::<Vec<_>>()));
        self.call(
            "visual",
            serde_json::json!({
                "width": region.width,
                "height": region.height,
                "intensity": b64.encode(region.intensity),
                "mask": mask,
            }),
        )
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.call("text", serde_json::Value::String(text.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::normalized(v.to_vec())
    }

    #[test]
    fn basic_cosines() {
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&e(&[0.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(cosine(&e(&[1.0]), &e(&[1.0, 0.0])).is_err());
    }

    fn textured(w: usize, h: usize) -> Vec<u8> {
        (0..w * h)
            .map(|i| {
                let (r, c) = ((i / w) as f64, (i % w) as f64);
                (128.0 + 90.0 * (0.7 * c + 0.3 * r).sin() + 20.0 * (r / 3.0).cos()) as u8
            })
            .collect()
    }

    #[test]
    fn inverted_region_is_dissimilar() {
        let img = textured(24, 20);
        let inv: Vec<u8> = img.iter().map(|v| 255 - v).collect();
        let emb = DefaultVisualEmbedder;
        let a = emb.embed_visual(&Region { width: 24, height: 20, intensity: &img, mask: None }).unwrap();
        let b = emb.embed_visual(&Region { width: 24, height: 20, intensity: &inv, mask: None }).unwrap();
        assert_eq!(a.dimension(), DEFAULT_VISUAL_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert!(cosine(&a, &b).unwrap() < 0.7);
    }

    #[test]
    fn empty_mask_gives_zero_embedding() {
        let img = textured(10, 10);
        let mask = vec![false; 100];
        let z = DefaultVisualEmbedder
            .embed_visual(&Region { width: 10, height: 10, intensity: &img, mask: Some(&mask) })
            .unwrap();
        assert!(z.is_zero());
        let other = DefaultVisualEmbedder
            .embed_visual(&Region { width: 10, height: 10, intensity: &img, mask: None })
            .unwrap();
        assert_eq!(cosine(&z, &other).unwrap(), 0.0);
    }

    #[test]
    fn text_embedding_examples() {
        let t = DefaultTextEmbedder;
        let a = t.embed_text("a blue shovel appeared").unwrap();
        let b = t.embed_text("a blue shovel appears").unwrap();
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        // Frozen from the default provider: 0.8571428571428572.
        let s = cosine(&a, &b).unwrap();
        assert!(s > 0.8, "{s}");
        assert!(t.embed_text("").unwrap().is_zero());
        assert_eq!(cosine(&t.embed_text("").unwrap(), &a).unwrap(), 0.0);
    }

    /// Dot product with error-free transformations (TwoSum / FMA TwoProduct).
    fn compensated_cosine(a: &[f32], b: &[f32]) -> f64 {
        fn dot(x: &[f32], y: &[f32]) -> f64 {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for (&p, &q) in x.iter().zip(y) {
                let prod = p as f64 * q as f64;
                let perr = (p as f64).mul_add(q as f64, -prod);
                let t = s + prod;
                let z = t - s;
                c += (s - (t - z)) + (prod - z) + perr;
                s = t;
            }
            s + c
        }
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    proptest! {
        #[test]
        fn cosine_matches_compensated_oracle(
            a in proptest::collection::vec(-10.0f64..10.0, 16),
            b in proptest::collection::vec(-10.0f64..10.0, 16),
        ) {
            let (ea, eb) = (e(&a), e(&b));
            prop_assume!(!ea.is_zero() && !eb.is_zero());
            let got = cosine(&ea, &eb).unwrap();
            let want = compensated_cosine(ea.as_slice(), eb.as_slice());
            prop_assert!((got - want).abs() < 1e-9);
            prop_assert_eq!(got, cosine(&eb, &ea).unwrap());
            prop_assert!(got.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn default_providers_are_pure(text in "[a-z ]{0,40}", pixels in proptest::collection::vec(any::<u8>(), 64)) {
            let t = DefaultTextEmbedder;
            prop_assert_eq!(t.embed_text(&text).unwrap(), t.embed_text(&text).unwrap());
            let r = Region { width: 8, height: 8, intensity: &pixels, mask: None };
            let v = DefaultVisualEmbedder;
            let x = v.embed_visual(&r).unwrap();
            prop_assert_eq!(&x, &v.embed_visual(&r).unwrap());
            prop_assert!(x.is_zero() || (x.norm() - 1.0).abs() < 1e-6);
        }
    }
}
