//! Fixed-dimension clip embeddings with per-backend input adaptation.
//!
//! A clip is resampled to the backend's input rate. Clips shorter than one
//! window are padded into a single window; longer clips are cut into
//! consecutive non-overlapping windows (the ragged tail zero-padded), each
//! window is embedded, and the elementwise mean is returned.

mod cache;
mod mock;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{self, AudioError, Waveform};
use crate::corpus::LabeledClip;
use crate::dsp::{window_clip_samples, DspError, PadPolicy};

pub use cache::EmbeddingCache;
pub use mock::MockEmbedder;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("clip {clip}: {source}")]
    Clip {
        clip: String,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("embedding {0:?} not found")]
    NotFound(String),
    #[error("dimension mismatch: store holds {expected}-d vectors, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("window has {got} samples, backend expects {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("backend produced a non-finite value")]
    NonFinite,
    #[error("cache format: {0}")]
    Format(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl EmbedError {
    pub fn for_clip(self, clip: &str) -> Self {
        EmbedError::Clip {
            clip: clip.to_owned(),
            source: Box::new(self),
        }
    }
}

/// Input contract of an embedding network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub name: String,
    /// Hz.
    pub input_rate: u32,
    pub window_len_s: f64,
    pub embedding_dim: usize,
    pub short_clip_policy: PadPolicy,
}

impl EmbedderSpec {
    pub fn new(name: &str, input_rate: u32, window_len_s: f64, dim: usize, short: PadPolicy) -> Self {
        Self {
            name: name.to_owned(),
            input_rate,
            window_len_s,
            embedding_dim: dim,
            short_clip_policy: short,
        }
    }

    pub fn vggish() -> Self {
        Self::new("vggish", 16_000, 0.96, 128, PadPolicy::ZeroPadTail)
    }

    pub fn yamnet() -> Self {
        Self::new("yamnet", 16_000, 0.96, 1024, PadPolicy::ZeroPadTail)
    }

    pub fn birdnet() -> Self {
        Self::new("birdnet", 48_000, 3.0, 1024, PadPolicy::ZeroPadTail)
    }

    pub fn perch() -> Self {
        Self::new("perch", 32_000, 5.0, 1280, PadPolicy::ZeroPadTail)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "vggish" => Some(Self::vggish()),
            "yamnet" => Some(Self::yamnet()),
            "birdnet" => Some(Self::birdnet()),
            "perch" => Some(Self::perch()),
            _ => None,
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.window_len_s * f64::from(self.input_rate)).round() as usize
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.embedding_dim == 0 || !(self.window_len_s > 0.0) || self.input_rate == 0 {
            return Err(EmbedError::Backend(format!("invalid embedder spec {self:?}")));
        }
        Ok(())
    }
}

/// One clip's embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub spec_name: String,
    pub clip_id: String,
}

/// A network that maps one input window to a vector.
pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbedderSpec;

    /// `window` holds exactly `spec().window_samples()` samples at the input rate.
    fn embed_window(&self, window: &[f32]) -> Result<Vec<f32>, EmbedError>;

    fn embed_batch(&self, windows: &[&[f32]]) -> Result<Vec<Vec<f32>>, EmbedError> {
        windows.iter().map(|w| self.embed_window(w)).collect()
    }
}

/// Fits `wave` to the embedder's windows: resample, then pad or split.
pub fn adapt_input(wave: &Waveform, spec: &EmbedderSpec) -> Result<Vec<Waveform>, EmbedError> {
    let wave = audio_io::resample(wave, spec.input_rate)?;
    let target = spec.window_samples();
    if wave.is_empty() {
        return Err(EmbedError::Backend("empty clip".into()));
    }
    let policy = if wave.len() <= target {
        spec.short_clip_policy
    } else {
        PadPolicy::SplitAndCollect
    };
    Ok(window_clip_samples(&wave, policy, target))
}

/// Embeds a waveform: adapt to windows, embed each, average elementwise.
pub fn embed_waveform(wave: &Waveform, embedder: &dyn Embedder) -> Result<Vec<f32>, EmbedError> {
    let spec = embedder.spec();
    let windows = adapt_input(wave, spec)?;
    let refs: Vec<&[f32]> = windows.iter().map(Waveform::samples).collect();
    let vectors = embedder.embed_batch(&refs)?;
    mean_vectors(&vectors, spec.embedding_dim)
}

pub(crate) fn mean_vectors(vectors: &[Vec<f32>], dim: usize) -> Result<Vec<f32>, EmbedError> {
    let mut acc = vec![0.0f64; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(EmbedError::DimMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        acc.iter_mut().zip(v).for_each(|(a, &x)| *a += f64::from(x));
    }
    let n = vectors.len().max(1) as f64;
    let out: Vec<f32> = acc.iter().map(|a| (a / n) as f32).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    Ok(out)
}

/// Supplies audio for clips.
pub trait AudioSource: Send + Sync {
    fn load(&self, clip: &LabeledClip) -> Result<Waveform, AudioError>;
}

/// WAV files addressed by each clip's `path`, relative to `root`.
#[derive(Debug, Clone)]
pub struct FileAudio {
    pub root: PathBuf,
}

impl AudioSource for FileAudio {
    fn load(&self, clip: &LabeledClip) -> Result<Waveform, AudioError> {
        audio_io::read_wav(self.root.join(&clip.path))
    }
}

/// In-memory audio keyed by [`LabeledClip::cache_key`].
#[derive(Debug, Clone, Default)]
pub struct MemoryAudio {
    waves: HashMap<String, Waveform>,
}

impl MemoryAudio {
    pub fn insert(&mut self, clip: &LabeledClip, wave: Waveform) {
        self.waves.insert(clip.cache_key(), wave);
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }
}

impl AudioSource for MemoryAudio {
    fn load(&self, clip: &LabeledClip) -> Result<Waveform, AudioError> {
        self.waves.get(&clip.cache_key()).cloned().ok_or_else(|| {
            AudioError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no audio for {}", clip.cache_key()),
            ))
        })
    }
}

/// Anything that yields one embedding per clip.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, clip: &LabeledClip) -> Result<EmbeddingVector, EmbedError>;
}

/// Runs an [`Embedder`] on audio from an [`AudioSource`].
#[derive(Clone)]
pub struct AudioBackend {
    pub embedder: Arc<dyn Embedder>,
    pub audio: Arc<dyn AudioSource>,
}

impl AudioBackend {
    pub fn new(embedder: Arc<dyn Embedder>, audio: Arc<dyn AudioSource>) -> Self {
        Self { embedder, audio }
    }
}

impl EmbeddingProvider for AudioBackend {
    fn name(&self) -> &str {
        &self.embedder.spec().name
    }

    fn dim(&self) -> usize {
        self.embedder.spec().embedding_dim
    }

    fn embed(&self, clip: &LabeledClip) -> Result<EmbeddingVector, EmbedError> {
        embed_clip(clip, self.audio.as_ref(), self.embedder.as_ref())
    }
}

/// Loads, adapts and embeds one clip. Failures carry the clip id.
pub fn embed_clip(
    clip: &LabeledClip,
    audio: &dyn AudioSource,
    embedder: &dyn Embedder,
) -> Result<EmbeddingVector, EmbedError> {
    let run = || -> Result<Vec<f32>, EmbedError> {
        let wave = audio.load(clip)?;
        embed_waveform(&wave, embedder)
    };
    let values = run().map_err(|e| e.for_clip(&clip.cache_key()))?;
    Ok(EmbeddingVector {
        values,
        spec_name: embedder.spec().name.clone(),
        clip_id: clip.clip_id.clone(),
    })
}
