//! Seeded synthetic multi-domain corpus for desk-scale experiments.
//!
//! Every domain has its own tonal classes, a tone class shared by all
//! domains, geophony (filtered noise bursts, primary label only) and ambient
//! clips. Domains differ in background noise colour, level and hum. Class
//! frequencies come from one log-spaced grid interleaved across domains, so
//! all domains cover the same band.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, AudioError, Waveform};
use crate::corpus::{save_manifest, CorpusError, Dataset, DatasetRegistry, LabeledClip, PrimaryLabel};
use crate::embedder::MemoryAudio;
use crate::rng::{self, Rng, SeedDeriver};

pub const SHARED_CLASS: &str = "shared_tone";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub domains: Vec<String>,
    pub classes_per_domain: usize,
    pub clips_per_class: usize,
    pub geophony_clips: usize,
    pub ambient_clips: usize,
    pub clip_len_s: f64,
    pub sample_rate: u32,
    /// Multiplier on every domain's background noise level.
    pub noise_scale: f64,
    /// When set, tone classes come from a global pool of
    /// `stride × domains` classes and domain `d` takes `classes_per_domain`
    /// consecutive ones starting at `d × stride` (wrapping), so neighbouring
    /// domains share classes. Otherwise every domain's classes are its own.
    pub overlap_stride: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            domains: ["reef_a", "reef_b", "reef_c", "reef_d"].map(String::from).to_vec(),
            classes_per_domain: 4,
            clips_per_class: 48,
            geophony_clips: 48,
            ambient_clips: 48,
            clip_len_s: 2.0,
            sample_rate: 16_000,
            noise_scale: 1.0,
            overlap_stride: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct DomainStyle {
    /// One-pole low-pass coefficient of the background noise.
    colour: f64,
    noise_rms: f64,
    hum_hz: f64,
}

#[derive(Debug, Clone, Copy)]
enum Sound {
    Tone { freq: f64 },
    Burst,
    Background,
}

impl SyntheticSpec {
    fn style(&self, d: usize) -> DomainStyle {
        let n = self.domains.len().max(1) as f64;
        let t = d as f64 / n;
        DomainStyle {
            colour: 0.2 + 0.7 * t,
            noise_rms: (0.02 + 0.03 * t) * self.noise_scale,
            hum_hz: 50.0 + 35.0 * d as f64,
        }
    }

    /// Position of class `c` of domain `d` on the frequency grid, and the
    /// grid size (excluding the shared class).
    fn grid_index(&self, d: usize, c: usize) -> (usize, usize) {
        let n = self.domains.len();
        match self.overlap_stride {
            Some(stride) => {
                let pool = stride * n;
                ((d * stride + c) % pool.max(1), pool)
            }
            None => (c * n + d, n * self.classes_per_domain),
        }
    }

    fn class_freq(&self, d: usize, c: usize) -> f64 {
        let (idx, size) = self.grid_index(d, c);
        500.0 * (6000.0f64 / 500.0).powf(idx as f64 / size.max(1) as f64)
    }

    /// Frequency of the class shared by all domains (top of the grid).
    fn shared_freq(&self) -> f64 {
        6000.0
    }

    pub fn class_name(&self, d: usize, c: usize) -> String {
        match self.overlap_stride {
            Some(_) => format!("tone{:02}", self.grid_index(d, c).0),
            None => format!("{}_tone{c}", self.domains[d]),
        }
    }

    fn render(&self, d: usize, sound: Sound, r: &mut Rng) -> Result<Waveform, AudioError> {
        let rate = f64::from(self.sample_rate);
        let n = (self.clip_len_s * rate).round() as usize;
        let style = self.style(d);
        let mut out = vec![0.0f64; n];
        let mut lp = 0.0;
        let hum_phase = r.random::<f64>() * TAU;
        for (i, s) in out.iter_mut().enumerate() {
            let white: f64 = r.random::<f64>() * 2.0 - 1.0;
            lp = style.colour * lp + (1.0 - style.colour) * white;
            let t = i as f64 / rate;
            *s = style.noise_rms * 3.0 * lp + 0.01 * (TAU * style.hum_hz * t + hum_phase).sin();
        }
        match sound {
            Sound::Background => {}
            Sound::Tone { freq } => {
                let f = freq * (1.0 + 0.02 * (r.random::<f64>() * 2.0 - 1.0));
                let amp = 0.15 + 0.15 * r.random::<f64>();
                let am = 2.0 + 4.0 * r.random::<f64>();
                let (p0, p1) = (r.random::<f64>() * TAU, r.random::<f64>() * TAU);
                for (i, s) in out.iter_mut().enumerate() {
                    let t = i as f64 / rate;
                    let env = 0.75 + 0.25 * (TAU * am * t).sin();
                    *s += amp * env * ((TAU * f * t + p0).sin() + 0.3 * (TAU * 2.0 * f * t + p1).sin());
                }
            }
            Sound::Burst => {
                let centre = r.random_range(0.2..0.8) * n as f64;
                let width = 0.15 * n as f64;
                let amp = 0.2 + 0.2 * r.random::<f64>();
                let mut b = 0.0;
                for (i, s) in out.iter_mut().enumerate() {
                    let white: f64 = r.random::<f64>() * 2.0 - 1.0;
                    b = 0.97 * b + 0.03 * white;
                    let g = (-((i as f64 - centre) / width).powi(2)).exp();
                    *s += amp * 8.0 * g * b;
                }
            }
        }
        Waveform::from_clamped(out.into_iter().map(|v| v as f32).collect(), self.sample_rate)
    }

    /// Builds the registry and in-memory audio.
    pub fn generate(&self) -> Result<(DatasetRegistry, MemoryAudio), CorpusError> {
        if self.domains.is_empty() || self.clip_len_s <= 0.0 || self.sample_rate == 0 {
            return Err(CorpusError::InvalidSpec(format!("bad synthetic spec {self:?}")));
        }
        if let Some(stride) = self.overlap_stride {
            if stride == 0 || self.classes_per_domain > stride * self.domains.len() {
                return Err(CorpusError::InvalidSpec(format!(
                    "overlap stride {stride} cannot hold {} classes per domain",
                    self.classes_per_domain
                )));
            }
        }
        let mut audio = MemoryAudio::default();
        let mut datasets = Vec::with_capacity(self.domains.len());
        for (d, ds) in self.domains.iter().enumerate() {
            let mut plan: Vec<(String, PrimaryLabel, Option<String>, Sound, usize)> = Vec::new();
            for c in 0..self.classes_per_domain {
                let sound = Sound::Tone { freq: self.class_freq(d, c) };
                plan.push((format!("tone{c}"), PrimaryLabel::Biophony, Some(self.class_name(d, c)), sound, self.clips_per_class));
            }
            let shared = Sound::Tone { freq: self.shared_freq() };
            plan.push(("shared".into(), PrimaryLabel::Biophony, Some(SHARED_CLASS.into()), shared, self.clips_per_class));
            plan.push(("geo".into(), PrimaryLabel::Geophony, None, Sound::Burst, self.geophony_clips));
            plan.push(("amb".into(), PrimaryLabel::Ambient, None, Sound::Background, self.ambient_clips));

            let mut clips = Vec::new();
            for (tag, primary, secondary, sound, count) in plan {
                for i in 0..count {
                    let id = format!("{tag}_{i:03}");
                    let mut r = rng::rng(SeedDeriver::new(self.seed).str(ds).str(&id).finish());
                    let wave = self.render(d, sound, &mut r).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
                    let mut clip = LabeledClip::new(ds.as_str(), id.as_str(), primary, secondary.as_deref());
                    clip.path = format!("{ds}/{id}.wav");
                    audio.insert(&clip, wave);
                    clips.push(clip);
                }
            }
            datasets.push(Dataset { id: ds.clone(), clips });
        }
        Ok((DatasetRegistry::new(datasets)?, audio))
    }

    /// Writes every clip as WAV under `dir` plus `dir/manifest.json`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<DatasetRegistry, CorpusError> {
        let dir = dir.as_ref();
        let (registry, audio) = self.generate()?;
        use crate::embedder::AudioSource;
        for clip in registry.clips() {
            let path = dir.join(&clip.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let wave = audio.load(clip).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
            audio_io::write_wav(&wave, &path).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
        }
        save_manifest(&registry, dir.join("manifest.json"))?;
        Ok(registry)
    }
}
