use super::{EmbedError, Embedder, EmbedderSpec};
use crate::dsp::{pcen_in_place, Frontend, MelConfig, PcenConfig};

/// Deterministic stand-in network.
///
/// Features are the per-band mean and standard deviation over time of the
/// PCEN grid (`[means.., stds..]`), tiled or truncated to the spec dimension
/// and L2-normalized. An all-zero feature vector is returned unnormalized.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    spec: EmbedderSpec,
    frontend: Frontend,
    pcen: PcenConfig,
}

impl MockEmbedder {
    pub const N_MELS: usize = 64;

    pub fn new(spec: EmbedderSpec) -> Result<Self, EmbedError> {
        spec.validate()?;
        let mel = MelConfig {
            n_mels: Self::N_MELS,
            ..MelConfig::default()
        }
        .clamped_to(spec.input_rate);
        Ok(Self {
            frontend: Frontend::new(mel, spec.input_rate)?,
            spec,
            pcen: PcenConfig::default(),
        })
    }

    /// Mock with the window shape of a named preset, or a 1 s / 16 kHz /
    /// 128-d spec named `mock`.
    pub fn named(name: &str) -> Result<Self, EmbedError> {
        let spec = EmbedderSpec::preset(name).unwrap_or_else(|| {
            EmbedderSpec::new("mock", 16_000, 1.0, 128, crate::dsp::PadPolicy::ZeroPadTail)
        });
        Self::new(spec)
    }
}

impl Embedder for MockEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_window(&self, window: &[f32]) -> Result<Vec<f32>, EmbedError> {
        let mut grid = self.frontend.mel_energies(window)?;
        pcen_in_place(&mut grid, &self.pcen)?;
        let mut features = grid.band_means();
        features.extend(grid.band_stds());
        let dim = self.spec.embedding_dim;
        let mut out: Vec<f64> = features.iter().copied().cycle().take(dim).collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        let out: Vec<f32> = out.into_iter().map(|v| v as f32).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(out)
    }
}
