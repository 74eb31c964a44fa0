use serde::{Deserialize, Serialize};

use super::{DspError, MelSpectrogram};

/// How the per-band smoother is seeded at the first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmootherInit {
    /// `M(0) = E(0)`.
    #[default]
    FirstFrame,
    /// `M(0) = 0`, then `M(t) = (1-s) M(t-1) + s E(t)` from `t = 1`.
    Zero,
}

/// Per-channel energy normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcenConfig {
    pub smoothing: f64,
    pub gain: f64,
    pub bias: f64,
    pub root: f64,
    pub eps: f64,
    /// Spectral PCEN. Not implemented; must stay `false`.
    pub spcen: bool,
    pub init: SmootherInit,
}

impl Default for PcenConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.1,
            gain: 0.5,
            bias: 2.0,
            root: 2.0,
            eps: 1e-6,
            spcen: false,
            init: SmootherInit::FirstFrame,
        }
    }
}

impl PcenConfig {
    /// Parameters of the later SurfPerch frontend.
    pub fn surfperch() -> Self {
        Self {
            smoothing: 0.145,
            gain: 0.8,
            bias: 10.0,
            root: 4.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let ok = self.smoothing > 0.0
            && self.smoothing <= 1.0
            && self.gain >= 0.0
            && self.bias >= 0.0
            && self.root > 0.0
            && self.eps > 0.0;
        if !ok {
            return Err(DspError::Config(format!("invalid PCEN parameters {self:?}")));
        }
        if self.spcen {
            return Err(DspError::Config("spectral PCEN is not implemented".into()));
        }
        Ok(())
    }

    /// `(E / (eps + M)^gain + bias)^root - bias^root` for one cell.
    #[inline]
    pub fn compress(&self, energy: f64, smooth: f64) -> f64 {
        let denom = pow_fast(self.eps + smooth, self.gain);
        pow_fast(energy / denom + self.bias, self.root) - pow_fast(self.bias, self.root)
    }
}

/// `x^p` with exact shortcuts for the exponents the presets use.
#[inline]
fn pow_fast(x: f64, p: f64) -> f64 {
    if p == 0.5 {
        x.sqrt()
    } else if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else if p == 4.0 {
        let s = x * x;
        s * s
    } else {
        x.powf(p)
    }
}

/// PCEN over a mel energy grid. Bands are independent; time runs forward.
pub fn pcen(mel: &MelSpectrogram, config: &PcenConfig) -> Result<MelSpectrogram, DspError> {
    let mut out = mel.clone();
    pcen_in_place(&mut out, config)?;
    Ok(out)
}

pub fn pcen_in_place(mel: &mut MelSpectrogram, config: &PcenConfig) -> Result<(), DspError> {
    config.validate()?;
    let n = mel.n_mels;
    if mel.frames == 0 || n == 0 {
        return Ok(());
    }
    let s = config.smoothing;
    let mut smooth: Vec<f64> = match config.init {
        SmootherInit::FirstFrame => mel.values[..n].to_vec(),
        SmootherInit::Zero => vec![0.0; n],
    };
    for (t, row) in mel.values.chunks_exact_mut(n).enumerate() {
        for (e, m) in row.iter_mut().zip(smooth.iter_mut()) {
            if t > 0 {
                *m = (1.0 - s) * *m + s * *e;
            }
            *e = config.compress(*e, *m);
        }
    }
    Ok(())
}
