use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;

/// How a clip is fitted to a fixed model window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    /// One window: clip at the head, zeros after (longer clips truncated).
    ZeroPadTail,
    /// `ceil(len / target)` consecutive windows, the last zero-padded.
    SplitAndCollect,
    /// One window: clip tiled until the target length (longer clips truncated).
    RepeatPad,
}

/// Cuts or pads `wave` into windows of `round(target_len_s * rate)` samples.
///
/// Returns an empty list for an empty clip.
pub fn window_clip(wave: &Waveform, policy: PadPolicy, target_len_s: f64) -> Vec<Waveform> {
    let rate = wave.sample_rate();
    let target = (target_len_s * f64::from(rate)).round() as usize;
    window_clip_samples(wave, policy, target)
}

pub(crate) fn window_clip_samples(wave: &Waveform, policy: PadPolicy, target: usize) -> Vec<Waveform> {
    let x = wave.samples();
    let rate = wave.sample_rate();
    if x.is_empty() || target == 0 {
        return Vec::new();
    }
    let make = |v: Vec<f32>| Waveform::new(v, rate).expect("window of valid samples");
    match policy {
        PadPolicy::ZeroPadTail => {
            let mut v = vec![0.0; target];
            let n = x.len().min(target);
            v[..n].copy_from_slice(&x[..n]);
            vec![make(v)]
        }
        PadPolicy::RepeatPad => {
            vec![make((0..target).map(|i| x[i % x.len()]).collect())]
        }
        PadPolicy::SplitAndCollect => x
            .chunks(target)
            .map(|c| {
                let mut v = c.to_vec();
                v.resize(target, 0.0);
                make(v)
            })
            .collect(),
    }
}
