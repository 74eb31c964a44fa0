//! Inference speed benchmark over a batch-size × worker-count grid.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, synth, SynthKind, Waveform};
use crate::dsp::{window_clip_samples, PadPolicy};
use crate::embedder::{EmbedError, Embedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub duration_s: f64,
    /// Rate of the synthesized recording before resampling to the backend.
    pub rate: u32,
    pub batch_grid: Vec<usize>,
    pub worker_grid: Vec<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            duration_s: 3600.0,
            rate: 32_000,
            batch_grid: vec![8, 16, 32, 64, 128],
            worker_grid: vec![1, 4, 8, 12, 16],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub batch_size: usize,
    pub workers: usize,
    pub windows: usize,
    pub wall_s: Option<f64>,
    pub rtf: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub backend: String,
    pub audio_duration_s: f64,
    pub cells: Vec<BenchCell>,
}

/// Audio duration over wall time.
pub fn real_time_factor(audio_duration_s: f64, wall_s: f64) -> f64 {
    audio_duration_s / wall_s
}

impl BenchResult {
    /// Fastest successful cell.
    pub fn best(&self) -> Option<&BenchCell> {
        self.cells
            .iter()
            .filter(|c| c.rtf.is_some())
            .max_by(|a, b| a.rtf.partial_cmp(&b.rtf).expect("finite RTF"))
    }

    /// Columns `backend,batch_size,workers,windows,wall_s,rtf,error`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["backend", "batch_size", "workers", "windows", "wall_s", "rtf", "error"])?;
        for c in &self.cells {
            w.write_record([
                self.backend.clone(),
                c.batch_size.to_string(),
                c.workers.to_string(),
                c.windows.to_string(),
                c.wall_s.map(|v| v.to_string()).unwrap_or_default(),
                c.rtf.map(|v| v.to_string()).unwrap_or_default(),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        match self.best() {
            Some(b) => format!(
                "best: backend={} batch_size={} workers={} wall_s={:.3} rtf={:.2}",
                self.backend,
                b.batch_size,
                b.workers,
                b.wall_s.unwrap_or(f64::NAN),
                b.rtf.unwrap_or(f64::NAN)
            ),
            None => format!("best: backend={} no successful cell", self.backend),
        }
    }
}

/// Seeded noise recording of `cfg.duration_s` seconds, cut into backend windows.
pub fn bench_windows(embedder: &dyn Embedder, cfg: &BenchConfig) -> Result<Vec<Waveform>, EmbedError> {
    let spec = embedder.spec();
    let wave = synth(SynthKind::Noise { seed: cfg.seed }, cfg.duration_s, cfg.rate)?;
    let wave = audio_io::resample(&wave, spec.input_rate)?;
    Ok(window_clip_samples(&wave, PadPolicy::SplitAndCollect, spec.window_samples()))
}

/// Times embedding of the whole recording for every grid cell. Synthesis,
/// resampling and thread-pool start-up are outside the timed region. A
/// failing cell is recorded and the grid continues.
pub fn bench_inference(embedder: &dyn Embedder, cfg: &BenchConfig) -> Result<BenchResult, EmbedError> {
    let windows = bench_windows(embedder, cfg)?;
    let refs: Vec<&[f32]> = windows.iter().map(Waveform::samples).collect();
    let mut cells = Vec::with_capacity(cfg.batch_grid.len() * cfg.worker_grid.len());
    for &batch_size in &cfg.batch_grid {
        for &workers in &cfg.worker_grid {
            let mut cell = BenchCell {
                batch_size,
                workers,
                windows: refs.len(),
                wall_s: None,
                rtf: None,
                error: None,
            };
            match time_cell(embedder, &refs, batch_size, workers) {
                Ok(wall) if wall > 0.0 => {
                    cell.wall_s = Some(wall);
                    cell.rtf = Some(real_time_factor(cfg.duration_s, wall));
                }
                Ok(wall) => cell.error = Some(format!("non-positive wall time {wall}")),
                Err(e) => cell.error = Some(e),
            }
            cells.push(cell);
        }
    }
    Ok(BenchResult {
        backend: embedder.spec().name.clone(),
        audio_duration_s: cfg.duration_s,
        cells,
    })
}

fn time_cell(embedder: &dyn Embedder, windows: &[&[f32]], batch: usize, workers: usize) -> Result<f64, String> {
    if batch == 0 || workers == 0 {
        return Err("batch size and workers must be positive".into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out: Result<Vec<Vec<Vec<f32>>>, EmbedError> =
        pool.install(|| windows.par_chunks(batch).map(|b| embedder.embed_batch(b)).collect());
    let wall = start.elapsed().as_secs_f64();
    out.map_err(|e| e.to_string())?;
    Ok(wall)
}
