//! C ABI over `pamkit`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`PamStatus`] code; on failure the message is kept per thread
//! and can be read with [`pam_last_error_message`]. Panics are caught and
//! reported as [`PamStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pamkit::audio_io::{read_wav, resample, write_wav, Waveform};
use pamkit::dsp::{pcen, MelSpectrogram, PcenConfig, SmootherInit};
use pamkit::embedder::EmbeddingCache;
use pamkit::probe::{auc_rank, error_reduction, ProbeModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
}

struct Failure(PamStatus, String);

impl Failure {
    fn new(status: PamStatus, message: impl std::fmt::Display) -> Self {
        Failure(status, message.to_string())
    }
}

type FfiResult = Result<(), Failure>;

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> FfiResult) -> PamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PamStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {message}"));
            PamStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(PamStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(PamStatus::InvalidArgument, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Copies `src` into `dst[..cap]` and stores the full length in `len_out`.
///
/// # Safety
/// `dst` must be valid for `cap` writes when `cap > 0`.
unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, cap: usize, len_out: *mut usize) -> FfiResult {
    if !len_out.is_null() {
        *len_out = src.len();
    }
    if cap < src.len() {
        return Err(Failure::new(
            PamStatus::BufferTooSmall,
            format!("buffer holds {cap}, need {}", src.len()),
        ));
    }
    if !src.is_empty() {
        non_null(dst, "buffer")?;
        std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

fn boxed<T>(value: T, out: *mut *mut T) -> FfiResult {
    non_null(out, "out")?;
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, without NUL.
#[no_mangle]
pub extern "C" fn pam_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message (NUL-terminated, truncated to fit) into
/// `buf`. Returns the number of bytes written excluding the NUL.
///
/// # Safety
/// `buf` must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn pam_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    if buf.is_null() || cap == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let n = msg.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Mono audio at a fixed sample rate.
pub struct PamWaveform(Waveform);

/// Builds a waveform from `len` samples in `[-1, 1]`.
///
/// # Safety
/// `samples` must point to `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pam_waveform_new(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut PamWaveform,
) -> PamStatus {
    guard(|| {
        let s = slice(samples, len, "samples")?;
        let w = Waveform::new(s.to_vec(), sample_rate).map_err(|e| Failure::new(PamStatus::InvalidArgument, e))?;
        boxed(PamWaveform(w), out)
    })
}

/// Reads a 16-bit PCM WAV file (multi-channel input is averaged to mono).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pam_wav_read(path: *const c_char, out: *mut *mut PamWaveform) -> PamStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let w = read_wav(&p).map_err(|e| Failure::new(PamStatus::Io, e))?;
        boxed(PamWaveform(w), out)
    })
}

/// Writes `wave` as 16-bit PCM WAV.
///
/// # Safety
/// `wave` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pam_wav_write(wave: *const PamWaveform, path: *const c_char) -> PamStatus {
    guard(|| {
        non_null(wave, "wave")?;
        let p = path_arg(path, "path")?;
        write_wav(&(*wave).0, &p).map_err(|e| Failure::new(PamStatus::Io, e))
    })
}

/// Resamples to `target_rate` into a new handle.
///
/// # Safety
/// `wave` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pam_waveform_resample(
    wave: *const PamWaveform,
    target_rate: u32,
    out: *mut *mut PamWaveform,
) -> PamStatus {
    guard(|| {
        non_null(wave, "wave")?;
        let w = resample(&(*wave).0, target_rate).map_err(|e| Failure::new(PamStatus::InvalidArgument, e))?;
        boxed(PamWaveform(w), out)
    })
}

/// # Safety
/// `wave` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pam_waveform_len(wave: *const PamWaveform) -> usize {
    wave.as_ref().map_or(0, |w| w.0.len())
}

/// # Safety
/// `wave` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pam_waveform_sample_rate(wave: *const PamWaveform) -> u32 {
    wave.as_ref().map_or(0, |w| w.0.sample_rate())
}

/// Copies the samples into `buf`; `len_out` receives the sample count.
///
/// # Safety
/// `wave` must be a live handle; `buf` valid for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn pam_waveform_samples(
    wave: *const PamWaveform,
    buf: *mut f32,
    cap: usize,
    len_out: *mut usize,
) -> PamStatus {
    guard(|| {
        non_null(wave, "wave")?;
        copy_out((*wave).0.samples(), buf, cap, len_out)
    })
}

/// # Safety
/// `wave` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pam_waveform_free(wave: *mut PamWaveform) {
    if !wave.is_null() {
        drop(Box::from_raw(wave));
    }
}

/// Trained linear probe.
pub struct PamProbe(ProbeModel<f32>);

/// Loads a probe saved as JSON.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pam_probe_load(path: *const c_char, out: *mut *mut PamProbe) -> PamStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let m = ProbeModel::<f32>::load(&p).map_err(|e| Failure::new(PamStatus::Format, e))?;
        boxed(PamProbe(m), out)
    })
}

/// # Safety
/// `probe` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pam_probe_dim(probe: *const PamProbe) -> usize {
    probe.as_ref().map_or(0, |p| p.0.dim)
}

/// # Safety
/// `probe` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pam_probe_num_classes(probe: *const PamProbe) -> usize {
    probe.as_ref().map_or(0, |p| p.0.classes.len())
}

/// Class probabilities of one embedding, in the probe's class order.
///
/// # Safety
/// `probe` must be a live handle; `x` valid for `dim` floats; `scores` for
/// `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pam_probe_predict(
    probe: *const PamProbe,
    x: *const f32,
    dim: usize,
    scores: *mut f64,
    cap: usize,
) -> PamStatus {
    guard(|| {
        non_null(probe, "probe")?;
        let x = slice(x, dim, "x")?;
        let s = (*probe).0.predict_scores(x).map_err(|e| Failure::new(PamStatus::InvalidArgument, e))?;
        copy_out(&s, scores, cap, std::ptr::null_mut())
    })
}

/// # Safety
/// `probe` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pam_probe_free(probe: *mut PamProbe) {
    if !probe.is_null() {
        drop(Box::from_raw(probe));
    }
}

/// Embedding cache keyed by `dataset/clip`.
pub struct PamCache(EmbeddingCache);

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pam_cache_load(path: *const c_char, out: *mut *mut PamCache) -> PamStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let c = EmbeddingCache::load(&p).map_err(|e| Failure::new(PamStatus::Format, e))?;
        boxed(PamCache(c), out)
    })
}

/// # Safety
/// `cache` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pam_cache_len(cache: *const PamCache) -> usize {
    cache.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cache` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pam_cache_dim(cache: *const PamCache) -> usize {
    cache.as_ref().map_or(0, |c| c.0.dim())
}

/// Copies the vector stored under `key` into `buf`.
///
/// # Safety
/// `cache` must be a live handle; `key` a NUL-terminated string; `buf`
/// valid for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn pam_cache_get(
    cache: *const PamCache,
    key: *const c_char,
    buf: *mut f32,
    cap: usize,
) -> PamStatus {
    guard(|| {
        non_null(cache, "cache")?;
        let key = path_arg(key, "key")?;
        let key = key.to_str().expect("UTF-8 checked");
        let v = (*cache).0.get(key).map_err(|e| Failure::new(PamStatus::InvalidArgument, e))?;
        copy_out(v, buf, cap, std::ptr::null_mut())
    })
}

/// # Safety
/// `cache` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pam_cache_free(cache: *mut PamCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Binary ROC AUC with ties counted as one half. `labels[i]` is nonzero
/// for positives.
///
/// # Safety
/// `scores` and `labels` must be valid for `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pam_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> PamStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&b| b != 0).collect();
        *out = auc_rank(s, &l).map_err(|e| Failure::new(PamStatus::Numeric, e))?;
        Ok(())
    })
}

/// Percent reduction of AUC error of the better model relative to its own
/// error.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pam_error_reduction(auc_better: f64, auc_worse: f64, out: *mut f64) -> PamStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = error_reduction(auc_better, auc_worse).map_err(|e| Failure::new(PamStatus::Numeric, e))?;
        Ok(())
    })
}

/// PCEN parameters. `zero_init` seeds the smoother at 0 instead of the
/// first frame.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PamPcenParams {
    pub smoothing: f64,
    pub gain: f64,
    pub bias: f64,
    pub root: f64,
    pub eps: f64,
    pub zero_init: bool,
}

impl From<PcenConfig> for PamPcenParams {
    fn from(c: PcenConfig) -> Self {
        Self {
            smoothing: c.smoothing,
            gain: c.gain,
            bias: c.bias,
            root: c.root,
            eps: c.eps,
            zero_init: c.init == SmootherInit::Zero,
        }
    }
}

#[no_mangle]
pub extern "C" fn pam_pcen_default_params() -> PamPcenParams {
    PcenConfig::default().into()
}

#[no_mangle]
pub extern "C" fn pam_pcen_surfperch_params() -> PamPcenParams {
    PcenConfig::surfperch().into()
}

/// PCEN over a row-major `frames × n_mels` energy grid into `out` (same
/// shape). `out` may alias `energies`.
///
/// # Safety
/// `energies` and `out` must be valid for `frames * n_mels` doubles;
/// `params` must be readable.
#[no_mangle]
pub unsafe extern "C" fn pam_pcen(
    energies: *const f64,
    frames: usize,
    n_mels: usize,
    params: *const PamPcenParams,
    out: *mut f64,
) -> PamStatus {
    guard(|| {
        non_null(params, "params")?;
        let n = frames
            .checked_mul(n_mels)
            .ok_or_else(|| Failure::new(PamStatus::InvalidArgument, "grid size overflows"))?;
        let grid = MelSpectrogram::from_values(frames, n_mels, slice(energies, n, "energies")?.to_vec());
        let p = *params;
        let cfg = PcenConfig {
            smoothing: p.smoothing,
            gain: p.gain,
            bias: p.bias,
            root: p.root,
            eps: p.eps,
            spcen: false,
            init: if p.zero_init { SmootherInit::Zero } else { SmootherInit::FirstFrame },
        };
        let res = pcen(&grid, &cfg).map_err(|e| Failure::new(PamStatus::InvalidArgument, e))?;
        copy_out(&res.values, out, n, std::ptr::null_mut())
    })
}
