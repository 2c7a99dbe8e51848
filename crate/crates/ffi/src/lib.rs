//! C ABI over the speechsem transceiver.
//!
//! Every function returns an [`SsStatus`]; results travel through out
//! pointers. A failed call leaves its out pointers untouched, except the
//! required length on `BufferTooSmall`, and records a message readable with
//! [`ss_last_error`] on the same thread. Models are opaque handles owned by
//! the caller and released with [`ss_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use speechsem::autodiff::{read_checkpoint, write_checkpoint, AutodiffError};
use speechsem::channel::{ChannelKind, ChannelRealization};
use speechsem::frontend::{spectrum, AudioClip, FRAME_DIM, SAMPLE_RATE};
use speechsem::metrics;
use speechsem::model::{Model, ModelConfig, ModelError};
use speechsem::pipeline::{greedy_spectra, transmit_aligned, NoTrace, PipelineError};
use speechsem::prune::prune_transcript;

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An argument is out of range or malformed.
    InvalidArgument = 2,
    /// The filesystem refused a read or write.
    Io = 3,
    /// A checkpoint or config could not be understood.
    Format = 4,
    /// Non-finite or degenerate numerics.
    Numeric = 5,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Channel between the transmitter and the receiver.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsChannel {
    Awgn = 0,
    Rayleigh = 1,
    /// AWGN draw with σ² forced to 0.
    Noiseless = 2,
}

/// Opaque trained model.
pub struct SsModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: SsStatus, message: impl Into<String>) -> SsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn guard(f: impl FnOnce() -> SsStatus) -> SsStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(SsStatus::Internal, "panic inside speechsem"))
}

fn autodiff_status(e: &AutodiffError) -> SsStatus {
    match e {
        AutodiffError::Io(_) => SsStatus::Io,
        AutodiffError::Checkpoint(_) => SsStatus::Format,
        AutodiffError::NonFinite(_) | AutodiffError::Degenerate(_) => SsStatus::Numeric,
        _ => SsStatus::InvalidArgument,
    }
}

fn model_status(e: &ModelError) -> SsStatus {
    match e {
        ModelError::Autodiff(a) => autodiff_status(a),
        ModelError::Config(_) | ModelError::VocabMismatch { .. } => SsStatus::Format,
        _ => SsStatus::InvalidArgument,
    }
}

fn pipeline_status(e: &PipelineError) -> SsStatus {
    if e.is_numeric() {
        return SsStatus::Numeric;
    }
    match e {
        PipelineError::Model(m) => model_status(m),
        PipelineError::Autodiff(a) => autodiff_status(a),
        PipelineError::Io { .. } => SsStatus::Io,
        _ => SsStatus::InvalidArgument,
    }
}

/// # Safety
/// `p` is null or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize) -> Result<&'a [T], SsStatus> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(fail(SsStatus::NullPointer, "null input buffer"))
    } else {
        Ok(slice::from_raw_parts(p, len))
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn utf8_path<'a>(p: *const c_char) -> Result<&'a Path, SsStatus> {
    if p.is_null() {
        return Err(fail(SsStatus::NullPointer, "null path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(SsStatus::InvalidArgument, "path is not UTF-8"))
}

/// Copies `values` into `out[..cap]` and stores the length in `out_len`.
///
/// # Safety
/// `out` is null or valid for `cap` writes; `out_len` is valid.
unsafe fn emit<T: Copy>(values: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> SsStatus {
    *out_len = values.len();
    if values.len() > cap {
        return fail(
            SsStatus::BufferTooSmall,
            format!("need {} elements, buffer holds {cap}", values.len()),
        );
    }
    if !values.is_empty() {
        if out.is_null() {
            return fail(SsStatus::NullPointer, "null output buffer");
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    SsStatus::Ok
}

fn tokens_u32(tokens: &[usize]) -> Vec<u32> {
    tokens.iter().map(|&t| t as u32).collect()
}

fn widen(tokens: &[u32]) -> Vec<usize> {
    tokens.iter().map(|&t| t as usize).collect()
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap` bytes, and returns its full length without the NUL.
///
/// # Safety
/// `buf` is null or valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn ss_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Fresh model with the default configuration and seeded weights.
///
/// # Safety
/// `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ss_model_new(seed: u64, out: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return fail(SsStatus::NullPointer, "null model out pointer");
        }
        match Model::init(ModelConfig::default(), seed) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(SsModel { model }));
                SsStatus::Ok
            }
            Err(e) => fail(model_status(&e), e.to_string()),
        }
    })
}

/// Loads a checkpoint written by the CLI or [`ss_model_save`].
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ss_model_load(path: *const c_char, out: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return fail(SsStatus::NullPointer, "null model out pointer");
        }
        let p = match utf8_path(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ckpt = match read_checkpoint(p) {
            Ok(c) => c,
            Err(e) => return fail(autodiff_status(&e), format!("{}: {e}", p.display())),
        };
        match Model::from_checkpoint(ckpt) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(SsModel { model }));
                SsStatus::Ok
            }
            Err(e) => fail(model_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `model` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ss_model_save(model: *const SsModel, path: *const c_char) -> SsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(SsStatus::NullPointer, "null model");
        };
        let p = match utf8_path(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match write_checkpoint(p, &m.model.to_checkpoint()) {
            Ok(()) => SsStatus::Ok,
            Err(e) => fail(autodiff_status(&e), format!("{}: {e}", p.display())),
        }
    })
}

/// Releases a handle; null is a no-op.
///
/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_model_free(model: *mut SsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable scalar count.
///
/// # Safety
/// `model` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ss_model_param_count(model: *const SsModel, out: *mut usize) -> SsStatus {
    let (Some(m), false) = (model.as_ref(), out.is_null()) else {
        return fail(SsStatus::NullPointer, "null model or out pointer");
    };
    *out = m.model.count_params();
    SsStatus::Ok
}

/// Vocabulary size including the specials.
///
/// # Safety
/// `model` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ss_model_vocab_size(model: *const SsModel, out: *mut usize) -> SsStatus {
    let (Some(m), false) = (model.as_ref(), out.is_null()) else {
        return fail(SsStatus::NullPointer, "null model or out pointer");
    };
    *out = m.model.config.vocab_size;
    SsStatus::Ok
}

/// Filterbank spectrum (`n_frames × 120`, channel fastest) of 16 kHz mono PCM.
///
/// # Safety
/// `samples` is valid for `n` reads; `out` for `cap` writes; `out_len` for one.
#[no_mangle]
pub unsafe extern "C" fn ss_spectrum(
    samples: *const i16,
    n: usize,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> SsStatus {
    guard(|| {
        if out_len.is_null() {
            return fail(SsStatus::NullPointer, "null length out pointer");
        }
        let pcm = match input(samples, n) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match AudioClip::new(pcm.to_vec(), SAMPLE_RATE) {
            Ok(clip) => emit(&spectrum(&clip), out, cap, out_len),
            Err(e) => fail(SsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Word error rate of `hyp` against a non-empty `reference`.
///
/// # Safety
/// Both buffers are valid for their lengths; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn ss_wer(
    reference: *const u32,
    reference_len: usize,
    hyp: *const u32,
    hyp_len: usize,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return fail(SsStatus::NullPointer, "null out pointer");
        }
        let (r, h) = match (input(reference, reference_len), input(hyp, hyp_len)) {
            (Ok(r), Ok(h)) => (r, h),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match metrics::wer(r, h) {
            Ok(b) => {
                *out = b.wer();
                SsStatus::Ok
            }
            Err(e) => fail(SsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Lexical similarity in `[0, 1]` of two token sequences.
///
/// # Safety
/// Both buffers are valid for their lengths; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn ss_similarity(a: *const u32, a_len: usize, b: *const u32, b_len: usize, out: *mut f64) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return fail(SsStatus::NullPointer, "null out pointer");
        }
        match (input(a, a_len), input(b, b_len)) {
            (Ok(a), Ok(b)) => {
                *out = metrics::similarity(&widen(a), &widen(b));
                SsStatus::Ok
            }
            (Err(s), _) | (_, Err(s)) => s,
        }
    })
}

/// Cuts at the first end-of-sentence token and drops the specials.
///
/// # Safety
/// `tokens` is valid for `n` reads; `out` for `cap` writes; `out_len` for one.
#[no_mangle]
pub unsafe extern "C" fn ss_prune(
    tokens: *const u32,
    n: usize,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> SsStatus {
    guard(|| {
        if out_len.is_null() {
            return fail(SsStatus::NullPointer, "null length out pointer");
        }
        match input(tokens, n) {
            Ok(t) => emit(&tokens_u32(&prune_transcript(&widen(t))), out, cap, out_len),
            Err(s) => s,
        }
    })
}

/// Sends one spectrum through the whole chain and returns the receiver's
/// pruned transcript. `symbols`, when non-null, receives the count of
/// complex channel symbols spent. `channel` is an [`SsChannel`] value.
///
/// # Safety
/// `model` is a live handle; `feats` is valid for `feats_len` reads; `out` for
/// `cap` writes; `out_len` for one; `symbols` is null or valid for one.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ss_transcribe(
    model: *const SsModel,
    feats: *const f64,
    feats_len: usize,
    channel: u32,
    snr_db: f64,
    seed: u64,
    max_len: usize,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
    symbols: *mut usize,
) -> SsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(SsStatus::NullPointer, "null model");
        };
        if out_len.is_null() {
            return fail(SsStatus::NullPointer, "null length out pointer");
        }
        let frames = match input(feats, feats_len) {
            Ok(f) => f,
            Err(s) => return s,
        };
        if frames.is_empty() || frames.len() % FRAME_DIM != 0 {
            return fail(
                SsStatus::InvalidArgument,
                format!("spectrum length {} is not a positive multiple of {FRAME_DIM}", frames.len()),
            );
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return fail(SsStatus::Numeric, "spectrum holds non-finite values");
        }
        let (kind, noiseless) = match channel {
            c if c == SsChannel::Awgn as u32 => (ChannelKind::Awgn, false),
            c if c == SsChannel::Rayleigh as u32 => (ChannelKind::Rayleigh, false),
            c if c == SsChannel::Noiseless as u32 => (ChannelKind::Awgn, true),
            c => return fail(SsStatus::InvalidArgument, format!("unknown channel {c}")),
        };
        let run = || -> Result<(Vec<usize>, usize), PipelineError> {
            let mut real = ChannelRealization::new(kind, snr_db, seed)?;
            if noiseless {
                real.sigma2 = 0.0;
            }
            let aligned = greedy_spectra(&m.model, &[frames], max_len)?.remove(0);
            let rx = transmit_aligned(&m.model, &aligned, &real, true, &mut NoTrace)?;
            Ok((rx.hyp, rx.symbols))
        };
        match run() {
            Ok((hyp, n_sym)) => {
                let status = emit(&tokens_u32(&hyp), out, cap, out_len);
                if status == SsStatus::Ok && !symbols.is_null() {
                    *symbols = n_sym;
                }
                status
            }
            Err(e) => fail(pipeline_status(&e), e.to_string()),
        }
    })
}
