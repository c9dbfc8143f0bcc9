//! C ABI over the hyperfit library: tokenizers, models and hyperfit sets as
//! opaque handles; generation and metrics as plain functions.
//!
//! Every fallible function returns an [`HflStatus`]. On failure a message
//! is available from [`hfl_last_error`] until the next failing call on the
//! same thread. Handles are created by `*_load`/`*_new` functions and must
//! be released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use hyperfit::corpus::{read_set, read_tokenizer, HyperfitSet, OrderId, TokenSequence, Tokenizer};
use hyperfit::decoder::{generate, CitationBlockConfig, GenerationConfig, NGramIndex, Strategy};
use hyperfit::metrics::{bleu, ttr, OverlapIndex};
use hyperfit::model::{Checkpoint, ModelConfig, Parameters};
use hyperfit::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Decode = 5,
    ContextLength = 6,
    Capacity = 7,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> HflStatus {
    match e {
        Error::Io { .. } | Error::Missing(_) => HflStatus::Io,
        Error::Format { .. } | Error::Json(_) | Error::Csv(_) => HflStatus::Format,
        Error::Decode { .. } => HflStatus::Decode,
        Error::ContextLength { .. } => HflStatus::ContextLength,
        Error::Capacity(_) => HflStatus::Capacity,
        _ => HflStatus::InvalidArgument,
    }
}

/// Runs `f`, recording the message of any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (HflStatus, String)>) -> HflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HflStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            HflStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (HflStatus, String)>;
}

impl<T> OrStatus<T> for hyperfit::Result<T> {
    fn or_status(self) -> Result<T, (HflStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (HflStatus, String) {
    (HflStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (HflStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, (HflStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| (HflStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (HflStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies `data` into `out` when it fits; always reports the full length.
unsafe fn copy_out<T: Copy>(data: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> Result<(), (HflStatus, String)> {
    *out_ref(out_len, "out_len")? = data.len();
    if data.len() > cap {
        return Err((HflStatus::BufferTooSmall, format!("need {} elements, buffer holds {cap}", data.len())));
    }
    if !data.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    }
    Ok(())
}

pub struct HflTokenizer(Tokenizer);

pub struct HflModel(Parameters<f32>);

pub struct HflSet {
    set: HyperfitSet,
    overlap: OverlapIndex,
}

impl HflSet {
    fn new(set: HyperfitSet) -> Self {
        let overlap = OverlapIndex::new(&set.sample_multiset());
        Self { set, overlap }
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty when none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hfl_tokenizer_new_byte(out: *mut *mut HflTokenizer) -> HflStatus {
    guard(|| {
        *out_ref(out, "out")? = Box::into_raw(Box::new(HflTokenizer(Tokenizer::byte())));
        Ok(())
    })
}

/// Loads a tokenizer JSON file as written by `hfl ingest`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_tokenizer_load(path: *const c_char, out: *mut *mut HflTokenizer) -> HflStatus {
    guard(|| {
        let t = read_tokenizer(c_path(path)?).or_status()?;
        *out_ref(out, "out")? = Box::into_raw(Box::new(HflTokenizer(t)));
        Ok(())
    })
}

/// # Safety
/// `tok` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hfl_tokenizer_free(tok: *mut HflTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `tok` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfl_tokenizer_vocab_size(tok: *const HflTokenizer) -> usize {
    tok.as_ref().map_or(0, |t| t.0.vocab_size())
}

/// Encodes `len` bytes of UTF-8 text into at most `cap` token ids.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_tokenizer_encode(
    tok: *const HflTokenizer,
    text: *const u8,
    len: usize,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> HflStatus {
    guard(|| {
        let t = tok.as_ref().ok_or_else(|| null("tokenizer"))?;
        let bytes = slice(text, len, "text")?;
        if let Err(e) = std::str::from_utf8(bytes) {
            return Err((HflStatus::Decode, format!("invalid UTF-8 at byte {}", e.valid_up_to())));
        }
        copy_out(&t.0.encode(bytes), out, cap, out_len)
    })
}

/// Decodes token ids into at most `cap` bytes (not NUL-terminated).
///
/// # Safety
/// Pointers must be valid for the given lengths; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_tokenizer_decode(
    tok: *const HflTokenizer,
    ids: *const u32,
    n: usize,
    out: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> HflStatus {
    guard(|| {
        let t = tok.as_ref().ok_or_else(|| null("tokenizer"))?;
        let bytes = t.0.decode(slice(ids, n, "ids")?).or_status()?;
        copy_out(&bytes, out, cap, out_len)
    })
}

/// Loads a checkpoint, converting it to 32-bit floats.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_model_load(path: *const c_char, out: *mut *mut HflModel) -> HflStatus {
    guard(|| {
        let ck = Checkpoint::<f32>::load(c_path(path)?).or_status()?;
        *out_ref(out, "out")? = Box::into_raw(Box::new(HflModel(ck.params)));
        Ok(())
    })
}

/// Freshly initialized model.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_model_new(
    n_layers: usize,
    n_heads: usize,
    d_model: usize,
    d_ff: usize,
    vocab_size: usize,
    max_ctx: usize,
    seed: u64,
    out: *mut *mut HflModel,
) -> HflStatus {
    guard(|| {
        let cfg = ModelConfig { n_layers, n_heads, d_model, d_ff, vocab_size, max_ctx, dropout: 0.0 };
        let p = Parameters::<f32>::init(&cfg, seed).or_status()?;
        *out_ref(out, "out")? = Box::into_raw(Box::new(HflModel(p)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hfl_model_free(model: *mut HflModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfl_model_vocab_size(model: *const HflModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.vocab_size)
}

/// Loads an `HFS1` set file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_set_load(path: *const c_char, out: *mut *mut HflSet) -> HflStatus {
    guard(|| {
        let s = read_set(c_path(path)?).or_status()?;
        *out_ref(out, "out")? = Box::into_raw(Box::new(HflSet::new(s)));
        Ok(())
    })
}

/// Builds a set from `n_samples * sample_len` row-major token ids.
///
/// # Safety
/// `tokens` must hold `n_samples * sample_len` ids; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_set_new(
    tokens: *const u32,
    n_samples: usize,
    sample_len: usize,
    vocab_size: usize,
    out: *mut *mut HflSet,
) -> HflStatus {
    guard(|| {
        let total = n_samples
            .checked_mul(sample_len)
            .ok_or((HflStatus::InvalidArgument, "n_samples * sample_len overflows".to_string()))?;
        let ids = slice(tokens, total, "tokens")?;
        let samples = if sample_len == 0 {
            Vec::new()
        } else {
            ids.chunks(sample_len)
                .map(|c| TokenSequence::new(c.to_vec(), "ffi"))
                .collect::<hyperfit::Result<Vec<_>>>()
                .or_status()?
        };
        let set = HyperfitSet::new(samples, sample_len, 0, OrderId::Base, vocab_size).or_status()?;
        *out_ref(out, "out")? = Box::into_raw(Box::new(HflSet::new(set)));
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hfl_set_free(set: *mut HflSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfl_set_len(set: *const HflSet) -> usize {
    set.as_ref().map_or(0, |s| s.set.len())
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HflGenerateOptions {
    pub max_new_tokens: usize,
    /// Greedy decoding when true; otherwise temperature/top-p/top-k sampling.
    pub greedy: bool,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub seed: u64,
    /// Hyperfit set for the citation blocker; null disables blocking.
    pub block_set: *const HflSet,
    pub block_n: usize,
    /// Let the current word finish before blocking; needs `tokenizer`.
    pub defer_to_word_end: bool,
    pub tokenizer: *const HflTokenizer,
}

/// Greedy, 96 tokens, no blocking; sampling fields hold 0.7 / 0.9 / 50.
#[no_mangle]
pub extern "C" fn hfl_generate_options_default() -> HflGenerateOptions {
    HflGenerateOptions {
        max_new_tokens: 96,
        greedy: true,
        temperature: 0.7,
        top_p: 0.9,
        top_k: 50,
        seed: 0,
        block_set: std::ptr::null(),
        block_n: 5,
        defer_to_word_end: false,
        tokenizer: std::ptr::null(),
    }
}

/// Generates up to `cap` tokens after `ctx`.
///
/// # Safety
/// Handles in `opts` must be null or live; buffers valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn hfl_generate(
    model: *const HflModel,
    ctx: *const u32,
    ctx_len: usize,
    opts: *const HflGenerateOptions,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> HflStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let o = opts.as_ref().ok_or_else(|| null("options"))?;
        let context = slice(ctx, ctx_len, "context")?;
        let strategy = if o.greedy {
            Strategy::Greedy
        } else {
            Strategy::Sample { temperature: o.temperature, top_p: o.top_p, top_k: o.top_k }
        };
        let mut cfg = GenerationConfig { strategy, max_new_tokens: o.max_new_tokens, block: None, seed: o.seed };
        if let Some(set) = o.block_set.as_ref() {
            let boundaries = o.tokenizer.as_ref().map(|t| Arc::new(t.0.boundary_table()));
            if o.defer_to_word_end && boundaries.is_none() {
                return Err((HflStatus::InvalidArgument, "deferred blocking needs a tokenizer".into()));
            }
            let index = Arc::new(NGramIndex::build(&set.set, o.block_n).or_status()?);
            cfg.block = Some(CitationBlockConfig::new(index, o.defer_to_word_end, boundaries));
        }
        let (seq, _) = generate(&m.0, context, &cfg).or_status()?;
        copy_out(&seq.tokens, out, cap, out_len)
    })
}

/// Type-token ratio of the last `window` ids.
///
/// # Safety
/// `ids` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_ttr(ids: *const u32, n: usize, window: usize, out: *mut f64) -> HflStatus {
    guard(|| {
        *out_ref(out, "out")? = ttr(slice(ids, n, "ids")?, window).or_status()?;
        Ok(())
    })
}

/// Token BLEU-4 of `cand` against `reference`, in [0, 100].
///
/// # Safety
/// Arrays must hold the given counts; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_bleu(
    cand: *const u32,
    cand_len: usize,
    reference: *const u32,
    ref_len: usize,
    out: *mut f64,
) -> HflStatus {
    guard(|| {
        *out_ref(out, "out")? = bleu(slice(cand, cand_len, "candidate")?, slice(reference, ref_len, "reference")?).or_status()?;
        Ok(())
    })
}

/// Longest contiguous run of `seq` found in any sample of `set`. The
/// location outputs may be null; they are left untouched without a match.
///
/// # Safety
/// `set` must be live, `seq` hold `n` ids and `out_len` be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_longest_overlap(
    set: *const HflSet,
    seq: *const u32,
    n: usize,
    out_len: *mut usize,
    out_sample: *mut usize,
    out_sample_offset: *mut usize,
    out_seq_offset: *mut usize,
) -> HflStatus {
    guard(|| {
        let s = set.as_ref().ok_or_else(|| null("set"))?;
        let o = s.overlap.longest_overlap(slice(seq, n, "sequence")?);
        *out_ref(out_len, "out_len")? = o.length;
        if let Some(loc) = o.location {
            for (p, v) in [(out_sample, loc.sample), (out_sample_offset, loc.sample_offset), (out_seq_offset, loc.seq_offset)] {
                if let Some(p) = p.as_mut() {
                    *p = v;
                }
            }
        }
        Ok(())
    })
}
