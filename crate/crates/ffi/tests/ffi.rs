use std::ffi::{CStr, CString};
use std::ptr;

use hyperfit_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(hfl_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn tokenizer_round_trip_and_buffer_sizing() {
    unsafe {
        let mut tok = ptr::null_mut();
        assert_eq!(hfl_tokenizer_new_byte(&mut tok), HflStatus::Ok);
        assert_eq!(hfl_tokenizer_vocab_size(tok), 256);
        let text = "héllo";
        let mut len = 0usize;
        let st = hfl_tokenizer_encode(tok, text.as_ptr(), text.len(), ptr::null_mut(), 0, &mut len);
        assert_eq!(st, HflStatus::BufferTooSmall);
        assert_eq!(len, text.len());
        let mut ids = vec![0u32; len];
        assert_eq!(hfl_tokenizer_encode(tok, text.as_ptr(), text.len(), ids.as_mut_ptr(), ids.len(), &mut len), HflStatus::Ok);
        let mut buf = vec![0u8; 16];
        assert_eq!(hfl_tokenizer_decode(tok, ids.as_ptr(), len, buf.as_mut_ptr(), buf.len(), &mut len), HflStatus::Ok);
        assert_eq!(&buf[..len], text.as_bytes());

        let bad = [0xffu8, 0x41];
        assert_eq!(hfl_tokenizer_encode(tok, bad.as_ptr(), 2, ids.as_mut_ptr(), ids.len(), &mut len), HflStatus::Decode);
        assert!(last_error().contains("UTF-8"));
        hfl_tokenizer_free(tok);
    }
}

#[test]
fn null_handles_are_reported() {
    unsafe {
        let mut out = 0.0;
        assert_eq!(hfl_ttr(ptr::null(), 3, 96, &mut out), HflStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut len = 0;
        assert_eq!(hfl_longest_overlap(ptr::null(), ptr::null(), 0, &mut len, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), HflStatus::NullPointer);
        hfl_model_free(ptr::null_mut());
        hfl_set_free(ptr::null_mut());
        assert_eq!(hfl_model_vocab_size(ptr::null()), 0);
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(hfl_model_load(missing.as_ptr(), &mut m), HflStatus::Io);
        assert!(m.is_null());
    }
}

#[test]
fn metrics_match_the_library() {
    let a = [1u32, 2, 3, 4, 5, 6];
    let b = [1u32, 2, 3, 9, 5, 6];
    unsafe {
        let mut v = 0.0;
        assert_eq!(hfl_bleu(a.as_ptr(), a.len(), b.as_ptr(), b.len(), &mut v), HflStatus::Ok);
        assert_eq!(v, hyperfit::metrics::bleu(&a, &b).unwrap());
        assert_eq!(hfl_ttr(b.as_ptr(), b.len(), 96, &mut v), HflStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(hfl_ttr(b.as_ptr(), 0, 96, &mut v), HflStatus::InvalidArgument);

        let samples = [5u32, 1, 2, 3, 4, 7, 7, 7, 9, 9];
        let mut set = ptr::null_mut();
        assert_eq!(hfl_set_new(samples.as_ptr(), 2, 5, 10, &mut set), HflStatus::Ok);
        assert_eq!(hfl_set_len(set), 2);
        let seq = [8u32, 1, 2, 3, 4, 7, 7];
        let (mut len, mut s, mut so, mut qo) = (0, 0, 0, 0);
        assert_eq!(hfl_longest_overlap(set, seq.as_ptr(), seq.len(), &mut len, &mut s, &mut so, &mut qo), HflStatus::Ok);
        assert_eq!((len, s, so, qo), (4, 0, 1, 1));
        hfl_set_free(set);
    }
}

#[test]
fn blocked_generation_avoids_long_copies() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(hfl_model_new(1, 2, 16, 32, 12, 64, 3, &mut model), HflStatus::Ok);
        let samples: Vec<u32> = (0..40).map(|i| (i * 5 % 12) as u32).collect();
        let mut set = ptr::null_mut();
        assert_eq!(hfl_set_new(samples.as_ptr(), 2, 20, 12, &mut set), HflStatus::Ok);
        let mut opts = hfl_generate_options_default();
        opts.max_new_tokens = 30;
        opts.block_set = set;
        opts.block_n = 2;
        let ctx = [samples[0], samples[1], samples[2]];
        let mut out = vec![0u32; 30];
        let mut len = 0;
        assert_eq!(hfl_generate(model, ctx.as_ptr(), 3, &opts, out.as_mut_ptr(), out.len(), &mut len), HflStatus::Ok);
        assert_eq!(len, 30);
        let mut ov = 0;
        hfl_longest_overlap(set, out.as_ptr(), len, &mut ov, ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert!(ov <= 2, "overlap {ov}");

        opts.defer_to_word_end = true;
        assert_eq!(hfl_generate(model, ctx.as_ptr(), 3, &opts, out.as_mut_ptr(), out.len(), &mut len), HflStatus::InvalidArgument);
        opts.block_set = ptr::null();
        opts.max_new_tokens = 100;
        let mut big = vec![0u32; 100];
        assert_eq!(hfl_generate(model, ctx.as_ptr(), 3, &opts, big.as_mut_ptr(), big.len(), &mut len), HflStatus::ContextLength);
        hfl_set_free(set);
        hfl_model_free(model);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = std::fs::read_to_string(format!("{dir}/include/hyperfit.h")).unwrap();
    for f in ["hfl_last_error", "hfl_tokenizer_encode", "hfl_generate", "hfl_ttr", "hfl_bleu", "hfl_longest_overlap", "hfl_model_free", "HFL_STATUS_BUFFER_TOO_SMALL", "typedef struct HflModel HflModel;"] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include "hyperfit.h"
#include <stdio.h>
int main(void) {
    uint32_t a[] = {1, 2, 3, 4}, b[] = {1, 2, 3, 4};
    double v = 0.0;
    if (hfl_bleu(a, 4, b, 4, &v) != HFL_STATUS_OK) return 1;
    if (hfl_ttr(NULL, 2, 96, &v) != HFL_STATUS_NULL_POINTER) return 2;
    printf("%s %.1f\n", hfl_version(), 100.0);
    return 0;
}
"#,
    )
    .unwrap();
    let include = format!("-I{dir}/include");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", &include])
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler; header check skipped");
        return;
    };
    assert!(status.success(), "header does not compile as C");
    // link against the static library built next to this test binary
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libhyperfit_ffi.a").exists() {
        eprintln!("static library not built; link check skipped");
        return;
    }
    let exe = tmp.path().join("probe");
    let status = std::process::Command::new("cc")
        .args([&include, "-o"])
        .arg(&exe)
        .arg(&src)
        .arg(lib_dir.join("libhyperfit_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "link failed");
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "probe exited with {:?}", out.status);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
