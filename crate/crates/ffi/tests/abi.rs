use std::ffi::CString;
use std::ptr;

use speechsem_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { ss_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn new_model(seed: u64) -> *mut SsModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ss_model_new(seed, &mut m) }, SsStatus::Ok);
    assert!(!m.is_null());
    m
}

fn tone(len: usize) -> Vec<i16> {
    (0..len)
        .map(|n| (6000.0 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin()) as i16)
        .collect()
}

fn spectrum_of(pcm: &[i16]) -> Vec<f64> {
    let mut len = 0;
    assert_eq!(
        unsafe { ss_spectrum(pcm.as_ptr(), pcm.len(), ptr::null_mut(), 0, &mut len) },
        SsStatus::BufferTooSmall
    );
    let mut spec = vec![0.0; len];
    assert_eq!(
        unsafe { ss_spectrum(pcm.as_ptr(), pcm.len(), spec.as_mut_ptr(), spec.len(), &mut len) },
        SsStatus::Ok
    );
    spec
}

#[test]
fn metrics_and_pruning() {
    let (r, h) = ([5u32, 6, 7], [5u32, 9, 7, 8]);
    let mut w = -1.0;
    assert_eq!(unsafe { ss_wer(r.as_ptr(), 3, h.as_ptr(), 4, &mut w) }, SsStatus::Ok);
    assert!((w - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(unsafe { ss_wer(ptr::null(), 0, h.as_ptr(), 4, &mut w) }, SsStatus::InvalidArgument);
    assert!(last_error().contains("empty"));
    assert_eq!(unsafe { ss_wer(ptr::null(), 2, h.as_ptr(), 4, &mut w) }, SsStatus::NullPointer);

    let mut s = -1.0;
    assert_eq!(unsafe { ss_similarity(r.as_ptr(), 3, r.as_ptr(), 3, &mut s) }, SsStatus::Ok);
    assert!((s - 1.0).abs() < 1e-12);

    let tokens = [7u32, 1, 8, 2, 9];
    let mut out = [0u32; 2];
    let mut n = 0;
    assert_eq!(unsafe { ss_prune(tokens.as_ptr(), 5, out.as_mut_ptr(), 2, &mut n) }, SsStatus::Ok);
    assert_eq!((n, out), (2, [7, 8]));
    assert_eq!(
        unsafe { ss_prune(tokens.as_ptr(), 5, out.as_mut_ptr(), 1, &mut n) },
        SsStatus::BufferTooSmall
    );
    assert_eq!(n, 2);
}

#[test]
fn model_handles_round_trip() {
    let m = new_model(7);
    let mut count = 0;
    assert_eq!(unsafe { ss_model_param_count(m, &mut count) }, SsStatus::Ok);
    assert_eq!(count, 143_962);
    let mut vocab = 0;
    assert_eq!(unsafe { ss_model_vocab_size(m, &mut vocab) }, SsStatus::Ok);
    assert_eq!(vocab, 67);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ss_model_save(m, path.as_ptr()) }, SsStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ss_model_load(path.as_ptr(), &mut back) }, SsStatus::Ok);

    let spec = spectrum_of(&tone(8000));
    let run = |model: *const SsModel| {
        let mut out = vec![0u32; 16];
        let (mut n, mut sym) = (0, 0);
        let st = unsafe {
            ss_transcribe(
                model,
                spec.as_ptr(),
                spec.len(),
                SsChannel::Rayleigh as u32,
                6.0,
                11,
                16,
                out.as_mut_ptr(),
                out.len(),
                &mut n,
                &mut sym,
            )
        };
        assert_eq!(st, SsStatus::Ok, "{}", last_error());
        out.truncate(n);
        (out, sym)
    };
    let (a, sa) = run(m);
    assert_eq!((a.clone(), sa), run(back));
    assert_eq!(sa % 16, 0);
    assert!(a.iter().all(|&t| t >= 3));
    unsafe {
        ss_model_free(m);
        ss_model_free(back);
        ss_model_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_codes() {
    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/dir/m.ckpt").unwrap();
    assert_eq!(unsafe { ss_model_load(missing.as_ptr(), &mut m) }, SsStatus::Io);
    assert!(m.is_null());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ss_model_load(junk.as_ptr(), &mut m) }, SsStatus::Format);
    assert_eq!(unsafe { ss_model_load(ptr::null(), &mut m) }, SsStatus::NullPointer);
    assert_eq!(unsafe { ss_model_new(1, ptr::null_mut()) }, SsStatus::NullPointer);

    let model = new_model(3);
    let mut n = 0;
    let mut out = [0u32; 4];
    let ragged = vec![0.0; 121];
    let call = |spec: &[f64], channel: u32, n: &mut usize, out: &mut [u32]| unsafe {
        ss_transcribe(model, spec.as_ptr(), spec.len(), channel, 12.0, 1, 8, out.as_mut_ptr(), out.len(), n, ptr::null_mut())
    };
    assert_eq!(call(&ragged, 0, &mut n, &mut out), SsStatus::InvalidArgument);
    let mut hot = spectrum_of(&tone(4000));
    assert_eq!(call(&hot, 9, &mut n, &mut out), SsStatus::InvalidArgument);
    assert!(last_error().contains("channel 9"));
    hot[5] = f64::NAN;
    assert_eq!(call(&hot, 0, &mut n, &mut out), SsStatus::Numeric);
    let short = vec![0.0; 120];
    assert_eq!(call(&short, 2, &mut n, &mut out), SsStatus::InvalidArgument);
    let mut len = 0;
    assert_eq!(
        unsafe { ss_spectrum(tone(10).as_ptr(), 10, ptr::null_mut(), 0, &mut len) },
        SsStatus::InvalidArgument
    );
    unsafe { ss_model_free(model) };
}

#[test]
fn last_error_truncates_and_reports_full_length() {
    let mut w = 0.0;
    let h = [1u32];
    unsafe { ss_wer(ptr::null(), 0, h.as_ptr(), 1, &mut w) };
    let full = unsafe { ss_last_error(ptr::null_mut(), 0) };
    let mut buf = [1 as std::ffi::c_char; 4];
    assert_eq!(unsafe { ss_last_error(buf.as_mut_ptr(), 4) }, full);
    assert_eq!(buf[3], 0);
    assert!(full > 3);
}
