use std::ffi::CString;
use std::ptr;

use imix_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { imix_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn schedule_functions() {
    let mut y = 0.0;
    unsafe {
        assert_eq!(imix_kcdf(0.5, 2.0, 2.0, &mut y), ImixStatus::Ok);
        assert_eq!(y, 0.4375);
        assert_eq!(imix_rkcdf(0.5, 2.0, 2.0, &mut y), ImixStatus::Ok);
        assert_eq!(y, 0.5625);
        assert_eq!(imix_kcdf(1.5, 2.0, 2.0, &mut y), ImixStatus::Range);
        assert!(last_error().contains("outside"));
        assert_eq!(imix_kcdf(0.5, 2.0, 2.0, ptr::null_mut()), ImixStatus::NullPointer);

        let mut cfg = std::mem::zeroed::<ImixScheduleConfig>();
        assert_eq!(imix_schedule_default(&mut cfg), ImixStatus::Ok);
        cfg.total_iters = 1000;
        assert_eq!(imix_eta_at(&cfg, 500, &mut y), ImixStatus::Ok);
        assert!((y - 0.525).abs() < 1e-12);
        assert_eq!(last_error(), "");
        assert_eq!(imix_eta_at(&cfg, 1001, &mut y), ImixStatus::Range);
        cfg.eta_min = 0.9;
        assert_eq!(imix_eta_at(&cfg, 0, &mut y), ImixStatus::Config);
    }
}

#[test]
fn ecs_handle_lifecycle() {
    unsafe {
        let mut state = ptr::null_mut();
        assert_eq!(imix_ecs_new(3, 0.5, &mut state), ImixStatus::Ok);
        let mut snap = [0.0; 3];
        assert_eq!(imix_ecs_snapshot(state, ImixDomain::Target, snap.as_mut_ptr(), 3), ImixStatus::Ok);
        assert_eq!(snap, [1.0 / 3.0; 3]);

        let raw = [0.8, 0.0, 0.4];
        let present = [1u8, 0, 1];
        for _ in 0..2 {
            assert_eq!(imix_ecs_update(state, ImixDomain::Target, raw.as_ptr(), present.as_ptr(), 3), ImixStatus::Ok);
        }
        let next = [0.6, 0.0, 0.4];
        assert_eq!(imix_ecs_update(state, ImixDomain::Target, next.as_ptr(), present.as_ptr(), 3), ImixStatus::Ok);
        imix_ecs_snapshot(state, ImixDomain::Target, snap.as_mut_ptr(), 3);
        assert!((snap[0] - 0.7).abs() < 1e-15);
        assert_eq!(snap[1], 1.0 / 3.0);
        imix_ecs_snapshot(state, ImixDomain::Source, snap.as_mut_ptr(), 3);
        assert_eq!(snap, [1.0 / 3.0; 3]);

        assert_eq!(imix_ecs_update(state, ImixDomain::Target, raw.as_ptr(), present.as_ptr(), 2), ImixStatus::Dimension);
        assert_eq!(imix_ecs_snapshot(state, ImixDomain::Target, snap.as_mut_ptr(), 4), ImixStatus::InvalidArgument);
        imix_ecs_free(state);
        imix_ecs_free(ptr::null_mut());

        assert_eq!(imix_ecs_new(3, 1.0, &mut state), ImixStatus::Config);
    }
}

#[test]
fn measure_ecs_over_buffers() {
    // class-major probabilities for a 1x2 map, C = 2
    let probs = [0.6, 0.2, 0.4, 0.8];
    let labels = [0u16, 0];
    let (mut ecs, mut present) = ([0.0; 2], [9u8; 2]);
    unsafe {
        let s = imix_measure_ecs(probs.as_ptr(), labels.as_ptr(), 2, 1, 2, ecs.as_mut_ptr(), present.as_mut_ptr());
        assert_eq!(s, ImixStatus::Ok);
    }
    assert!((ecs[0] - 0.7).abs() < 1e-15);
    assert_eq!(present, [1, 0]);
}

#[test]
fn i_sample_and_class_sample() {
    let labels = [0u16, 1, 2, 3];
    let ecs = [0.9, 0.2, 0.5, 0.7];
    let (mut mask, mut selected, mut count) = ([0u8; 4], [0u16; 4], 0usize);
    unsafe {
        let s = imix_i_sample(labels.as_ptr(), 2, 2, 4, ecs.as_ptr(), 0.5, ImixKind::Under, mask.as_mut_ptr(), selected.as_mut_ptr(), &mut count);
        assert_eq!(s, ImixStatus::Ok);
        assert_eq!(&selected[..count], &[1, 2]);
        assert_eq!(mask, [0, 1, 1, 0]);

        let s = imix_i_sample(labels.as_ptr(), 2, 2, 4, ecs.as_ptr(), 1.5, ImixKind::Under, mask.as_mut_ptr(), selected.as_mut_ptr(), &mut count);
        assert_eq!(s, ImixStatus::Range);

        let s = imix_class_sample(labels.as_ptr(), 2, 2, 4, 7, mask.as_mut_ptr(), selected.as_mut_ptr(), &mut count);
        assert_eq!(s, ImixStatus::Ok);
        assert_eq!(count, 2);
        assert_eq!(mask.iter().filter(|&&m| m == 1).count(), 2);

        let bad = [0u16, 9, 0, 0];
        let s = imix_class_sample(bad.as_ptr(), 2, 2, 4, 7, mask.as_mut_ptr(), selected.as_mut_ptr(), &mut count);
        assert_ne!(s, ImixStatus::Ok);
    }
}

#[test]
fn mix_composes_donor_over_follower() {
    let (h, w, c) = (2usize, 2usize, 4usize);
    let src_img: Vec<f64> = (0..12).map(|v| v as f64 / 12.0).collect();
    let tgt_img = vec![1.0; 12];
    let src_labels = [0u16, 1, 2, 3];
    let tgt_labels = [3u16, 3, 3, 3];
    unsafe {
        let mut state = ptr::null_mut();
        imix_ecs_new(c, 0.9, &mut state);
        let raw = [0.9, 0.2, 0.5, 0.7];
        let present = [1u8; 4];
        imix_ecs_update(state, ImixDomain::Source, raw.as_ptr(), present.as_ptr(), c);

        let mut img = vec![0.0; 12];
        let mut lab = [0u16; 4];
        let mut mask = [0u8; 4];
        let mut selected = [0u16; 4];
        let mut count = 0usize;
        let out = ImixMixOutput {
            image: img.as_mut_ptr(),
            labels: lab.as_mut_ptr(),
            mask: mask.as_mut_ptr(),
            selected: selected.as_mut_ptr(),
            selected_count: &mut count,
        };
        let s = imix_mix(
            ImixSample { image: src_img.as_ptr(), labels: src_labels.as_ptr() },
            ImixSample { image: tgt_img.as_ptr(), labels: tgt_labels.as_ptr() },
            h, w, c,
            ImixOrder::Sstf, ImixKind::Under, ImixSampler::IMix,
            state, 0.25, 0, out,
        );
        assert_eq!(s, ImixStatus::Ok, "{}", last_error());
        // k = round(0.25 * 4) = 1: the lowest source ECS, class 1 at pixel 1
        assert_eq!(&selected[..count], &[1]);
        assert_eq!(mask, [0, 1, 0, 0]);
        assert_eq!(lab, [3, 1, 3, 3]);
        for ch in 0..3 {
            for px in 0..4 {
                let want = if px == 1 { src_img[ch * 4 + px] } else { 1.0 };
                assert_eq!(img[ch * 4 + px], want);
            }
        }
        let s = imix_mix(
            ImixSample { image: ptr::null(), labels: src_labels.as_ptr() },
            ImixSample { image: tgt_img.as_ptr(), labels: tgt_labels.as_ptr() },
            h, w, c,
            ImixOrder::Sstf, ImixKind::Under, ImixSampler::IMix,
            state, 0.25, 0, out,
        );
        assert_eq!(s, ImixStatus::NullPointer);
        imix_ecs_free(state);
    }
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(
        r#"{"train": {"iterations": 20}, "data": {"height": 20, "width": 20, "thing_radius": [2.5, 4], "rare_radius": [1.5, 2]},
            "train_pairs": 2, "eval_images": 2}"#,
    )
    .unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut miou = -1.0;
    unsafe {
        assert_eq!(imix_simulate(cfg.as_ptr(), out.as_ptr(), &mut miou), ImixStatus::Ok, "{}", last_error());
    }
    assert!((0.0..=1.0).contains(&miou));
    for f in ["metrics.csv", "ecs_history.csv", "iou.csv", "model.bin"] {
        assert!(dir.path().join(f).exists());
    }
    let bad = CString::new(r#"{"train": {"tau": 2.0}}"#).unwrap();
    unsafe {
        assert_eq!(imix_simulate(bad.as_ptr(), out.as_ptr(), ptr::null_mut()), ImixStatus::Config);
        assert_eq!(imix_simulate(ptr::null(), out.as_ptr(), ptr::null_mut()), ImixStatus::NullPointer);
    }
}

#[test]
fn version_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(imix_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/imix.h")).unwrap();
    for symbol in [
        "imix_kcdf", "imix_rkcdf", "imix_eta_at", "imix_ecs_new", "imix_ecs_free", "imix_ecs_update",
        "imix_ecs_snapshot", "imix_measure_ecs", "imix_i_sample", "imix_class_sample", "imix_mix",
        "imix_simulate", "imix_last_error_message", "typedef struct ImixEcsState ImixEcsState",
        "IMIX_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}
