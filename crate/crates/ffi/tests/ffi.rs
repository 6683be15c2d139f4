use std::ffi::{c_char, CString};
use std::ptr;

use fallchain::fingerprint::DEFAULT_FLOOR_DBM;
use fallchain::locmodel::{FeatureMode, LocModel, RegressorSpec};
use fallchain::mission::{default_anchors, synth_loc_samples, RadioModel};
use fallchain::vision::{SceneClassifier, SceneClassifierSpec, SceneSample};
use fallchain_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; fc_last_error_length() + 1];
    let n = unsafe { fc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    buf[..n].iter().map(|&c| c as u8 as char).collect()
}

#[test]
fn reliability_through_the_c_interface() {
    let (mut f, mut a) = (0.0, 0.0);
    assert_eq!(fc_combined_reliability(0.0081, 0.05, 0.0367, &mut f, &mut a), FcStatus::Ok);
    assert!((f - 0.0081 * 0.05 * 0.0367).abs() < 1e-18);
    assert!((a - 100.0 * (1.0 - f)).abs() < 1e-12);
    assert_eq!(fc_serial_reliability(0.0081, 0.05, 0.0367, &mut f, &mut a), FcStatus::Ok);
    assert!((f - (1.0 - 0.9919 * 0.95 * 0.9633)).abs() < 1e-12);

    assert_eq!(fc_combined_reliability(1.5, 0.05, 0.0367, &mut f, &mut a), FcStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(fc_combined_reliability(0.1, 0.1, 0.1, ptr::null_mut(), &mut a), FcStatus::NullPointer);
    // success clears the message
    assert_eq!(fc_combined_reliability(0.1, 0.1, 0.1, &mut f, &mut a), FcStatus::Ok);
    assert_eq!(fc_last_error_length(), 0);
}

#[test]
fn error_message_truncates() {
    let mut f = 0.0;
    fc_combined_reliability(f64::NAN, 0.1, 0.1, &mut f, &mut f);
    let full = last_error();
    let mut small = [7 as c_char; 4];
    let n = unsafe { fc_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, 3);
    assert_eq!(small[3], 0);
    assert_eq!(small[..3].iter().map(|&c| c as u8 as char).collect::<String>(), full[..3]);
    assert_eq!(unsafe { fc_last_error_message(ptr::null_mut(), 0) }, 0);
}

#[test]
fn boxes_and_ap() {
    let a = FcBox { cx: 0.5, cy: 0.5, w: 0.2, h: 0.2 };
    let b = FcBox { cx: 0.6, cy: 0.5, w: 0.2, h: 0.2 };
    let mut r = 0.0;
    assert_eq!(fc_iou(a, b, &mut r), FcStatus::Ok);
    // overlap 0.1 x 0.2 over union 0.08 - 0.02
    assert!((r - 0.02 / 0.06).abs() < 1e-12);
    assert_eq!(fc_iou(a, FcBox { w: -1.0, ..b }, &mut r), FcStatus::InvalidArgument);

    let dets = [a, FcBox { cx: 0.1, cy: 0.1, w: 0.1, h: 0.1 }];
    let scores = [0.9, 0.8];
    let truths = [a];
    let status = unsafe { fc_ap50(dets.as_ptr(), scores.as_ptr(), 2, truths.as_ptr(), 1, &mut r) };
    assert_eq!(status, FcStatus::Ok);
    assert_eq!(r, 1.0);
    let status = unsafe { fc_ap50(ptr::null(), ptr::null(), 0, truths.as_ptr(), 1, &mut r) };
    assert_eq!(status, FcStatus::Ok);
    assert_eq!(r, 0.0);
    let status = unsafe { fc_ap50(ptr::null(), scores.as_ptr(), 2, truths.as_ptr(), 1, &mut r) };
    assert_eq!(status, FcStatus::NullPointer);
}

#[test]
fn dtw_cost() {
    let a = [0.0, 1.0, 2.0];
    let b = [0.0, 2.0];
    let mut c = -1.0;
    assert_eq!(unsafe { fc_dtw_cost(a.as_ptr(), 3, b.as_ptr(), 2, &mut c) }, FcStatus::Ok);
    // 0-0, 1-0 or 1-2, 2-2
    assert!((c - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { fc_dtw_cost(a.as_ptr(), 3, a.as_ptr(), 3, &mut c) }, FcStatus::Ok);
    assert_eq!(c, 0.0);
    assert_eq!(unsafe { fc_dtw_cost(a.as_ptr(), 0, b.as_ptr(), 2, &mut c) }, FcStatus::InvalidArgument);
}

#[test]
fn fedavg_weights_by_sample_count() {
    let params = [1.0, 2.0, 3.0, 5.0, 6.0, 7.0];
    let weights = [1usize, 3];
    let mut out = [0.0; 3];
    assert_eq!(unsafe { fc_fedavg(params.as_ptr(), weights.as_ptr(), 2, 3, out.as_mut_ptr()) }, FcStatus::Ok);
    for (o, e) in out.iter().zip([4.0, 5.0, 6.0]) {
        assert!((o - e).abs() < 1e-12);
    }
    assert_eq!(unsafe { fc_fedavg(params.as_ptr(), weights.as_ptr(), 0, 3, out.as_mut_ptr()) }, FcStatus::InvalidArgument);
    let zero = [0usize, 0];
    assert_eq!(unsafe { fc_fedavg(params.as_ptr(), zero.as_ptr(), 2, 3, out.as_mut_ptr()) }, FcStatus::InvalidArgument);
}

#[test]
fn loc_model_handle() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = default_anchors(5, 10.0, 10.0);
    let radio = RadioModel::default();
    let train = synth_loc_samples(&anchors, 10.0, 10.0, 200, &radio, 3, "ffi.train");
    let macs = anchors.iter().map(|a| a.mac).collect();
    let model = LocModel::fit(macs, &train, FeatureMode::Engineered, DEFAULT_FLOOR_DBM, RegressorSpec::knn(), 1).unwrap();
    let path = dir.path().join("loc.json");
    model.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut FcLocModel = ptr::null_mut();
    assert_eq!(unsafe { fc_loc_model_load(cpath.as_ptr(), &mut h) }, FcStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { fc_loc_model_anchor_count(h, &mut n) }, FcStatus::Ok);
    assert_eq!(n, 5);
    let mut xy = [0.0; 2];
    let s = &train[0];
    assert_eq!(unsafe { fc_loc_model_predict(h, s.rssi.as_ptr(), 5, xy.as_mut_ptr()) }, FcStatus::Ok);
    assert_eq!(xy, model.predict(&s.rssi).unwrap());
    assert_eq!(unsafe { fc_loc_model_predict(h, s.rssi.as_ptr(), 4, xy.as_mut_ptr()) }, FcStatus::InvalidArgument);
    unsafe { fc_loc_model_free(h) };
    unsafe { fc_loc_model_free(ptr::null_mut()) };

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut h2: *mut FcLocModel = ptr::null_mut();
    assert_eq!(unsafe { fc_loc_model_load(missing.as_ptr(), &mut h2) }, FcStatus::Io);
    assert!(h2.is_null());
    std::fs::write(dir.path().join("bad.json"), "{").unwrap();
    let bad = CString::new(dir.path().join("bad.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fc_loc_model_load(bad.as_ptr(), &mut h2) }, FcStatus::Parse);
    assert_eq!(unsafe { fc_loc_model_load(ptr::null(), &mut h2) }, FcStatus::NullPointer);
}

#[test]
fn scene_classifier_handle() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = Vec::new();
    for i in 0..40 {
        let fallen = i % 2 == 0;
        let mut f = [0.0; 13];
        f[0] = 1.0;
        f[1] = if fallen { 1.0 } else { 0.0 };
        f[5] = 0.1 * (i % 5) as f64;
        data.push(SceneSample { features: f, fallen });
    }
    let clf = SceneClassifier::fit(&SceneClassifierSpec::logistic(), &data).unwrap();
    let path = dir.path().join("scene.json");
    clf.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut FcSceneClassifier = ptr::null_mut();
    assert_eq!(unsafe { fc_scene_classifier_load(cpath.as_ptr(), &mut h) }, FcStatus::Ok);
    let mut p = 0.0;
    for s in &data[..4] {
        assert_eq!(unsafe { fc_scene_classifier_predict(h, s.features.as_ptr(), 13, &mut p) }, FcStatus::Ok);
        assert_eq!(p, clf.predict_proba(&s.features));
        assert_eq!(p > 0.5, s.fallen);
    }
    assert_eq!(unsafe { fc_scene_classifier_predict(h, data[0].features.as_ptr(), 12, &mut p) }, FcStatus::InvalidArgument);
    assert_eq!(unsafe { fc_scene_classifier_predict(ptr::null(), data[0].features.as_ptr(), 13, &mut p) }, FcStatus::NullPointer);
    unsafe { fc_scene_classifier_free(h) };
}

#[test]
fn header_is_in_sync() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fallchain.h")).unwrap();
    for sym in [
        "fc_combined_reliability",
        "fc_serial_reliability",
        "fc_iou",
        "fc_ap50",
        "fc_dtw_cost",
        "fc_fedavg",
        "fc_loc_model_load",
        "fc_loc_model_predict",
        "fc_loc_model_free",
        "fc_scene_classifier_load",
        "fc_scene_classifier_predict",
        "fc_scene_classifier_free",
        "fc_last_error_message",
        "FC_STATUS_NOT_FITTED",
    ] {
        assert!(header.contains(sym), "{sym}");
    }
}
