use std::ffi::{CStr, CString};
use std::ptr;

use owtrack::detset::{save_annotations, save_results};
use owtrack::sim::{simulate, SequenceSpec};
use owtrack_ffi::*;

fn last_error() -> String {
    let p = owt_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn bx(x: f64, y: f64, w: f64, h: f64) -> OwtBox {
    OwtBox { x, y, w, h }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(owt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn box_iou_values_and_errors() {
    let a = bx(0.0, 0.0, 10.0, 10.0);
    let b = bx(5.0, 0.0, 10.0, 10.0);
    let mut out = -1.0;
    assert_eq!(unsafe { owt_box_iou(&a, &b, &mut out) }, OwtStatus::Ok);
    assert!((out - 50.0 / 150.0).abs() < 1e-12);
    assert!(owt_last_error_message().is_null());

    assert_eq!(unsafe { owt_box_iou(ptr::null(), &b, &mut out) }, OwtStatus::NullPointer);
    assert!(last_error().contains("NULL"));

    let bad = bx(0.0, 0.0, -1.0, 3.0);
    assert_eq!(unsafe { owt_box_iou(&a, &bad, &mut out) }, OwtStatus::InvalidArgument);
}

#[test]
fn hungarian_rectangular_with_infeasible() {
    // row 0 can only take column 1; row 1 prefers column 1 but must yield
    let inf = f64::INFINITY;
    let costs = [inf, 0.5, inf, 2.0, 0.1, 9.0];
    let mut out = [7i64; 2];
    assert_eq!(unsafe { owt_hungarian(costs.as_ptr(), 2, 3, out.as_mut_ptr()) }, OwtStatus::Ok);
    assert_eq!(out, [1, 0]);

    let all_inf = [inf; 4];
    let mut out = [7i64; 2];
    assert_eq!(unsafe { owt_hungarian(all_inf.as_ptr(), 2, 2, out.as_mut_ptr()) }, OwtStatus::Ok);
    assert_eq!(out, [-1, -1]);

    let negative = [-1.0];
    let mut out = [0i64; 1];
    assert_eq!(
        unsafe { owt_hungarian(negative.as_ptr(), 1, 1, out.as_mut_ptr()) },
        OwtStatus::InvalidArgument
    );
    assert_eq!(unsafe { owt_hungarian(ptr::null(), 0, 0, ptr::null_mut()) }, OwtStatus::Ok);
}

#[test]
fn topk_orders_and_breaks_ties_by_index() {
    let scores = [0.2, 0.9, 0.5, 0.9, 0.1];
    let mut idx = [usize::MAX; 3];
    let mut len = 0;
    assert_eq!(
        unsafe { owt_topk(scores.as_ptr(), scores.len(), 3, idx.as_mut_ptr(), &mut len) },
        OwtStatus::Ok
    );
    assert_eq!((len, idx), (3, [1, 3, 2]));

    assert_eq!(
        unsafe { owt_topk(scores.as_ptr(), scores.len(), 0, idx.as_mut_ptr(), &mut len) },
        OwtStatus::InvalidArgument
    );
    let nan = [f64::NAN];
    assert_eq!(unsafe { owt_topk(nan.as_ptr(), 1, 1, idx.as_mut_ptr(), &mut len) }, OwtStatus::InvalidArgument);
}

#[test]
fn nms_suppresses_overlaps() {
    let boxes = [bx(0.0, 0.0, 10.0, 10.0), bx(1.0, 0.0, 10.0, 10.0), bx(50.0, 50.0, 10.0, 10.0)];
    let scores = [0.8, 0.9, 0.3];
    let mut idx = [usize::MAX; 3];
    let mut len = 0;
    let status = unsafe { owt_nms(boxes.as_ptr(), scores.as_ptr(), 3, 0.5, idx.as_mut_ptr(), &mut len) };
    assert_eq!(status, OwtStatus::Ok);
    assert_eq!(&idx[..len], &[1, 2]);

    let status = unsafe { owt_nms(boxes.as_ptr(), scores.as_ptr(), 3, 1.5, idx.as_mut_ptr(), &mut len) };
    assert_eq!(status, OwtStatus::InvalidArgument);
}

#[test]
fn ema_update_in_place() {
    let mut teacher = [1.0, 2.0, 3.0];
    let student = [3.0, 2.0, 1.0];
    assert_eq!(unsafe { owt_ema_update(teacher.as_mut_ptr(), student.as_ptr(), 3, 0.75) }, OwtStatus::Ok);
    assert_eq!(teacher, [1.5, 2.0, 2.5]);

    assert_eq!(
        unsafe { owt_ema_update(teacher.as_mut_ptr(), student.as_ptr(), 3, 1.5) },
        OwtStatus::InvalidArgument
    );
    assert_eq!(teacher, [1.5, 2.0, 2.5]);
}

#[test]
fn default_config_round_trips() {
    let cfg = owt_tracker_config_default();
    assert_eq!(cfg.n_init, 3);
    assert_eq!(cfg.max_age, 30);
    assert_eq!(cfg.max_iou_cost, 0.7);
    assert_eq!(cfg.gate_chi2, 9.4877);
}

#[test]
fn tracker_confirms_and_emits() {
    let mut cfg = owt_tracker_config_default();
    cfg.score_thresh = 0.0;
    let mut t: *mut OwtTracker = ptr::null_mut();
    assert_eq!(unsafe { owt_tracker_new(&cfg, &mut t) }, OwtStatus::Ok);
    assert!(!t.is_null());

    let emb_a = [1.0, 0.0, 0.0, 0.0];
    let emb_b = [0.0, 0.0, 2.0, 0.0];
    let mut seen = Vec::new();
    for f in 0..10u64 {
        let dx = f as f64 * 2.0;
        let dets = [
            OwtDetection { bbox: bx(300.0 - dx, 200.0, 40.0, 80.0), score: 0.9, embedding: emb_b.as_ptr(), embedding_len: 4 },
            OwtDetection { bbox: bx(10.0 + dx, 20.0, 30.0, 60.0), score: 0.95, embedding: emb_a.as_ptr(), embedding_len: 4 },
        ];
        assert_eq!(unsafe { owt_tracker_step(t, f, dets.as_ptr(), dets.len()) }, OwtStatus::Ok);
        let n = unsafe { owt_tracker_emission_count(t) };
        let mut out = vec![OwtEmission { track_id: 0, detection_index: 0, bbox: bx(0.0, 0.0, 0.0, 0.0), score: 0.0 }; n];
        let mut len = 0;
        assert_eq!(unsafe { owt_tracker_emissions(t, out.as_mut_ptr(), n, &mut len) }, OwtStatus::Ok);
        assert_eq!(len, n);
        for e in &out {
            assert_eq!(e.bbox, dets[e.detection_index].bbox);
            assert_eq!(e.score, dets[e.detection_index].score);
        }
        seen.push(out);
    }
    // tentative until the third consecutive hit
    assert!(seen[0].is_empty() && seen[1].is_empty());
    for frame in &seen[2..] {
        assert_eq!(frame.len(), 2);
        assert!(frame[0].track_id < frame[1].track_id);
    }
    let ids: Vec<_> = seen[2..].iter().map(|f| (f[0].track_id, f[0].detection_index)).collect();
    assert!(ids.windows(2).all(|w| w[0] == w[1]));

    // buffer too small reports the needed size
    let mut len = 0;
    let mut one = [OwtEmission { track_id: 0, detection_index: 0, bbox: bx(0.0, 0.0, 0.0, 0.0), score: 0.0 }];
    assert_eq!(unsafe { owt_tracker_emissions(t, one.as_mut_ptr(), 1, &mut len) }, OwtStatus::BufferTooSmall);
    assert_eq!(len, 2);

    // frame ids must increase
    assert_eq!(unsafe { owt_tracker_step(t, 3, ptr::null(), 0) }, OwtStatus::Tracker);
    assert!(!last_error().is_empty());

    // zero embedding is rejected
    let zero = [0.0; 4];
    let det = OwtDetection { bbox: bx(0.0, 0.0, 5.0, 5.0), score: 0.9, embedding: zero.as_ptr(), embedding_len: 4 };
    assert_eq!(unsafe { owt_tracker_step(t, 20, &det, 1) }, OwtStatus::InvalidArgument);

    unsafe { owt_tracker_free(t) };
    unsafe { owt_tracker_free(ptr::null_mut()) };
}

#[test]
fn tracker_new_rejects_bad_config_and_null_out() {
    let mut cfg = owt_tracker_config_default();
    cfg.lambda = 2.0;
    let mut t: *mut OwtTracker = ptr::null_mut();
    assert_eq!(unsafe { owt_tracker_new(&cfg, &mut t) }, OwtStatus::InvalidArgument);
    assert!(t.is_null());
    assert_eq!(unsafe { owt_tracker_new(ptr::null(), ptr::null_mut()) }, OwtStatus::NullPointer);
    assert_eq!(unsafe { owt_tracker_new(ptr::null(), &mut t) }, OwtStatus::Ok);
    unsafe { owt_tracker_free(t) };
}

#[test]
fn evaluate_files_matches_perfect_predictions() {
    let spec = SequenceSpec { n_objects: 3, n_frames: 20, seed: 5, ..SequenceSpec::default() };
    let (gt, dets) = simulate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let gt_path = dir.path().join("gt.json");
    let pred_path = dir.path().join("pred.json");
    save_annotations(&gt, &gt_path).unwrap();
    save_results(&dets, &pred_path).unwrap();

    let g = CString::new(gt_path.to_str().unwrap()).unwrap();
    let p = CString::new(pred_path.to_str().unwrap()).unwrap();
    let mut ar = -1.0;
    assert_eq!(unsafe { owt_evaluate_files(g.as_ptr(), p.as_ptr(), 100, 0, &mut ar) }, OwtStatus::Ok);
    assert_eq!(ar, 1.0);

    assert_eq!(unsafe { owt_evaluate_files(g.as_ptr(), p.as_ptr(), 0, 0, &mut ar) }, OwtStatus::InvalidArgument);

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { owt_evaluate_files(missing.as_ptr(), p.as_ptr(), 100, 0, &mut ar) }, OwtStatus::Io);

    std::fs::write(&pred_path, "{not json").unwrap();
    assert_eq!(unsafe { owt_evaluate_files(g.as_ptr(), p.as_ptr(), 100, 0, &mut ar) }, OwtStatus::Format);

    assert_eq!(unsafe { owt_evaluate_files(ptr::null(), p.as_ptr(), 100, 0, &mut ar) }, OwtStatus::NullPointer);
}
