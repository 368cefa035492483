//! C ABI over the `owtrack` library.
//!
//! Every fallible function returns an [`OwtStatus`]; on failure a message for
//! the calling thread is available from [`owt_last_error_message`]. Trackers
//! are opaque handles created by [`owt_tracker_new`] and released with
//! [`owt_tracker_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use owtrack::assoc::{hungarian, AssocWeights, CostMatrix};
use owtrack::detset::{load_annotations, load_results, Detection, Embedding};
use owtrack::eval::{ar_at_k, pred_tracks_from_results, track_ar, EvalConfig};
use owtrack::filters::{ema_update, filter_topk, nms, ParamVector};
use owtrack::geometry::{box_iou, BBox};
use owtrack::tracker::{Tracker, TrackerConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Tracker = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Box as top-left corner plus size, in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwtBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// One detection handed to [`owt_tracker_step`]. `embedding` may be NULL when
/// `embedding_len` is 0; a non-zero embedding is normalised to unit length.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OwtDetection {
    pub bbox: OwtBox,
    pub score: f64,
    pub embedding: *const f64,
    pub embedding_len: usize,
}

/// A confirmed track matched on the last processed frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwtEmission {
    pub track_id: u64,
    /// Index of the detection in the array passed to the step call.
    pub detection_index: usize,
    pub bbox: OwtBox,
    pub score: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwtTrackerConfig {
    pub nms_iou: f64,
    pub score_thresh: f64,
    pub n_init: u32,
    pub max_age: u32,
    pub gallery_budget: usize,
    pub lambda: f64,
    pub gate_chi2: f64,
    pub max_appearance: f64,
    pub max_iou_cost: f64,
}

impl From<&TrackerConfig> for OwtTrackerConfig {
    fn from(c: &TrackerConfig) -> Self {
        OwtTrackerConfig {
            nms_iou: c.nms_iou,
            score_thresh: c.score_thresh,
            n_init: c.n_init,
            max_age: c.max_age,
            gallery_budget: c.gallery_budget,
            lambda: c.assoc.lambda,
            gate_chi2: c.assoc.gate_chi2,
            max_appearance: c.assoc.max_appearance,
            max_iou_cost: c.assoc.max_iou_cost,
        }
    }
}

impl From<&OwtTrackerConfig> for TrackerConfig {
    fn from(c: &OwtTrackerConfig) -> Self {
        TrackerConfig {
            nms_iou: c.nms_iou,
            score_thresh: c.score_thresh,
            policy: None,
            n_init: c.n_init,
            max_age: c.max_age,
            gallery_budget: c.gallery_budget,
            assoc: AssocWeights {
                lambda: c.lambda,
                gate_chi2: c.gate_chi2,
                max_appearance: c.max_appearance,
                max_iou_cost: c.max_iou_cost,
            },
        }
    }
}

/// Opaque tracker handle.
pub struct OwtTracker {
    tracker: Tracker,
    emissions: Vec<OwtEmission>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OwtStatus, String);

fn fail<T>(status: OwtStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OwtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OwtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OwtStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be NULL (only when `len` is 0) or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(OwtStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// As [`slice`], for writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return fail(OwtStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: non-null pointers are required by every caller's contract to be writable
    unsafe { ptr.as_mut() }.ok_or_else(|| Failure(OwtStatus::NullPointer, format!("{what} is NULL")))
}

fn to_bbox(b: &OwtBox) -> Result<BBox, Failure> {
    BBox::new(b.x, b.y, b.w, b.h).map_err(|e| Failure(OwtStatus::InvalidArgument, e.to_string()))
}

fn from_bbox(b: &BBox) -> OwtBox {
    OwtBox { x: b.x, y: b.y, w: b.w, h: b.h }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn owt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn owt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// IoU of two boxes.
///
/// # Safety
/// `a` and `b` must point to readable boxes, `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn owt_box_iou(a: *const OwtBox, b: *const OwtBox, out: *mut f64) -> OwtStatus {
    guard(|| {
        let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
            return fail(OwtStatus::NullPointer, "box is NULL");
        };
        *out_ref(out, "out")? = box_iou(&to_bbox(a)?, &to_bbox(b)?);
        Ok(())
    })
}

/// Minimum-cost assignment on a row-major `rows x cols` matrix. Infinite cells
/// are infeasible. `row_to_col[r]` receives the matched column or -1.
///
/// # Safety
/// `costs` must hold `rows * cols` doubles and `row_to_col` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn owt_hungarian(
    costs: *const f64,
    rows: usize,
    cols: usize,
    row_to_col: *mut i64,
) -> OwtStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(OwtStatus::InvalidArgument, "matrix size overflows".into()))?;
        let data = slice(costs, n, "costs")?.to_vec();
        let out = slice_mut(row_to_col, rows, "row_to_col")?;
        let m = CostMatrix::new(rows, cols, data).map_err(|e| Failure(OwtStatus::InvalidArgument, e.to_string()))?;
        out.fill(-1);
        for (r, c) in hungarian(&m).matches {
            out[r] = c as i64;
        }
        Ok(())
    })
}

/// Indices of the `k` highest scores, best first, ties by lower index.
/// `out_indices` needs room for `min(k, n)` entries; the count is written to
/// `out_len`.
///
/// # Safety
/// `scores` must hold `n` doubles; `out_indices` room for `min(k, n)` entries.
#[no_mangle]
pub unsafe extern "C" fn owt_topk(
    scores: *const f64,
    n: usize,
    k: usize,
    out_indices: *mut usize,
    out_len: *mut usize,
) -> OwtStatus {
    guard(|| {
        if k == 0 {
            return fail(OwtStatus::InvalidArgument, "k must be >= 1");
        }
        let scores = slice(scores, n, "scores")?;
        let out_len = out_ref(out_len, "out_len")?;
        let dets = indexed_detections(&[], scores)?;
        let kept = filter_topk(&dets, k);
        let out = slice_mut(out_indices, kept.len(), "out_indices")?;
        for (slot, d) in out.iter_mut().zip(&kept) {
            *slot = d.image_id as usize;
        }
        *out_len = kept.len();
        Ok(())
    })
}

/// Greedy NMS. Indices of kept boxes, best first, go to `out_indices` (room
/// for `n`); the count to `out_len`.
///
/// # Safety
/// `boxes` and `scores` must hold `n` entries, `out_indices` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn owt_nms(
    boxes: *const OwtBox,
    scores: *const f64,
    n: usize,
    iou_thresh: f64,
    out_indices: *mut usize,
    out_len: *mut usize,
) -> OwtStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&iou_thresh) {
            return fail(OwtStatus::InvalidArgument, format!("iou_thresh {iou_thresh} outside [0, 1]"));
        }
        let boxes = slice(boxes, n, "boxes")?;
        let scores = slice(scores, n, "scores")?;
        let out = slice_mut(out_indices, n, "out_indices")?;
        let out_len = out_ref(out_len, "out_len")?;
        let dets = indexed_detections(boxes, scores)?;
        let kept = nms(&dets, iou_thresh);
        for (slot, d) in out.iter_mut().zip(&kept) {
            *slot = d.image_id as usize;
        }
        *out_len = kept.len();
        Ok(())
    })
}

/// Detections whose `image_id` carries their input index.
fn indexed_detections(boxes: &[OwtBox], scores: &[f64]) -> Result<Vec<Detection>, Failure> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if !s.is_finite() {
                return fail(OwtStatus::InvalidArgument, format!("score {i} is not finite"));
            }
            let b = match boxes.get(i) {
                Some(b) => to_bbox(b)?,
                None => BBox::default(),
            };
            Ok(Detection::new(i as u64, b, s))
        })
        .collect()
}

/// In place: `teacher = momentum * teacher + (1 - momentum) * student`.
///
/// # Safety
/// `teacher` and `student` must each hold `n` doubles and not overlap.
#[no_mangle]
pub unsafe extern "C" fn owt_ema_update(teacher: *mut f64, student: *const f64, n: usize, momentum: f64) -> OwtStatus {
    guard(|| {
        let t = slice_mut(teacher, n, "teacher")?;
        let s = slice(student, n, "student")?;
        let invalid = |e: owtrack::filters::FilterError| Failure(OwtStatus::InvalidArgument, e.to_string());
        let tv = ParamVector::new(t.to_vec()).map_err(invalid)?;
        let sv = ParamVector::new(s.to_vec()).map_err(invalid)?;
        let out = ema_update(&tv, &sv, momentum).map_err(invalid)?;
        t.copy_from_slice(out.as_slice());
        Ok(())
    })
}

/// Default tracker settings.
#[no_mangle]
pub extern "C" fn owt_tracker_config_default() -> OwtTrackerConfig {
    OwtTrackerConfig::from(&TrackerConfig::default())
}

/// Create a tracker. On success `*out` owns a handle for [`owt_tracker_free`].
///
/// # Safety
/// `config` must be readable (NULL selects the defaults); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn owt_tracker_new(config: *const OwtTrackerConfig, out: *mut *mut OwtTracker) -> OwtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = config.as_ref().map_or_else(TrackerConfig::default, TrackerConfig::from);
        let tracker = Tracker::new(cfg).map_err(|e| Failure(OwtStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(OwtTracker { tracker, emissions: Vec::new() }));
        Ok(())
    })
}

/// Feed one frame. Frame ids must increase strictly. Emissions of this frame
/// replace those of the previous call.
///
/// # Safety
/// `tracker` must come from [`owt_tracker_new`]; `dets` must hold `n` entries
/// whose embedding pointers are valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn owt_tracker_step(
    tracker: *mut OwtTracker,
    frame_id: u64,
    dets: *const OwtDetection,
    n: usize,
) -> OwtStatus {
    guard(|| {
        let handle = out_ref(tracker, "tracker")?;
        let raw = slice(dets, n, "dets")?;
        let mut owned = Vec::with_capacity(n);
        for (i, d) in raw.iter().enumerate() {
            let mut det = Detection::new(i as u64, to_bbox(&d.bbox)?, d.score);
            det.frame_id = frame_id;
            if d.embedding_len > 0 {
                let values = slice(d.embedding, d.embedding_len, "embedding")?.to_vec();
                det.embedding = Some(Embedding::normalized(values).ok_or_else(|| {
                    Failure(OwtStatus::InvalidArgument, format!("embedding of detection {i} has zero or non-finite norm"))
                })?);
            }
            owned.push(det);
        }
        handle.emissions.clear();
        let emitted = handle
            .tracker
            .step(frame_id, &owned)
            .map_err(|e| Failure(OwtStatus::Tracker, e.to_string()))?;
        handle.emissions = emitted
            .iter()
            .map(|(id, d)| OwtEmission {
                track_id: *id,
                detection_index: d.image_id as usize,
                bbox: from_bbox(&d.bbox),
                score: d.score,
            })
            .collect();
        Ok(())
    })
}

/// Number of emissions from the last step, or 0 for a NULL handle.
///
/// # Safety
/// `tracker` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn owt_tracker_emission_count(tracker: *const OwtTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.emissions.len())
}

/// Copy the last step's emissions (ordered by track id) into `out`.
///
/// # Safety
/// `tracker` must be a live handle, `out` writable for `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn owt_tracker_emissions(
    tracker: *const OwtTracker,
    out: *mut OwtEmission,
    capacity: usize,
    out_len: *mut usize,
) -> OwtStatus {
    guard(|| {
        let Some(handle) = tracker.as_ref() else {
            return fail(OwtStatus::NullPointer, "tracker is NULL");
        };
        let out_len = out_ref(out_len, "out_len")?;
        *out_len = handle.emissions.len();
        if capacity < handle.emissions.len() {
            return fail(
                OwtStatus::BufferTooSmall,
                format!("need room for {} emissions, got {capacity}", handle.emissions.len()),
            );
        }
        let dst = slice_mut(out, handle.emissions.len(), "out")?;
        dst.copy_from_slice(&handle.emissions);
        Ok(())
    })
}

/// Release a tracker. NULL is ignored.
///
/// # Safety
/// `tracker` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn owt_tracker_free(tracker: *mut OwtTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// AR@`max_dets` of a results file against an annotation file, with default
/// thresholds. `track_mode` non-zero evaluates tracks (records need
/// `track_id`), zero evaluates frames.
///
/// # Safety
/// Paths must be NUL-terminated UTF-8 strings; `ar_out` writable.
#[no_mangle]
pub unsafe extern "C" fn owt_evaluate_files(
    gt_path: *const c_char,
    pred_path: *const c_char,
    max_dets: usize,
    track_mode: i32,
    ar_out: *mut f64,
) -> OwtStatus {
    guard(|| {
        let path = |p: *const c_char, what: &str| -> Result<String, Failure> {
            if p.is_null() {
                return fail(OwtStatus::NullPointer, format!("{what} is NULL"));
            }
            CStr::from_ptr(p)
                .to_str()
                .map(str::to_owned)
                .map_err(|_| Failure(OwtStatus::InvalidArgument, format!("{what} is not UTF-8")))
        };
        let (gt_path, pred_path) = (path(gt_path, "gt_path")?, path(pred_path, "pred_path")?);
        let ar_out = out_ref(ar_out, "ar_out")?;
        let cfg = EvalConfig { max_dets, ..EvalConfig::default() };
        let format_error = |e: owtrack::detset::FormatError| {
            let status = match e {
                owtrack::detset::FormatError::Io { .. } => OwtStatus::Io,
                _ => OwtStatus::Format,
            };
            Failure(status, e.to_string())
        };
        let gt = load_annotations(Path::new(&gt_path)).map_err(format_error)?;
        let preds = load_results(Path::new(&pred_path), Some(&gt.table)).map_err(format_error)?;
        let eval_error = |e: owtrack::eval::EvalError| {
            let status = match e {
                owtrack::eval::EvalError::Config(_) => OwtStatus::InvalidArgument,
                _ => OwtStatus::Format,
            };
            Failure(status, e.to_string())
        };
        let result = if track_mode != 0 {
            let tracks = pred_tracks_from_results(&preds, &gt.table).map_err(eval_error)?;
            track_ar(&tracks, &gt, &cfg).map_err(eval_error)?
        } else {
            ar_at_k(&preds, &gt, &cfg).map_err(eval_error)?
        };
        *ar_out = result.ar;
        Ok(())
    })
}
