//! Class-agnostic Average Recall.
//!
//! For every IoU threshold the top `max_dets` predictions of an image (or the
//! top `max_dets` tracks of a video) are matched greedily in descending score
//! order, each to the still-unmatched ground truth it overlaps most. A pair is
//! admissible only when its IoU is strictly greater than the threshold. Recall
//! at a threshold is matched ground truth over all ground truth, pooled across
//! images; AR is the mean recall over thresholds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detset::{
    class_agnostic_merge, Detection, DetectionSet, GtAnnotation, GtDataset, ImageId, ImageTable,
    VideoId,
};
use crate::geometry::{box_iou, mask_intersection_union, mask_iou, BBox, RleMask};
use crate::tracker::Track;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction refers to unknown image_id {0}")]
    UnknownImage(ImageId),
    #[error("mask IoU requested but {0} has no mask")]
    MissingMask(String),
    #[error("ground truth has no video table")]
    MissingVideoTable,
    #[error("image {0} does not belong to any video")]
    NotInVideo(ImageId),
    #[error("result record on image {0} has no track_id")]
    MissingTrackId(ImageId),
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    #[default]
    Box,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub max_dets: usize,
    pub iou_thresholds: Vec<f64>,
    pub iou_kind: IouKind,
    pub class_agnostic: bool,
}

/// 0.50, 0.55, ..., 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_dets: 100,
            iou_thresholds: default_iou_thresholds(),
            iou_kind: IouKind::Box,
            class_agnostic: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.max_dets == 0 {
            return Err(EvalError::Config("max_dets must be >= 1".into()));
        }
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::Config("at least one IoU threshold is required".into()));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(EvalError::Config("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Config("IoU thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Ground-truth and matched counts of one image (frame AR) or video (track AR).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCounts {
    pub id: u64,
    pub num_gt: usize,
    /// Matched ground truth per threshold.
    pub matched: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub max_dets: usize,
    pub ar: f64,
    /// `(threshold, recall)`.
    pub recall_per_threshold: Vec<(f64, f64)>,
    pub per_unit: Vec<UnitCounts>,
}

impl EvalResult {
    fn from_units(cfg: &EvalConfig, per_unit: Vec<UnitCounts>) -> Self {
        let total: usize = per_unit.iter().map(|u| u.num_gt).sum();
        let recall_per_threshold: Vec<(f64, f64)> = cfg
            .iou_thresholds
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                let matched: usize = per_unit.iter().map(|u| u.matched[ti]).sum();
                let r = if total == 0 { 0.0 } else { matched as f64 / total as f64 };
                (t, r)
            })
            .collect();
        let ar = recall_per_threshold.iter().map(|(_, r)| r).sum::<f64>()
            / recall_per_threshold.len() as f64;
        EvalResult {
            max_dets: cfg.max_dets,
            ar,
            recall_per_threshold,
            per_unit,
        }
    }

    pub fn total_gt(&self) -> usize {
        self.per_unit.iter().map(|u| u.num_gt).sum()
    }
}

/// Greedy matching for every threshold. `ious[p][g]` holds the IoU of the p-th
/// prediction (already in descending score order) with the g-th ground truth,
/// `None` where the pair may never match.
fn greedy_counts(ious: &[Vec<Option<f64>>], num_gt: usize, thresholds: &[f64]) -> Vec<usize> {
    thresholds
        .iter()
        .map(|&t| {
            let mut used = vec![false; num_gt];
            let mut matched = 0;
            for row in ious {
                let mut best: Option<(usize, f64)> = None;
                for (g, iou) in row.iter().enumerate() {
                    let Some(iou) = *iou else { continue };
                    if used[g] || iou <= t {
                        continue;
                    }
                    if best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                if let Some((g, _)) = best {
                    used[g] = true;
                    matched += 1;
                }
            }
            matched
        })
        .collect()
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

fn pair_iou(
    kind: IouKind,
    pb: &BBox,
    pm: Option<&RleMask>,
    gb: &BBox,
    gm: Option<&RleMask>,
) -> Result<f64, EvalError> {
    match kind {
        IouKind::Box => Ok(box_iou(pb, gb)),
        IouKind::Mask => {
            let (Some(a), Some(b)) = (pm, gm) else {
                unreachable!("masks checked before matching")
            };
            Ok(mask_iou(a, b)?)
        }
    }
}

/// Frame-level AR@K.
pub fn ar_at_k(preds: &DetectionSet, gt: &GtDataset, cfg: &EvalConfig) -> Result<EvalResult, EvalError> {
    cfg.validate()?;
    for id in preds.image_ids() {
        if !gt.table.images.contains_key(&id) {
            return Err(EvalError::UnknownImage(id));
        }
    }
    let mut truth: BTreeMap<ImageId, Vec<GtAnnotation>> =
        gt.table.images.keys().map(|&id| (id, Vec::new())).collect();
    for a in &gt.annotations {
        truth.entry(a.image_id).or_default().push(a.clone());
    }
    if cfg.iou_kind == IouKind::Mask {
        if let Some(a) = gt.annotations.iter().find(|a| a.mask.is_none()) {
            return Err(EvalError::MissingMask(format!("annotation {}", a.id)));
        }
        if let Some(d) = preds.iter().find(|d| d.mask.is_none()) {
            return Err(EvalError::MissingMask(format!("a prediction on image {}", d.image_id)));
        }
    }

    let units: Vec<(ImageId, Vec<GtAnnotation>)> = truth.into_iter().collect();
    let per_unit = units
        .into_par_iter()
        .map(|(image_id, anns)| {
            let mut dets: Vec<Detection> = preds.image(image_id).to_vec();
            let mut anns = anns;
            if cfg.class_agnostic {
                dets = class_agnostic_merge(dets);
                anns = class_agnostic_merge(anns);
            }
            // stable: ties keep input order
            dets.sort_by(|a, b| by_score_desc(a.score, b.score));
            dets.truncate(cfg.max_dets);
            let ious = dets
                .iter()
                .map(|d| {
                    anns.iter()
                        .map(|a| {
                            if d.category_id != a.category_id {
                                return Ok(None);
                            }
                            pair_iou(cfg.iou_kind, &d.bbox, d.mask.as_ref(), &a.bbox, a.mask.as_ref())
                                .map(Some)
                        })
                        .collect::<Result<Vec<_>, EvalError>>()
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            Ok(UnitCounts {
                id: image_id,
                num_gt: anns.len(),
                matched: greedy_counts(&ious, anns.len(), &cfg.iou_thresholds),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalResult::from_units(cfg, per_unit))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub bbox: BBox,
    pub mask: Option<RleMask>,
    pub score: f64,
}

/// A predicted or ground-truth spatio-temporal tube.
#[derive(Debug, Clone, PartialEq)]
pub struct PredTrack {
    pub video_id: VideoId,
    pub track_id: u64,
    pub category_id: u32,
    pub frames: BTreeMap<ImageId, TrackFrame>,
}

impl PredTrack {
    pub fn from_track(video_id: VideoId, t: &Track) -> Self {
        PredTrack {
            video_id,
            track_id: t.track_id,
            category_id: crate::detset::AGNOSTIC_CATEGORY,
            frames: t
                .history
                .iter()
                .map(|h| {
                    (
                        h.image_id,
                        TrackFrame {
                            bbox: h.bbox,
                            mask: h.mask.clone(),
                            score: h.score,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn mean_score(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.values().map(|f| f.score).sum::<f64>() / self.frames.len() as f64
    }
}

/// Group tracker output records by `(video, track_id)`.
pub fn pred_tracks_from_results(
    set: &DetectionSet,
    table: &ImageTable,
) -> Result<Vec<PredTrack>, EvalError> {
    let lookup = table.frame_lookup();
    let mut tracks: BTreeMap<(VideoId, u64), PredTrack> = BTreeMap::new();
    for d in set.iter() {
        let tid = d.track_id.ok_or(EvalError::MissingTrackId(d.image_id))?;
        let &(vid, _) = lookup.get(&d.image_id).ok_or(EvalError::NotInVideo(d.image_id))?;
        let t = tracks.entry((vid, tid)).or_insert_with(|| PredTrack {
            video_id: vid,
            track_id: tid,
            category_id: d.category_id,
            frames: BTreeMap::new(),
        });
        t.frames.insert(
            d.image_id,
            TrackFrame {
                bbox: d.bbox,
                mask: d.mask.clone(),
                score: d.score,
            },
        );
    }
    Ok(tracks.into_values().collect())
}

/// Summed per-frame intersection over summed per-frame union. A frame covered
/// by only one side adds that side's area to the union.
pub fn spatio_temporal_iou(a: &PredTrack, b: &PredTrack, kind: IouKind) -> Result<f64, EvalError> {
    let (mut inter, mut union) = (0.0f64, 0.0f64);
    let area = |f: &TrackFrame| match kind {
        IouKind::Box => f.bbox.area(),
        IouKind::Mask => f.mask.as_ref().map_or(0.0, |m| m.area() as f64),
    };
    for (img, fa) in &a.frames {
        match b.frames.get(img) {
            Some(fb) => match kind {
                IouKind::Box => {
                    let i = fa.bbox.intersection_area(&fb.bbox);
                    inter += i;
                    union += fa.bbox.area() + fb.bbox.area() - i;
                }
                IouKind::Mask => {
                    let (Some(ma), Some(mb)) = (&fa.mask, &fb.mask) else {
                        return Err(EvalError::MissingMask(format!("track frame on image {img}")));
                    };
                    let (i, u) = mask_intersection_union(ma, mb)?;
                    inter += i as f64;
                    union += u as f64;
                }
            },
            None => union += area(fa),
        }
    }
    for (img, fb) in &b.frames {
        if !a.frames.contains_key(img) {
            union += area(fb);
        }
    }
    if union <= 0.0 {
        return Ok(match kind {
            IouKind::Box => 0.0,
            IouKind::Mask => 1.0,
        });
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

fn gt_tracks(gt: &GtDataset) -> Result<BTreeMap<VideoId, Vec<PredTrack>>, EvalError> {
    let mut by_key: BTreeMap<(VideoId, u64), PredTrack> = BTreeMap::new();
    for a in &gt.annotations {
        let vid = a.video_id.ok_or(EvalError::NotInVideo(a.image_id))?;
        by_key
            .entry((vid, a.instance_id))
            .or_insert_with(|| PredTrack {
                video_id: vid,
                track_id: a.instance_id,
                category_id: a.category_id,
                frames: BTreeMap::new(),
            })
            .frames
            .insert(
                a.image_id,
                TrackFrame {
                    bbox: a.bbox,
                    mask: a.mask.clone(),
                    score: 1.0,
                },
            );
    }
    let mut out: BTreeMap<VideoId, Vec<PredTrack>> =
        gt.table.videos.iter().map(|v| (v.id, Vec::new())).collect();
    for ((vid, _), t) in by_key {
        out.entry(vid).or_default().push(t);
    }
    Ok(out)
}

/// Video-level AR@K over spatio-temporal IoU.
pub fn track_ar(preds: &[PredTrack], gt: &GtDataset, cfg: &EvalConfig) -> Result<EvalResult, EvalError> {
    cfg.validate()?;
    if gt.table.videos.is_empty() {
        return Err(EvalError::MissingVideoTable);
    }
    let truth = gt_tracks(gt)?;
    let mut by_video: HashMap<VideoId, Vec<&PredTrack>> = HashMap::new();
    for p in preds {
        if !truth.contains_key(&p.video_id) {
            return Err(EvalError::NotInVideo(p.frames.keys().next().copied().unwrap_or(0)));
        }
        by_video.entry(p.video_id).or_default().push(p);
    }
    let units: Vec<(VideoId, &Vec<PredTrack>)> = truth.iter().map(|(&v, t)| (v, t)).collect();
    let per_unit = units
        .into_par_iter()
        .map(|(vid, gts)| {
            let mut ps: Vec<&PredTrack> = by_video.get(&vid).cloned().unwrap_or_default();
            ps.sort_by(|a, b| {
                by_score_desc(a.mean_score(), b.mean_score()).then(a.track_id.cmp(&b.track_id))
            });
            ps.truncate(cfg.max_dets);
            let ious = ps
                .iter()
                .map(|p| {
                    gts.iter()
                        .map(|g| {
                            if !cfg.class_agnostic && p.category_id != g.category_id {
                                return Ok(None);
                            }
                            spatio_temporal_iou(p, g, cfg.iou_kind).map(Some)
                        })
                        .collect::<Result<Vec<_>, EvalError>>()
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            Ok(UnitCounts {
                id: vid,
                num_gt: gts.len(),
                matched: greedy_counts(&ious, gts.len(), &cfg.iou_thresholds),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalResult::from_units(cfg, per_unit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

/// Render `(label, result)` rows. The metric column is `AR@K` with K taken from
/// the first result (100 when empty); values are percentages with one decimal.
pub fn report(results: &[(String, EvalResult)], format: ReportFormat) -> String {
    let k = results.first().map_or(100, |(_, r)| r.max_dets);
    let metric = format!("AR@{k}");
    let mut out = String::new();
    match format {
        ReportFormat::Table => {
            let width = results
                .iter()
                .map(|(l, _)| l.chars().count())
                .chain(std::iter::once("label".len()))
                .max()
                .unwrap_or(5);
            let _ = writeln!(out, "{:<width$}  {:>8}", "label", metric);
            for (label, r) in results {
                let _ = writeln!(out, "{:<width$}  {:>8.1}", label, r.ar * 100.0);
            }
        }
        ReportFormat::Csv => {
            let _ = writeln!(out, "label,{metric}");
            for (label, r) in results {
                let _ = writeln!(out, "{},{:.1}", csv_field(label), r.ar * 100.0);
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
