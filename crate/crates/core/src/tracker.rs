//! Online tracking-by-detection with a Kalman motion model, gated appearance
//! matching and a final IoU association, plus CLEAR-MOT identity switches.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{build_cost, hungarian, iou_cost, AssocWeights, CostMatrix, TrackView, INFEASIBLE};
use crate::detset::{Detection, DetectionSet, Embedding, GtAnnotation, ImageId, VideoId};
use crate::filters::{self, FilterError, FilterPolicy};
use crate::geometry::{box_iou, BBox, RleMask};
use crate::kalman::{to_measurement, KalmanError, KalmanFilter, KalmanState};

/// IoU required for a prediction to count as covering a ground-truth box when
/// counting identity switches.
pub const ID_SWITCH_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("frame {got} does not follow frame {last}")]
    FrameOrder { last: u64, got: u64 },
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("video {0} has no frames")]
    EmptyVideo(VideoId),
    #[error("unknown video {0}")]
    UnknownVideo(VideoId),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub frame_id: u64,
    pub image_id: ImageId,
    pub bbox: BBox,
    pub mask: Option<RleMask>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub status: TrackStatus,
    pub state: KalmanState,
    gallery: Vec<Embedding>,
    /// Matched frames since creation (consecutive, since a tentative miss deletes).
    pub hits: u32,
    pub time_since_update: u32,
    /// Emissions while confirmed.
    pub history: Vec<HistoryEntry>,
}

impl Track {
    pub fn gallery(&self) -> &[Embedding] {
        &self.gallery
    }

    /// Mean score over the emitted history; 0 for an empty history.
    pub fn mean_score(&self) -> f64 {
        if self.history.is_empty() {
            return 0.0;
        }
        self.history.iter().map(|h| h.score).sum::<f64>() / self.history.len() as f64
    }

    fn add_embedding(&mut self, e: &Embedding, budget: usize) {
        if budget == 0 {
            return;
        }
        self.gallery.push(e.clone());
        if self.gallery.len() > budget {
            let excess = self.gallery.len() - budget;
            self.gallery.drain(..excess);
        }
    }
}

impl TrackView for Track {
    fn kalman_state(&self) -> &KalmanState {
        &self.state
    }

    fn gallery(&self) -> &[Embedding] {
        &self.gallery
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// NMS IoU threshold applied to incoming detections.
    pub nms_iou: f64,
    /// Detections scoring below this are dropped before association.
    pub score_thresh: f64,
    /// Optional extra filter applied after the score threshold.
    pub policy: Option<FilterPolicy>,
    /// Consecutive matches before a track is confirmed.
    pub n_init: u32,
    /// Frames a confirmed track survives without a match.
    pub max_age: u32,
    /// Embeddings kept per track.
    pub gallery_budget: usize,
    pub assoc: AssocWeights,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            nms_iou: 1.0,
            score_thresh: 0.8,
            policy: None,
            n_init: 3,
            max_age: 30,
            gallery_budget: 100,
            assoc: AssocWeights::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.n_init < 1 {
            return Err(TrackerError::Config("n_init must be >= 1".into()));
        }
        if self.max_age < 1 {
            return Err(TrackerError::Config("max_age must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(TrackerError::Config("nms_iou must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return Err(TrackerError::Config("score_thresh must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.assoc.lambda) {
            return Err(TrackerError::Config("lambda must lie in [0, 1]".into()));
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        Ok(())
    }
}

/// One tracker per video sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    kf: KalmanFilter,
    tracks: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Tracker {
            config,
            kf: KalmanFilter::default(),
            tracks: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live (tentative or confirmed) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn prefilter(&self, dets: &[Detection]) -> Vec<Detection> {
        let mut kept = filters::filter_threshold(dets, self.config.score_thresh);
        if let Some(p) = &self.config.policy {
            kept = filters::pseudo_label(&kept, p);
        }
        kept = filters::nms(&kept, self.config.nms_iou);
        // boxes without area cannot be turned into measurements
        kept.retain(|d| d.bbox.w > 0.0 && d.bbox.h > 0.0);
        kept
    }

    /// Process one frame and return `(track_id, detection)` for every confirmed
    /// track matched on this frame, ordered by track id.
    pub fn step(
        &mut self,
        frame_id: u64,
        detections: &[Detection],
    ) -> Result<Vec<(u64, Detection)>, TrackerError> {
        if let Some(last) = self.last_frame {
            if frame_id <= last {
                return Err(TrackerError::FrameOrder {
                    last,
                    got: frame_id,
                });
            }
        }
        self.last_frame = Some(frame_id);
        let dets = self.prefilter(detections);

        for t in &mut self.tracks {
            t.state = self.kf.predict(&t.state);
            t.time_since_update += 1;
        }

        let (matches, unmatched_tracks, unmatched_dets) = self.associate(&dets);

        let mut emitted = Vec::new();
        for (ti, di) in matches {
            let d = &dets[di];
            let budget = self.config.gallery_budget;
            let n_init = self.config.n_init;
            let t = &mut self.tracks[ti];
            t.state = self.kf.update(&t.state, &to_measurement(&d.bbox)?)?;
            t.hits += 1;
            t.time_since_update = 0;
            if let Some(e) = &d.embedding {
                t.add_embedding(e, budget);
            }
            if t.status == TrackStatus::Tentative && t.hits >= n_init {
                t.status = TrackStatus::Confirmed;
            }
            if t.status == TrackStatus::Confirmed {
                t.history.push(HistoryEntry {
                    frame_id,
                    image_id: d.image_id,
                    bbox: d.bbox,
                    mask: d.mask.clone(),
                    score: d.score,
                });
                let mut out = d.clone();
                out.track_id = Some(t.track_id);
                emitted.push((t.track_id, out));
            }
        }
        for ti in unmatched_tracks {
            let t = &mut self.tracks[ti];
            if t.status == TrackStatus::Tentative || t.time_since_update > self.config.max_age {
                t.status = TrackStatus::Deleted;
            }
        }
        for di in unmatched_dets {
            if let Some(e) = self.initiate(frame_id, &dets[di])? {
                emitted.push(e);
            }
        }

        let (dead, live): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.tracks)
            .into_iter()
            .partition(|t| t.status == TrackStatus::Deleted);
        self.tracks = live;
        self.finished.extend(dead);

        emitted.sort_by_key(|(id, _)| *id);
        Ok(emitted)
    }

    fn initiate(
        &mut self,
        frame_id: u64,
        d: &Detection,
    ) -> Result<Option<(u64, Detection)>, TrackerError> {
        let mut t = Track {
            track_id: self.next_id,
            status: if self.config.n_init <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            },
            state: self.kf.initiate(&to_measurement(&d.bbox)?),
            gallery: Vec::new(),
            hits: 1,
            time_since_update: 0,
            history: Vec::new(),
        };
        if let Some(e) = &d.embedding {
            t.add_embedding(e, self.config.gallery_budget);
        }
        let mut emitted = None;
        if t.status == TrackStatus::Confirmed {
            t.history.push(HistoryEntry {
                frame_id,
                image_id: d.image_id,
                bbox: d.bbox,
                mask: d.mask.clone(),
                score: d.score,
            });
            let mut out = d.clone();
            out.track_id = Some(t.track_id);
            emitted = Some((t.track_id, out));
        }
        self.next_id += 1;
        self.tracks.push(t);
        Ok(emitted)
    }

    /// Matching cascade over confirmed tracks by staleness, then IoU matching of
    /// tentative tracks and tracks missed on exactly the previous frame.
    fn associate(&self, dets: &[Detection]) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
        let cfg = &self.config;
        let mut matches = Vec::new();
        let mut free_dets: Vec<usize> = (0..dets.len()).collect();
        let confirmed: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].status == TrackStatus::Confirmed)
            .collect();
        let unconfirmed: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].status != TrackStatus::Confirmed)
            .collect();

        let mut matched_track = vec![false; self.tracks.len()];
        for level in 0..cfg.max_age {
            if free_dets.is_empty() {
                break;
            }
            let level_tracks: Vec<usize> = confirmed
                .iter()
                .copied()
                .filter(|&i| self.tracks[i].time_since_update == level + 1)
                .collect();
            if level_tracks.is_empty() {
                continue;
            }
            let trefs: Vec<&Track> = level_tracks.iter().map(|&i| &self.tracks[i]).collect();
            let drefs: Vec<&Detection> = free_dets.iter().map(|&i| &dets[i]).collect();
            let cost = build_cost(&self.kf, &trefs, &drefs, &cfg.assoc);
            let used = self.apply(&cost, &level_tracks, &free_dets, &mut matches, &mut matched_track);
            free_dets.retain(|d| !used.contains(d));
        }

        let mut candidates = unconfirmed;
        let mut unmatched = Vec::new();
        for &i in &confirmed {
            if matched_track[i] {
                continue;
            }
            if self.tracks[i].time_since_update == 1 {
                candidates.push(i);
            } else {
                unmatched.push(i);
            }
        }
        candidates.sort_unstable();
        if !candidates.is_empty() && !free_dets.is_empty() {
            let trefs: Vec<&Track> = candidates.iter().map(|&i| &self.tracks[i]).collect();
            let drefs: Vec<&Detection> = free_dets.iter().map(|&i| &dets[i]).collect();
            let cost = iou_cost(&trefs, &drefs, cfg.assoc.max_iou_cost);
            let used = self.apply(&cost, &candidates, &free_dets, &mut matches, &mut matched_track);
            free_dets.retain(|d| !used.contains(d));
        }
        unmatched.extend(candidates.into_iter().filter(|&i| !matched_track[i]));
        unmatched.sort_unstable();
        matches.sort_unstable();
        (matches, unmatched, free_dets)
    }

    fn apply(
        &self,
        cost: &CostMatrix,
        rows: &[usize],
        cols: &[usize],
        matches: &mut Vec<(usize, usize)>,
        matched_track: &mut [bool],
    ) -> Vec<usize> {
        let a = hungarian(cost);
        let mut used = Vec::new();
        for (r, c) in a.matches {
            matches.push((rows[r], cols[c]));
            matched_track[rows[r]] = true;
            used.push(cols[c]);
        }
        used
    }

    /// End the sequence: every track that emitted at least once, by track id.
    pub fn finish(mut self) -> Vec<Track> {
        let mut all = std::mem::take(&mut self.finished);
        all.append(&mut self.tracks);
        all.retain(|t| !t.history.is_empty());
        all.sort_by_key(|t| t.track_id);
        all
    }
}

/// Run a fresh tracker over one video of `set`, frame by frame in video order.
pub fn run_sequence(
    config: &TrackerConfig,
    set: &DetectionSet,
    video_id: VideoId,
) -> Result<Vec<Track>, TrackerError> {
    let video = set
        .table
        .video(video_id)
        .ok_or(TrackerError::UnknownVideo(video_id))?;
    if video.frames.is_empty() {
        return Err(TrackerError::EmptyVideo(video_id));
    }
    let mut tracker = Tracker::new(*config)?;
    for (frame, &image_id) in video.frames.iter().enumerate() {
        tracker.step(frame as u64, set.image(image_id))?;
    }
    Ok(tracker.finish())
}

/// Track every video of `set`, in parallel on the current rayon pool. Output
/// is keyed (and therefore ordered) by video id.
pub fn run_all(
    config: &TrackerConfig,
    set: &DetectionSet,
) -> Result<BTreeMap<VideoId, Vec<Track>>, TrackerError> {
    use rayon::prelude::*;
    set.table
        .videos
        .par_iter()
        .map(|v| run_sequence(config, set, v.id).map(|t| (v.id, t)))
        .collect()
}

/// Tracker output as a result set with `track_id` stamped on every record.
pub fn tracks_to_results(set_table: &crate::detset::ImageTable, tracks: &BTreeMap<VideoId, Vec<Track>>) -> DetectionSet {
    let mut out = DetectionSet::new(set_table.clone());
    for ts in tracks.values() {
        for t in ts {
            for h in &t.history {
                out.push(Detection {
                    frame_id: h.frame_id,
                    image_id: h.image_id,
                    bbox: h.bbox,
                    score: h.score,
                    category_id: crate::detset::AGNOSTIC_CATEGORY,
                    mask: h.mask.clone(),
                    embedding: None,
                    track_id: Some(t.track_id),
                });
            }
        }
    }
    // canonical: within an image, by track id
    out.map_images(|d| {
        let mut v = d.to_vec();
        v.sort_by_key(|x| x.track_id);
        v
    })
}

/// CLEAR-MOT identity switches over the ordered `frames` of one video.
///
/// On each frame ground truth and predictions are matched one-to-one by the
/// Hungarian method on `1 - IoU`, admitting only pairs with IoU >= 0.5. A
/// ground-truth instance whose matched track id differs from the id it was last
/// matched to adds one switch. Frames without a match do not reset the memory.
pub fn count_id_switches(tracks: &[Track], gt: &[GtAnnotation], frames: &[ImageId]) -> usize {
    let mut preds: HashMap<ImageId, Vec<(u64, BBox)>> = HashMap::new();
    for t in tracks {
        for h in &t.history {
            preds.entry(h.image_id).or_default().push((t.track_id, h.bbox));
        }
    }
    let mut truth: HashMap<ImageId, Vec<&GtAnnotation>> = HashMap::new();
    for a in gt {
        truth.entry(a.image_id).or_default().push(a);
    }

    let mut last: HashMap<(Option<VideoId>, u64), u64> = HashMap::new();
    let mut switches = 0;
    for image in frames {
        let (Some(g), Some(p)) = (truth.get(image), preds.get(image)) else {
            continue;
        };
        let mut cost = vec![INFEASIBLE; g.len() * p.len()];
        for (i, a) in g.iter().enumerate() {
            for (j, (_, b)) in p.iter().enumerate() {
                let iou = box_iou(&a.bbox, b);
                if iou >= ID_SWITCH_IOU {
                    cost[i * p.len() + j] = 1.0 - iou;
                }
            }
        }
        let cost = CostMatrix::new(g.len(), p.len(), cost).expect("costs are valid");
        for (i, j) in hungarian(&cost).matches {
            let key = (g[i].video_id, g[i].instance_id);
            let id = p[j].0;
            if let Some(prev) = last.insert(key, id) {
                if prev != id {
                    switches += 1;
                }
            }
        }
    }
    switches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(image: u64, x: f64, y: f64) -> Detection {
        Detection::new(image, BBox::new(x, y, 20.0, 40.0).unwrap(), 1.0)
    }

    #[test]
    fn first_frame_is_tentative() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let out = t
            .step(1, &[det(1, 0., 0.), det(1, 100., 0.), det(1, 200., 0.)])
            .unwrap();
        assert!(out.is_empty());
        assert_eq!(t.tracks().len(), 3);
        assert!(t.tracks().iter().all(|x| x.status == TrackStatus::Tentative));
    }

    #[test]
    fn stationary_object_confirms_at_n_init() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        for frame in 1..=6u64 {
            let out = t.step(frame, &[det(frame, 50., 50.)]).unwrap();
            if frame < 3 {
                assert!(out.is_empty(), "frame {frame}");
            } else {
                assert_eq!(out.len(), 1, "frame {frame}");
                assert_eq!(out[0].0, 1);
                assert_eq!(out[0].1.track_id, Some(1));
            }
        }
        let tracks = t.finish();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].history.len(), 4);
        assert_eq!(tracks[0].history[0].frame_id, 3);
    }

    #[test]
    fn long_absence_yields_new_id() {
        let cfg = TrackerConfig {
            max_age: 5,
            ..TrackerConfig::default()
        };
        let mut t = Tracker::new(cfg).unwrap();
        let mut frame = 0;
        for _ in 0..4 {
            frame += 1;
            t.step(frame, &[det(frame, 50., 50.)]).unwrap();
        }
        for _ in 0..6 {
            frame += 1;
            t.step(frame, &[]).unwrap();
        }
        assert!(t.tracks().is_empty());
        let mut ids = Vec::new();
        for _ in 0..4 {
            frame += 1;
            ids.extend(t.step(frame, &[det(frame, 50., 50.)]).unwrap().into_iter().map(|x| x.0));
        }
        assert_eq!(ids, vec![2, 2]);
        let tracks = t.finish();
        assert_eq!(tracks.iter().map(|x| x.track_id).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn short_absence_keeps_id() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let mut ids = Vec::new();
        for frame in 1..=20u64 {
            let dets = if (8..12).contains(&frame) { vec![] } else { vec![det(frame, 50. + frame as f64, 50.)] };
            ids.extend(t.step(frame, &dets).unwrap().into_iter().map(|x| x.0));
        }
        assert!(ids.iter().all(|&i| i == 1));
        assert_eq!(ids.len(), 5 + 9);
    }

    #[test]
    fn frame_order_enforced() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(5, &[]).unwrap();
        assert_eq!(t.step(5, &[]), Err(TrackerError::FrameOrder { last: 5, got: 5 }));
        assert!(Tracker::new(TrackerConfig { n_init: 0, ..Default::default() }).is_err());
        assert!(Tracker::new(TrackerConfig { max_age: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn low_scores_and_duplicates_are_filtered() {
        let cfg = TrackerConfig { nms_iou: 0.5, ..Default::default() };
        let mut t = Tracker::new(cfg).unwrap();
        let mut low = det(1, 0., 0.);
        low.score = 0.1;
        let dup = det(1, 300., 0.);
        t.step(1, &[low, dup.clone(), dup]).unwrap();
        assert_eq!(t.tracks().len(), 1);
    }

    fn gt(image: u64, instance: u64, x: f64) -> GtAnnotation {
        GtAnnotation {
            id: image * 100 + instance,
            image_id: image,
            instance_id: instance,
            video_id: Some(1),
            bbox: BBox::new(x, 0., 20., 40.).unwrap(),
            category_id: 1,
            mask: None,
        }
    }

    fn track(id: u64, frames: std::ops::RangeInclusive<u64>, x: f64) -> Track {
        let kf = KalmanFilter::default();
        let b = BBox::new(x, 0., 20., 40.).unwrap();
        Track {
            track_id: id,
            status: TrackStatus::Deleted,
            state: kf.initiate(&to_measurement(&b).unwrap()),
            gallery: vec![],
            hits: 1,
            time_since_update: 0,
            history: frames
                .map(|f| HistoryEntry { frame_id: f, image_id: f, bbox: b, mask: None, score: 1.0 })
                .collect(),
        }
    }

    #[test]
    fn id_switch_counting() {
        let frames: Vec<u64> = (1..=10).collect();
        let truth: Vec<GtAnnotation> = frames
            .iter()
            .flat_map(|&f| [gt(f, 1, 0.), gt(f, 2, 100.)])
            .collect();
        let relabelled = vec![track(7, 1..=10, 0.), track(9, 1..=10, 100.)];
        assert_eq!(count_id_switches(&relabelled, &truth, &frames), 0);
        let split = vec![track(1, 1..=5, 0.), track(2, 6..=10, 0.), track(3, 1..=10, 100.)];
        assert_eq!(count_id_switches(&split, &truth, &frames), 1);
        assert_eq!(count_id_switches(&[], &truth, &frames), 0);
    }
}
