//! Synthetic sequences with known identities.
//!
//! Each object moves at constant velocity (optionally turning at a fixed rate)
//! inside the image, bouncing off the borders. Ground truth is the exact box
//! track; detections are derived from it by jitter, score noise, drops and
//! Poisson clutter. Every random draw comes from [`SplitMix64`] in a fixed
//! order, so a spec plus seed determines the output bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detset::{
    Category, Detection, DetectionSet, Embedding, GtAnnotation, GtDataset, ImageInfo, ImageTable,
    Video, VideoId, AGNOSTIC_CATEGORY,
};
use crate::geometry::{BBox, RleMask};
use crate::rng::SplitMix64;

/// Placement attempts per object before giving up on `min_separation`.
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid sequence spec: {0}")]
    Invalid(String),
    #[error("could not place object {object} with separation {separation} after {attempts} attempts")]
    Placement {
        object: usize,
        separation: f64,
        attempts: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceSpec {
    pub n_objects: usize,
    pub n_frames: usize,
    pub width: u32,
    pub height: u32,
    /// Speed range in px/frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Box side range in px.
    pub box_min: f64,
    pub box_max: f64,
    /// Position jitter of detections (px).
    pub jitter_sigma: f64,
    /// Detection score is `1 - |N(0, score_sigma)|`, clamped to [0, 1].
    pub score_sigma: f64,
    pub drop_rate: f64,
    /// Expected false detections per frame.
    pub clutter_rate: f64,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
    /// Heading change in radians per frame.
    pub turn_rate: f64,
    /// Minimum gap in px between any two GT boxes on every frame.
    pub min_separation: Option<f64>,
    /// Attach filled-box masks to GT and detections.
    pub masks: bool,
    pub seed: u64,
    pub video_id: VideoId,
    pub first_image_id: u64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec {
            n_objects: 5,
            n_frames: 100,
            width: 640,
            height: 480,
            speed_min: 0.5,
            speed_max: 3.0,
            box_min: 20.0,
            box_max: 60.0,
            jitter_sigma: 0.0,
            score_sigma: 0.0,
            drop_rate: 0.0,
            clutter_rate: 0.0,
            embedding_dim: 16,
            embedding_noise: 0.0,
            turn_rate: 0.0,
            min_separation: None,
            masks: false,
            seed: 0,
            video_id: 1,
            first_image_id: 1,
        }
    }
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Invalid(m.to_string()));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.n_objects == 0 {
            return bad("n_objects must be >= 1");
        }
        if self.n_frames == 0 {
            return bad("n_frames must be >= 1");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(finite_nonneg(self.speed_min) && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return bad("speed range must satisfy 0 <= speed_min <= speed_max");
        }
        if !(self.box_min > 0.0 && self.box_min <= self.box_max) {
            return bad("box range must satisfy 0 < box_min <= box_max");
        }
        if self.box_max > self.width.min(self.height) as f64 {
            return bad("box_max exceeds the image size");
        }
        if ![self.jitter_sigma, self.score_sigma, self.clutter_rate, self.embedding_noise]
            .into_iter()
            .all(finite_nonneg)
        {
            return bad("noise parameters and clutter_rate must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return bad("drop_rate must lie in [0, 1]");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be >= 1");
        }
        if !self.turn_rate.is_finite() {
            return bad("turn_rate must be finite");
        }
        if let Some(s) = self.min_separation {
            if !finite_nonneg(s) {
                return bad("min_separation must be finite and >= 0");
            }
        }
        Ok(())
    }
}

fn random_embedding(rng: &mut SplitMix64, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        if let Some(e) = Embedding::normalized(v) {
            return e;
        }
    }
}

/// Position along one axis with reflection at `0` and `limit`.
fn reflect(pos: f64, vel: f64, limit: f64) -> (f64, f64) {
    if limit <= 0.0 {
        return (0.0, vel);
    }
    let (mut p, mut v) = (pos, vel);
    // several bounces are possible only when speed exceeds the free range
    while p < 0.0 || p > limit {
        if p < 0.0 {
            p = -p;
        } else {
            p = 2.0 * limit - p;
        }
        v = -v;
    }
    (p, v)
}

/// Starting coordinate for which a straight path stays inside `[0, limit]`,
/// if any exists; otherwise uniform over the free range.
fn start_coordinate(rng: &mut SplitMix64, vel: f64, frames: usize, limit: f64, straight: bool) -> f64 {
    let travel = vel * (frames.saturating_sub(1)) as f64;
    let lo = 0.0f64.max(-travel);
    let hi = limit.min(limit - travel);
    let u = rng.uniform();
    if straight && lo <= hi {
        lo + (hi - lo) * u
    } else {
        limit * u
    }
}

fn trajectory(spec: &SequenceSpec, rng: &mut SplitMix64) -> Vec<BBox> {
    let w = rng.range(spec.box_min, spec.box_max);
    let h = rng.range(spec.box_min, spec.box_max);
    let speed = rng.range(spec.speed_min, spec.speed_max);
    let mut heading = rng.range(0.0, std::f64::consts::TAU);
    let (lx, ly) = (spec.width as f64 - w, spec.height as f64 - h);
    let straight = spec.turn_rate == 0.0;
    let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());
    let mut x = start_coordinate(rng, vx, spec.n_frames, lx, straight);
    let mut y = start_coordinate(rng, vy, spec.n_frames, ly, straight);
    let mut out = Vec::with_capacity(spec.n_frames);
    for f in 0..spec.n_frames {
        if f > 0 {
            if !straight {
                heading = vy.atan2(vx) + spec.turn_rate;
                vx = speed * heading.cos();
                vy = speed * heading.sin();
            }
            (x, vx) = reflect(x + vx, vx, lx);
            (y, vy) = reflect(y + vy, vy, ly);
        }
        let b = BBox { x, y, w, h }.clip(spec.width as f64, spec.height as f64);
        out.push(b);
    }
    out
}

/// Gap between two boxes: the larger of the horizontal and vertical gaps,
/// negative when they overlap.
fn box_gap(a: &BBox, b: &BBox) -> f64 {
    let gx = (b.x - (a.x + a.w)).max(a.x - (b.x + b.w));
    let gy = (b.y - (a.y + a.h)).max(a.y - (b.y + b.h));
    gx.max(gy)
}

fn separated(a: &[BBox], b: &[BBox], sep: f64) -> bool {
    a.iter().zip(b).all(|(p, q)| box_gap(p, q) >= sep)
}

/// One video: ground truth (with its image/video tables) and detections.
pub fn simulate(spec: &SequenceSpec) -> Result<(GtDataset, DetectionSet), SimError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);

    let mut paths: Vec<Vec<BBox>> = Vec::with_capacity(spec.n_objects);
    for k in 0..spec.n_objects {
        let mut attempts = 0;
        let path = loop {
            attempts += 1;
            let p = trajectory(spec, &mut rng);
            match spec.min_separation {
                Some(sep) if !paths.iter().all(|q| separated(&p, q, sep)) => {
                    if attempts >= MAX_PLACEMENT_ATTEMPTS {
                        return Err(SimError::Placement {
                            object: k,
                            separation: sep,
                            attempts,
                        });
                    }
                }
                _ => break p,
            }
        };
        paths.push(path);
    }
    let identities: Vec<Embedding> = (0..spec.n_objects)
        .map(|_| random_embedding(&mut rng, spec.embedding_dim))
        .collect();

    let image_ids: Vec<u64> = (0..spec.n_frames as u64).map(|f| spec.first_image_id + f).collect();
    let table = ImageTable {
        images: image_ids
            .iter()
            .map(|&id| (id, ImageInfo { id, width: spec.width, height: spec.height }))
            .collect(),
        videos: vec![Video { id: spec.video_id, frames: image_ids.clone() }],
    };
    let mask_of = |b: &BBox| {
        spec.masks
            .then(|| RleMask::from_box(b, spec.height, spec.width).expect("image size validated"))
    };

    let mut annotations = Vec::with_capacity(spec.n_objects * spec.n_frames);
    let mut dets = DetectionSet::new(table.clone());
    let (iw, ih) = (spec.width as f64, spec.height as f64);
    for (f, &image_id) in image_ids.iter().enumerate() {
        for (k, path) in paths.iter().enumerate() {
            let b = path[f];
            annotations.push(GtAnnotation {
                id: (annotations.len() + 1) as u64,
                image_id,
                instance_id: k as u64 + 1,
                video_id: Some(spec.video_id),
                bbox: b,
                category_id: AGNOSTIC_CATEGORY,
                mask: mask_of(&b),
            });

            let dropped = rng.uniform() < spec.drop_rate;
            let dx = spec.jitter_sigma * rng.normal();
            let dy = spec.jitter_sigma * rng.normal();
            let score = (1.0 - (spec.score_sigma * rng.normal()).abs()).clamp(0.0, 1.0);
            let embedding = if spec.embedding_noise > 0.0 {
                let noisy: Vec<f64> = identities[k]
                    .as_slice()
                    .iter()
                    .map(|v| v + spec.embedding_noise * rng.normal())
                    .collect();
                Embedding::normalized(noisy).unwrap_or_else(|| identities[k].clone())
            } else {
                identities[k].clone()
            };
            if dropped {
                continue;
            }
            let jb = BBox { x: b.x + dx, y: b.y + dy, ..b }.clip(iw, ih);
            if jb.area() <= 0.0 {
                continue;
            }
            let mut d = Detection::new(image_id, jb, score);
            d.frame_id = f as u64;
            d.embedding = Some(embedding);
            d.mask = mask_of(&jb);
            dets.push(d);
        }
        for _ in 0..rng.poisson(spec.clutter_rate) {
            let w = rng.range(spec.box_min, spec.box_max);
            let h = rng.range(spec.box_min, spec.box_max);
            let x = rng.range(0.0, iw - w);
            let y = rng.range(0.0, ih - h);
            let score = rng.uniform();
            let b = BBox { x, y, w, h };
            let mut d = Detection::new(image_id, b, score);
            d.frame_id = f as u64;
            d.embedding = Some(random_embedding(&mut rng, spec.embedding_dim));
            d.mask = mask_of(&b);
            dets.push(d);
        }
    }
    let gt = GtDataset {
        table,
        annotations,
        categories: vec![Category { id: AGNOSTIC_CATEGORY, name: "object".into() }],
    };
    Ok((gt, dets))
}

/// `n_videos` sequences from one spec. Video `v` (0-based) uses seed
/// `spec.seed + v`, video id `v + 1` and a contiguous block of image ids;
/// annotation and instance ids are renumbered to stay unique.
pub fn simulate_videos(spec: &SequenceSpec, n_videos: usize) -> Result<(GtDataset, DetectionSet), SimError> {
    if n_videos == 0 {
        return Err(SimError::Invalid("n_videos must be >= 1".into()));
    }
    let mut gt = GtDataset::default();
    let mut all_dets = Vec::new();
    for v in 0..n_videos {
        let s = SequenceSpec {
            seed: spec.seed.wrapping_add(v as u64),
            video_id: v as u64 + 1,
            first_image_id: spec.first_image_id + (v * spec.n_frames) as u64,
            ..spec.clone()
        };
        let (g, d) = simulate(&s)?;
        let ann_offset = gt.annotations.len() as u64;
        let inst_offset = (v * spec.n_objects) as u64;
        gt.annotations.extend(g.annotations.into_iter().map(|mut a| {
            a.id += ann_offset;
            a.instance_id += inst_offset;
            a
        }));
        gt.table.images.extend(g.table.images);
        gt.table.videos.extend(g.table.videos);
        gt.categories = g.categories;
        all_dets.extend(d.iter().cloned());
    }
    let dets = DetectionSet::from_detections(gt.table.clone(), all_dets);
    Ok((gt, dets))
}
