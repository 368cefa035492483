//! COCO-style data model and JSON I/O for detections, ground truth and results.
//!
//! Annotation files are objects with `images`, optional `videos`, `annotations`
//! and optional `categories`. Result files are bare arrays of result records, as
//! produced by common detectors. Masks are `{"size": [h, w], "counts": ...}`
//! where `counts` is either an integer array or the COCO compressed string;
//! masks are always written in the compressed form. See `docs/format.md`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{BBox, RleMask};

pub type ImageId = u64;
pub type VideoId = u64;

/// Category every record carries after [`class_agnostic_merge`].
pub const AGNOSTIC_CATEGORY: u32 = 1;

const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed JSON: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {section} #{index}{}: {reason}", .path.display(), fmt_id(.id))]
    Record {
        path: PathBuf,
        section: &'static str,
        index: usize,
        id: Option<u64>,
        reason: String,
    },
}

fn fmt_id(id: &Option<u64>) -> String {
    id.map(|i| format!(" (id {i})")).unwrap_or_default()
}

/// Unit-norm appearance feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Accepts a vector whose L2 norm is within 1e-6 of one.
    pub fn new(values: Vec<f64>) -> Result<Self, String> {
        if values.is_empty() {
            return Err("embedding is empty".into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("embedding has non-finite entries".into());
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(format!("embedding norm {norm} is not 1"));
        }
        Ok(Embedding(values))
    }

    /// Scale to unit length. `None` for the zero vector.
    pub fn normalized(mut values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Some(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// One scored box on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Index of the frame inside its video; 0 when no video table is known.
    pub frame_id: u64,
    pub image_id: ImageId,
    pub bbox: BBox,
    pub score: f64,
    pub category_id: u32,
    pub mask: Option<RleMask>,
    pub embedding: Option<Embedding>,
    /// Set on tracker output.
    pub track_id: Option<u64>,
}

impl Detection {
    pub fn new(image_id: ImageId, bbox: BBox, score: f64) -> Self {
        Detection {
            frame_id: 0,
            image_id,
            bbox,
            score,
            category_id: AGNOSTIC_CATEGORY,
            mask: None,
            embedding: None,
            track_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtAnnotation {
    pub id: u64,
    pub image_id: ImageId,
    /// Identity stable across the frames of one video.
    pub instance_id: u64,
    pub video_id: Option<VideoId>,
    pub bbox: BBox,
    pub category_id: u32,
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
}

/// A video is an explicitly ordered list of image ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Video {
    pub id: VideoId,
    pub frames: Vec<ImageId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    #[serde(default)]
    pub name: String,
}

/// Image and video tables shared by annotation and result sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageTable {
    pub images: BTreeMap<ImageId, ImageInfo>,
    /// Sorted by id.
    pub videos: Vec<Video>,
}

impl ImageTable {
    /// `image_id -> (video_id, frame index)`.
    pub fn frame_lookup(&self) -> HashMap<ImageId, (VideoId, u64)> {
        self.videos
            .iter()
            .flat_map(|v| {
                v.frames
                    .iter()
                    .enumerate()
                    .map(move |(i, &img)| (img, (v.id, i as u64)))
            })
            .collect()
    }

    pub fn video(&self, id: VideoId) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }
}

/// Ground-truth annotation file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GtDataset {
    pub table: ImageTable,
    pub annotations: Vec<GtAnnotation>,
    pub categories: Vec<Category>,
}

/// Detections grouped by image, plus the image/video tables they refer to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub table: ImageTable,
    by_image: BTreeMap<ImageId, Vec<Detection>>,
}

impl DetectionSet {
    pub fn new(table: ImageTable) -> Self {
        DetectionSet {
            table,
            by_image: BTreeMap::new(),
        }
    }

    pub fn from_detections(table: ImageTable, dets: impl IntoIterator<Item = Detection>) -> Self {
        let mut set = Self::new(table);
        for d in dets {
            set.push(d);
        }
        set
    }

    pub fn push(&mut self, det: Detection) {
        self.by_image.entry(det.image_id).or_default().push(det);
    }

    /// Detections of one image in stored order.
    pub fn image(&self, image_id: ImageId) -> &[Detection] {
        self.by_image
            .get(&image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Image ids that carry at least one detection, ascending.
    pub fn image_ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.by_image.keys().copied()
    }

    /// All detections, by ascending image id then stored order.
    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.by_image.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replace the detections of every image by `f(image detections)`.
    pub fn map_images(&self, mut f: impl FnMut(&[Detection]) -> Vec<Detection>) -> DetectionSet {
        let by_image = self
            .by_image
            .iter()
            .map(|(&id, dets)| (id, f(dets)))
            .filter(|(_, d)| !d.is_empty())
            .collect();
        DetectionSet {
            table: self.table.clone(),
            by_image,
        }
    }
}

pub trait Categorized {
    fn set_category_id(&mut self, id: u32);
}

impl Categorized for Detection {
    fn set_category_id(&mut self, id: u32) {
        self.category_id = id;
    }
}

impl Categorized for GtAnnotation {
    fn set_category_id(&mut self, id: u32) {
        self.category_id = id;
    }
}

/// Collapse every category to [`AGNOSTIC_CATEGORY`], keeping order and all other fields.
pub fn class_agnostic_merge<T: Categorized>(mut items: Vec<T>) -> Vec<T> {
    for item in &mut items {
        item.set_category_id(AGNOSTIC_CATEGORY);
    }
    items
}

impl DetectionSet {
    pub fn class_agnostic(mut self) -> Self {
        for dets in self.by_image.values_mut() {
            for d in dets {
                d.set_category_id(AGNOSTIC_CATEGORY);
            }
        }
        self
    }
}

// ---------------------------------------------------------------------------
// COCO compressed RLE strings

/// COCO compressed counts string: each count (delta-coded against the count two
/// positions back, from the fourth count on) is split into 5-bit groups with a
/// continuation bit and offset by 48 into printable ASCII.
pub fn rle_to_string(rle: &RleMask) -> String {
    let counts = rle.counts();
    let mut s = String::new();
    for (i, &c) in counts.iter().enumerate() {
        let mut x = c as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            s.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    s
}

pub fn rle_from_string(s: &str, height: u32, width: u32) -> Result<RleMask, String> {
    let bytes = s.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0u32;
        loop {
            let Some(&b) = bytes.get(i) else {
                return Err("truncated counts string".into());
            };
            if !(48..48 + 64).contains(&b) {
                return Err(format!("invalid counts character {:?}", b as char));
            }
            if shift > 58 {
                return Err("counts value overflows".into());
            }
            let c = (b - 48) as i64;
            i += 1;
            x |= (c & 0x1f) << shift;
            shift += 5;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << shift;
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2] as i64;
        }
        let c = u32::try_from(x).map_err(|_| format!("counts value {x} out of range"))?;
        counts.push(c);
    }
    RleMask::new(height, width, counts).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// JSON records

#[derive(Deserialize)]
struct RawAnnotationFile {
    images: Vec<ImageInfo>,
    #[serde(default)]
    videos: Vec<Video>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: ImageId,
    bbox: [f64; 4],
    category_id: u32,
    #[serde(default)]
    instance_id: Option<u64>,
    #[serde(default)]
    video_id: Option<VideoId>,
    #[serde(default)]
    segmentation: Option<Value>,
}

#[derive(Deserialize)]
struct RawResult {
    image_id: ImageId,
    category_id: u32,
    bbox: [f64; 4],
    score: f64,
    #[serde(default)]
    segmentation: Option<Value>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    track_id: Option<u64>,
}

#[derive(Serialize)]
struct RleJson {
    size: [u32; 2],
    counts: String,
}

impl From<&RleMask> for RleJson {
    fn from(m: &RleMask) -> Self {
        RleJson {
            size: [m.height(), m.width()],
            counts: rle_to_string(m),
        }
    }
}

#[derive(Serialize)]
struct OutResult<'a> {
    image_id: ImageId,
    category_id: u32,
    bbox: [f64; 4],
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<RleJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
}

#[derive(Serialize)]
struct OutAnnotation {
    id: u64,
    image_id: ImageId,
    category_id: u32,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
    instance_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    video_id: Option<VideoId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<RleJson>,
}

#[derive(Serialize)]
struct OutAnnotationFile<'a> {
    images: Vec<&'a ImageInfo>,
    videos: &'a [Video],
    annotations: Vec<OutAnnotation>,
    categories: &'a [Category],
}

fn parse_segmentation(v: &Value) -> Result<RleMask, String> {
    let obj = v
        .as_object()
        .ok_or("segmentation must be an RLE object; polygons are not supported")?;
    let size = obj
        .get("size")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or("segmentation.size must be [height, width]")?;
    let dim = |v: &Value| {
        v.as_u64()
            .and_then(|x| u32::try_from(x).ok())
            .ok_or_else(|| "segmentation.size entries must be non-negative integers".to_string())
    };
    let (h, w) = (dim(&size[0])?, dim(&size[1])?);
    match obj.get("counts") {
        Some(Value::String(s)) => rle_from_string(s, h, w),
        Some(Value::Array(a)) => {
            let counts = a
                .iter()
                .map(|c| c.as_u64().and_then(|x| u32::try_from(x).ok()))
                .collect::<Option<Vec<u32>>>()
                .ok_or("segmentation.counts entries must be non-negative integers")?;
            RleMask::new(h, w, counts).map_err(|e| e.to_string())
        }
        _ => Err("segmentation.counts must be a string or an integer array".into()),
    }
}

fn parse_bbox(b: [f64; 4]) -> Result<BBox, String> {
    BBox::new(b[0], b[1], b[2], b[3]).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, body: String) -> Result<(), FormatError> {
    fs::write(path, body).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_annotations(path: &Path) -> Result<GtDataset, FormatError> {
    parse_annotations(&read(path)?, path)
}

/// Parse an annotation file body; `origin` labels errors.
pub fn parse_annotations(json: &str, origin: &Path) -> Result<GtDataset, FormatError> {
    let raw: RawAnnotationFile = serde_json::from_str(json).map_err(|source| FormatError::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    let err = |section, index, id, reason: String| FormatError::Record {
        path: origin.to_path_buf(),
        section,
        index,
        id,
        reason,
    };

    let mut images = BTreeMap::new();
    for (index, img) in raw.images.into_iter().enumerate() {
        if img.width == 0 || img.height == 0 {
            return Err(err("image", index, Some(img.id), "zero image size".into()));
        }
        if images.insert(img.id, img).is_some() {
            return Err(err("image", index, Some(img.id), "duplicate image id".into()));
        }
    }

    let mut videos = raw.videos;
    let mut seen_frames = HashSet::new();
    let mut seen_videos = HashSet::new();
    for (index, v) in videos.iter().enumerate() {
        if !seen_videos.insert(v.id) {
            return Err(err("video", index, Some(v.id), "duplicate video id".into()));
        }
        for f in &v.frames {
            if !images.contains_key(f) {
                return Err(err("video", index, Some(v.id), format!("unknown image_id {f}")));
            }
            if !seen_frames.insert(*f) {
                return Err(err("video", index, Some(v.id), format!("image {f} listed twice")));
            }
        }
    }
    videos.sort_by_key(|v| v.id);
    let table = ImageTable { images, videos };
    let lookup = table.frame_lookup();

    let mut annotations = Vec::with_capacity(raw.annotations.len());
    let mut instances = HashSet::new();
    for (index, a) in raw.annotations.into_iter().enumerate() {
        let fail = |reason: String| err("annotation", index, Some(a.id), reason);
        let Some(img) = table.images.get(&a.image_id) else {
            return Err(fail(format!("unknown image_id {}", a.image_id)));
        };
        let bbox = parse_bbox(a.bbox).map_err(fail)?;
        if a.category_id == 0 {
            return Err(fail("category_id must be positive".into()));
        }
        let mask = match &a.segmentation {
            Some(v) => {
                let m = parse_segmentation(v).map_err(fail)?;
                check_mask_size(&m, img).map_err(fail)?;
                Some(m)
            }
            None => None,
        };
        let table_video = lookup.get(&a.image_id).map(|&(v, _)| v);
        let video_id = match (a.video_id, table_video) {
            (Some(given), Some(known)) if given != known => {
                return Err(fail(format!(
                    "video_id {given} disagrees with video table ({known})"
                )));
            }
            (given, known) => given.or(known),
        };
        let instance_id = a.instance_id.unwrap_or(a.id);
        if !instances.insert((video_id, a.image_id, instance_id)) {
            return Err(fail(format!(
                "instance_id {instance_id} repeated on image {}",
                a.image_id
            )));
        }
        annotations.push(GtAnnotation {
            id: a.id,
            image_id: a.image_id,
            instance_id,
            video_id,
            bbox,
            category_id: a.category_id,
            mask,
        });
    }

    Ok(GtDataset {
        table,
        annotations,
        categories: raw.categories,
    })
}

fn check_mask_size(m: &RleMask, img: &ImageInfo) -> Result<(), String> {
    if m.height() != img.height || m.width() != img.width {
        return Err(format!(
            "mask size {}x{} does not match image {}x{}",
            m.height(),
            m.width(),
            img.height,
            img.width
        ));
    }
    Ok(())
}

/// Load a result file. With a `table`, image ids are checked against it, mask
/// sizes against image sizes, and `frame_id` is filled from the video table.
pub fn load_results(path: &Path, table: Option<&ImageTable>) -> Result<DetectionSet, FormatError> {
    parse_results(&read(path)?, path, table)
}

pub fn parse_results(
    json: &str,
    origin: &Path,
    table: Option<&ImageTable>,
) -> Result<DetectionSet, FormatError> {
    let raw: Vec<RawResult> = serde_json::from_str(json).map_err(|source| FormatError::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    let lookup = table.map(ImageTable::frame_lookup).unwrap_or_default();
    let mut set = DetectionSet::new(table.cloned().unwrap_or_default());
    for (index, r) in raw.into_iter().enumerate() {
        let fail = |reason: String| FormatError::Record {
            path: origin.to_path_buf(),
            section: "result",
            index,
            id: None,
            reason,
        };
        let bbox = parse_bbox(r.bbox).map_err(fail)?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(fail(format!("score {} outside [0, 1]", r.score)));
        }
        if r.category_id == 0 {
            return Err(fail("category_id must be positive".into()));
        }
        let image = match table {
            Some(t) => Some(
                *t.images
                    .get(&r.image_id)
                    .ok_or_else(|| fail(format!("unknown image_id {}", r.image_id)))?,
            ),
            None => None,
        };
        let mask = match &r.segmentation {
            Some(v) => {
                let m = parse_segmentation(v).map_err(fail)?;
                if let Some(img) = &image {
                    check_mask_size(&m, img).map_err(fail)?;
                }
                Some(m)
            }
            None => None,
        };
        let embedding = r.embedding.map(Embedding::new).transpose().map_err(fail)?;
        set.push(Detection {
            frame_id: lookup.get(&r.image_id).map_or(0, |&(_, f)| f),
            image_id: r.image_id,
            bbox,
            score: r.score,
            category_id: r.category_id,
            mask,
            embedding,
            track_id: r.track_id,
        });
    }
    Ok(set)
}

/// Serialise a result set as a JSON array, ordered by image id.
pub fn results_to_string(set: &DetectionSet) -> String {
    let out: Vec<OutResult> = set
        .iter()
        .map(|d| OutResult {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_array(),
            score: d.score,
            segmentation: d.mask.as_ref().map(RleJson::from),
            embedding: d.embedding.as_ref().map(Embedding::as_slice),
            track_id: d.track_id,
        })
        .collect();
    let mut s = serde_json::to_string(&out).expect("result records serialise");
    s.push('\n');
    s
}

pub fn save_results(set: &DetectionSet, path: &Path) -> Result<(), FormatError> {
    write(path, results_to_string(set))
}

pub fn annotations_to_string(gt: &GtDataset) -> String {
    let file = OutAnnotationFile {
        images: gt.table.images.values().collect(),
        videos: &gt.table.videos,
        annotations: gt
            .annotations
            .iter()
            .map(|a| OutAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox.to_array(),
                area: a.mask.as_ref().map_or(a.bbox.area(), |m| m.area() as f64),
                iscrowd: 0,
                instance_id: a.instance_id,
                video_id: a.video_id,
                segmentation: a.mask.as_ref().map(RleJson::from),
            })
            .collect(),
        categories: &gt.categories,
    };
    let mut s = serde_json::to_string(&file).expect("annotation file serialises");
    s.push('\n');
    s
}

pub fn save_annotations(gt: &GtDataset, path: &Path) -> Result<(), FormatError> {
    write(path, annotations_to_string(gt))
}
