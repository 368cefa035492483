//! Pseudo-label and output filtering (confidence threshold, topK, greedy NMS)
//! and the EMA rule that moves teacher parameters towards the student.
//!
//! Every filter works on the detections of a single image. Score ties are
//! broken by ascending input index so results are reproducible.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detset::Detection;
use crate::geometry::box_iou;

/// `K` used for pseudo-labels on the unlabeled split.
pub const PSEUDO_LABEL_TOPK: usize = 15;
/// Instances kept per image for visual inspection of outputs.
pub const VISUALIZATION_TOPK: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("top-k requires k >= 1")]
    ZeroK,
    #[error("momentum {0} outside [0, 1]")]
    Momentum(f64),
    #[error("parameter vectors differ in length ({teacher} vs {student})")]
    LengthMismatch { teacher: usize, student: usize },
    #[error("parameter vector has a non-finite entry at {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterPolicy {
    Threshold { tau: f64 },
    TopK { k: usize },
}

impl FilterPolicy {
    pub fn threshold(tau: f64) -> Result<Self, FilterError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(FilterError::Threshold(tau));
        }
        Ok(FilterPolicy::Threshold { tau })
    }

    pub fn topk(k: usize) -> Result<Self, FilterError> {
        if k == 0 {
            return Err(FilterError::ZeroK);
        }
        Ok(FilterPolicy::TopK { k })
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        match *self {
            FilterPolicy::Threshold { tau } => Self::threshold(tau).map(drop),
            FilterPolicy::TopK { k } => Self::topk(k).map(drop),
        }
    }
}

/// Indices of `dets` by descending score, ties by ascending index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// The `k` best-scoring detections in descending score order.
pub fn filter_topk(dets: &[Detection], k: usize) -> Vec<Detection> {
    score_order(dets)
        .into_iter()
        .take(k)
        .map(|i| dets[i].clone())
        .collect()
}

/// Detections with `score >= tau`, in input order.
pub fn filter_threshold(dets: &[Detection], tau: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score >= tau).cloned().collect()
}

/// Greedy hard NMS on boxes. A detection survives when its IoU with every
/// previously kept detection is below `iou_thresh`; output is in keep order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut kept: Vec<&Detection> = Vec::new();
    for i in score_order(dets) {
        let d = &dets[i];
        if kept.iter().all(|k| box_iou(&k.bbox, &d.bbox) < iou_thresh) {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

pub fn pseudo_label(dets: &[Detection], policy: &FilterPolicy) -> Vec<Detection> {
    match *policy {
        FilterPolicy::Threshold { tau } => filter_threshold(dets, tau),
        FilterPolicy::TopK { k } => filter_topk(dets, k),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FilterError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite(i));
        }
        Ok(ParamVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `momentum * teacher + (1 - momentum) * student`, elementwise.
pub fn ema_update(
    teacher: &ParamVector,
    student: &ParamVector,
    momentum: f64,
) -> Result<ParamVector, FilterError> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(FilterError::Momentum(momentum));
    }
    if teacher.len() != student.len() {
        return Err(FilterError::LengthMismatch {
            teacher: teacher.len(),
            student: student.len(),
        });
    }
    Ok(ParamVector(
        teacher
            .0
            .iter()
            .zip(&student.0)
            .map(|(&t, &s)| momentum * t + (1.0 - momentum) * s)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn det(score: f64) -> Detection {
        Detection::new(1, BBox::new(0., 0., 1., 1.).unwrap(), score)
    }

    fn det_at(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection::new(1, BBox::new(x, y, w, h).unwrap(), score)
    }

    #[test]
    fn topk_keeps_the_fifteen_best() {
        let dets: Vec<_> = (0..20).map(|i| det(((i * 7) % 20) as f64 / 20.0)).collect();
        let out = filter_topk(&dets, PSEUDO_LABEL_TOPK);
        assert_eq!(out.len(), 15);
        let mut expect: Vec<f64> = dets.iter().map(|d| d.score).collect();
        expect.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let got: Vec<f64> = out.iter().map(|d| d.score).collect();
        assert_eq!(got, expect[..15]);
    }

    #[test]
    fn topk_shorter_than_k() {
        let dets: Vec<_> = [0.2, 0.9, 0.5, 0.1, 0.7].into_iter().map(det).collect();
        let out = filter_topk(&dets, VISUALIZATION_TOPK);
        let got: Vec<f64> = out.iter().map(|d| d.score).collect();
        assert_eq!(got, vec![0.9, 0.7, 0.5, 0.2, 0.1]);
    }

    #[test]
    fn topk_ties_by_index() {
        let dets = vec![det_at(0., 0., 1., 1., 0.5), det_at(5., 0., 1., 1., 0.5), det(0.9)];
        let out = filter_topk(&dets, 2);
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[1].bbox.x, 0.0);
    }

    #[test]
    fn threshold_cases() {
        let dets: Vec<_> = [0.3, 0.5, 0.9, 1.0].into_iter().map(det).collect();
        assert_eq!(filter_threshold(&dets, 0.0), dets);
        let s: Vec<f64> = filter_threshold(&dets[..3], 0.5).iter().map(|d| d.score).collect();
        assert_eq!(s, vec![0.5, 0.9]);
        let s: Vec<f64> = filter_threshold(&dets, 1.0).iter().map(|d| d.score).collect();
        assert_eq!(s, vec![1.0]);
        assert!(FilterPolicy::threshold(1.0 + f64::EPSILON).is_err());
        assert!(FilterPolicy::topk(0).is_err());
    }

    #[test]
    fn nms_cases() {
        let single = vec![det(0.4)];
        assert_eq!(nms(&single, 0.5), single);
        let pair = vec![det(0.8), det(0.9)];
        let out = nms(&pair, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
        let disjoint = vec![det_at(0., 0., 1., 1., 0.3), det_at(3., 3., 1., 1., 0.6)];
        let out = nms(&disjoint, 0.01);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.6);
    }

    #[test]
    fn pseudo_label_dispatch() {
        let dets: Vec<_> = (0..30).map(|i| det((i as f64 * 0.37) % 1.0)).collect();
        let k = FilterPolicy::topk(15).unwrap();
        assert_eq!(pseudo_label(&dets, &k), filter_topk(&dets, 15));
        let t = FilterPolicy::threshold(0.5).unwrap();
        assert_eq!(pseudo_label(&dets, &t), filter_threshold(&dets, 0.5));
        assert!(pseudo_label(&[], &k).is_empty());
        assert!(pseudo_label(&[], &t).is_empty());
    }

    #[test]
    fn ema_cases() {
        let t = ParamVector::new(vec![1.0, -2.0, 3.5]).unwrap();
        let s = ParamVector::new(vec![0.0, 4.0, 3.0]).unwrap();
        assert_eq!(ema_update(&t, &s, 1.0).unwrap(), t);
        assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
        let one = ParamVector::new(vec![1.0]).unwrap();
        let zero = ParamVector::new(vec![0.0]).unwrap();
        assert_eq!(ema_update(&one, &zero, 0.9).unwrap().as_slice(), &[0.9]);
        assert!(matches!(
            ema_update(&t, &one, 0.5),
            Err(FilterError::LengthMismatch { .. })
        ));
        assert!(ema_update(&t, &s, 1.5).is_err());
        assert!(ParamVector::new(vec![f64::NAN]).is_err());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        proptest::collection::vec(
            (0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64, 0.0..=1.0f64),
            0..30,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s)| det_at(x, y, w, h, (s * 10.0).round() / 10.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn threshold_idempotent(dets in arb_dets(), tau in 0.0..=1.0f64) {
            let once = filter_threshold(&dets, tau);
            prop_assert_eq!(filter_threshold(&once, tau), once);
        }

        #[test]
        fn ema_is_convex(pairs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..20),
                         m in 0.0..=1.0f64) {
            let (t, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let out = ema_update(&ParamVector::new(t.clone()).unwrap(),
                                 &ParamVector::new(s.clone()).unwrap(), m).unwrap();
            for ((o, a), b) in out.as_slice().iter().zip(&t).zip(&s) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(*o >= lo - 1e-12 * lo.abs().max(1.0));
                prop_assert!(*o <= hi + 1e-12 * hi.abs().max(1.0));
            }
        }
    }
}
