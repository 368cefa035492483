//! Brute-force oracles shared by the integration tests. They are deliberately
//! naive and share no code with the library under test.
#![allow(dead_code)]

/// Exhaustive assignment: the largest number of finite-cost pairs, and among
/// those the smallest total. Rows are matched to distinct columns; any row may
/// stay unmatched.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> (usize, f64) {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, n: usize, total: f64, best: &mut (usize, f64)) {
        if row == cost.len() {
            if n > best.0 || (n == best.0 && total < best.1) {
                *best = (n, total);
            }
            return;
        }
        for c in 0..used.len() {
            if !used[c] && cost[row][c].is_finite() {
                used[c] = true;
                go(cost, row + 1, used, n + 1, total + cost[row][c], best);
                used[c] = false;
            }
        }
        go(cost, row + 1, used, n, total, best);
    }
    let cols = cost.first().map_or(0, Vec::len);
    let mut best = (0, 0.0);
    go(cost, 0, &mut vec![false; cols], 0, 0.0, &mut best);
    best
}

/// Minimum over all injections of the smaller side into the larger one, for
/// matrices without infeasible cells. Sums are accumulated in row order.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        return brute_force_min_cost_by_cols(cost, &t);
    }
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, picks: &mut Vec<usize>, best: &mut f64) {
        if row == cost.len() {
            let total = picks.iter().enumerate().map(|(r, &c)| cost[r][c]).fold(0.0, |a, b| a + b);
            if total < *best {
                *best = total;
            }
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                picks.push(c);
                go(cost, row + 1, used, picks, best);
                picks.pop();
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], &mut Vec::new(), &mut best);
    if rows == 0 {
        0.0
    } else {
        best
    }
}

/// Tall matrices: enumerate injections of columns into rows, then sum the
/// chosen cells in ascending row order so the summation order matches a
/// row-ordered total.
fn brute_force_min_cost_by_cols(cost: &[Vec<f64>], t: &[Vec<f64>]) -> f64 {
    fn go(t: &[Vec<f64>], col: usize, used: &mut Vec<bool>, picks: &mut Vec<usize>, cost: &[Vec<f64>], best: &mut f64) {
        if col == t.len() {
            let mut pairs: Vec<(usize, usize)> = picks.iter().enumerate().map(|(c, &r)| (r, c)).collect();
            pairs.sort();
            let total = pairs.iter().map(|&(r, c)| cost[r][c]).fold(0.0, |a, b| a + b);
            if total < *best {
                *best = total;
            }
            return;
        }
        for r in 0..used.len() {
            if !used[r] {
                used[r] = true;
                picks.push(r);
                go(t, col + 1, used, picks, cost, best);
                picks.pop();
                used[r] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(t, 0, &mut vec![false; cost.len()], &mut Vec::new(), cost, &mut best);
    best
}

/// Largest number of ground truths that can be matched one-to-one to
/// predictions with IoU strictly above `t`.
pub fn optimal_match_count(ious: &[Vec<f64>], t: f64) -> usize {
    fn go(ious: &[Vec<f64>], t: f64, p: usize, used: &mut Vec<bool>) -> usize {
        if p == ious.len() {
            return 0;
        }
        let mut best = go(ious, t, p + 1, used);
        for g in 0..used.len() {
            if !used[g] && ious[p][g] > t {
                used[g] = true;
                best = best.max(1 + go(ious, t, p + 1, used));
                used[g] = false;
            }
        }
        best
    }
    let n = ious.first().map_or(0, Vec::len);
    go(ious, t, 0, &mut vec![false; n])
}

/// IoU of `[x, y, w, h]` boxes computed from corners.
pub fn iou_xywh(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0.0);
    let iy = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

use std::collections::{BTreeMap, BTreeSet};

use owtrack::eval::{track_ar, EvalConfig, PredTrack};
use owtrack::sim::{simulate, SequenceSpec};
use owtrack::tracker::{count_id_switches, run_sequence, Track, TrackerConfig};

/// Outcome of tracking one simulated video.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub tracks: usize,
    pub objects: usize,
    /// Every track overlaps (IoU >= 0.5) exactly one object on all of its
    /// frames, and no two tracks share an object.
    pub one_to_one: bool,
    pub id_switches: usize,
    pub track_ar: f64,
    pub finished: Vec<Track>,
}

pub fn track_simulated(spec: &SequenceSpec, config: &TrackerConfig) -> SequenceOutcome {
    let (gt, dets) = simulate(spec).expect("valid spec");
    let tracks = run_sequence(config, &dets, spec.video_id).expect("tracking succeeds");
    let frames = gt.table.videos[0].frames.clone();
    let id_switches = count_id_switches(&tracks, &gt.annotations, &frames);

    let mut owner: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for t in &tracks {
        let set = owner.entry(t.track_id).or_default();
        for h in &t.history {
            for a in gt.annotations.iter().filter(|a| a.image_id == h.image_id) {
                if iou_xywh(a.bbox.to_array(), h.bbox.to_array()) >= 0.5 {
                    set.insert(a.instance_id);
                }
            }
        }
    }
    let claimed: Vec<u64> = owner.values().filter(|s| s.len() == 1).map(|s| *s.iter().next().unwrap()).collect();
    let distinct: BTreeSet<u64> = claimed.iter().copied().collect();
    let one_to_one = claimed.len() == owner.len() && distinct.len() == claimed.len();

    let preds: Vec<PredTrack> = tracks.iter().map(|t| PredTrack::from_track(spec.video_id, t)).collect();
    let ar = track_ar(&preds, &gt, &EvalConfig::default()).expect("evaluation succeeds").ar;
    SequenceOutcome {
        tracks: tracks.len(),
        objects: spec.n_objects,
        one_to_one,
        id_switches,
        track_ar: ar,
        finished: tracks,
    }
}

/// Noiseless, well separated: the setting of the end-to-end fidelity check.
pub fn noiseless_spec(seed: u64) -> SequenceSpec {
    SequenceSpec {
        n_objects: 5,
        n_frames: 100,
        seed,
        min_separation: Some(20.0),
        ..SequenceSpec::default()
    }
}
