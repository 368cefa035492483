//! Track-to-detection association: cost construction and the Hungarian method.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detset::{Detection, Embedding};
use crate::geometry::box_iou;
use crate::kalman::{from_state, to_measurement, KalmanFilter, KalmanState, Measurement};

/// Marks a forbidden pairing.
pub const INFEASIBLE: f64 = f64::INFINITY;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("cost matrix needs {expected} entries, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("cost at ({row}, {col}) is {value}; costs must be finite and >= 0 or INFEASIBLE")]
    BadCost { row: usize, col: usize, value: f64 },
    #[error("appearance gallery is empty")]
    EmptyGallery,
    #[error("embedding dimension mismatch ({gallery} vs {query})")]
    Dimension { gallery: usize, query: usize },
}

/// Row-major `rows x cols` matrix of non-negative costs, `INFEASIBLE` allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssocError> {
        if data.len() != rows * cols {
            return Err(AssocError::Shape {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        for (i, &v) in data.iter().enumerate() {
            if !(v == INFEASIBLE || (v.is_finite() && v >= 0.0)) {
                return Err(AssocError::BadCost {
                    row: i / cols.max(1),
                    col: i % cols.max(1),
                    value: v,
                });
            }
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssocError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AssocError::Shape {
                expected: rows.len() * cols,
                actual: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn is_feasible(&self, row: usize, col: usize) -> bool {
        self.get(row, col) != INFEASIBLE
    }

    /// Sum of the costs of `matches`, in the given order.
    pub fn total(&self, matches: &[(usize, usize)]) -> f64 {
        matches.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Minimum-cost assignment on a rectangular matrix.
///
/// Among assignments using only feasible cells, the solver first maximises the
/// number of matched pairs and then minimises their total cost. Infeasible cells
/// are replaced by a sentinel larger than the sum of all finite costs, the padded
/// problem is solved by shortest augmenting paths with dual potentials, and any
/// sentinel pairs are reported as unmatched.
pub fn hungarian(c: &CostMatrix) -> Assignment {
    let transpose = c.rows > c.cols;
    let (n, m) = if transpose {
        (c.cols, c.rows)
    } else {
        (c.rows, c.cols)
    };
    let at = |i: usize, j: usize| {
        if transpose {
            c.get(j, i)
        } else {
            c.get(i, j)
        }
    };

    let finite_sum: f64 = c.data.iter().filter(|v| v.is_finite()).sum();
    let sentinel = 2.0 * finite_sum + 1.0;
    let cost = |i: usize, j: usize| {
        let v = at(i, j);
        if v.is_finite() {
            v
        } else {
            sentinel
        }
    };

    // 1-based potentials; col_owner[j] is the row matched to column j (0 = free).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut col_owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut matches = Vec::new();
    for j in 1..=m {
        let i = col_owner[j];
        if i == 0 || !at(i - 1, j - 1).is_finite() {
            continue;
        }
        matches.push(if transpose { (j - 1, i - 1) } else { (i - 1, j - 1) });
    }
    matches.sort_unstable();
    let mut row_used = vec![false; c.rows];
    let mut col_used = vec![false; c.cols];
    for &(r, col) in &matches {
        row_used[r] = true;
        col_used[col] = true;
    }
    Assignment {
        matches,
        unmatched_rows: (0..c.rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..c.cols).filter(|&k| !col_used[k]).collect(),
    }
}

/// Smallest cosine distance `1 - <g, e>` between `e` and any gallery entry.
pub fn appearance_distance(gallery: &[Embedding], e: &Embedding) -> Result<f64, AssocError> {
    if gallery.is_empty() {
        return Err(AssocError::EmptyGallery);
    }
    let mut best = f64::INFINITY;
    for g in gallery {
        if g.dim() != e.dim() {
            return Err(AssocError::Dimension {
                gallery: g.dim(),
                query: e.dim(),
            });
        }
        best = best.min(1.0 - g.dot(e));
    }
    Ok(best.clamp(0.0, 2.0))
}

/// Tunables of the association metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssocWeights {
    /// Weight of the normalised motion cost against appearance; 0 uses motion only as a gate.
    pub lambda: f64,
    /// Mahalanobis gate on the squared innovation distance.
    pub gate_chi2: f64,
    /// Largest admissible appearance distance.
    pub max_appearance: f64,
    /// Largest admissible `1 - IoU` when no embeddings are available.
    pub max_iou_cost: f64,
}

impl Default for AssocWeights {
    fn default() -> Self {
        AssocWeights {
            lambda: 0.0,
            gate_chi2: CHI2_95_4DOF,
            max_appearance: 0.2,
            max_iou_cost: 0.7,
        }
    }
}

/// What the cost builders need from a track.
pub trait TrackView {
    fn kalman_state(&self) -> &KalmanState;
    fn gallery(&self) -> &[Embedding];
}

/// Gated motion/appearance cost. Cells where either side lacks an embedding
/// fall back to `1 - IoU` against the predicted box.
pub fn build_cost<T: TrackView>(
    kf: &KalmanFilter,
    tracks: &[&T],
    dets: &[&Detection],
    w: &AssocWeights,
) -> CostMatrix {
    let mut c = CostMatrix::filled(tracks.len(), dets.len(), INFEASIBLE);
    let measured: Vec<(usize, Measurement)> = dets
        .iter()
        .enumerate()
        .filter_map(|(i, d)| to_measurement(&d.bbox).ok().map(|m| (i, m)))
        .collect();
    let ms: Vec<Measurement> = measured.iter().map(|&(_, m)| m).collect();
    for (r, t) in tracks.iter().enumerate() {
        let state = t.kalman_state();
        let predicted = from_state(state);
        let Ok(gates) = kf.gating_distances(state, &ms) else {
            continue;
        };
        for (&(col, _), &gate) in measured.iter().zip(&gates) {
            let d = dets[col];
            if !(gate <= w.gate_chi2) {
                continue;
            }
            let appearance = match (&d.embedding, t.gallery()) {
                (Some(e), g) if !g.is_empty() => appearance_distance(g, e).ok(),
                _ => None,
            };
            let cell = match appearance {
                Some(a) if a > w.max_appearance => continue,
                Some(a) => {
                    let motion = if w.gate_chi2 > 0.0 { gate / w.gate_chi2 } else { 0.0 };
                    if w.lambda == 0.0 {
                        a
                    } else {
                        w.lambda * motion + (1.0 - w.lambda) * a
                    }
                }
                None => {
                    let cost = 1.0 - box_iou(&predicted, &d.bbox);
                    if cost > w.max_iou_cost {
                        continue;
                    }
                    cost
                }
            };
            c.set(r, col, cell.max(0.0));
        }
    }
    c
}

/// Ungated `1 - IoU` cost between predicted track boxes and detections.
pub fn iou_cost<T: TrackView>(tracks: &[&T], dets: &[&Detection], max_iou_cost: f64) -> CostMatrix {
    let mut c = CostMatrix::filled(tracks.len(), dets.len(), INFEASIBLE);
    for (r, t) in tracks.iter().enumerate() {
        let predicted = from_state(t.kalman_state());
        for (col, d) in dets.iter().enumerate() {
            let cost = 1.0 - box_iou(&predicted, &d.bbox);
            if cost <= max_iou_cost {
                c.set(r, col, cost);
            }
        }
    }
    c
}
