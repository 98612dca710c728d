//! From probability maps to point detections, plus the tissue-class hard constraint.

use serde::{Deserialize, Serialize};

use crate::error::FieldError;
use crate::field::ScalarField;
use crate::geometry::{cell_to_tissue_point, PatchGeometry, Point};
use crate::labels::{CellPoint, BC, TC};
use crate::tissue::{TissueClass, TissueMask};

/// Default peak suppression radius, matching the 7 px label disk.
pub const DEFAULT_MIN_DISTANCE_PX: usize = 7;
/// Default threshold on foreground probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub type DetectionSet = Vec<CellPoint>;

/// Per-pixel class probabilities; channel 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap(ScalarField);

impl ProbabilityMap {
    pub const SUM_TOLERANCE: f64 = 1e-5;

    pub fn new(field: ScalarField) -> Result<Self, FieldError> {
        if field.channels() < 2 {
            return Err(FieldError::ShapeMismatch {
                expected: (2, field.height(), field.width()),
                actual: field.shape(),
            });
        }
        let n = field.plane_len();
        let data = field.data();
        for i in 0..n {
            let mut s = 0.0;
            for c in 0..field.channels() {
                let v = data[c * n + i];
                if !(-Self::SUM_TOLERANCE..=1.0 + Self::SUM_TOLERANCE).contains(&v) {
                    return Err(FieldError::InvalidProbability { pixel: i });
                }
                s += v;
            }
            if (s - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(FieldError::InvalidProbability { pixel: i });
            }
        }
        Ok(Self(field))
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }

    pub fn into_field(self) -> ScalarField {
        self.0
    }

    /// `1 - background`.
    pub fn foreground(&self) -> ScalarField {
        self.0.channel(0).map(|b| 1.0 - b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: usize,
    pub y: usize,
    pub value: f64,
}

/// Separable running maximum over a `(2r+1)²` square.
fn max_filter(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![f64::NEG_INFINITY; h * w];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = row[lo..=hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut out = vec![f64::NEG_INFINITY; h * w];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            let mut m = f64::NEG_INFINITY;
            for yy in lo..=hi {
                m = m.max(rows[yy * w + x]);
            }
            out[y * w + x] = m;
        }
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Local maxima of a single-channel field.
///
/// A pixel is a candidate when it is `>= threshold` and equals the maximum of
/// its Chebyshev neighbourhood of radius `min_distance_px`. Equal-valued
/// 8-connected candidates form one plateau, represented by its pixel nearest
/// to the plateau centroid (ties row-major). Representatives are accepted in
/// descending value (ties row-major) unless an already accepted peak lies
/// within Chebyshev distance `min_distance_px`.
pub fn extract_peaks(field: &ScalarField, min_distance_px: usize, threshold: f64) -> Vec<Peak> {
    assert_eq!(field.channels(), 1, "extract_peaks expects a single channel");
    let (h, w) = (field.height(), field.width());
    if h == 0 || w == 0 {
        return Vec::new();
    }
    let r = min_distance_px.max(1);
    let plane = field.plane(0);
    let maxf = max_filter(plane, h, w, r);

    let is_cand: Vec<bool> = plane
        .iter()
        .zip(&maxf)
        .map(|(&v, &m)| v >= threshold && v >= m)
        .collect();

    // Union equal-valued neighbouring candidates into plateaus.
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !is_cand[i] {
                continue;
            }
            // Forward neighbours only: right, down-left, down, down-right.
            let mut nbrs = [usize::MAX; 4];
            if x + 1 < w {
                nbrs[0] = i + 1;
            }
            if y + 1 < h {
                if x > 0 {
                    nbrs[1] = i + w - 1;
                }
                nbrs[2] = i + w;
                if x + 1 < w {
                    nbrs[3] = i + w + 1;
                }
            }
            for j in nbrs {
                if j != usize::MAX && is_cand[j] && plane[j] == plane[i] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }

    // Centroid per plateau.
    let mut sums: std::collections::BTreeMap<usize, (f64, f64, usize)> = Default::default();
    for i in 0..h * w {
        if is_cand[i] {
            let root = find(&mut parent, i);
            let e = sums.entry(root).or_insert((0.0, 0.0, 0));
            e.0 += (i % w) as f64;
            e.1 += (i / w) as f64;
            e.2 += 1;
        }
    }
    let mut best: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for i in 0..h * w {
        if is_cand[i] {
            let root = find(&mut parent, i);
            let (sx, sy, n) = sums[&root];
            let (cx, cy) = (sx / n as f64, sy / n as f64);
            let d2 = ((i % w) as f64 - cx).powi(2) + ((i / w) as f64 - cy).powi(2);
            let e = best.entry(root).or_insert((f64::INFINITY, i));
            if d2 < e.0 {
                *e = (d2, i);
            }
        }
    }
    let mut reps: Vec<usize> = best.values().map(|&(_, i)| i).collect();
    reps.sort_by(|&a, &b| plane[b].total_cmp(&plane[a]).then(a.cmp(&b)));

    let mut blocked = vec![false; h * w];
    let mut peaks = Vec::new();
    for i in reps {
        if blocked[i] {
            continue;
        }
        let (x, y) = (i % w, i / w);
        peaks.push(Peak {
            x,
            y,
            value: plane[i],
        });
        for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                blocked[yy * w + xx] = true;
            }
        }
    }
    peaks
}

/// Finds cells on `1 - background`; class is the argmax over class channels and
/// confidence is that class's probability.
pub fn detect(prob: &ProbabilityMap, min_distance_px: usize, threshold: f64) -> DetectionSet {
    let f = prob.field();
    extract_peaks(&prob.foreground(), min_distance_px, threshold)
        .into_iter()
        .filter_map(|p| {
            let mut best_c = 1;
            let mut best_v = f.get(1, p.y, p.x);
            for c in 2..f.channels() {
                let v = f.get(c, p.y, p.x);
                if v > best_v {
                    best_c = c;
                    best_v = v;
                }
            }
            (best_v > 0.0).then(|| {
                CellPoint::new(p.x as f64, p.y as f64, best_c as u8)
                    .with_confidence(best_v.min(1.0))
            })
        })
        .collect()
}

/// How the tissue class under a detection rewrites its cell class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// CA forces TC and BG forces BC.
    #[default]
    Symmetric,
    /// Only TC detections outside CA are demoted to BC.
    DemoteOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintOutcome {
    pub detections: DetectionSet,
    /// Indices whose location fell outside the tissue grid; left unchanged.
    pub flagged: Vec<usize>,
    pub relabeled: usize,
}

/// Relabels detections by the tissue class beneath them. Count, positions and
/// confidences are preserved.
pub fn apply_tissue_constraint(
    dets: &[CellPoint],
    tissue_mask: &TissueMask,
    geom: &PatchGeometry,
    mode: ConstraintMode,
) -> ConstraintOutcome {
    let side = tissue_mask.side();
    let mut out = ConstraintOutcome {
        detections: Vec::with_capacity(dets.len()),
        flagged: Vec::new(),
        relabeled: 0,
    };
    for (i, d) in dets.iter().enumerate() {
        let mut d2 = *d;
        match cell_to_tissue_point(Point::new(d.x, d.y), geom, side) {
            Ok(t) => {
                let tissue = tissue_mask.get(t.y.floor() as usize, t.x.floor() as usize);
                let new_class = match (tissue, mode) {
                    (TissueClass::Cancer, ConstraintMode::Symmetric) => TC,
                    (TissueClass::Background, _) if d.class_id == TC => BC,
                    (TissueClass::Background, ConstraintMode::Symmetric) => BC,
                    _ => d.class_id,
                };
                if new_class != d.class_id {
                    out.relabeled += 1;
                }
                d2.class_id = new_class;
            }
            Err(_) => out.flagged.push(i),
        }
        out.detections.push(d2);
    }
    out
}
