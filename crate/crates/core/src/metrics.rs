//! Distance-matched detection F1, multi-run aggregation and significance testing.
//!
//! Matching: detections are visited in descending confidence (ties by row,
//! then column, then input order). Each takes the nearest GT not yet consumed
//! by a true positive, regardless of class. Within the radius and with equal
//! class it is a TP and consumes the GT; otherwise it is an FP of its own
//! class and the GT stays available. Unconsumed GTs become FNs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::MetricsError;
use crate::labels::CellPoint;

/// 3 µm at 0.2 µm/px.
pub const DEFAULT_MATCH_RADIUS_PX: f64 = 15.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassCounts {
    /// `2TP / (2TP + FP + FN)`, or `None` when all three counts are zero.
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| 2.0 * self.tp as f64 / denom as f64)
    }
}

impl std::ops::AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Per-class TP/FP/FN keyed by class id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub classes: BTreeMap<u8, ClassCounts>,
}

impl MatchCounts {
    /// Counts with explicit zero entries for `class_ids`.
    pub fn with_classes(class_ids: impl IntoIterator<Item = u8>) -> Self {
        Self {
            classes: class_ids.into_iter().map(|c| (c, ClassCounts::default())).collect(),
        }
    }

    pub fn class(&self, id: u8) -> ClassCounts {
        self.classes.get(&id).copied().unwrap_or_default()
    }

    fn entry(&mut self, id: u8) -> &mut ClassCounts {
        self.classes.entry(id).or_default()
    }

    pub fn merge(&mut self, other: &MatchCounts) {
        for (&k, &v) in &other.classes {
            *self.entry(k) += v;
        }
    }

    pub fn total(&self) -> ClassCounts {
        let mut t = ClassCounts::default();
        for v in self.classes.values() {
            t += *v;
        }
        t
    }
}

fn priority_order(dets: &[CellPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.confidence
            .total_cmp(&da.confidence)
            .then(da.y.total_cmp(&db.y))
            .then(da.x.total_cmp(&db.x))
            .then(a.cmp(&b))
    });
    order
}

/// Counts TP/FP/FN for one patch. Distances are Euclidean and the radius is inclusive.
pub fn match_detections(dets: &[CellPoint], gts: &[CellPoint], radius_px: f64) -> MatchCounts {
    let mut counts = MatchCounts::default();
    for g in gts {
        counts.entry(g.class_id);
    }
    for d in dets {
        counts.entry(d.class_id);
    }
    let mut consumed = vec![false; gts.len()];
    for i in priority_order(dets) {
        let d = &dets[i];
        let mut nearest: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if consumed[j] {
                continue;
            }
            let dist = d.point().distance(&g.point());
            if nearest.map_or(true, |(best, _)| dist < best) {
                nearest = Some((dist, j));
            }
        }
        match nearest {
            Some((dist, j)) if dist <= radius_px && gts[j].class_id == d.class_id => {
                consumed[j] = true;
                counts.entry(d.class_id).tp += 1;
            }
            _ => counts.entry(d.class_id).fp += 1,
        }
    }
    for (g, used) in gts.iter().zip(&consumed) {
        if !used {
            counts.entry(g.class_id).fn_ += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// `None` marks a class with no TP, FP or FN; it is left out of the mean.
    pub per_class: BTreeMap<u8, Option<f64>>,
    pub mean_f1: f64,
    pub counts: MatchCounts,
}

pub fn f1_from_counts(c: &MatchCounts) -> Result<F1Report, MetricsError> {
    let per_class: BTreeMap<u8, Option<f64>> =
        c.classes.iter().map(|(&k, v)| (k, v.f1())).collect();
    let defined: Vec<f64> = per_class.values().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricsError::NoEvaluableClass);
    }
    Ok(F1Report {
        mean_f1: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        counts: c.clone(),
    })
}

/// Mean with the half-width of a two-sided 95% Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.half_width)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn aggregate_runs(scores: &[f64]) -> Result<RunSummary, MetricsError> {
    if scores.len() < 2 {
        return Err(MetricsError::TooFewRuns {
            needed: 2,
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::InvalidInput("non-finite score".into()));
    }
    let n = scores.len();
    let (mean, var) = mean_var(scores);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.975);
    Ok(RunSummary {
        mean,
        half_width: t * var.sqrt() / (n as f64).sqrt(),
        n,
    })
}

/// Micro-averaged F1 per organ: counts are summed within an organ before scoring.
pub fn per_organ_report<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a MatchCounts)>,
) -> Result<BTreeMap<String, F1Report>, MetricsError> {
    let mut grouped: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for (organ, counts) in records {
        grouped.entry(organ.to_string()).or_default().merge(counts);
    }
    grouped
        .into_iter()
        .map(|(organ, c)| f1_from_counts(&c).map(|r| (organ, r)))
        .collect()
}

/// Two-sided Welch t-test p-value for a difference in means.
pub fn significance_test(runs_a: &[f64], runs_b: &[f64]) -> Result<f64, MetricsError> {
    for runs in [runs_a, runs_b] {
        if runs.len() < 2 {
            return Err(MetricsError::TooFewRuns {
                needed: 2,
                got: runs.len(),
            });
        }
    }
    let (ma, va) = mean_var(runs_a);
    let (mb, vb) = mean_var(runs_b);
    let sa = va / runs_a.len() as f64;
    let sb = vb / runs_b.len() as f64;
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2
        / (sa * sa / (runs_a.len() - 1) as f64 + sb * sb / (runs_b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{BC, TC};

    fn p(x: f64, y: f64, c: u8, conf: f64) -> CellPoint {
        CellPoint::new(x, y, c).with_confidence(conf)
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = match_detections(&[p(10.0, 10.0, TC, 0.9)], &[p(10.0, 24.0, TC, 1.0)], 15.0);
        assert_eq!(c.class(TC), ClassCounts { tp: 1, fp: 0, fn_: 0 });
        let c = match_detections(&[p(10.0, 10.0, TC, 0.9)], &[p(10.0, 26.0, TC, 1.0)], 15.0);
        assert_eq!(c.class(TC), ClassCounts { tp: 0, fp: 1, fn_: 1 });
        let c = match_detections(&[p(0.0, 0.0, TC, 0.9)], &[p(0.0, 15.0, TC, 1.0)], 15.0);
        assert_eq!(c.class(TC).tp, 1);
    }

    #[test]
    fn gt_is_single_use() {
        let dets = [p(0.0, 0.0, TC, 0.9), p(1.0, 0.0, TC, 0.8)];
        let c = match_detections(&dets, &[p(0.0, 1.0, TC, 1.0)], 15.0);
        assert_eq!(c.class(TC), ClassCounts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn class_mismatch_keeps_gt_available() {
        let dets = [p(0.0, 0.0, BC, 0.9), p(2.0, 0.0, TC, 0.5)];
        let c = match_detections(&dets, &[p(1.0, 0.0, TC, 1.0)], 15.0);
        assert_eq!(c.class(BC), ClassCounts { tp: 0, fp: 1, fn_: 0 });
        assert_eq!(c.class(TC), ClassCounts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn f1_values() {
        let mut c = MatchCounts::default();
        c.classes.insert(TC, ClassCounts { tp: 2, fp: 1, fn_: 1 });
        let r = f1_from_counts(&c).unwrap();
        assert!((r.mean_f1 - 2.0 / 3.0).abs() < 1e-12);

        c.classes.insert(BC, ClassCounts { tp: 0, fp: 3, fn_: 2 });
        let r = f1_from_counts(&c).unwrap();
        assert_eq!(r.per_class[&BC], Some(0.0));
        assert!((r.mean_f1 - 1.0 / 3.0).abs() < 1e-12);

        assert_eq!(ClassCounts { tp: 5, fp: 0, fn_: 0 }.f1(), Some(1.0));
    }

    #[test]
    fn undefined_classes_are_excluded() {
        let mut c = MatchCounts::with_classes([TC, BC]);
        assert_eq!(f1_from_counts(&c).unwrap_err(), MetricsError::NoEvaluableClass);
        c.classes.insert(TC, ClassCounts { tp: 1, fp: 0, fn_: 0 });
        let r = f1_from_counts(&c).unwrap();
        assert_eq!(r.per_class[&BC], None);
        assert_eq!(r.mean_f1, 1.0);
    }

    #[test]
    fn aggregate_constant_runs() {
        let s = aggregate_runs(&[70.0; 5]).unwrap();
        assert_eq!((s.mean, s.half_width), (70.0, 0.0));
        assert!(aggregate_runs(&[1.0]).is_err());
    }

    #[test]
    fn aggregate_two_runs() {
        // t(0.975, 1 dof) from standard tables.
        let s = aggregate_runs(&[64.0, 66.0]).unwrap();
        assert_eq!(s.mean, 65.0);
        assert!((s.half_width - 12.706_204_736_432_095).abs() < 1e-6);
    }

    #[test]
    fn summary_format() {
        let s = RunSummary {
            mean: 64.44,
            half_width: 1.82,
            n: 5,
        };
        assert_eq!(s.to_string(), "64.44±1.82");
    }

    #[test]
    fn organ_breakdown() {
        let mut perfect = MatchCounts::default();
        perfect.classes.insert(TC, ClassCounts { tp: 3, fp: 0, fn_: 0 });
        let mut empty = MatchCounts::default();
        empty.classes.insert(TC, ClassCounts { tp: 0, fp: 2, fn_: 4 });
        let r = per_organ_report([("breast", &perfect), ("kidney", &empty)]).unwrap();
        assert_eq!(r["breast"].mean_f1, 1.0);
        assert_eq!(r["kidney"].mean_f1, 0.0);

        let single = per_organ_report([("lung", &perfect), ("lung", &empty)]).unwrap();
        let mut summed = perfect.clone();
        summed.merge(&empty);
        assert_eq!(single["lung"], f1_from_counts(&summed).unwrap());
    }

    #[test]
    fn welch_edge_cases() {
        assert!((significance_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        let p = significance_test(&[1.0, 1.0, 1.0], &[2.0, 2.0 + 1e-6, 2.0 - 1e-6]).unwrap();
        assert!(p < 0.01);
        assert_eq!(significance_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(significance_test(&[1.0], &[1.0, 2.0]).is_err());
    }
}
