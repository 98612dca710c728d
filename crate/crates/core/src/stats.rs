//! Dataset analytics: cell-class × tissue-class co-occurrence and class ratios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::PairAnnotation;
use crate::geometry::{cell_to_tissue_point, Point};
use crate::tissue::TissueClass;

/// Where each cell class's points fall in the tissue map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    /// Raw counts per cell class, per tissue class.
    pub counts: BTreeMap<u8, BTreeMap<TissueClass, usize>>,
    /// Row-normalized `counts`; every row sums to 1.
    pub fractions: BTreeMap<u8, BTreeMap<TissueClass, f64>>,
    /// Points whose location maps outside the tissue grid, per cell class.
    pub out_of_bounds: BTreeMap<u8, usize>,
}

impl CooccurrenceTable {
    pub fn fraction(&self, cell_class: u8, tissue: TissueClass) -> f64 {
        self.fractions
            .get(&cell_class)
            .and_then(|r| r.get(&tissue))
            .copied()
            .unwrap_or(0.0)
    }

    /// CSV with one row per cell class and one column per tissue class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell_class,BG,CA,UNK,total,out_of_bounds\n");
        for (class, row) in &self.counts {
            let total: usize = row.values().sum();
            let f = |t: TissueClass| self.fraction(*class, t);
            s.push_str(&format!(
                "{class},{:.4},{:.4},{:.4},{total},{}\n",
                f(TissueClass::Background),
                f(TissueClass::Cancer),
                f(TissueClass::Unknown),
                self.out_of_bounds.get(class).copied().unwrap_or(0)
            ));
        }
        s
    }
}

/// Attributes each annotated cell to the stored tissue pixel containing it.
pub fn cooccurrence(pairs: &[PairAnnotation]) -> CooccurrenceTable {
    let mut t = CooccurrenceTable::default();
    for pair in pairs {
        let side = pair.tissue_mask.side();
        for p in &pair.cell_points {
            let row = t.counts.entry(p.class_id).or_insert_with(|| {
                TissueClass::ALL.iter().map(|&c| (c, 0)).collect()
            });
            match cell_to_tissue_point(Point::new(p.x, p.y), &pair.geometry, side) {
                Ok(q) => {
                    let class = pair.tissue_mask.get(q.y.floor() as usize, q.x.floor() as usize);
                    *row.get_mut(&class).expect("all classes present") += 1;
                }
                Err(_) => *t.out_of_bounds.entry(p.class_id).or_default() += 1,
            }
        }
    }
    for (&class, row) in &t.counts {
        let total: usize = row.values().sum();
        if total > 0 {
            t.fractions.insert(
                class,
                row.iter().map(|(&k, &v)| (k, v as f64 / total as f64)).collect(),
            );
        }
    }
    t
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassRatios {
    /// Share of annotated points per cell class.
    pub cell: BTreeMap<u8, f64>,
    /// Share of mask pixels per tissue class.
    pub tissue: BTreeMap<TissueClass, f64>,
    pub cell_total: usize,
    pub tissue_pixels: usize,
}

pub fn class_ratios(pairs: &[PairAnnotation]) -> ClassRatios {
    let mut cell: BTreeMap<u8, usize> = BTreeMap::new();
    let mut tissue: BTreeMap<TissueClass, usize> = BTreeMap::new();
    for pair in pairs {
        for p in &pair.cell_points {
            *cell.entry(p.class_id).or_default() += 1;
        }
        for &c in pair.tissue_mask.classes() {
            *tissue.entry(c).or_default() += 1;
        }
    }
    let cell_total: usize = cell.values().sum();
    let tissue_pixels: usize = tissue.values().sum();
    ClassRatios {
        cell: cell
            .into_iter()
            .map(|(k, v)| (k, v as f64 / cell_total as f64))
            .collect(),
        tissue: tissue
            .into_iter()
            .map(|(k, v)| (k, v as f64 / tissue_pixels as f64))
            .collect(),
        cell_total,
        tissue_pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PatchGeometry;
    use crate::labels::{CellPoint, BC, TC};
    use crate::tissue::TissueMask;

    fn pair(points: Vec<CellPoint>, mask: TissueMask) -> PairAnnotation {
        PairAnnotation {
            pair_id: "p".into(),
            organ: "o".into(),
            geometry: PatchGeometry::new(0.5, 64, 4, 4, 0.5, 0.5).unwrap(),
            cell_points: points,
            tissue_mask: mask,
        }
    }

    #[test]
    fn single_point_over_cancer() {
        let t = cooccurrence(&[pair(
            vec![CellPoint::new(10.0, 10.0, TC)],
            TissueMask::filled(64, TissueClass::Cancer),
        )]);
        assert_eq!(t.fraction(TC, TissueClass::Cancer), 1.0);
        assert_eq!(t.fraction(TC, TissueClass::Background), 0.0);
    }

    #[test]
    fn constructed_93_percent() {
        // Left half of the window (cell x < 32) is CA.
        let mut mask = TissueMask::filled(64, TissueClass::Background);
        for y in 0..64 {
            for x in 0..32 {
                mask.set(y, x, TissueClass::Cancer);
            }
        }
        let mut pts = Vec::new();
        for i in 0..93 {
            pts.push(CellPoint::new((i % 30) as f64, (i % 60) as f64, TC));
        }
        for i in 0..7 {
            pts.push(CellPoint::new(40.0 + i as f64, 5.0, TC));
        }
        pts.push(CellPoint::new(50.0, 50.0, BC));
        pts.push(CellPoint::new(70.0, 50.0, BC));
        let t = cooccurrence(&[pair(pts, mask)]);
        assert!((t.fraction(TC, TissueClass::Cancer) - 0.93).abs() < 1e-12);
        assert_eq!(t.out_of_bounds[&BC], 1);
        let total: usize = t.counts.values().flat_map(|r| r.values()).sum();
        assert_eq!(total, 101);
        for row in t.fractions.values() {
            assert!((row.values().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(t.to_csv().starts_with("cell_class,BG,CA,UNK"));
    }

    #[test]
    fn ratios() {
        let mut mask = TissueMask::filled(4, TissueClass::Background);
        for x in 0..4 {
            mask.set(0, x, TissueClass::Cancer);
            mask.set(1, x, TissueClass::Cancer);
        }
        let p = PairAnnotation {
            geometry: PatchGeometry::new(0.5, 4, 4, 4, 0.5, 0.5).unwrap(),
            ..pair(vec![CellPoint::new(1.0, 1.0, TC)], mask)
        };
        let r = class_ratios(&[p]);
        assert_eq!(r.cell[&TC], 1.0);
        assert_eq!(r.tissue[&TissueClass::Cancer], 0.5);
        assert_eq!(r.tissue[&TissueClass::Background], 0.5);
    }
}
