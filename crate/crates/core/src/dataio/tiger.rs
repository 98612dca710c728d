//! Building cell/tissue pairs from datasets whose annotated regions have
//! irregular sizes, with a fixed 4x field-of-view ratio.
//!
//! Two source layouts are supported:
//!
//! * **Fully overlapping**: cell and tissue labels cover the same region. One
//!   tissue patch is cut at the region's top-left corner and its area is tiled
//!   into a `k × k` grid of cell sub-patches (`k = tissue_side / cell_side`).
//! * **ROI in region**: small cell ROIs sit inside a large tissue region. Each
//!   ROI gets a cell patch centred on it (clamped into the region), and every
//!   tissue window on the region's `cell_side`-stride grid that contains the
//!   cell patch and fits inside the region becomes a pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn square(top: usize, left: usize, side: usize) -> Self {
        Self::new(top, left, side, side)
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.top >= self.top && o.left >= self.left && o.bottom() <= self.bottom() && o.right() <= self.right()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiSourceKind {
    FullyOverlapping,
    RoiInRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub source_kind: RoiSourceKind,
    /// Annotated tissue region.
    pub region: Rect,
    #[serde(default)]
    pub cell_rois: Vec<Rect>,
    /// Microns per pixel of the region grid.
    pub resolution: f64,
}

/// One generated cell/tissue pair, in region-grid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPlacement {
    pub tissue: Rect,
    pub cell: Rect,
    pub c_x: f64,
    pub c_y: f64,
    /// Source ROI for roi-in-region pairs.
    pub roi_index: Option<usize>,
}

fn ratio(cell_side: usize, tissue_side: usize) -> Result<usize, DataError> {
    if cell_side == 0 || tissue_side % cell_side != 0 {
        return Err(DataError::Pairing(format!(
            "tissue side {tissue_side} must be a positive multiple of cell side {cell_side}"
        )));
    }
    Ok(tissue_side / cell_side)
}

fn center_of(cell: &Rect, tissue: &Rect) -> (f64, f64) {
    let side = tissue.width as f64;
    (
        (cell.left - tissue.left) as f64 / side + cell.width as f64 / (2.0 * side),
        (cell.top - tissue.top) as f64 / side + cell.height as f64 / (2.0 * side),
    )
}

pub fn pair_overlapping(
    spec: &RoiSpec,
    cell_side: usize,
    tissue_side: usize,
) -> Result<Vec<PairPlacement>, DataError> {
    if spec.source_kind != RoiSourceKind::FullyOverlapping {
        return Err(DataError::Pairing("expected a fully_overlapping source".into()));
    }
    let k = ratio(cell_side, tissue_side)?;
    if spec.region.height < tissue_side || spec.region.width < tissue_side {
        return Err(DataError::Pairing(format!(
            "region {}x{} smaller than tissue side {tissue_side}",
            spec.region.height, spec.region.width
        )));
    }
    let tissue = Rect::square(spec.region.top, spec.region.left, tissue_side);
    let mut out = Vec::with_capacity(k * k);
    for gy in 0..k {
        for gx in 0..k {
            let cell = Rect::square(tissue.top + gy * cell_side, tissue.left + gx * cell_side, cell_side);
            let (c_x, c_y) = center_of(&cell, &tissue);
            out.push(PairPlacement {
                tissue,
                cell,
                c_x,
                c_y,
                roi_index: None,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoiPairing {
    pub pairs: Vec<PairPlacement>,
    /// `(roi index, reason)` for ROIs that produced no candidates by rule.
    pub skipped: Vec<(usize, String)>,
}

/// Cell-patch offset along one axis: centred on the ROI, clamped into the region.
fn cell_offset(roi_lo: usize, roi_len: usize, cell: usize, reg_lo: usize, reg_len: usize) -> usize {
    let centred = roi_lo as i64 - ((cell - roi_len) / 2) as i64;
    centred.clamp(reg_lo as i64, (reg_lo + reg_len - cell) as i64) as usize
}

/// Tissue offsets on the region's stride grid that contain `[cell_lo, cell_lo + cell)`.
fn tissue_offsets(cell_lo: usize, cell: usize, tissue: usize, reg_lo: usize, reg_len: usize) -> Vec<usize> {
    if reg_len < tissue {
        return Vec::new();
    }
    // Need: t <= cell_lo, t + tissue >= cell_lo + cell, t + tissue <= reg_lo + reg_len.
    let lo = (cell_lo + cell).saturating_sub(tissue).max(reg_lo);
    let hi = cell_lo.min(reg_lo + reg_len - tissue);
    if lo > hi {
        return Vec::new();
    }
    let first = reg_lo + (lo - reg_lo).div_ceil(cell) * cell;
    (first..=hi).step_by(cell).collect()
}

pub fn pair_roi_in_region(
    spec: &RoiSpec,
    cell_side: usize,
    tissue_side: usize,
) -> Result<RoiPairing, DataError> {
    if spec.source_kind != RoiSourceKind::RoiInRegion {
        return Err(DataError::Pairing("expected a roi_in_region source".into()));
    }
    let k = ratio(cell_side, tissue_side)?;
    let reg = spec.region;
    let mut out = RoiPairing::default();
    for (i, roi) in spec.cell_rois.iter().enumerate() {
        if roi.height > cell_side || roi.width > cell_side {
            out.skipped.push((i, format!(
                "roi {}x{} larger than cell side {cell_side}",
                roi.height, roi.width
            )));
            continue;
        }
        if !reg.contains_rect(roi) {
            out.skipped.push((i, "roi not inside region".into()));
            continue;
        }
        if reg.height < tissue_side || reg.width < tissue_side {
            out.skipped.push((i, "region smaller than tissue side".into()));
            continue;
        }
        let cell = Rect::square(
            cell_offset(roi.top, roi.height, cell_side, reg.top, reg.height),
            cell_offset(roi.left, roi.width, cell_side, reg.left, reg.width),
            cell_side,
        );
        let tops = tissue_offsets(cell.top, cell_side, tissue_side, reg.top, reg.height);
        let lefts = tissue_offsets(cell.left, cell_side, tissue_side, reg.left, reg.width);
        let before = out.pairs.len();
        for &t in &tops {
            for &l in &lefts {
                if out.pairs.len() - before == k * k {
                    break;
                }
                let tissue = Rect::square(t, l, tissue_side);
                let (c_x, c_y) = center_of(&cell, &tissue);
                out.pairs.push(PairPlacement {
                    tissue,
                    cell,
                    c_x,
                    c_y,
                    roi_index: Some(i),
                });
            }
        }
        if out.pairs.len() == before {
            out.skipped.push((i, "no stride-aligned tissue window contains the cell patch".into()));
        }
    }
    Ok(out)
}

/// Tissue label remapping applied before pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRemap {
    pub table: BTreeMap<u8, u8>,
    /// Code for values missing from the table; `None` keeps them unchanged.
    pub default: Option<u8>,
}

impl ClassRemap {
    /// Seven-class breast tissue labels: tumour-associated stroma (2) and
    /// inflamed stroma (6) become the positive tissue code 2, classes 1–7
    /// otherwise become BG (1), and the excluded label 0 becomes UNK (255).
    pub fn stroma_vs_rest() -> Self {
        let mut table = BTreeMap::new();
        table.insert(0, 255);
        for c in 1..=7u8 {
            table.insert(c, 1);
        }
        table.insert(2, 2);
        table.insert(6, 2);
        Self {
            table,
            default: Some(255),
        }
    }

    pub fn map(&self, code: u8) -> u8 {
        match self.table.get(&code) {
            Some(&v) => v,
            None => self.default.unwrap_or(code),
        }
    }

    pub fn apply(&self, codes: &mut [u8]) {
        for c in codes {
            *c = self.map(*c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overlapping(h: usize, w: usize) -> RoiSpec {
        RoiSpec {
            source_kind: RoiSourceKind::FullyOverlapping,
            region: Rect::new(100, 50, h, w),
            cell_rois: vec![],
            resolution: 0.5,
        }
    }

    #[test]
    fn overlapping_tiles_sixteen() {
        let pairs = pair_overlapping(&overlapping(600, 700), 128, 512).unwrap();
        assert_eq!(pairs.len(), 16);
        assert_eq!((pairs[0].c_x, pairs[0].c_y), (0.125, 0.125));
        for p in &pairs {
            for c in [p.c_x, p.c_y] {
                let k = (c - 0.125) / 0.25;
                assert!((k - k.round()).abs() < 1e-12);
            }
            assert!(p.tissue.contains_rect(&p.cell));
        }
    }

    #[test]
    fn overlapping_preconditions() {
        assert!(pair_overlapping(&overlapping(500, 700), 128, 512).is_err());
        assert!(pair_overlapping(&overlapping(600, 700), 100, 512).is_err());
        let mut s = overlapping(600, 700);
        s.source_kind = RoiSourceKind::RoiInRegion;
        assert!(pair_overlapping(&s, 128, 512).is_err());
    }

    fn roi_spec(region: Rect, rois: Vec<Rect>) -> RoiSpec {
        RoiSpec {
            source_kind: RoiSourceKind::RoiInRegion,
            region,
            cell_rois: rois,
            resolution: 0.5,
        }
    }

    #[test]
    fn region_equal_to_tissue() {
        let centred = roi_spec(Rect::square(0, 0, 512), vec![Rect::square(206, 206, 100)]);
        let r = pair_roi_in_region(&centred, 128, 512).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!((r.pairs[0].c_x, r.pairs[0].c_y), (0.5, 0.5));

        let off = roi_spec(Rect::square(0, 0, 512), vec![Rect::square(40, 300, 100)]);
        let r = pair_roi_in_region(&off, 128, 512).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_ne!((r.pairs[0].c_x, r.pairs[0].c_y), (0.5, 0.5));
    }

    #[test]
    fn aligned_roi_gets_sixteen() {
        // Cell patch lands at 512 on a 128-stride grid.
        let spec = roi_spec(Rect::square(0, 0, 1152), vec![Rect::square(526, 526, 100)]);
        let r = pair_roi_in_region(&spec, 128, 512).unwrap();
        assert_eq!(r.pairs.len(), 16);
    }

    #[test]
    fn oversized_roi_skipped() {
        let spec = roi_spec(Rect::square(0, 0, 1024), vec![Rect::square(10, 10, 300)]);
        let r = pair_roi_in_region(&spec, 128, 512).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.skipped.len(), 1);
    }

    #[test]
    fn remap_table() {
        let m = ClassRemap::stroma_vs_rest();
        let mut codes = vec![0, 1, 2, 3, 6, 7, 42];
        m.apply(&mut codes);
        assert_eq!(codes, vec![255, 1, 2, 1, 2, 1, 255]);
    }
}
