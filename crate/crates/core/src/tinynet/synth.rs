//! Synthetic cell/tissue pairs in which some cells can only be classified
//! from the tissue around them.
//!
//! Tissue is a smooth random field thresholded into CA and BG and rendered as
//! two flat colours with noise. Cells are small disks on a plain background:
//! a fraction `ambiguity` share one appearance and take their class from the
//! tissue beneath them (CA → TC, BG → BC); the rest draw their class from a
//! prior independent of tissue and are coloured by class.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, images, PairAnnotation, PatchPairRecord, Subset};
use crate::error::{DataError, NetError};
use crate::field::ScalarField;
use crate::geometry::{cell_to_tissue_point, PatchGeometry, Point};
use crate::labels::{CellPoint, BC, TC};
use crate::tissue::{TissueClass, TissueMask};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// `[3, S, S]` in `[0, 1]`.
    pub cell_image: ScalarField,
    /// `[3, T, T]` stored tissue image.
    pub tissue_image: ScalarField,
    pub tissue_mask: TissueMask,
    pub cell_points: Vec<CellPoint>,
    /// Parallel to `cell_points`: whether the cell has the shared appearance.
    pub ambiguous: Vec<bool>,
    pub geometry: PatchGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_samples: usize,
    pub cell_side_px: usize,
    pub fov_ratio: usize,
    pub tissue_store_downsample: usize,
    pub mpp_cell: f64,
    /// Fraction of cells whose appearance does not reveal their class.
    pub ambiguity: f64,
    /// Probability that a distinctive cell is TC.
    pub tc_prior: f64,
    pub min_cells: usize,
    pub max_cells: usize,
    pub min_spacing_px: f64,
    pub cell_radius_px: f64,
    /// Number of signed Gaussian blobs summed into the tissue field.
    pub blob_count: usize,
    /// Blob scale in stored tissue pixels.
    pub blob_sigma_px: f64,
    /// Amplitude of uniform per-pixel noise.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_samples: 64,
            cell_side_px: 64,
            fov_ratio: 4,
            tissue_store_downsample: 4,
            mpp_cell: 0.5,
            ambiguity: 0.7,
            tc_prior: 0.5,
            min_cells: 10,
            max_cells: 16,
            min_spacing_px: 10.0,
            cell_radius_px: 3.0,
            blob_count: 24,
            blob_sigma_px: 6.0,
            noise: 0.05,
        }
    }
}

const CELL_BACKGROUND: [f64; 3] = [0.95, 0.90, 0.93];
const AMBIGUOUS_COLOUR: [f64; 3] = [0.40, 0.22, 0.50];
const TC_COLOUR: [f64; 3] = [0.60, 0.12, 0.22];
const BC_COLOUR: [f64; 3] = [0.15, 0.25, 0.62];
const CA_COLOUR: [f64; 3] = [0.62, 0.30, 0.50];
const BG_COLOUR: [f64; 3] = [0.90, 0.78, 0.86];

impl SynthParams {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.ambiguity) || !(0.0..=1.0).contains(&self.tc_prior) {
            return bad("ambiguity and tc_prior must lie in [0, 1]");
        }
        if self.min_cells > self.max_cells {
            return bad("min_cells exceeds max_cells");
        }
        if self.cell_side_px < 16 || self.cell_side_px % 16 != 0 {
            return bad("cell side must be a positive multiple of 16");
        }
        let g = self.geometry(0.5, 0.5);
        g.validate()?;
        let t = g.tissue_store_side_px()?;
        if t % (4 * self.fov_ratio) != 0 {
            return bad("stored tissue side must be divisible by 4 x fov ratio");
        }
        if self.blob_sigma_px <= 0.0 || self.cell_radius_px <= 0.0 {
            return bad("blob sigma and cell radius must be positive");
        }
        Ok(())
    }

    fn geometry(&self, c_x: f64, c_y: f64) -> PatchGeometry {
        PatchGeometry {
            mpp_cell: self.mpp_cell,
            cell_side_px: self.cell_side_px,
            fov_ratio: self.fov_ratio,
            tissue_store_downsample: self.tissue_store_downsample,
            c_x,
            c_y,
        }
    }

    /// Admissible centres: the cell window lies inside the tissue patch and
    /// its offset is a whole number of pixels at every network level.
    fn centre_grid(&self) -> Vec<f64> {
        let n = 4 * self.fov_ratio;
        let half = n / (2 * self.fov_ratio);
        (half..=n - half).map(|k| k as f64 / n as f64).collect()
    }
}

fn noisy(rng: &mut ChaCha8Rng, base: f64, noise: f64) -> f64 {
    (base + rng.random_range(-noise..=noise)).clamp(0.0, 1.0)
}

fn tissue_field(p: &SynthParams, side: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let blobs: Vec<(f64, f64, f64)> = (0..p.blob_count)
        .map(|_| {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            (rng.random_range(0.0..side as f64), rng.random_range(0.0..side as f64), s)
        })
        .collect();
    let inv = 1.0 / (2.0 * p.blob_sigma_px * p.blob_sigma_px);
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = blobs
                .iter()
                .map(|&(by, bx, s)| {
                    let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                    s * (-d2 * inv).exp()
                })
                .sum();
        }
    }
    out
}

fn place_cells(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(p.min_cells..=p.max_cells);
    let margin = p.cell_radius_px.ceil() as usize + 1;
    let hi = p.cell_side_px - margin;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut attempts = 0;
    while pts.len() < n && attempts < 2000 {
        attempts += 1;
        let q = (rng.random_range(margin..hi) as f64, rng.random_range(margin..hi) as f64);
        if pts.iter().all(|o| ((o.0 - q.0).powi(2) + (o.1 - q.1).powi(2)).sqrt() >= p.min_spacing_px) {
            pts.push(q);
        }
    }
    pts
}

fn stamp(img: &mut ScalarField, cx: f64, cy: f64, r: f64, colour: [f64; 3]) {
    let side = img.width();
    let lo = |v: f64| (v - r - 1.0).floor().max(0.0) as usize;
    let hi = |v: f64| ((v + r + 1.0).ceil() as usize).min(side - 1);
    for y in lo(cy)..=hi(cy) {
        for x in lo(cx)..=hi(cx) {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let a = (r + 0.5 - d).clamp(0.0, 1.0);
            if a > 0.0 {
                for (c, col) in colour.iter().enumerate() {
                    let v = img.get(c, y, x);
                    img.set(c, y, x, v * (1.0 - a) + col * a);
                }
            }
        }
    }
}

fn generate_one(p: &SynthParams, rng: &mut ChaCha8Rng) -> SynthSample {
    let grid = p.centre_grid();
    let geom = p.geometry(grid[rng.random_range(0..grid.len())], grid[rng.random_range(0..grid.len())]);
    let t = geom.tissue_store_side_px().expect("validated");
    let field = tissue_field(p, t, rng);
    let classes: Vec<TissueClass> = field
        .iter()
        .map(|&v| if v > 0.0 { TissueClass::Cancer } else { TissueClass::Background })
        .collect();
    let tissue_mask = TissueMask::from_classes(t, classes).expect("sized");

    let mut tissue_image = ScalarField::zeros(3, t, t);
    for y in 0..t {
        for x in 0..t {
            let col = if tissue_mask.get(y, x) == TissueClass::Cancer { CA_COLOUR } else { BG_COLOUR };
            for (c, v) in col.iter().enumerate() {
                tissue_image.set(c, y, x, noisy(rng, *v, p.noise));
            }
        }
    }

    let s = p.cell_side_px;
    let mut cell_image = ScalarField::zeros(3, s, s);
    for y in 0..s {
        for x in 0..s {
            for (c, v) in CELL_BACKGROUND.iter().enumerate() {
                cell_image.set(c, y, x, noisy(rng, *v, p.noise));
            }
        }
    }
    let mut cell_points = Vec::new();
    let mut ambiguous = Vec::new();
    for (x, y) in place_cells(p, rng) {
        let amb = rng.random::<f64>() < p.ambiguity;
        let (class, colour) = if amb {
            let q = cell_to_tissue_point(Point::new(x, y), &geom, t).expect("inside the cell grid");
            let tc = tissue_mask.get(q.y.floor() as usize, q.x.floor() as usize) == TissueClass::Cancer;
            (if tc { TC } else { BC }, AMBIGUOUS_COLOUR)
        } else if rng.random::<f64>() < p.tc_prior {
            (TC, TC_COLOUR)
        } else {
            (BC, BC_COLOUR)
        };
        stamp(&mut cell_image, x, y, p.cell_radius_px, colour);
        cell_points.push(CellPoint::new(x, y, class));
        ambiguous.push(amb);
    }
    SynthSample {
        cell_image,
        tissue_image,
        tissue_mask,
        cell_points,
        ambiguous,
        geometry: geom,
    }
}

/// Deterministic for a given `(params, seed)`.
pub fn synth_generate(params: &SynthParams, seed: u64) -> Result<Vec<SynthSample>, NetError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..params.n_samples).map(|_| generate_one(params, &mut rng)).collect())
}

/// Best expected mean F1 over {TC, BC} for a classifier that sees only the
/// shared appearance of ambiguous cells, when a fraction `p_tc` of them are TC.
///
/// Such a classifier can only label TC at some rate `q` regardless of the
/// true class, giving `F1_TC = 2qp / (q + p)` and
/// `F1_BC = 2(1 − q)(1 − p) / (2 − q − p)`.
///
/// With only one class present the other class's F1 is undefined and the
/// bound is 1.
pub fn appearance_only_bound(p_tc: f64) -> f64 {
    if p_tc <= 0.0 || p_tc >= 1.0 {
        return 1.0;
    }
    let mean = |q: f64| {
        let tc = if q + p_tc > 0.0 { 2.0 * q * p_tc / (q + p_tc) } else { 0.0 };
        let bc = if 2.0 - q - p_tc > 0.0 {
            2.0 * (1.0 - q) * (1.0 - p_tc) / (2.0 - q - p_tc)
        } else {
            0.0
        };
        (tc + bc) / 2.0
    };
    (0..=10_000).map(|i| mean(i as f64 / 10_000.0)).fold(0.0, f64::max)
}

impl SynthSample {
    pub fn annotation(&self, pair_id: &str) -> PairAnnotation {
        PairAnnotation {
            pair_id: pair_id.to_string(),
            organ: SYNTH_ORGAN.to_string(),
            geometry: self.geometry,
            cell_points: self.cell_points.clone(),
            tissue_mask: self.tissue_mask.clone(),
        }
    }
}

pub const SYNTH_ORGAN: &str = "synthetic";

/// Writes samples as a dataset under `root` (one WSI per sample, all in the
/// train subset) and returns the records. Ambiguity flags go to
/// `ambiguous.json`, keyed by pair id.
pub fn save_synth_dataset(root: &Path, samples: &[SynthSample]) -> Result<Vec<PatchPairRecord>, DataError> {
    let mut records = Vec::with_capacity(samples.len());
    let mut flags = std::collections::BTreeMap::new();
    for dir in ["cell", "tissue", "masks"] {
        std::fs::create_dir_all(root.join(dir))?;
    }
    for (i, s) in samples.iter().enumerate() {
        let id = format!("s{i:04}");
        let rec = PatchPairRecord {
            pair_id: id.clone(),
            wsi_id: format!("wsi{i:04}"),
            organ: SYNTH_ORGAN.to_string(),
            subset: Subset::Train,
            geometry: s.geometry,
            cell_image_path: format!("cell/{id}.png").into(),
            tissue_image_path: format!("tissue/{id}.png").into(),
            cell_annotations_path: format!("annotations/{id}.csv").into(),
            tissue_mask_path: format!("masks/{id}.png").into(),
            cell_points: s.cell_points.clone(),
        };
        images::write_rgb(&root.join(&rec.cell_image_path), &s.cell_image)?;
        images::write_rgb(&root.join(&rec.tissue_image_path), &s.tissue_image)?;
        images::write_tissue_mask(&root.join(&rec.tissue_mask_path), &s.tissue_mask)?;
        flags.insert(id, s.ambiguous.clone());
        records.push(rec);
    }
    dataio::save_dataset(root, &records)?;
    std::fs::write(root.join("ambiguous.json"), serde_json::to_string(&flags)?)?;
    Ok(records)
}

/// Share of TC among ambiguous cells.
pub fn ambiguous_tc_share(samples: &[SynthSample]) -> Option<f64> {
    let (mut tc, mut n) = (0usize, 0usize);
    for s in samples {
        for (p, &a) in s.cell_points.iter().zip(&s.ambiguous) {
            if a {
                n += 1;
                tc += (p.class_id == TC) as usize;
            }
        }
    }
    (n > 0).then(|| tc as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::cooccurrence;

    fn small(ambiguity: f64) -> SynthParams {
        SynthParams {
            n_samples: 6,
            ambiguity,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_generate(&small(0.5), 3).unwrap(), synth_generate(&small(0.5), 3).unwrap());
        assert_ne!(synth_generate(&small(0.5), 3).unwrap(), synth_generate(&small(0.5), 4).unwrap());
    }

    #[test]
    fn fully_ambiguous_tc_lies_in_ca() {
        let s = synth_generate(&small(1.0), 1).unwrap();
        let pairs: Vec<PairAnnotation> = s.iter().map(|x| x.annotation("")).collect();
        let t = cooccurrence(&pairs);
        assert_eq!(t.fraction(TC, TissueClass::Cancer), 1.0);
        assert_eq!(t.fraction(BC, TissueClass::Background), 1.0);
    }

    #[test]
    fn ambiguous_cells_look_alike() {
        let s = synth_generate(&small(0.5), 2).unwrap();
        for x in &s {
            assert_eq!(x.cell_points.len(), x.ambiguous.len());
            assert!(x.geometry.contains_cell_patch());
            assert!(x.cell_image.all_finite() && x.tissue_image.all_finite());
        }
    }

    #[test]
    fn bound_values() {
        assert!((appearance_only_bound(0.5) - 0.5).abs() < 1e-12);
        assert!((appearance_only_bound(0.8) - 0.5).abs() < 1e-3);
        assert_eq!(appearance_only_bound(1.0), 1.0);
    }
}
