//! Synchronized geometric augmentation of cell/tissue pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synth::SynthSample;
use crate::field::ScalarField;
use crate::labels::CellPoint;
use crate::tissue::TissueMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
    /// Brightness scale is drawn from `1 ± jitter`, offset from `±jitter / 2`.
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            rotate: true,
            jitter: 0.1,
        }
    }
}

/// New pixel `(y, x)` reads old pixel `src(y, x)`.
fn remap(f: &ScalarField, src: impl Fn(usize, usize) -> (usize, usize)) -> ScalarField {
    let s = f.height();
    ScalarField::from_fn(f.channels(), s, s, |c, y, x| {
        let (sy, sx) = src(y, x);
        f.get(c, sy, sx)
    })
}

fn remap_mask(m: &TissueMask, src: impl Fn(usize, usize) -> (usize, usize)) -> TissueMask {
    let s = m.side();
    let mut out = m.clone();
    for y in 0..s {
        for x in 0..s {
            let (sy, sx) = src(y, x);
            out.set(y, x, m.get(sy, sx));
        }
    }
    out
}

/// Horizontal flip: `x → S − 1 − x`, `c_x → 1 − c_x`.
pub fn hflip(s: &SynthSample) -> SynthSample {
    let cs = s.cell_image.width();
    let ts = s.tissue_image.width();
    let mut out = s.clone();
    out.cell_image = remap(&s.cell_image, |y, x| (y, cs - 1 - x));
    out.tissue_image = remap(&s.tissue_image, |y, x| (y, ts - 1 - x));
    out.tissue_mask = remap_mask(&s.tissue_mask, |y, x| (y, s.tissue_mask.side() - 1 - x));
    for p in &mut out.cell_points {
        p.x = (cs - 1) as f64 - p.x;
    }
    out.geometry.c_x = 1.0 - s.geometry.c_x;
    out
}

/// Rotation by 90° with point map `(x, y) → (y, S − 1 − x)` and
/// `(c_x, c_y) → (c_y, 1 − c_x)`.
pub fn rot90(s: &SynthSample) -> SynthSample {
    let cs = s.cell_image.width();
    let ts = s.tissue_image.width();
    let ms = s.tissue_mask.side();
    let mut out = s.clone();
    out.cell_image = remap(&s.cell_image, |y, x| (x, cs - 1 - y));
    out.tissue_image = remap(&s.tissue_image, |y, x| (x, ts - 1 - y));
    out.tissue_mask = remap_mask(&s.tissue_mask, |y, x| (x, ms - 1 - y));
    for p in &mut out.cell_points {
        *p = CellPoint {
            x: p.y,
            y: (cs - 1) as f64 - p.x,
            ..*p
        };
    }
    out.geometry.c_x = s.geometry.c_y;
    out.geometry.c_y = 1.0 - s.geometry.c_x;
    out
}

fn jitter(f: &mut ScalarField, amount: f64, rng: &mut impl Rng) {
    if amount <= 0.0 {
        return;
    }
    let scale = rng.random_range(1.0 - amount..=1.0 + amount);
    let shift = rng.random_range(-amount / 2.0..=amount / 2.0);
    for v in f.data_mut() {
        *v = (*v * scale + shift).clamp(0.0, 1.0);
    }
}

/// Random flip and rotation applied identically to both patches, labels and
/// geometry; brightness jitter drawn independently per image.
pub fn augment_pair(s: &SynthSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> SynthSample {
    let mut out = if cfg.flip && rng.random::<bool>() { hflip(s) } else { s.clone() };
    if cfg.rotate {
        for _ in 0..rng.random_range(0..4) {
            out = rot90(&out);
        }
    }
    jitter(&mut out.cell_image, cfg.jitter, rng);
    jitter(&mut out.tissue_image, cfg.jitter, rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::rasterize_points_px;
    use crate::tinynet::synth::{synth_generate, SynthParams};
    use crate::geometry::{cell_to_tissue_point, Point};

    fn sample() -> SynthSample {
        synth_generate(&SynthParams { n_samples: 1, ..SynthParams::default() }, 5).unwrap().remove(0)
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample();
        assert_eq!(hflip(&hflip(&s)), s);
    }

    #[test]
    fn four_rotations_are_identity() {
        let s = sample();
        assert_eq!(rot90(&rot90(&rot90(&rot90(&s)))), s);
    }

    #[test]
    fn flip_centre() {
        let mut s = sample();
        s.geometry.c_x = 0.3;
        s.geometry.c_y = 0.5;
        let f = hflip(&s);
        assert!((f.geometry.c_x - 0.7).abs() < 1e-15);
        assert_eq!(f.geometry.c_y, 0.5);
    }

    #[test]
    fn rotation_point_map_and_raster_commute() {
        let s = sample();
        let r = rot90(&s);
        let side = s.cell_image.width();
        for (a, b) in s.cell_points.iter().zip(&r.cell_points) {
            assert_eq!((b.x, b.y), (a.y, (side - 1) as f64 - a.x));
        }
        let before = rasterize_points_px(&s.cell_points, side, 2, 3).unwrap();
        let after = rasterize_points_px(&r.cell_points, side, 2, 3).unwrap();
        let rotated = remap(before.field(), |y, x| (x, side - 1 - y));
        assert_eq!(&rotated, after.field());
    }

    #[test]
    fn tissue_under_cells_is_preserved() {
        let s = sample();
        let t = s.tissue_mask.side();
        let under = |x: &SynthSample| -> Vec<_> {
            x.cell_points
                .iter()
                .map(|p| {
                    let q = cell_to_tissue_point(Point::new(p.x, p.y), &x.geometry, t).unwrap();
                    x.tissue_mask.get(q.y.floor() as usize, q.x.floor() as usize)
                })
                .collect()
        };
        assert_eq!(under(&rot90(&s)), under(&s));
        assert_eq!(under(&hflip(&s)), under(&s));
    }
}
