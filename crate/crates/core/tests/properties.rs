use celltissue::geometry::{
    cell_to_tissue_point, crop_and_upsample, crop_window, downsample_and_pad, tissue_to_cell_point, FieldKind,
    ResampleMode,
};
use celltissue::labels::rasterize_points_px;
use celltissue::metrics::match_detections;
use celltissue::postprocess::{apply_tissue_constraint, extract_peaks};
use celltissue::{CellPoint, ConstraintMode, PatchGeometry, Point, ScalarField, TissueClass, TissueMask, BC, TC};
use proptest::prelude::*;

/// `(cell side, fov ratio, store downsample)` with integer factors everywhere.
fn layouts() -> impl Strategy<Value = (usize, usize, usize)> {
    prop_oneof![Just((8, 2, 2)), Just((8, 4, 4)), Just((16, 4, 4)), Just((16, 2, 1)), Just((32, 4, 2)), Just((32, 4, 8))]
}

fn geometries() -> impl Strategy<Value = PatchGeometry> {
    (layouts(), 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|((s, fov, ds), u, v)| {
        let m = 1.0 / (2.0 * fov as f64);
        PatchGeometry::new(0.5, s, fov, ds, m + u * (1.0 - 2.0 * m), m + v * (1.0 - 2.0 * m)).unwrap()
    })
}

fn field(c: usize, side: usize, seed: u64) -> ScalarField {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ScalarField::from_fn(c, side, side, |_, _, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pooling_preserves_mass(g in geometries(), seed in any::<u64>()) {
        let t = g.tissue_store_side_px().unwrap();
        let m = field(2, g.cell_side_px, seed);
        let out = downsample_and_pad(&m, &g, t).unwrap();
        let w = crop_window(&g, t).unwrap();
        let f = (g.cell_side_px / w.side) as f64;
        prop_assert!((out.sum() * f * f - m.sum()).abs() < 1e-9 * m.sum().max(1.0));
        for y in 0..t {
            for x in 0..t {
                if !w.contains(y, x) {
                    prop_assert_eq!(out.get(0, y, x), 0.0);
                }
            }
        }
    }

    #[test]
    fn nearest_round_trip_is_blockwise_mean(g in geometries(), seed in any::<u64>()) {
        let t = g.tissue_store_side_px().unwrap();
        let s = g.cell_side_px;
        let m = field(1, s, seed);
        let back = crop_and_upsample(&downsample_and_pad(&m, &g, t).unwrap(), FieldKind::Continuous, &g, ResampleMode::Nearest).unwrap();
        let f = s / crop_window(&g, t).unwrap().side;
        for y in 0..s {
            for x in 0..s {
                let (by, bx) = (y / f * f, x / f * f);
                let mut mean = 0.0;
                for yy in by..by + f {
                    for xx in bx..bx + f {
                        mean += m.get(0, yy, xx);
                    }
                }
                mean /= (f * f) as f64;
                prop_assert!((back.get(0, y, x) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_transform_inverts(g in geometries(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let t = g.tissue_store_side_px().unwrap();
        let p = Point::new(u * g.cell_side_px as f64, v * g.cell_side_px as f64);
        let q = tissue_to_cell_point(cell_to_tissue_point(p, &g, t).unwrap(), &g, t).unwrap();
        prop_assert!(p.distance(&q) < g.tissue_store_downsample as f64);
        prop_assert!(p.distance(&q) < 1e-9);
    }

    #[test]
    fn nearest_commutes_with_argmax(g in geometries(), seed in any::<u64>()) {
        let t = g.tissue_store_side_px().unwrap();
        let raw = field(1, t, seed);
        let labels: Vec<usize> = raw.data().iter().map(|v| (v * 3.0) as usize).collect();
        let one_hot = ScalarField::one_hot(&labels, t, t, 3).unwrap();
        let up = crop_and_upsample(&one_hot, FieldKind::Labels, &g, ResampleMode::Nearest).unwrap();
        let w = crop_window(&g, t).unwrap();
        let f = g.cell_side_px / w.side;
        for y in 0..g.cell_side_px {
            for x in 0..g.cell_side_px {
                prop_assert_eq!(up.argmax_at(y, x), labels[(w.top + y / f) * t + w.left + x / f]);
            }
        }
    }

    #[test]
    fn crop_window_shifts_with_center(k in 0usize..8, u in 0.0..1.0f64) {
        let g = PatchGeometry::new(0.5, 16, 4, 4, 0.125, 0.5).unwrap();
        let t = g.tissue_store_side_px().unwrap();
        let c = 0.125 + u * 0.25;
        let a = crop_window(&g.with_center(c, 0.5), t).unwrap();
        let c2 = c + k as f64 / t as f64;
        prop_assume!(c2 <= 0.875);
        let b = crop_window(&g.with_center(c2, 0.5), t).unwrap();
        prop_assert_eq!(b.left, a.left + k);
    }

    #[test]
    fn constant_field_survives_resampling(g in geometries(), v in -3.0..3.0f64) {
        let t = g.tissue_store_side_px().unwrap();
        let m = ScalarField::filled(2, t, t, v);
        for mode in [ResampleMode::Nearest, ResampleMode::Bilinear] {
            let out = crop_and_upsample(&m, FieldKind::Continuous, &g, mode).unwrap();
            prop_assert!(out.data().iter().all(|x| (x - v).abs() < 1e-12));
        }
    }

    #[test]
    fn peaks_respect_threshold_and_spacing(seed in any::<u64>(), d in 1usize..6, thr in 0.0..0.9f64) {
        let m = field(1, 24, seed);
        let peaks = extract_peaks(&m, d, thr);
        for (i, p) in peaks.iter().enumerate() {
            prop_assert!(p.value >= thr);
            for q in &peaks[..i] {
                prop_assert!(p.x.abs_diff(q.x).max(p.y.abs_diff(q.y)) > d);
            }
        }
    }

    #[test]
    fn constraint_keeps_count_and_positions(seed in any::<u64>(), n in 0usize..20, demote in any::<bool>()) {
        let g = PatchGeometry::new(0.5, 16, 4, 4, 0.5, 0.5).unwrap();
        let t = g.tissue_store_side_px().unwrap();
        let raw = field(1, t, seed);
        let mask = TissueMask::from_classes(t, raw.data().iter().map(|v| TissueClass::ALL[(v * 3.0) as usize]).collect()).unwrap();
        let pts = field(1, 3 * n.max(1), seed ^ 1);
        let dets: Vec<CellPoint> = (0..n)
            .map(|i| {
                let d = pts.data();
                CellPoint::new(d[3 * i] * 16.0, d[3 * i + 1] * 16.0, if d[3 * i + 2] < 0.5 { TC } else { BC })
            })
            .collect();
        let mode = if demote { ConstraintMode::DemoteOnly } else { ConstraintMode::Symmetric };
        let out = apply_tissue_constraint(&dets, &mask, &g, mode);
        prop_assert_eq!(out.detections.len(), dets.len());
        for (a, b) in dets.iter().zip(&out.detections) {
            prop_assert_eq!((a.x, a.y, a.confidence), (b.x, b.y, b.confidence));
        }
    }

    #[test]
    fn matching_counts_balance(seed in any::<u64>(), nd in 0usize..12, ng in 0usize..12) {
        let r = field(1, 3 * (nd + ng).max(1), seed);
        let mk = |i: usize| {
            let d = r.data();
            CellPoint::new(d[3 * i] * 60.0, d[3 * i + 1] * 60.0, if d[3 * i + 2] < 0.5 { TC } else { BC })
        };
        let dets: Vec<CellPoint> = (0..nd).map(mk).collect();
        let gts: Vec<CellPoint> = (nd..nd + ng).map(mk).collect();
        let c = match_detections(&dets, &gts, 15.0).total();
        prop_assert_eq!(c.tp + c.fp, nd);
        prop_assert_eq!(c.tp + c.fn_, ng);
    }

    #[test]
    fn disks_never_exceed_their_area(seed in any::<u64>(), n in 1usize..10, r in 1usize..8) {
        let f = field(1, 2 * n, seed);
        let pts: Vec<CellPoint> = (0..n).map(|i| CellPoint::new(f.data()[2 * i] * 47.0, f.data()[2 * i + 1] * 47.0, TC)).collect();
        let map = rasterize_points_px(&pts, 48, 2, r).unwrap();
        let area = (2 * r + 1) * (2 * r + 1);
        prop_assert!(map.count(TC as usize) <= n * area);
        prop_assert!(map.count(TC as usize) > 0);
    }
}
