use std::path::{Path, PathBuf};

use celltissue::dataio::{images, load_dataset};
use celltissue::labels::{merge_annotations, radius_px, rasterize_points, write_detections_csv, write_points_csv};
use celltissue::metrics::{f1_from_counts, match_detections, per_organ_report, MatchCounts};
use celltissue::postprocess::{apply_tissue_constraint, detect as detect_cells};
use celltissue::{ProbabilityMap, ScalarField};
use rayon::prelude::*;
use serde_json::json;

use super::{create_file, read_points, with_pool};
use crate::config::RunConfig;
use crate::{CliError, Outcome};

const CLASS_COLOURS: [[f64; 3]; 3] = [[0.0, 0.0, 0.0], [0.9, 0.1, 0.1], [0.1, 0.6, 0.9]];

pub(super) fn rasterize(cfg: &RunConfig, points: &Path, png_out: Option<&Path>) -> Result<Outcome, CliError> {
    let pts = read_points(points)?;
    let side = cfg.geometry.cell_side_px;
    let map = rasterize_points(&pts, side, cfg.num_classes, cfg.label_radius_um, cfg.geometry.mpp_cell)
        .map_err(CliError::fail)?;
    let per_class: Vec<usize> = (0..=cfg.num_classes).map(|c| map.count(c)).collect();
    if let Some(p) = png_out {
        let plane = map.class_plane();
        let img = ScalarField::from_fn(3, side, side, |c, y, x| {
            CLASS_COLOURS[plane[y * side + x].min(CLASS_COLOURS.len() - 1)][c]
        });
        images::write_rgb(p, &img).map_err(CliError::fail)?;
    }
    let r = radius_px(cfg.label_radius_um, cfg.geometry.mpp_cell);
    let fg: usize = per_class[1..].iter().sum();
    Ok(Outcome::ok(
        json!({
            "points": pts.len(),
            "side_px": side,
            "radius_px": r,
            "foreground_px": fg,
            "pixels_per_class": per_class,
        }),
        format!("{} points, disk radius {r} px, {fg} foreground pixels", pts.len()),
    ))
}

/// Reads a probability map from a JSON field or an RGB PNG whose channels are
/// normalized per pixel (all-zero pixels become background).
fn read_prob(path: &Path) -> Result<ProbabilityMap, CliError> {
    let err = |e: &dyn std::fmt::Display| CliError::fail(format!("{}: {e}", path.display()));
    let field: ScalarField = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = std::fs::read_to_string(path).map_err(|e| err(&e))?;
        serde_json::from_str(&text).map_err(|e| err(&e))?
    } else {
        let rgb = images::read_rgb(path).map_err(|e| err(&e))?;
        let (c, h, w) = rgb.shape();
        let mut out = rgb.clone();
        for i in 0..h * w {
            let total: f64 = (0..c).map(|k| rgb.data()[k * h * w + i]).sum();
            for k in 0..c {
                out.data_mut()[k * h * w + i] = if total > 0.0 {
                    rgb.data()[k * h * w + i] / total
                } else {
                    (k == 0) as u8 as f64
                };
            }
        }
        out
    };
    ProbabilityMap::new(field).map_err(|e| err(&e))
}

pub(super) fn detect(cfg: &RunConfig, probs: &[PathBuf], out_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let d = cfg.detect;
    let results = with_pool(cfg, || {
        probs
            .par_iter()
            .map(|p| read_prob(p).map(|m| detect_cells(&m, d.min_distance_px, d.threshold)))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let mut files = Vec::with_capacity(probs.len());
    for (path, dets) in probs.iter().zip(&results) {
        let written = match out_dir {
            Some(dir) => {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                let out = dir.join(format!("{stem}.csv"));
                write_detections_csv(create_file(&out)?, dets).map_err(CliError::fail)?;
                Some(out)
            }
            None => None,
        };
        files.push(json!({ "input": path, "count": dets.len(), "detections": dets, "written": written }));
    }
    let total: usize = results.iter().map(Vec::len).sum();
    Ok(Outcome::ok(
        json!({ "files": files, "total_detections": total }),
        format!("{} map(s), {total} detections", probs.len()),
    ))
}

pub(super) fn constrain(cfg: &RunConfig, dets: &Path, mask: &Path, csv_out: Option<&Path>) -> Result<Outcome, CliError> {
    let input = read_points(dets)?;
    let mask = images::read_tissue_mask(mask).map_err(|e| CliError::fail(format!("{}: {e}", mask.display())))?;
    let expected = cfg.geometry.tissue_store_side_px().map_err(CliError::usage)?;
    if mask.side() != expected {
        return Err(CliError::fail(format!(
            "tissue mask is {0}x{0}, geometry expects {expected}x{expected}",
            mask.side()
        )));
    }
    let out = apply_tissue_constraint(&input, &mask, &cfg.geometry, cfg.constraint_mode);
    if let Some(p) = csv_out {
        write_detections_csv(create_file(p)?, &out.detections).map_err(CliError::fail)?;
    }
    Ok(Outcome::ok(
        json!({
            "count_in": input.len(),
            "count_out": out.detections.len(),
            "relabeled": out.relabeled,
            "flagged": out.flagged,
            "detections": out.detections,
        }),
        format!(
            "{} detections, {} relabeled, {} outside the tissue grid",
            input.len(),
            out.relabeled,
            out.flagged.len()
        ),
    ))
}

fn fmt_f1(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

pub(super) fn eval(
    cfg: &RunConfig,
    dets: &[PathBuf],
    gts: &[PathBuf],
    pred_dir: Option<&Path>,
) -> Result<Outcome, CliError> {
    let r = cfg.match_radius_px;
    // (label, organ, dets path, points)
    let jobs: Vec<(String, Option<String>, PathBuf, Vec<celltissue::CellPoint>)> = match pred_dir {
        Some(dir) => {
            if !dets.is_empty() || !gts.is_empty() {
                return Err(CliError::usage("use either --pred-dir or --dets/--gts"));
            }
            let records = load_dataset(cfg.root()?).map_err(CliError::fail)?;
            records
                .into_iter()
                .map(|rec| {
                    let p = dir.join(format!("{}.csv", rec.pair_id));
                    (rec.pair_id, Some(rec.organ), p, rec.cell_points)
                })
                .collect()
        }
        None => {
            if dets.is_empty() || dets.len() != gts.len() {
                return Err(CliError::usage("give matching numbers of --dets and --gts (at least one)"));
            }
            dets.iter()
                .zip(gts)
                .map(|(d, g)| read_points(g).map(|pts| (d.display().to_string(), None, d.clone(), pts)))
                .collect::<Result<_, _>>()?
        }
    };
    let counts = with_pool(cfg, || {
        jobs.par_iter()
            .map(|(_, _, path, gt)| read_points(path).map(|d| match_detections(&d, gt, r)))
            .collect::<Result<Vec<MatchCounts>, _>>()
    })??;

    let mut total = MatchCounts::with_classes(1..=cfg.num_classes as u8);
    let mut per_pair = Vec::with_capacity(jobs.len());
    for ((label, organ, _, _), c) in jobs.iter().zip(&counts) {
        total.merge(c);
        let f1 = f1_from_counts(c).ok().map(|rep| rep.mean_f1);
        per_pair.push(json!({ "pair": label, "organ": organ, "counts": c, "mean_f1": f1 }));
    }
    let report = f1_from_counts(&total).map_err(CliError::fail)?;
    let organs = if pred_dir.is_some() {
        Some(
            per_organ_report(jobs.iter().zip(&counts).filter_map(|((_, o, _, _), c)| o.as_deref().map(|o| (o, c))))
                .map_err(CliError::fail)?,
        )
    } else {
        None
    };
    let t = total.total();
    let mut summary = format!(
        "mean F1 {:.4} (TP {} / FP {} / FN {}, radius {r} px)\n",
        report.mean_f1, t.tp, t.fp, t.fn_
    );
    for (class, f1) in &report.per_class {
        summary.push_str(&format!("  class {class}: F1 {}\n", fmt_f1(*f1)));
    }
    if let Some(o) = &organs {
        for (organ, rep) in o {
            summary.push_str(&format!("  {organ}: mean F1 {:.4}\n", rep.mean_f1));
        }
    }
    Ok(Outcome::ok(
        json!({ "radius_px": r, "report": report, "pairs": per_pair, "organs": organs }),
        summary,
    ))
}

pub(super) fn consensus(cfg: &RunConfig, a: &Path, b: &Path, csv_out: Option<&Path>) -> Result<Outcome, CliError> {
    let (pa, pb) = (read_points(a)?, read_points(b)?);
    let rep = merge_annotations(&pa, &pb, cfg.match_radius_px);
    if let Some(p) = csv_out {
        write_points_csv(create_file(p)?, &rep.agreed).map_err(CliError::fail)?;
    }
    let summary = format!(
        "{} agreed, {} class conflicts, {} only in A, {} only in B",
        rep.agreed.len(),
        rep.class_conflicts.len(),
        rep.only_a.len(),
        rep.only_b.len()
    );
    Ok(Outcome::ok(json!({ "radius_px": cfg.match_radius_px, "report": rep }), summary))
}
