use std::collections::BTreeMap;
use std::path::Path;

use celltissue::dataio::tiger::RoiPairing;
use celltissue::dataio::{
    apply_split, dataset_summary, load_annotation, load_dataset, pair_overlapping, pair_roi_in_region,
    save_dataset, split_wsis, RoiSpec, Subset,
};
use celltissue::error::DataError;
use celltissue::stats::{class_ratios, cooccurrence};
use celltissue::{TissueClass, TC};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use super::{with_pool, write_json};
use crate::config::RunConfig;
use crate::{CliError, Outcome, PairMode};

pub(super) fn validate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let root = cfg.root()?;
    match load_dataset(root) {
        Ok(records) => {
            let summary = dataset_summary(&records);
            Ok(Outcome::ok(
                json!({ "valid": true, "records": records.len(), "problems": [], "summary": summary }),
                format!("{}: {} records, valid", root.display(), records.len()),
            ))
        }
        Err(DataError::Validation(problems)) => Ok(Outcome {
            summary: format!(
                "{}: {} problem(s)\n  {}",
                root.display(),
                problems.len(),
                problems.join("\n  ")
            ),
            result: json!({ "valid": false, "records": null, "problems": problems }),
            failed_check: true,
        }),
        Err(e) => Err(CliError::fail(e)),
    }
}

#[derive(Deserialize)]
struct WsiRow {
    wsi_id: String,
    organ: String,
}

fn read_wsi_list(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::fail(format!("{}: {e}", path.display())))?;
    rdr.deserialize::<WsiRow>()
        .map(|r| r.map(|r| (r.wsi_id, r.organ)))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::fail(format!("{}: {e}", path.display())))
}

pub(super) fn split(
    cfg: &RunConfig,
    wsi_list: Option<&Path>,
    assignment_out: Option<&Path>,
    apply: bool,
) -> Result<Outcome, CliError> {
    let mut records = None;
    let wsis = match wsi_list {
        Some(p) => read_wsi_list(p)?,
        None => {
            let r = load_dataset(cfg.root()?).map_err(CliError::fail)?;
            let w = r.iter().map(|r| (r.wsi_id.clone(), r.organ.clone())).collect();
            records = Some(r);
            w
        }
    };
    let assignment = split_wsis(&wsis, cfg.split_ratios, cfg.seed).map_err(|e| match e {
        DataError::BadRatios(_) => CliError::usage(e),
        other => CliError::fail(other),
    })?;

    let organ_of: BTreeMap<&str, &str> = wsis.iter().rev().map(|(w, o)| (w.as_str(), o.as_str())).collect();
    let mut counts: BTreeMap<&str, BTreeMap<Subset, usize>> = BTreeMap::new();
    for (wsi, subset) in &assignment {
        let row = counts
            .entry(organ_of[wsi.as_str()])
            .or_insert_with(|| Subset::ALL.iter().map(|&s| (s, 0)).collect());
        *row.get_mut(subset).expect("all subsets present") += 1;
    }
    let file = json!({ "seed": cfg.seed, "ratios": cfg.split_ratios, "assignment": assignment });
    if let Some(p) = assignment_out {
        write_json(p, &file)?;
    }
    if apply {
        let (Some(mut recs), Ok(root)) = (records, cfg.root()) else {
            return Err(CliError::usage("--apply needs a dataset root"));
        };
        apply_split(&mut recs, &assignment);
        save_dataset(root, &recs).map_err(CliError::fail)?;
    }

    let mut summary = format!("{} WSIs split with seed {}\n", assignment.len(), cfg.seed);
    for (organ, row) in &counts {
        summary.push_str(&format!(
            "  {organ}: train {} / val {} / test {}\n",
            row[&Subset::Train],
            row[&Subset::Val],
            row[&Subset::Test]
        ));
    }
    Ok(Outcome::ok(
        json!({ "seed": cfg.seed, "ratios": cfg.split_ratios, "assignment": assignment, "counts": counts, "applied": apply }),
        summary,
    ))
}

pub(super) fn stats(cfg: &RunConfig, csv_out: Option<&Path>) -> Result<Outcome, CliError> {
    let root = cfg.root()?;
    let records = load_dataset(root).map_err(CliError::fail)?;
    let pairs = with_pool(cfg, || {
        records
            .par_iter()
            .map(|r| load_annotation(root, r))
            .collect::<Result<Vec<_>, _>>()
    })?
    .map_err(CliError::fail)?;
    let ratios = class_ratios(&pairs);
    let co = cooccurrence(&pairs);
    let tc_outside_ca = co.fractions.contains_key(&TC).then(|| 100.0 * (1.0 - co.fraction(TC, TissueClass::Cancer)));
    if let Some(p) = csv_out {
        std::fs::write(p, co.to_csv()).map_err(|e| CliError::fail(format!("{}: {e}", p.display())))?;
    }
    fn pct<K>(m: &BTreeMap<K, f64>) -> String {
        m.values().map(|v| format!("{:.2}", 100.0 * v)).collect::<Vec<_>>().join("/")
    }
    let summary = format!(
        "{} pairs, {} cells\n  cell classes (TC/BC) %: {}\n  tissue classes (BG/CA/UNK) %: {}\n  TC outside CA: {}\n",
        pairs.len(),
        ratios.cell_total,
        pct(&ratios.cell),
        pct(&ratios.tissue),
        tc_outside_ca.map_or("-".into(), |v| format!("{v:.2}%")),
    );
    Ok(Outcome::ok(
        json!({
            "pairs": pairs.len(),
            "summary": dataset_summary(&records),
            "class_ratios": ratios,
            "cooccurrence": co,
            "tc_outside_ca_pct": tc_outside_ca,
        }),
        summary,
    ))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Many(Vec<RoiSpec>),
    One(RoiSpec),
}

pub(super) fn pair_tiger(cfg: &RunConfig, spec: &Path, mode: PairMode) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(spec).map_err(|e| CliError::fail(format!("{}: {e}", spec.display())))?;
    let specs = match serde_json::from_str::<SpecFile>(&text)
        .map_err(|e| CliError::fail(format!("{}: {e}", spec.display())))?
    {
        SpecFile::Many(v) => v,
        SpecFile::One(s) => vec![s],
    };
    let (cs, ts) = (cfg.tiger_cell_side, cfg.tiger_tissue_side);
    let mut out = Vec::with_capacity(specs.len());
    for s in &specs {
        let pairing = match mode {
            PairMode::Overlapping => RoiPairing {
                pairs: pair_overlapping(s, cs, ts).map_err(CliError::fail)?,
                skipped: Vec::new(),
            },
            PairMode::RoiInRegion => pair_roi_in_region(s, cs, ts).map_err(CliError::fail)?,
        };
        out.push(pairing);
    }
    let total: usize = out.iter().map(|p| p.pairs.len()).sum();
    let skipped: usize = out.iter().map(|p| p.skipped.len()).sum();
    Ok(Outcome::ok(
        json!({ "regions": out, "total_pairs": total, "skipped_rois": skipped }),
        format!("{} region(s): {total} pairs, {skipped} ROI(s) skipped", specs.len()),
    ))
}
