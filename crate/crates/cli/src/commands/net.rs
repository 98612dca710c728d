use std::path::Path;

use celltissue::stats::cooccurrence;
use celltissue::tinynet::experiment::{assemble_table, train_and_evaluate};
use celltissue::tinynet::synth::ambiguous_tc_share;
use celltissue::tinynet::{
    appearance_only_bound, enumerate_sharing_configs, evaluate, grad_check, save_synth_dataset, synth_generate,
    train as train_net, ModelVariant, SharingConfig, ShareMode, SynthParams, SynthSample, TinyNetwork,
};
use celltissue::{TissueClass, BC, TC};
use rayon::prelude::*;
use serde_json::json;

use super::{with_pool, write_json};
use crate::config::RunConfig;
use crate::{CliError, Outcome};

fn parse_variants(names: &[String]) -> Result<Vec<ModelVariant>, CliError> {
    let mut out: Vec<ModelVariant> = Vec::new();
    for n in names {
        let v: ModelVariant = n.trim().parse().map_err(CliError::usage)?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Training samples first, then `n_test` held-out samples, from one seeded stream.
fn benchmark(cfg: &RunConfig) -> Result<(Vec<SynthSample>, Vec<SynthSample>), CliError> {
    let n_train = cfg.synth.n_samples;
    let params = SynthParams {
        n_samples: n_train + cfg.n_test,
        ..cfg.synth
    };
    let mut all = synth_generate(&params, cfg.seed).map_err(CliError::usage)?;
    let test = all.split_off(n_train);
    Ok((all, test))
}

pub(super) fn synth(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let samples = synth_generate(&cfg.synth, cfg.seed).map_err(CliError::usage)?;
    let cells: usize = samples.iter().map(|s| s.cell_points.len()).sum();
    let ambiguous: usize = samples.iter().map(|s| s.ambiguous.iter().filter(|&&a| a).count()).sum();
    let share = ambiguous_tc_share(&samples);
    let bound = share.map(appearance_only_bound);
    let pairs: Vec<_> = samples.iter().enumerate().map(|(i, s)| s.annotation(&format!("s{i:04}"))).collect();
    let co = cooccurrence(&pairs);
    if let Some(dir) = out_dir {
        save_synth_dataset(dir, &samples).map_err(CliError::fail)?;
    }
    let summary = format!(
        "{} samples, {cells} cells ({ambiguous} ambiguous)\n  TC in CA {:.1}%, BC in BG {:.1}%\n  appearance-only bound on ambiguous-cell mean F1: {}\n",
        samples.len(),
        100.0 * co.fraction(TC, TissueClass::Cancer),
        100.0 * co.fraction(BC, TissueClass::Background),
        bound.map_or("-".into(), |b| format!("{:.2}", 100.0 * b)),
    );
    Ok(Outcome::ok(
        json!({
            "samples": samples.len(),
            "cells": cells,
            "ambiguous_cells": ambiguous,
            "ambiguous_tc_share": share,
            "appearance_bound": bound,
            "cooccurrence": co,
            "written": out_dir,
        }),
        summary,
    ))
}

pub(super) fn train(cfg: &RunConfig, variant: &str, weights_out: Option<&Path>) -> Result<Outcome, CliError> {
    let variant: ModelVariant = variant.parse().map_err(CliError::usage)?;
    let (train_set, test_set) = benchmark(cfg)?;
    let x = &cfg.experiment;
    let mut net = TinyNetwork::new(variant, x.net, cfg.seed).map_err(CliError::usage)?;
    let log = train_net(&mut net, &train_set, &x.train, cfg.seed).map_err(CliError::fail)?;
    let eval = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&net, &test_set, &x.eval, x.train.label_radius_um).map_err(CliError::fail)?)
    };
    if let Some(stem) = weights_out {
        net.params().save(stem).map_err(CliError::fail)?;
    }
    let losses: Vec<f64> = log.losses.iter().map(|l| l.total()).collect();
    let summary = format!(
        "{variant}: {} steps, loss {:.4} -> {:.4}, test mean F1 {}",
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        eval.as_ref().map_or("-".into(), |e| format!("{:.2}", 100.0 * e.report.mean_f1)),
    );
    Ok(Outcome::ok(
        json!({
            "variant": variant,
            "seed": cfg.seed,
            "parameters": net.params().num_scalars(),
            "losses": log.losses,
            "eval": eval,
            "weights": weights_out,
        }),
        summary,
    ))
}

fn with_sharing(mut variants: Vec<ModelVariant>, all: bool) -> Vec<ModelVariant> {
    if all {
        for c in enumerate_sharing_configs() {
            let v = ModelVariant::FeatureSharing(c);
            if !variants.contains(&v) {
                variants.push(v);
            }
        }
    }
    variants
}

pub(super) fn experiment(
    cfg: &RunConfig,
    variants: &[String],
    all_sharing: bool,
    out_dir: Option<&Path>,
) -> Result<Outcome, CliError> {
    let variants = with_sharing(parse_variants(variants)?, all_sharing);
    if variants.is_empty() {
        return Err(CliError::usage("no variants given"));
    }
    let (train_set, test_set) = benchmark(cfg)?;
    if test_set.is_empty() {
        return Err(CliError::usage("n_test must be positive"));
    }
    let x = &cfg.experiment;
    let jobs: Vec<(ModelVariant, usize)> =
        variants.iter().flat_map(|&v| (0..x.n_runs).map(move |r| (v, r))).collect();
    let outcomes = with_pool(cfg, || {
        jobs.par_iter()
            .map(|&(v, r)| train_and_evaluate(v, r, &train_set, &test_set, x))
            .collect::<Result<Vec<_>, _>>()
    })?
    .map_err(CliError::fail)?;
    let table = assemble_table(&variants, &outcomes, x, &test_set).map_err(CliError::fail)?;
    let best_sharing = table
        .rows
        .iter()
        .filter(|r| matches!(r.variant, ModelVariant::FeatureSharing(_)))
        .max_by(|a, b| a.mean_f1.total_cmp(&b.mean_f1))
        .map(|r| r.variant);
    let mut markdown = table.to_markdown();
    if let Some(b) = best_sharing {
        markdown.push_str(&format!("Best feature-sharing configuration: {b}\n"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(CliError::fail)?;
        write_json(&dir.join("table.json"), &table)?;
        let w = |name: &str, text: &str| {
            std::fs::write(dir.join(name), text).map_err(|e| CliError::fail(format!("{name}: {e}")))
        };
        w("table.csv", &table.to_csv())?;
        w("table.md", &markdown)?;
    }
    Ok(Outcome::ok(
        json!({ "table": table, "runs": outcomes, "data_seed": cfg.seed, "best_sharing": best_sharing }),
        markdown,
    ))
}

pub(super) fn gradcheck(cfg: &RunConfig, names: &[String], all_sharing: bool) -> Result<Outcome, CliError> {
    let variants = if names.is_empty() {
        let mut v = ModelVariant::BASELINES.to_vec();
        v.push(ModelVariant::FeatureSharing(SharingConfig {
            encoder: ShareMode::Both,
            bottleneck: ShareMode::Both,
            decoder: ShareMode::Both,
        }));
        v
    } else {
        parse_variants(names)?
    };
    let variants = with_sharing(variants, all_sharing);
    let reports = with_pool(cfg, || {
        variants
            .par_iter()
            .map(|&v| grad_check(v, cfg.seed))
            .collect::<Result<Vec<_>, _>>()
    })?
    .map_err(CliError::fail)?;
    let tol = cfg.gradcheck_tolerance;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let mut summary = String::new();
    for r in &reports {
        summary.push_str(&format!(
            "{:<28} max rel error {:.2e} over {} weights {}\n",
            r.variant,
            r.max_rel_error,
            r.checked,
            if r.max_rel_error < tol { "ok" } else { "FAIL" }
        ));
    }
    Ok(Outcome {
        result: json!({ "tolerance": tol, "max_rel_error": worst, "passed": worst < tol, "reports": reports }),
        summary,
        failed_check: !(worst < tol),
    })
}
