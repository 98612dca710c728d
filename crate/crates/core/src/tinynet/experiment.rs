//! Repeated training of several variants with shared per-run seeds, scored on
//! a held-out set and compared against the cell-only baseline.

use serde::{Deserialize, Serialize};

use super::model::{ModelVariant, NetworkConfig, TinyNetwork};
use super::synth::{ambiguous_tc_share, appearance_only_bound, SynthSample};
use super::train::{evaluate, train, EvalConfig, EvalResult, TrainConfig};
use crate::error::NetError;
use crate::metrics::{aggregate_runs, significance_test, RunSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_runs: usize,
    /// Run `r` initializes and trains every variant from seed `base_seed + r`.
    pub base_seed: u64,
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_runs: 5,
            base_seed: 0,
            net: NetworkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed + run as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub variant: ModelVariant,
    pub run: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub eval: EvalResult,
}

/// Trains one variant for one run and scores it on `test`.
pub fn train_and_evaluate(
    variant: ModelVariant,
    run: usize,
    train_set: &[SynthSample],
    test_set: &[SynthSample],
    cfg: &ExperimentConfig,
) -> Result<RunOutcome, NetError> {
    let seed = cfg.run_seed(run);
    let mut net = TinyNetwork::new(variant, cfg.net, seed)?;
    let log = train(&mut net, train_set, &cfg.train, seed)?;
    let eval = evaluate(&net, test_set, &cfg.eval, cfg.train.label_radius_um)?;
    Ok(RunOutcome {
        variant,
        run,
        seed,
        final_loss: log.losses.last().map_or(f64::NAN, |l| l.total()),
        eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: ModelVariant,
    /// Test mean F1 of each run, in percent.
    pub runs_f1: Vec<f64>,
    pub mean_f1: f64,
    /// 95% CI over runs; absent with a single run.
    pub summary: Option<RunSummary>,
    /// Two-sided Welch p-value against the cell-only runs.
    pub p_value_vs_cell_only: Option<f64>,
    /// Mean F1 on ambiguous cells, in percent, per run.
    pub runs_ambiguous_f1: Vec<f64>,
    pub ambiguous_f1: Option<f64>,
    pub tissue_miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<VariantRow>,
    /// Appearance-only bound on ambiguous-cell mean F1 for the test set, in percent.
    pub appearance_bound: Option<f64>,
    pub config: ExperimentConfig,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Groups run outcomes into one row per variant, in the order of `variants`.
pub fn assemble_table(
    variants: &[ModelVariant],
    outcomes: &[RunOutcome],
    cfg: &ExperimentConfig,
    test_set: &[SynthSample],
) -> Result<ExperimentTable, NetError> {
    let runs_of = |v: ModelVariant| -> Vec<&RunOutcome> {
        let mut r: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.variant == v).collect();
        r.sort_by_key(|o| o.run);
        r
    };
    let f1s = |v| runs_of(v).iter().map(|o| 100.0 * o.eval.report.mean_f1).collect::<Vec<f64>>();
    let baseline = f1s(ModelVariant::CellOnly);
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let runs = runs_of(v);
        let runs_f1 = f1s(v);
        let runs_ambiguous_f1: Vec<f64> =
            runs.iter().filter_map(|o| o.eval.ambiguous_f1).map(|f| 100.0 * f).collect();
        let miou: Vec<f64> = runs.iter().filter_map(|o| o.eval.tissue_miou).collect();
        let p_value_vs_cell_only = if v != ModelVariant::CellOnly && baseline.len() >= 2 && runs_f1.len() >= 2 {
            Some(significance_test(&runs_f1, &baseline)?)
        } else {
            None
        };
        rows.push(VariantRow {
            variant: v,
            mean_f1: mean(&runs_f1).unwrap_or(f64::NAN),
            summary: (runs_f1.len() >= 2).then(|| aggregate_runs(&runs_f1)).transpose()?,
            p_value_vs_cell_only,
            ambiguous_f1: mean(&runs_ambiguous_f1),
            runs_ambiguous_f1,
            tissue_miou: mean(&miou),
            runs_f1,
        });
    }
    Ok(ExperimentTable {
        rows,
        appearance_bound: ambiguous_tc_share(test_set).map(|p| 100.0 * appearance_only_bound(p)),
        config: *cfg,
    })
}

/// Trains every variant `cfg.n_runs` times and tabulates test mean F1.
pub fn run_experiment(
    variants: &[ModelVariant],
    train_set: &[SynthSample],
    test_set: &[SynthSample],
    cfg: &ExperimentConfig,
) -> Result<ExperimentTable, NetError> {
    if cfg.n_runs == 0 {
        return Err(NetError::Config("n_runs must be positive".into()));
    }
    let mut outcomes = Vec::new();
    for &v in variants {
        for run in 0..cfg.n_runs {
            outcomes.push(train_and_evaluate(v, run, train_set, test_set, cfg)?);
        }
    }
    assemble_table(variants, &outcomes, cfg, test_set)
}

impl VariantRow {
    /// `mean±half-width` in percent, or just the mean for a single run.
    pub fn f1_cell(&self) -> String {
        match &self.summary {
            Some(s) => s.to_string(),
            None => format!("{:.2}", self.mean_f1),
        }
    }
}

impl ExperimentTable {
    pub fn row(&self, v: ModelVariant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Variant | Test mean F1 | p vs cell-only | Ambiguous-cell F1 | Tissue mIoU |\n");
        s.push_str("|---|---|---|---|---|\n");
        let opt = |v: Option<f64>, d: usize| v.map_or("-".to_string(), |x| format!("{x:.d$}"));
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                r.variant,
                r.f1_cell(),
                r.p_value_vs_cell_only.map_or("-".to_string(), |p| format!("{p:.2e}")),
                opt(r.ambiguous_f1, 2),
                opt(r.tissue_miou.map(|m| 100.0 * m), 2),
            ));
        }
        if let Some(b) = self.appearance_bound {
            s.push_str(&format!("\nAppearance-only bound on ambiguous-cell F1: {b:.2}\n"));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,mean_f1,half_width,n_runs,p_vs_cell_only,ambiguous_f1,tissue_miou\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.variant,
                r.mean_f1,
                opt(r.summary.map(|x| x.half_width)),
                r.runs_f1.len(),
                opt(r.p_value_vs_cell_only),
                opt(r.ambiguous_f1),
                opt(r.tissue_miou),
            ));
        }
        s
    }
}
