//! Training loop and held-out evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_pair, AugmentConfig};
use super::graph::{Graph, ParamGrads};
use super::model::{NetInput, TinyNetwork};
use super::optim::{Adam, AdamConfig};
use super::params::Group;
use super::synth::SynthSample;
use crate::error::NetError;
use crate::field::ScalarField;
use crate::labels::{rasterize_points, CellPoint, NUM_CELL_CLASSES};
use crate::metrics::{f1_from_counts, match_detections, F1Report, MatchCounts};
use crate::postprocess::{detect, ProbabilityMap};
use crate::tissue::TissueMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cell: f64,
    pub tissue: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cell: 1.0, tissue: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_cell: f64,
    pub lr_tissue: f64,
    pub loss_weights: LossWeights,
    pub augment: Option<AugmentConfig>,
    /// Radius of the disk drawn around each annotated cell in the target map.
    pub label_radius_um: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 4,
            lr_cell: 1e-3,
            lr_tissue: 1e-3,
            loss_weights: LossWeights::default(),
            augment: Some(AugmentConfig::default()),
            label_radius_um: 1.4,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let ok_lr = |v: f64| v.is_finite() && v >= 0.0;
        if !ok_lr(self.lr_cell) || !ok_lr(self.lr_tissue) {
            return Err(NetError::Config("learning rates must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::Config("batch size must be positive".into()));
        }
        if !(self.label_radius_um > 0.0) {
            return Err(NetError::Config("label radius must be positive".into()));
        }
        Ok(())
    }

    fn lr(&self, g: Group) -> f64 {
        match g {
            Group::Cell => self.lr_cell,
            Group::Tissue => self.lr_tissue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub cell: f64,
    pub tissue: Option<f64>,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.cell + self.tissue.unwrap_or(0.0)
    }
}

/// Cell target (`[C_cell + 1, S, S]`) and tissue one-hot (`[3, T, T]`).
pub fn sample_targets(s: &SynthSample, label_radius_um: f64) -> Result<(ScalarField, ScalarField), NetError> {
    let side = s.cell_image.width();
    let cell = rasterize_points(&s.cell_points, side, NUM_CELL_CLASSES, label_radius_um, s.geometry.mpp_cell)
        .map_err(|e| NetError::Config(e.to_string()))?;
    Ok((cell.into_field(), s.tissue_mask.to_one_hot()))
}

fn add_scaled(acc: &mut ParamGrads, g: ParamGrads, scale: f64) {
    for (a, gi) in acc.iter_mut().zip(g) {
        let Some(gi) = gi else { continue };
        match a {
            Some(a) => a.iter_mut().zip(&gi).for_each(|(x, y)| *x += scale * y),
            None => *a = Some(gi.into_iter().map(|v| v * scale).collect()),
        }
    }
}

/// Loss and parameter gradients of one example under a fixed dropout seed.
pub fn sample_loss(
    net: &TinyNetwork,
    s: &SynthSample,
    weights: LossWeights,
    label_radius_um: f64,
    dropout_seed: Option<u64>,
    with_grads: bool,
) -> Result<(StepLoss, Option<ParamGrads>), NetError> {
    let (cell_t, tissue_t) = sample_targets(s, label_radius_um)?;
    let mut g = Graph::new();
    let input = NetInput {
        cell_image: &s.cell_image,
        tissue_image: &s.tissue_image,
        tissue_labels: Some(&tissue_t),
        geometry: s.geometry,
    };
    let out = net.forward(&mut g, &input, dropout_seed)?;
    let lc = g.dice_loss(out.cell_prob, &cell_t)?;
    let mut terms = vec![(lc, weights.cell)];
    let lt = match out.tissue_prob {
        Some(tp) => {
            let lt = g.dice_loss(tp, &tissue_t)?;
            terms.push((lt, weights.tissue));
            Some(lt)
        }
        None => None,
    };
    let total = g.weighted_sum(&terms);
    let loss = StepLoss {
        cell: g.value(lc).item(),
        tissue: lt.map(|n| g.value(n).item()),
    };
    let grads = with_grads.then(|| g.backward(total, net.params().len()));
    Ok((loss, grads))
}

/// One Adam update on the mean loss of `batch`. A non-finite loss aborts
/// before any weight changes.
pub fn train_step(
    net: &mut TinyNetwork,
    opt: &mut Adam,
    batch: &[SynthSample],
    cfg: &TrainConfig,
    step: usize,
    dropout_seeds: &[u64],
) -> Result<StepLoss, NetError> {
    assert_eq!(batch.len(), dropout_seeds.len());
    let n = batch.len() as f64;
    let mut acc: ParamGrads = vec![None; net.params().len()];
    let mut mean = StepLoss {
        cell: 0.0,
        tissue: net.variant().has_tissue_branch().then_some(0.0),
    };
    for (s, &seed) in batch.iter().zip(dropout_seeds) {
        let (l, g) = sample_loss(net, s, cfg.loss_weights, cfg.label_radius_um, Some(seed), true)?;
        mean.cell += l.cell / n;
        if let (Some(m), Some(t)) = (mean.tissue.as_mut(), l.tissue) {
            *m += t / n;
        }
        add_scaled(&mut acc, g.expect("requested"), 1.0 / n);
    }
    if !mean.total().is_finite() {
        return Err(NetError::NonFiniteLoss {
            step,
            loss_cell: mean.cell,
            loss_tissue: mean.tissue.unwrap_or(0.0),
        });
    }
    opt.step(net.params_mut(), &acc, |g| cfg.lr(g));
    Ok(mean)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<StepLoss>,
}

/// Trains `net` in place; batches, augmentation and dropout are drawn from `seed`.
pub fn train(net: &mut TinyNetwork, data: &[SynthSample], cfg: &TrainConfig, seed: u64) -> Result<TrainLog, NetError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NetError::Config("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(net.params(), cfg.adam);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch: Vec<SynthSample> = (0..cfg.batch_size)
            .map(|_| {
                let s = &data[rng.random_range(0..data.len())];
                match &cfg.augment {
                    Some(a) => augment_pair(s, a, &mut rng),
                    None => s.clone(),
                }
            })
            .collect();
        let seeds: Vec<u64> = (0..cfg.batch_size).map(|_| rng.random()).collect();
        log.losses.push(train_step(net, &mut opt, &batch, cfg, step, &seeds)?);
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub min_distance_px: usize,
    pub threshold: f64,
    pub match_radius_px: f64,
}

impl Default for EvalConfig {
    /// Synthetic scale at 0.5 µm/px: 3 µm match radius is 6 px.
    fn default() -> Self {
        Self {
            min_distance_px: 3,
            threshold: 0.5,
            match_radius_px: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub counts: MatchCounts,
    pub report: F1Report,
    /// Mean F1 restricted to cells with the shared appearance.
    pub ambiguous_f1: Option<f64>,
    /// Mean IoU of the tissue head over classes present in either map.
    pub tissue_miou: Option<f64>,
}

/// Scores ambiguous ground-truth cells by the class of the nearest detection
/// within `radius`; a cell without one counts as a miss.
pub fn ambiguous_subset_counts(dets: &[CellPoint], gts: &[CellPoint], ambiguous: &[bool], radius: f64) -> MatchCounts {
    let mut counts = MatchCounts::with_classes(1..=NUM_CELL_CLASSES as u8);
    for (g, _) in gts.iter().zip(ambiguous).filter(|(_, &a)| a) {
        let nearest = dets
            .iter()
            .map(|d| (d.point().distance(&g.point()), d))
            .filter(|(dist, _)| *dist <= radius)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match nearest {
            Some((_, d)) if d.class_id == g.class_id => counts.classes.entry(g.class_id).or_default().tp += 1,
            Some((_, d)) => {
                counts.classes.entry(g.class_id).or_default().fn_ += 1;
                counts.classes.entry(d.class_id).or_default().fp += 1;
            }
            None => counts.classes.entry(g.class_id).or_default().fn_ += 1,
        }
    }
    counts
}

/// Mean IoU between the argmax of `prob` and `mask`.
pub fn tissue_miou(prob: &ScalarField, mask: &TissueMask) -> f64 {
    let c = prob.channels();
    let (mut inter, mut union) = (vec![0usize; c], vec![0usize; c]);
    let side = mask.side();
    for y in 0..side {
        for x in 0..side {
            let p = prob.argmax_at(y, x);
            let t = mask.get(y, x).channel();
            if p == t {
                inter[p] += 1;
                union[p] += 1;
            } else {
                union[p] += 1;
                union[t] += 1;
            }
        }
    }
    let ious: Vec<f64> = (0..c).filter(|&k| union[k] > 0).map(|k| inter[k] as f64 / union[k] as f64).collect();
    ious.iter().sum::<f64>() / ious.len() as f64
}

pub fn evaluate(net: &TinyNetwork, data: &[SynthSample], cfg: &EvalConfig, label_radius_um: f64) -> Result<EvalResult, NetError> {
    let mut counts = MatchCounts::with_classes(1..=NUM_CELL_CLASSES as u8);
    let mut amb = MatchCounts::with_classes(1..=NUM_CELL_CLASSES as u8);
    let mut any_amb = false;
    let mut miou = Vec::new();
    for s in data {
        let (_, tissue_t) = sample_targets(s, label_radius_um)?;
        let input = NetInput {
            cell_image: &s.cell_image,
            tissue_image: &s.tissue_image,
            tissue_labels: Some(&tissue_t),
            geometry: s.geometry,
        };
        let (cell, tissue) = net.predict(&input)?;
        let dets = detect(&ProbabilityMap::new(cell)?, cfg.min_distance_px, cfg.threshold);
        counts.merge(&match_detections(&dets, &s.cell_points, cfg.match_radius_px));
        if s.ambiguous.iter().any(|&a| a) {
            any_amb = true;
            amb.merge(&ambiguous_subset_counts(&dets, &s.cell_points, &s.ambiguous, cfg.match_radius_px));
        }
        if let Some(t) = tissue {
            miou.push(tissue_miou(&t, &s.tissue_mask));
        }
    }
    Ok(EvalResult {
        report: f1_from_counts(&counts)?,
        counts,
        ambiguous_f1: if any_amb { f1_from_counts(&amb).ok().map(|r| r.mean_f1) } else { None },
        tissue_miou: (!miou.is_empty()).then(|| miou.iter().sum::<f64>() / miou.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::model::{ModelVariant, NetworkConfig};
    use crate::tinynet::synth::{synth_generate, SynthParams};
    use crate::labels::{BC, TC};
    use crate::metrics::ClassCounts;

    fn data(n: usize) -> Vec<SynthSample> {
        synth_generate(&SynthParams { n_samples: n, ..SynthParams::default() }, 11).unwrap()
    }

    #[test]
    fn zero_lr_keeps_weights() {
        let d = data(2);
        let mut net = TinyNetwork::new(ModelVariant::PredTo(crate::tinynet::Position::Bottleneck), NetworkConfig::default(), 1).unwrap();
        let before = net.params().clone();
        let cfg = TrainConfig { steps: 2, batch_size: 1, lr_cell: 0.0, lr_tissue: 0.0, ..TrainConfig::default() };
        train(&mut net, &d, &cfg, 0).unwrap();
        assert_eq!(net.params(), &before);
    }

    #[test]
    fn memorizes_one_sample() {
        let d = data(1);
        let mut net = TinyNetwork::new(ModelVariant::CellOnly, NetworkConfig::default(), 2).unwrap();
        let cfg = TrainConfig { steps: 50, batch_size: 1, augment: None, lr_cell: 2e-3, ..TrainConfig::default() };
        let log = train(&mut net, &d, &cfg, 0).unwrap();
        let first = log.losses[0].total();
        let last = log.losses[49].total();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn deterministic_given_seed() {
        let d = data(3);
        let cfg = TrainConfig { steps: 3, batch_size: 2, ..TrainConfig::default() };
        let run = || {
            let mut net = TinyNetwork::new(ModelVariant::CellOnly, NetworkConfig::default(), 5).unwrap();
            let log = train(&mut net, &d, &cfg, 9).unwrap();
            (net.params().clone(), log)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ambiguous_counts() {
        let gts = vec![CellPoint::new(10.0, 10.0, TC), CellPoint::new(30.0, 30.0, BC), CellPoint::new(50.0, 50.0, TC)];
        let dets = vec![CellPoint::new(11.0, 10.0, TC), CellPoint::new(30.0, 31.0, TC)];
        let c = ambiguous_subset_counts(&dets, &gts, &[true, true, false], 6.0);
        assert_eq!(c.class(TC), ClassCounts { tp: 1, fp: 1, fn_: 0 });
        assert_eq!(c.class(BC), ClassCounts { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn miou_perfect() {
        let d = data(1);
        let p = d[0].tissue_mask.to_one_hot();
        assert_eq!(tissue_miou(&p, &d[0].tissue_mask), 1.0);
    }
}
