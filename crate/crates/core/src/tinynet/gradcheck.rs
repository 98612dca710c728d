//! Central-difference verification of the hand-written backward pass.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::model::{ModelVariant, NetInput, NetworkConfig, TinyNetwork};
use super::tensor::Tensor;
use crate::error::NetError;
use crate::field::ScalarField;
use crate::geometry::PatchGeometry;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_MIN_SAMPLES: usize = 200;
/// Denominator floor of the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub variant: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Worst relative error per parameter tensor.
    pub per_tensor: BTreeMap<String, f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

fn random_field(rng: &mut ChaCha8Rng, c: usize, s: usize) -> ScalarField {
    ScalarField::from_fn(c, s, s, |_, _, _| rng.random_range(0.0..1.0))
}

fn random_one_hot(rng: &mut ChaCha8Rng, c: usize, s: usize) -> ScalarField {
    let labels: Vec<usize> = (0..s * s).map(|_| rng.random_range(0..c)).collect();
    ScalarField::one_hot(&labels, s, s, c).expect("in range")
}

/// Checks `variant` on a 32 px cell / 32 px tissue pair with the cell window
/// at `(0.375, 0.625)`, which lands on whole pixels at every level.
pub fn grad_check(variant: ModelVariant, seed: u64) -> Result<GradCheckReport, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = TinyNetwork::new(variant, NetworkConfig::default(), seed)?;
    // Non-zero biases so every term of the bias gradient is exercised.
    for i in 0..net.params().len() {
        if net.params().get(i).shape.len() == 1 {
            for v in &mut net.params_mut().get_mut(i).data {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let s = 32;
    let geom = PatchGeometry {
        mpp_cell: 0.5,
        cell_side_px: s,
        fov_ratio: 4,
        tissue_store_downsample: 4,
        c_x: 0.375,
        c_y: 0.625,
    };
    let cell_image = random_field(&mut rng, 3, s);
    let tissue_image = random_field(&mut rng, 3, s);
    let labels = random_one_hot(&mut rng, 3, s);
    let cell_target = random_one_hot(&mut rng, 3, s);
    let tissue_target = random_one_hot(&mut rng, 3, s);
    let dropout_seed = rng.random::<u64>();

    let loss_of = |net: &TinyNetwork, grads: bool| -> Result<(f64, Option<super::graph::ParamGrads>), NetError> {
        let mut g = Graph::new();
        let input = NetInput {
            cell_image: &cell_image,
            tissue_image: &tissue_image,
            tissue_labels: Some(&labels),
            geometry: geom,
        };
        let out = net.forward(&mut g, &input, Some(dropout_seed))?;
        let lc = g.dice_loss(out.cell_prob, &cell_target)?;
        let mut terms = vec![(lc, 1.0)];
        if let Some(tp) = out.tissue_prob {
            let lt = g.dice_loss(tp, &tissue_target)?;
            terms.push((lt, 1.0));
        }
        let total = g.weighted_sum(&terms);
        let v = g.value(total).item();
        Ok((v, grads.then(|| g.backward(total, net.params().len()))))
    };

    let (_, grads) = loss_of(&net, true)?;
    let grads = grads.expect("requested");

    // A few entries from every tensor, then random fill up to the minimum.
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut rest: Vec<(usize, usize)> = Vec::new();
    for id in 0..net.params().len() {
        let mut idx: Vec<usize> = (0..net.params().get(id).len()).collect();
        idx.shuffle(&mut rng);
        let take = idx.len().min(3);
        picks.extend(idx[..take].iter().map(|&j| (id, j)));
        rest.extend(idx[take..].iter().map(|&j| (id, j)));
    }
    rest.shuffle(&mut rng);
    let need = GRADCHECK_MIN_SAMPLES.saturating_sub(picks.len());
    picks.extend(rest.into_iter().take(need));

    let mut report = GradCheckReport {
        variant: variant.to_string(),
        max_rel_error: 0.0,
        checked: 0,
        per_tensor: BTreeMap::new(),
    };
    for (id, j) in picks {
        let orig = net.params().get(id).data[j];
        net.params_mut().get_mut(id).data[j] = orig + GRADCHECK_STEP;
        let (lp, _) = loss_of(&net, false)?;
        net.params_mut().get_mut(id).data[j] = orig - GRADCHECK_STEP;
        let (lm, _) = loss_of(&net, false)?;
        net.params_mut().get_mut(id).data[j] = orig;
        let numeric = (lp - lm) / (2.0 * GRADCHECK_STEP);
        let analytic = grads[id].as_ref().map_or(0.0, |g| g[j]);
        let err = relative_error(analytic, numeric);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
        let name = net.params().entries()[id].name.clone();
        let slot = report.per_tensor.entry(name).or_insert(0.0);
        *slot = slot.max(err);
    }
    Ok(report)
}

/// A purely linear toy network (one 3x3 convolution and a fixed readout)
/// whose gradient is exact; returns the max relative error.
///
/// Inputs are small integers, weights multiples of 1/8 and the step is
/// 2⁻¹⁷, so every intermediate value is exactly representable.
pub fn grad_check_linear_toy(seed: u64) -> f64 {
    const STEP: f64 = 1.0 / 131_072.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ints = |n: usize, lo: i32, hi: i32| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..=hi) as f64).collect() };
    let x = Tensor {
        shape: vec![2, 6, 6],
        data: ints(72, -3, 3),
    };
    let mut w = Tensor {
        shape: vec![3, 2, 3, 3],
        data: ints(54, -8, 8).into_iter().map(|v| v / 8.0).collect(),
    };
    let b = Tensor {
        shape: vec![3],
        data: vec![0.5, -0.25, 1.0],
    };
    let readout = ints(108, -4, 4);
    let eval = |w: &Tensor, grads: bool| {
        let mut g = Graph::new();
        let xn = g.input(x.clone());
        let wn = g.param(0, w);
        let bn = g.param(1, &b);
        let c = g.conv2d(xn, wn, bn).expect("shapes");
        let l = g.dot(c, readout.clone());
        (g.value(l).item(), grads.then(|| g.backward(l, 2)))
    };
    let (_, grads) = eval(&w, true);
    let gw = grads.expect("requested")[0].clone().expect("reached");
    let mut worst: f64 = 0.0;
    for j in 0..w.len() {
        let orig = w.data[j];
        w.data[j] = orig + STEP;
        let lp = eval(&w, false).0;
        w.data[j] = orig - STEP;
        let lm = eval(&w, false).0;
        w.data[j] = orig;
        worst = worst.max(relative_error(gw[j], (lp - lm) / (2.0 * STEP)));
    }
    worst
}
