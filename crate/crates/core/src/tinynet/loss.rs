//! Soft Dice loss averaged over channels.

use crate::error::NetError;
use crate::field::ScalarField;

pub const DICE_EPS: f64 = 1e-6;

fn check(pred: &ScalarField, target: &ScalarField) -> Result<(), NetError> {
    if !pred.same_shape(target) {
        return Err(NetError::Shape {
            context: "dice".into(),
            detail: format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        });
    }
    Ok(())
}

/// Per channel sums `(Σ p·g, Σ p + Σ g + ε)`.
fn sums(pred: &ScalarField, target: &ScalarField) -> Vec<(f64, f64)> {
    (0..pred.channels())
        .map(|c| {
            let (p, g) = (pred.plane(c), target.plane(c));
            let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            let total: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>() + DICE_EPS;
            (inter, total)
        })
        .collect()
}

/// `mean_c [1 − (2 Σ p g + ε) / (Σ p + Σ g + ε)]`.
pub fn dice_value(pred: &ScalarField, target: &ScalarField) -> Result<f64, NetError> {
    check(pred, target)?;
    let s = sums(pred, target);
    Ok(s.iter().map(|(i, t)| 1.0 - (2.0 * i + DICE_EPS) / t).sum::<f64>() / s.len() as f64)
}

/// Gradient of [`dice_value`] with respect to `pred`.
pub fn dice_grad(pred: &ScalarField, target: &ScalarField) -> Result<ScalarField, NetError> {
    check(pred, target)?;
    let s = sums(pred, target);
    let n = s.len() as f64;
    let mut g = ScalarField::zeros(pred.channels(), pred.height(), pred.width());
    for (c, &(inter, total)) in s.iter().enumerate() {
        let num = 2.0 * inter + DICE_EPS;
        let tgt = target.plane(c).to_vec();
        for (gv, t) in g.plane_mut(c).iter_mut().zip(tgt) {
            *gv = -(2.0 * t * total - num) / (total * total) / n;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let t = ScalarField::one_hot(&[0, 1, 2, 1], 2, 2, 3).unwrap();
        assert!(dice_value(&t, &t).unwrap().abs() < 1e-6);
    }

    #[test]
    fn uniform_prediction_closed_form() {
        // C = 3 channels on 2x2; every channel present in the target.
        let t = ScalarField::one_hot(&[0, 1, 2, 2], 2, 2, 3).unwrap();
        let p = ScalarField::filled(3, 2, 2, 1.0 / 3.0);
        let per = |n_c: f64| 1.0 - (2.0 * n_c / 3.0 + DICE_EPS) / (4.0 / 3.0 + n_c + DICE_EPS);
        let expected = (per(1.0) + per(1.0) + per(2.0)) / 3.0;
        assert!((dice_value(&p, &t).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_differences() {
        let t = ScalarField::one_hot(&[0, 1, 1, 0, 2, 2], 2, 3, 3).unwrap();
        let p = ScalarField::from_fn(3, 2, 3, |c, y, x| 0.1 + 0.07 * (c + 2 * y + x) as f64);
        let g = dice_grad(&p, &t).unwrap();
        let h = 1e-6;
        for i in 0..p.data().len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a.data_mut()[i] += h;
            b.data_mut()[i] -= h;
            let n = (dice_value(&a, &t).unwrap() - dice_value(&b, &t).unwrap()) / (2.0 * h);
            assert!((n - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = ScalarField::zeros(3, 2, 2);
        let b = ScalarField::zeros(2, 2, 2);
        assert!(dice_value(&a, &b).is_err());
    }
}
