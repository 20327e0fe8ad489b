//! Focal loss on class probabilities.

use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to the target probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Focal loss of one sample given its target-class probability.
pub fn focal_term(p_target: f64, gamma: f64) -> f64 {
    let p = p_target.max(PROB_FLOOR);
    let w = if gamma == 0.0 { 1.0 } else { (1.0 - p_target).max(0.0).powf(gamma) };
    -w * p.ln()
}

/// d(focal_term)/dp.
fn focal_slope(p_target: f64, gamma: f64) -> f64 {
    let one_minus = (1.0 - p_target).max(0.0);
    let log_term = if p_target > PROB_FLOOR { -1.0 / p_target } else { 0.0 };
    let modulating = if gamma == 0.0 { 1.0 } else { one_minus.powf(gamma) };
    let mut slope = modulating * log_term;
    if gamma != 0.0 && one_minus > 0.0 {
        slope += gamma * one_minus.powf(gamma - 1.0) * p_target.max(PROB_FLOOR).ln();
    }
    slope
}

fn check(probs: &Tensor, targets: &[usize], gamma: f64) -> Result<usize> {
    let s = probs.shape();
    let k = s.item_len();
    if targets.len() != s.batch {
        return Err(Error::InvalidArgument(format!("{} targets for a batch of {}", targets.len(), s.batch)));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidArgument(format!("target class {t} out of range for {k} classes")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("focal gamma {gamma} must be >= 0")));
    }
    Ok(k)
}

/// Batch-mean focal loss `-(1 - p_t)^gamma * ln(p_t)` evaluated directly.
pub fn focal_loss_value(probs: &Tensor, targets: &[usize], gamma: f64) -> Result<f64> {
    let k = check(probs, targets, gamma)?;
    let total: f64 = targets.iter().enumerate().map(|(b, &t)| focal_term(probs.data()[b * k + t], gamma)).sum();
    Ok(total / targets.len() as f64)
}

impl Graph {
    /// Differentiable batch-mean focal loss; `probs` holds one probability
    /// row per batch item.
    pub fn focal_loss(&mut self, probs: Var, targets: &[usize], gamma: f64) -> Result<Var> {
        let value = focal_loss_value(self.value(probs), targets, gamma)?;
        Ok(self.push_op(Tensor::scalar(value), Op::FocalLoss { probs, targets: targets.to_vec(), gamma }, &[probs]))
    }
}

pub(crate) fn focal_backward(
    g: &Graph,
    probs: Var,
    targets: &[usize],
    gamma: f64,
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let p = g.value(probs);
    let k = p.shape().item_len();
    let scale = grad[0] / targets.len() as f64;
    let mut dp = vec![0.0; p.len()];
    for (b, &t) in targets.iter().enumerate() {
        dp[b * k + t] = scale * focal_slope(p.data()[b * k + t], gamma);
    }
    vec![(probs, dp)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn probs(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_vec(Shape::new(rows.len(), 1, 1, 2), rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let p = probs(&[[0.3, 0.7], [0.9, 0.1], [0.5, 0.5]]);
        let t = [1, 0, 1];
        let ce = -(0.7f64.ln() + 0.9f64.ln() + 0.5f64.ln()) / 3.0;
        assert!((focal_loss_value(&p, &t, 0.0).unwrap() - ce).abs() < 1e-12);
    }

    #[test]
    fn certain_prediction_has_zero_loss() {
        assert_eq!(focal_loss_value(&probs(&[[1.0, 0.0]]), &[0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn half_probability_point_value() {
        let v = focal_loss_value(&probs(&[[0.5, 0.5]]), &[0], 2.0).unwrap();
        assert!((v - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let v = focal_loss_value(&probs(&[[0.0, 1.0]]), &[0], 2.0).unwrap();
        assert!((v + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn target_out_of_range() {
        assert!(matches!(focal_loss_value(&probs(&[[0.5, 0.5]]), &[2], 2.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn slope_matches_finite_difference() {
        for &gamma in &[0.0, 0.5, 2.0, 3.0] {
            for &p in &[0.05, 0.3, 0.5, 0.77, 0.99] {
                let h = 1e-6;
                let fd = (focal_term(p + h, gamma) - focal_term(p - h, gamma)) / (2.0 * h);
                let an = focal_slope(p, gamma);
                assert!((fd - an).abs() / (fd.abs() + 1e-8) < 1e-6, "gamma {gamma} p {p}");
            }
        }
    }
}
