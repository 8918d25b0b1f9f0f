//! Small numeric building blocks shared by the losses.

/// Numerically stable log-softmax (max subtraction).
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&l| l.exp()).collect()
}

/// Cross-entropy of a label under the softmax of `logits`, with the exact
/// gradient w.r.t. the logits (softmax minus one-hot).
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    debug_assert!(label < logits.len());
    let ls = log_softmax(logits);
    let loss = -ls[label];
    let mut grad: Vec<f64> = ls.iter().map(|&l| l.exp()).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean squared error over the components, with gradient w.r.t. `pred`.
pub fn mse_with_grad(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let d = pred[i] - target[i];
        loss += d * d;
        grad[i] = 2.0 * d / n;
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_constants_is_uniform() {
        let p = softmax(&[0.3, 0.3, 0.3]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_is_ln_k() {
        let (l, _) = cross_entropy_with_grad(&[1.0; 5], 2);
        assert!((l - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_grad_sums_to_zero() {
        let (_, g) = cross_entropy_with_grad(&[0.1, -0.4, 2.0], 1);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn log_softmax_survives_large_logits() {
        let ls = log_softmax(&[1000.0, 999.0]);
        assert!(ls.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mse_matches_hand_computation() {
        let (l, g) = mse_with_grad(&[1.0, 2.0], &[0.0, 0.0]);
        assert!((l - 2.5).abs() < 1e-15);
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 2.0).abs() < 1e-15);
    }
}
