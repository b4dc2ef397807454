use crate::{Error, Result};

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Cross-entropy of `target` under `softmax(logits)` and its gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -log_softmax(logits)[target];
    p[target] -= 1.0;
    (loss, p)
}

/// `-sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `KL(p_old || p_new) = sum p_old ln(p_old / p_new)`.
pub fn kl_divergence(p_old: &[f64], p_new: &[f64]) -> Result<f64> {
    if p_old.len() != p_new.len() {
        return Err(Error::dim("kl support", p_old.len(), p_new.len()));
    }
    let kl = p_old
        .iter()
        .zip(p_new)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .sum::<f64>();
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_from_equal_logits() {
        for p in softmax(&[0.0, 0.0, 0.0]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_two_thirds() {
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(&[1.0 / 6.0; 6]) - 6f64.ln()).abs() < 1e-12);
        assert!((6f64.ln() - 1.7918).abs() < 1e-4);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        let kl = kl_divergence(&[0.5, 0.5], &[0.75, 0.25]).unwrap();
        let expected = 0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2f64.ln();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.1438).abs() < 1e-4);
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let (loss, g) = cross_entropy(&[0.0, 0.0], 1);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            z in prop::collection::vec(-30.0f64..30.0, 1..12),
            shift in -500.0f64..500.0,
        ) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|v| *v > 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn kl_is_non_negative(
            a in prop::collection::vec(-5.0f64..5.0, 2..8),
            b in prop::collection::vec(-5.0f64..5.0, 2..8),
        ) {
            let n = a.len().min(b.len());
            let kl = kl_divergence(&softmax(&a[..n]), &softmax(&b[..n])).unwrap();
            prop_assert!(kl >= 0.0);
        }
    }
}
