//! Fisher-vector products for categorical policies.
//!
//! Two independent routes are provided: an exact one built from a
//! forward-mode pass through the logits followed by a reverse pass
//! (`J^T M J v`, where `M = diag(p) - p p^T` is the softmax Fisher), and a
//! central finite difference of the KL gradient. At the reference point the
//! Hessian of `KL(old || new)` equals the Fisher, so the two must agree.

use super::ops::softmax;
use super::{kl_divergence, linalg};
use crate::{Error, Result};

/// A parameterised map from states to action logits.
pub trait CategoricalModel {
    type State;

    fn param_count(&self) -> usize;

    fn logits(&self, params: &[f64], state: &Self::State) -> Vec<f64>;

    /// Logits and their directional derivative along `direction`.
    fn logits_jvp(&self, params: &[f64], state: &Self::State, direction: &[f64]) -> (Vec<f64>, Vec<f64>);

    /// Accumulates `J^T dlogits` into `grad`.
    fn logits_vjp(&self, params: &[f64], state: &Self::State, dlogits: &[f64], grad: &mut [f64]);

    fn probs(&self, params: &[f64], state: &Self::State) -> Vec<f64> {
        softmax(&self.logits(params, state))
    }
}

fn check<M: CategoricalModel + ?Sized>(model: &M, states: &[M::State], v: &[f64]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Empty("fisher-vector product needs at least one state".into()));
    }
    if v.len() != model.param_count() {
        return Err(Error::dim("fisher-vector product", model.param_count(), v.len()));
    }
    Ok(())
}

/// `(F + damping I) v`, with `F` the mean Fisher of the action distributions
/// over `states`.
pub fn fisher_vector_product<M: CategoricalModel + ?Sized>(
    model: &M,
    params: &[f64],
    states: &[M::State],
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    check(model, states, v)?;
    let mut out = vec![0.0; v.len()];
    for s in states {
        let (z, dz) = model.logits_jvp(params, s, v);
        let p = softmax(&z);
        let pdz = linalg::dot(&p, &dz);
        let u: Vec<f64> = p.iter().zip(&dz).map(|(pi, di)| pi * (di - pdz)).collect();
        model.logits_vjp(params, s, &u, &mut out);
    }
    let inv = 1.0 / states.len() as f64;
    for (o, vi) in out.iter_mut().zip(v) {
        *o = *o * inv + damping * vi;
    }
    Ok(out)
}

/// Mean `KL(old || new)` over `states`, where `old_probs[i]` is the recorded
/// distribution for `states[i]`.
pub fn mean_kl<M: CategoricalModel + ?Sized>(
    model: &M,
    old_probs: &[Vec<f64>],
    params: &[f64],
    states: &[M::State],
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Empty("kl over an empty batch".into()));
    }
    let mut total = 0.0;
    for (s, old) in states.iter().zip(old_probs) {
        total += kl_divergence(old, &model.probs(params, s))?;
    }
    Ok(total / states.len() as f64)
}

/// Gradient of [`mean_kl`] with respect to the new parameters.
pub fn kl_gradient<M: CategoricalModel + ?Sized>(
    model: &M,
    old_probs: &[Vec<f64>],
    params: &[f64],
    states: &[M::State],
) -> Vec<f64> {
    let mut g = vec![0.0; params.len()];
    for (s, old) in states.iter().zip(old_probs) {
        let p = model.probs(params, s);
        let d: Vec<f64> = p.iter().zip(old).map(|(a, b)| a - b).collect();
        model.logits_vjp(params, s, &d, &mut g);
    }
    linalg::scale(1.0 / states.len().max(1) as f64, &mut g);
    g
}

/// `(F + damping I) v` by central differences of the KL gradient around
/// `params` with step `eps`.
pub fn fisher_vector_product_fd<M: CategoricalModel + ?Sized>(
    model: &M,
    params: &[f64],
    states: &[M::State],
    v: &[f64],
    damping: f64,
    eps: f64,
) -> Result<Vec<f64>> {
    check(model, states, v)?;
    let old: Vec<Vec<f64>> = states.iter().map(|s| model.probs(params, s)).collect();
    let shifted = |sign: f64| {
        let p: Vec<f64> = params.iter().zip(v).map(|(a, b)| a + sign * eps * b).collect();
        kl_gradient(model, &old, &p, states)
    };
    let plus = shifted(1.0);
    let minus = shifted(-1.0);
    Ok(plus
        .iter()
        .zip(&minus)
        .zip(v)
        .map(|((a, b), vi)| (a - b) / (2.0 * eps) + damping * vi)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logits `W s` for a 3x2 weight matrix.
    struct Linear;

    impl CategoricalModel for Linear {
        type State = [f64; 2];
        fn param_count(&self) -> usize {
            6
        }
        fn logits(&self, p: &[f64], s: &[f64; 2]) -> Vec<f64> {
            (0..3).map(|r| p[2 * r] * s[0] + p[2 * r + 1] * s[1]).collect()
        }
        fn logits_jvp(&self, p: &[f64], s: &[f64; 2], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (self.logits(p, s), self.logits(d, s))
        }
        fn logits_vjp(&self, _p: &[f64], s: &[f64; 2], dz: &[f64], g: &mut [f64]) {
            for r in 0..3 {
                g[2 * r] += dz[r] * s[0];
                g[2 * r + 1] += dz[r] * s[1];
            }
        }
    }

    /// Parameters are ignored entirely.
    struct Constant;

    impl CategoricalModel for Constant {
        type State = ();
        fn param_count(&self) -> usize {
            3
        }
        fn logits(&self, _: &[f64], _: &()) -> Vec<f64> {
            vec![0.1, 0.5, -0.2]
        }
        fn logits_jvp(&self, p: &[f64], s: &(), _: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (self.logits(p, s), vec![0.0; 3])
        }
        fn logits_vjp(&self, _: &[f64], _: &(), _: &[f64], _: &mut [f64]) {}
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let p = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let out = fisher_vector_product(&Linear, &p, &[[1.0, 2.0]], &[0.0; 6], 0.0).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn detached_model_gives_pure_damping() {
        let v = [0.3, -1.0, 2.5];
        let out = fisher_vector_product(&Constant, &[0.0; 3], &[(), ()], &v, 0.7).unwrap();
        for (o, vi) in out.iter().zip(&v) {
            assert!((o - 0.7 * vi).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(
            fisher_vector_product(&Linear, &[0.0; 6], &[], &[0.0; 6], 0.0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn routes_agree_on_linear_model() {
        let p = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let states = [[1.0, 2.0], [-0.5, 0.3]];
        let v = [0.2, 0.1, -0.3, 0.5, 0.05, -0.4];
        let a = fisher_vector_product(&Linear, &p, &states, &v, 0.1).unwrap();
        let b = fisher_vector_product_fd(&Linear, &p, &states, &v, 0.1, 1e-5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}
