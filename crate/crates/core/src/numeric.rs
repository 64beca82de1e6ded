//! Scalar kernel shared by every loss: stable log-sigmoid, the Bernoulli
//! KL regularizer against B(1/2), and implicit rewards.
//!
//! The checked entry points validate their inputs; the `*_unchecked`
//! variants are used inside loss loops where inputs are already known to be
//! finite.

use crate::error::{invalid, Result};
use std::f64::consts::LN_2;

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid_unchecked(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log σ(δ)`. Never returns `-inf` for finite input.
pub fn log_sigmoid(delta: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(invalid(format!("log_sigmoid: non-finite input {delta}")));
    }
    Ok(log_sigmoid_unchecked(delta))
}

/// `KL(B(1/2) || B(σ(δ)))`, which simplifies to `log cosh(δ/2)`.
#[inline]
pub fn kl_bernoulli_half_unchecked(delta: f64) -> f64 {
    let a = delta.abs();
    if a < 40.0 {
        // log cosh(x) = log1p(2 sinh²(x/2)); no cancellation near zero.
        let s = (0.25 * a).sinh();
        (2.0 * s * s).ln_1p()
    } else {
        0.5 * a - LN_2 + (-a).exp().ln_1p()
    }
}

pub fn kl_bernoulli_half(delta: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(invalid(format!(
            "kl_bernoulli_half: non-finite input {delta}"
        )));
    }
    Ok(kl_bernoulli_half_unchecked(delta))
}

/// Derivative of [`kl_bernoulli_half`] in δ: `σ(δ) − 1/2`.
#[inline]
pub fn kl_bernoulli_half_grad(delta: f64) -> f64 {
    0.5 * (0.5 * delta).tanh()
}

/// `β · (log π(y) − log π_ref(y))`.
pub fn implicit_reward(policy_logprob: f64, ref_logprob: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    if !policy_logprob.is_finite() || !ref_logprob.is_finite() {
        return Err(invalid("implicit_reward: log-probabilities must be finite"));
    }
    Ok(beta * (policy_logprob - ref_logprob))
}

/// `log Σ exp(x_i)`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-softmax of a logit vector.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn log_sigmoid_reference_values() {
        assert_abs_diff_eq!(log_sigmoid(0.0).unwrap(), -LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(log_sigmoid(-1000.0).unwrap(), -1000.0, epsilon = 1e-6);
        assert!(log_sigmoid(-1000.0).unwrap().is_finite());
        // σ(log 4) = 4/5
        assert_abs_diff_eq!(
            log_sigmoid(4f64.ln()).unwrap(),
            (0.8f64).ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(log_sigmoid(4f64.ln()).unwrap(), -0.2231435513142097, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(log_sigmoid(f64::NAN), Err(crate::Error::InvalidArgument(_))));
        assert!(log_sigmoid(f64::INFINITY).is_err());
        assert!(kl_bernoulli_half(f64::NEG_INFINITY).is_err());
        assert!(implicit_reward(0.0, 0.0, 0.0).is_err());
        assert!(implicit_reward(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_bernoulli_half(0.0).unwrap(), 0.0);
        let expected = (5.0f64 / 4.0).ln();
        assert_abs_diff_eq!(kl_bernoulli_half(4f64.ln()).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_bernoulli_half(-(4f64.ln())).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn kl_diverges_at_boundary() {
        let k20 = kl_bernoulli_half(20.0).unwrap();
        let k40 = kl_bernoulli_half(40.0).unwrap();
        assert!(k40 - k20 > 9.0);
        assert!(kl_bernoulli_half(-40.0).unwrap() - kl_bernoulli_half(-20.0).unwrap() > 9.0);
    }

    #[test]
    fn kl_branches_agree_at_switch() {
        let lo = kl_bernoulli_half_unchecked(40.0 - 1e-9);
        let hi = kl_bernoulli_half_unchecked(40.0);
        assert_abs_diff_eq!(lo, hi, epsilon = 1e-8);
    }

    #[test]
    fn implicit_reward_examples() {
        assert_eq!(implicit_reward(-1.3, -1.3, 0.7).unwrap(), 0.0);
        assert_abs_diff_eq!(
            implicit_reward(0.2f64.ln(), 0.1f64.ln(), 0.1).unwrap(),
            0.1 * 2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            implicit_reward(0.1f64.ln(), 0.2f64.ln(), 1.0).unwrap(),
            -(2f64.ln()),
            epsilon = 1e-15
        );
    }

    #[test]
    fn log_sum_exp_handles_large_inputs() {
        assert_abs_diff_eq!(log_sum_exp(&[1234.0, 1232.0]), 1_234.126_928_011_043, epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn kl_matches_log_sigmoid_expansion(delta in -50.0f64..50.0) {
            let expanded = -LN_2
                - 0.5 * log_sigmoid(delta).unwrap()
                - 0.5 * log_sigmoid(-delta).unwrap();
            prop_assert!((kl_bernoulli_half(delta).unwrap() - expanded).abs() < 1e-12);
        }

        #[test]
        fn kl_symmetric_and_monotone(a in 0.0f64..60.0, b in 0.0f64..60.0) {
            let ka = kl_bernoulli_half(a).unwrap();
            prop_assert_eq!(ka, kl_bernoulli_half(-a).unwrap());
            prop_assert!(ka >= 0.0);
            if b - a > 1e-6 {
                prop_assert!(ka < kl_bernoulli_half(b).unwrap());
            }
        }

        #[test]
        fn log_sigmoid_monotone(a in -800.0f64..800.0, d in 1e-6f64..10.0) {
            prop_assert!(log_sigmoid(a).unwrap() <= log_sigmoid(a + d).unwrap());
        }

        #[test]
        fn kl_grad_matches_sigmoid_form(delta in -40.0f64..40.0) {
            prop_assert!((kl_bernoulli_half_grad(delta) - (sigmoid(delta) - 0.5)).abs() < 1e-15);
        }
    }
}
