//! Small shared numeric helpers: stabilized LogSumExp, finiteness checks,
//! parameter initialization.

use ndarray::{ArrayBase, Data, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// The one RNG used for a run; all randomness (init, shuffling, dropout,
/// synthetic data) flows from seeded instances of this type.
pub type RunRng = ChaCha8Rng;

/// Forward-pass mode: `Train` enables dropout (and word dropout), `Eval`
/// makes every forward a deterministic function of its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    /// Dropout probability actually applied in this mode.
    pub fn dropout(self, p: f64) -> f64 {
        match self {
            Mode::Train => p,
            Mode::Eval => 0.0,
        }
    }
}

/// `log Σ exp(x)` over a non-empty slice, computed in max-shifted form so it
/// never overflows.
pub fn logsumexp(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All terms -inf (empty-set limit) stays -inf; a NaN propagates.
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Error unless every element of `a` is finite; `context` names the tensor.
pub fn ensure_finite<S, D>(a: &ArrayBase<S, D>, context: &str) -> Result<()>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(context))
    }
}

/// Glorot/Xavier uniform init for a matrix-shaped parameter:
/// `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut RunRng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-s, s);
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Embedding init: `N(0, 0.02)`.
pub fn embedding_init(rng: &mut RunRng, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, 0.02).unwrap();
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Inverted-dropout mask: entries are `1/(1-p)` with probability `1-p`, else
/// `0`. `p = 0` yields all ones without consuming randomness.
pub fn dropout_mask(rng: &mut RunRng, n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 - p;
    let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
    (0..n)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn logsumexp_matches_direct_form() {
        let xs = [0.5_f64, 1.5];
        let direct = (xs[0].exp() + xs[1].exp()).ln();
        assert!((logsumexp(&xs) - direct).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_survives_large_inputs() {
        let xs = [1000.0, 1000.0];
        let got = logsumexp(&xs);
        assert!((got - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn dropout_mask_zero_p_is_identity() {
        let mut rng = RunRng::seed_from_u64(0);
        let before = rng.clone();
        let mask = dropout_mask(&mut rng, 8, 0.0);
        assert!(mask.iter().all(|&m| m == 1.0));
        // p = 0 must not consume randomness.
        assert_eq!(rng.get_word_pos(), before.get_word_pos());
    }

    #[test]
    fn dropout_mask_full_p_zeroes_everything() {
        let mut rng = RunRng::seed_from_u64(1);
        let mask = dropout_mask(&mut rng, 32, 1.0);
        assert!(mask.iter().all(|&m| m == 0.0));
    }
}
