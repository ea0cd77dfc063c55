//! Token-level BIO tagging head trained jointly with relation scoring.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::util::{glorot_uniform, RunRng};

/// Linear tag classifier over encoder representations.
#[derive(Debug, Clone)]
pub struct NerHead {
    /// `[d_model × num_tags]`
    pub w: Array2<f64>,
    /// `[num_tags]`
    pub bias: Array1<f64>,
}

/// Gradient accumulator matching [`NerHead`].
#[derive(Debug, Clone)]
pub struct NerGrads {
    pub w: Array2<f64>,
    pub bias: Array1<f64>,
}

impl NerHead {
    pub fn new(rng: &mut RunRng, d_model: usize, num_tags: usize) -> Self {
        let w = Array2::from_shape_vec(
            (d_model, num_tags),
            glorot_uniform(rng, d_model, num_tags, d_model * num_tags),
        )
        .unwrap();
        NerHead { w, bias: Array1::zeros(num_tags) }
    }

    pub fn zero_grads(&self) -> NerGrads {
        NerGrads { w: Array2::zeros(self.w.raw_dim()), bias: Array1::zeros(self.bias.raw_dim()) }
    }

    /// `logits[b,t,:] = reps[b,t,:] · W + bias`
    pub fn logits(&self, reps: &Array3<f64>) -> Array3<f64> {
        let (batch, n, dm) = reps.dim();
        let num_tags = self.w.ncols();
        let flat = reps.view().into_shape_with_order((batch * n, dm)).unwrap();
        let mut out = flat.dot(&self.w);
        out += &self.bias;
        out.into_shape_with_order((batch, n, num_tags)).unwrap()
    }

    /// Accumulates parameter gradients and returns `d_reps`.
    pub fn backward(
        &self,
        reps: &Array3<f64>,
        d_logits: &Array3<f64>,
        grads: &mut NerGrads,
    ) -> Array3<f64> {
        let (batch, n, dm) = reps.dim();
        let num_tags = self.w.ncols();
        let flat_reps = reps.view().into_shape_with_order((batch * n, dm)).unwrap();
        let flat_d = d_logits
            .view()
            .into_shape_with_order((batch * n, num_tags))
            .unwrap();
        grads.w += &flat_reps.t().dot(&flat_d);
        grads.bias += &flat_d.sum_axis(Axis(0));
        flat_d
            .dot(&self.w.t())
            .into_shape_with_order((batch, n, dm))
            .unwrap()
    }
}

/// Mean cross-entropy over unmasked tokens, plus its gradient w.r.t. the
/// logits (softmax minus one-hot, scaled by `1/count`; zero at masked
/// positions). A batch with no unmasked token is an input error.
pub fn ner_loss(
    logits: &Array3<f64>,
    tags: ArrayView2<usize>,
    mask: &Array2<bool>,
) -> Result<(f64, Array3<f64>)> {
    let (batch, n, num_tags) = logits.dim();
    if tags.dim() != (batch, n) || mask.dim() != (batch, n) {
        return Err(Error::input("tags/mask shape does not match logits"));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::input("NER loss over a fully masked batch"));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut d_logits = Array3::zeros(logits.raw_dim());
    for b in 0..batch {
        for t in 0..n {
            if !mask[[b, t]] {
                continue;
            }
            let gold = tags[[b, t]];
            if gold >= num_tags {
                return Err(Error::input(format!(
                    "tag id {gold} out of range (num_tags = {num_tags})"
                )));
            }
            let row = logits.slice(ndarray::s![b, t, ..]);
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let mut z = 0.0;
            for &v in row {
                z += (v - max).exp();
            }
            loss += inv * (max + z.ln() - row[gold]);
            for c in 0..num_tags {
                let p = (row[c] - max).exp() / z;
                d_logits[[b, t, c]] = inv * (p - if c == gold { 1.0 } else { 0.0 });
            }
        }
    }
    Ok((loss, d_logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array};
    use rand::{Rng, SeedableRng};

    fn head_from(w: Array2<f64>, bias: Array1<f64>) -> NerHead {
        NerHead { w, bias }
    }

    #[test]
    fn logits_match_hand_rolled_affine() {
        let head = head_from(
            arr2(&[[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]]),
            arr1(&[0.5, -0.5, 0.0]),
        );
        let mut reps = Array3::zeros((1, 2, 2));
        reps[[0, 0, 0]] = 2.0;
        reps[[0, 0, 1]] = 3.0;
        reps[[0, 1, 0]] = -1.0;
        let logits = head.logits(&reps);
        assert_eq!(logits[[0, 0, 0]], 2.5);
        assert_eq!(logits[[0, 0, 1]], 2.5);
        assert_eq!(logits[[0, 0, 2]], 1.0);
        assert_eq!(logits[[0, 1, 0]], -0.5);
        assert_eq!(logits[[0, 1, 1]], -0.5);
        assert_eq!(logits[[0, 1, 2]], -2.0);
    }

    #[test]
    fn uniform_logits_cost_ln_num_tags() {
        let logits = Array3::zeros((2, 3, 5));
        let tags = arr2(&[[0, 4, 2], [1, 1, 3]]);
        let mask = Array2::from_elem((2, 3), true);
        let (loss, _) = ner_loss(&logits, tags.view(), &mask).unwrap();
        assert!((loss - 5.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_tag_margin_closed_form() {
        // logits (2, 0), gold first tag: ln(1 + e^-2) = 0.126928.
        let mut logits = Array3::zeros((1, 1, 2));
        logits[[0, 0, 0]] = 2.0;
        let tags = arr2(&[[0usize]]);
        let mask = Array2::from_elem((1, 1), true);
        let (loss, _) = ner_loss(&logits, tags.view(), &mask).unwrap();
        assert!((loss - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn loss_invariant_to_per_token_logit_shift() {
        let mut rng = crate::util::RunRng::seed_from_u64(2);
        let logits = Array::from_shape_fn((2, 4, 3), |_| rng.gen_range(-2.0..2.0));
        let tags = Array2::from_shape_fn((2, 4), |_| rng.gen_range(0..3usize));
        let mask = Array2::from_elem((2, 4), true);
        let (base, _) = ner_loss(&logits, tags.view(), &mask).unwrap();
        let mut shifted = logits.clone();
        for b in 0..2 {
            for t in 0..4 {
                let c = (b * 4 + t) as f64 - 3.0;
                for k in 0..3 {
                    shifted[[b, t, k]] += c;
                }
            }
        }
        let (moved, _) = ner_loss(&shifted, tags.view(), &mask).unwrap();
        assert!((base - moved).abs() <= 1e-9);
    }

    #[test]
    fn masked_tokens_do_not_affect_loss_or_gradient() {
        let mut rng = crate::util::RunRng::seed_from_u64(4);
        let logits = Array::from_shape_fn((1, 5, 4), |_| rng.gen_range(-1.0..1.0));
        let tags = Array2::from_shape_fn((1, 5), |_| rng.gen_range(0..4usize));
        let mut mask = Array2::from_elem((1, 5), true);
        mask[[0, 3]] = false;
        mask[[0, 4]] = false;
        let (base, grad) = ner_loss(&logits, tags.view(), &mask).unwrap();
        let mut scrambled = logits.clone();
        for k in 0..4 {
            scrambled[[0, 3, k]] = 1e6;
            scrambled[[0, 4, k]] = -42.0;
        }
        let (same, _) = ner_loss(&scrambled, tags.view(), &mask).unwrap();
        assert_eq!(base.to_bits(), same.to_bits());
        for k in 0..4 {
            assert_eq!(grad[[0, 3, k]], 0.0);
            assert_eq!(grad[[0, 4, k]], 0.0);
        }
    }

    #[test]
    fn fully_masked_batch_is_an_input_error() {
        let logits = Array3::zeros((1, 3, 2));
        let tags = arr2(&[[0usize, 0, 0]]);
        let mask = Array2::from_elem((1, 3), false);
        assert!(ner_loss(&logits, tags.view(), &mask).is_err());
    }

    #[test]
    fn out_of_range_tag_is_an_input_error() {
        let logits = Array3::zeros((1, 1, 2));
        let tags = arr2(&[[2usize]]);
        let mask = Array2::from_elem((1, 1), true);
        assert!(ner_loss(&logits, tags.view(), &mask).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = crate::util::RunRng::seed_from_u64(8);
        let logits = Array::from_shape_fn((2, 3, 4), |_| rng.gen_range(-1.5..1.5));
        let tags = Array2::from_shape_fn((2, 3), |_| rng.gen_range(0..4usize));
        let mut mask = Array2::from_elem((2, 3), true);
        mask[[1, 2]] = false;
        let (_, grad) = ner_loss(&logits, tags.view(), &mask).unwrap();
        let eps = 1e-6;
        for idx in ndarray::indices(logits.raw_dim()) {
            let mut lp = logits.clone();
            lp[idx] += eps;
            let mut lm = logits.clone();
            lm[idx] -= eps;
            let fp = ner_loss(&lp, tags.view(), &mask).unwrap().0;
            let fm = ner_loss(&lm, tags.view(), &mask).unwrap().0;
            let fd = (fp - fm) / (2.0 * eps);
            assert!((grad[idx] - fd).abs() <= 1e-7 + 1e-4 * fd.abs().max(grad[idx].abs()));
        }
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        let mut rng = crate::util::RunRng::seed_from_u64(16);
        let head = NerHead::new(&mut rng, 5, 3);
        let reps = Array::from_shape_fn((1, 4, 5), |_| rng.gen_range(-1.0..1.0));
        let tags = Array2::from_shape_fn((1, 4), |_| rng.gen_range(0..3usize));
        let mask = Array2::from_elem((1, 4), true);
        let loss_of = |h: &NerHead, reps: &Array3<f64>| {
            ner_loss(&h.logits(reps), tags.view(), &mask).unwrap().0
        };
        let logits = head.logits(&reps);
        let (_, d_logits) = ner_loss(&logits, tags.view(), &mask).unwrap();
        let mut grads = head.zero_grads();
        let d_reps = head.backward(&reps, &d_logits, &mut grads);
        let eps = 1e-6;
        for idx in ndarray::indices(head.w.raw_dim()) {
            let mut hp = head.clone();
            hp.w[idx] += eps;
            let mut hm = head.clone();
            hm.w[idx] -= eps;
            let fd = (loss_of(&hp, &reps) - loss_of(&hm, &reps)) / (2.0 * eps);
            assert!((grads.w[idx] - fd).abs() <= 1e-7 + 1e-4 * fd.abs().max(grads.w[idx].abs()));
        }
        for idx in 0..head.bias.len() {
            let mut hp = head.clone();
            hp.bias[idx] += eps;
            let mut hm = head.clone();
            hm.bias[idx] -= eps;
            let fd = (loss_of(&hp, &reps) - loss_of(&hm, &reps)) / (2.0 * eps);
            assert!((grads.bias[idx] - fd).abs() <= 1e-7 + 1e-4 * fd.abs());
        }
        for idx in ndarray::indices(reps.raw_dim()) {
            let mut rp = reps.clone();
            rp[idx] += eps;
            let mut rm = reps.clone();
            rm[idx] -= eps;
            let fd = (loss_of(&head, &rp) - loss_of(&head, &rm)) / (2.0 * eps);
            assert!((d_reps[idx] - fd).abs() <= 1e-7 + 1e-4 * fd.abs().max(d_reps[idx].abs()));
        }
    }
}
