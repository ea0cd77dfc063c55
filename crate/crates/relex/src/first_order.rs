//! First-order relation scoring: head/tail MLP projections, the bi-affine
//! pairwise score tensor, and LogSumExp mention pooling.
//!
//! `A[b, i, r, j]` scores the triplet (token `i`, relation `r`, token `j`)
//! for every token pair of a document; a pair of entities is then scored by
//! pooling `A` over all (head mention, tail mention) index pairs with a
//! stabilized LogSumExp.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewMut3};

use crate::error::{Error, Result};
use crate::util::{dropout_mask, Mode, RunRng};

/// One 2-layer MLP `e = ReLU(x·W1)·W2`, no biases.
#[derive(Debug, Clone)]
pub struct Projector {
    /// `[model_dim × hidden]`
    pub w1: Array2<f64>,
    /// `[hidden × proj_dim]`
    pub w2: Array2<f64>,
}

/// Forward-pass values needed by [`Projector::backward`].
pub struct ProjectorCache {
    /// ReLU output `[batch × N × hidden]`.
    hidden: Array3<f64>,
    /// Inverted-dropout mask applied to the projection output, if training.
    dropout: Option<Array3<f64>>,
}

/// Gradients for one projector.
#[derive(Debug, Clone)]
pub struct ProjectorGrads {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl Projector {
    pub fn new(rng: &mut RunRng, model_dim: usize, hidden: usize, proj_dim: usize) -> Self {
        let w1 = Array2::from_shape_vec(
            (model_dim, hidden),
            crate::util::glorot_uniform(rng, model_dim, hidden, model_dim * hidden),
        )
        .unwrap();
        let w2 = Array2::from_shape_vec(
            (hidden, proj_dim),
            crate::util::glorot_uniform(rng, hidden, proj_dim, hidden * proj_dim),
        )
        .unwrap();
        Projector { w1, w2 }
    }

    pub fn zeros_like(&self) -> ProjectorGrads {
        ProjectorGrads {
            w1: Array2::zeros(self.w1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
        }
    }

    pub fn proj_dim(&self) -> usize {
        self.w2.ncols()
    }

    /// Project token representations to `[batch × N × proj_dim]`. In train
    /// mode, dropout with probability `dropout_p` is applied after the
    /// projection.
    pub fn forward(
        &self,
        reps: &Array3<f64>,
        dropout_p: f64,
        mode: Mode,
        rng: &mut RunRng,
    ) -> Result<(Array3<f64>, ProjectorCache)> {
        let (b, n, dm) = reps.dim();
        if dm != self.w1.nrows() {
            return Err(Error::input(format!(
                "projector expects model_dim {}, got {dm}",
                self.w1.nrows()
            )));
        }
        let hidden_dim = self.w1.ncols();
        let d = self.w2.ncols();
        let flat = reps.view().into_shape_with_order((b * n, dm)).unwrap();
        let mut hidden = flat.dot(&self.w1);
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut out = hidden.dot(&self.w2);

        let p = mode.dropout(dropout_p);
        let dropout = if p > 0.0 {
            let mask = Array2::from_shape_vec(
                (b * n, d),
                dropout_mask(rng, b * n * d, p),
            )
            .unwrap();
            out *= &mask;
            Some(mask.into_shape_with_order((b, n, d)).unwrap())
        } else {
            None
        };

        Ok((
            out.into_shape_with_order((b, n, d)).unwrap(),
            ProjectorCache {
                hidden: hidden.into_shape_with_order((b, n, hidden_dim)).unwrap(),
                dropout,
            },
        ))
    }

    /// Accumulate parameter gradients and the gradient w.r.t. `reps`.
    pub fn backward(
        &self,
        reps: &Array3<f64>,
        cache: &ProjectorCache,
        d_out: &Array3<f64>,
        grads: &mut ProjectorGrads,
        d_reps: &mut Array3<f64>,
    ) {
        let (b, n, dm) = reps.dim();
        let d = self.w2.ncols();
        let h = self.w1.ncols();
        let mut d_out = d_out.clone();
        if let Some(mask) = &cache.dropout {
            d_out *= mask;
        }
        let d_out = d_out.into_shape_with_order((b * n, d)).unwrap();
        let hidden = cache.hidden.view().into_shape_with_order((b * n, h)).unwrap();
        let flat_reps = reps.view().into_shape_with_order((b * n, dm)).unwrap();

        grads.w2 += &hidden.t().dot(&d_out);
        let mut d_hidden = d_out.dot(&self.w2.t());
        // ReLU gate: hidden > 0 exactly where the pre-activation was > 0.
        ndarray::Zip::from(&mut d_hidden).and(&hidden).for_each(|g, &hv| {
            if hv <= 0.0 {
                *g = 0.0;
            }
        });
        grads.w1 += &flat_reps.t().dot(&d_hidden);
        let d_flat = d_hidden.dot(&self.w1.t());
        *d_reps += &d_flat.into_shape_with_order((b, n, dm)).unwrap();
    }
}

/// Separate head and tail projectors sharing one shape contract.
#[derive(Debug, Clone)]
pub struct HeadTailProjector {
    pub head: Projector,
    pub tail: Projector,
}

impl HeadTailProjector {
    pub fn new(rng: &mut RunRng, model_dim: usize, hidden: usize, proj_dim: usize) -> Self {
        HeadTailProjector {
            head: Projector::new(rng, model_dim, hidden, proj_dim),
            tail: Projector::new(rng, model_dim, hidden, proj_dim),
        }
    }
}

/// `A[b,i,r,j] = Σ_{p,q} e_head[b,i,p] · L[p,r,q] · e_tail[b,j,q]`
///
/// `l` is `[d × R × d]`; the output is `[batch × N × R × N]`.
pub fn biaffine(
    e_head: &Array3<f64>,
    e_tail: &Array3<f64>,
    l: &Array3<f64>,
) -> Result<Array4<f64>> {
    let (b, n, d) = e_head.dim();
    if e_tail.dim() != (b, n, d) {
        return Err(Error::input("head/tail projections must share a shape"));
    }
    let (dl, r_count, dr) = l.dim();
    if dl != d || dr != d {
        return Err(Error::input(format!(
            "bilinear tensor is {dl}×{r_count}×{dr}, projections have dim {d}"
        )));
    }
    let mut a = Array4::zeros((b, n, r_count, n));
    for r in 0..r_count {
        let l_r = l.slice(s![.., r, ..]);
        for bi in 0..b {
            let eh = e_head.slice(s![bi, .., ..]);
            let et = e_tail.slice(s![bi, .., ..]);
            // (N×d) · (d×d) · (d×N) -> N×N
            let scores = eh.dot(&l_r).dot(&et.t());
            a.slice_mut(s![bi, .., r, ..]).assign(&scores);
        }
    }
    Ok(a)
}

/// Gradients of [`biaffine`] given `d_a`; returns gradients for the two
/// projections and accumulates the bilinear-tensor gradient into `d_l`.
pub fn biaffine_backward(
    e_head: &Array3<f64>,
    e_tail: &Array3<f64>,
    l: &Array3<f64>,
    d_a: &Array4<f64>,
    d_l: &mut Array3<f64>,
) -> (Array3<f64>, Array3<f64>) {
    let (b, n, d) = e_head.dim();
    let r_count = l.dim().1;
    let mut d_head = Array3::zeros((b, n, d));
    let mut d_tail = Array3::zeros((b, n, d));
    for r in 0..r_count {
        let l_r = l.slice(s![.., r, ..]);
        for bi in 0..b {
            let eh = e_head.slice(s![bi, .., ..]);
            let et = e_tail.slice(s![bi, .., ..]);
            let g = d_a.slice(s![bi, .., r, ..]); // N×N
            let g_et = g.dot(&et); // N×d
            d_l.slice_mut(s![.., r, ..]).scaled_add(1.0, &eh.t().dot(&g_et));
            d_head
                .slice_mut(s![bi, .., ..])
                .scaled_add(1.0, &g_et.dot(&l_r.t()));
            d_tail
                .slice_mut(s![bi, .., ..])
                .scaled_add(1.0, &g.t().dot(&eh.dot(&l_r)));
        }
    }
    (d_head, d_tail)
}

/// First-order pooled scores for one pair:
/// `scores¹_r = log Σ_{i∈head, j∈tail} exp(A[i,r,j])`, max-shifted.
///
/// `a` is one document's slice `[N × R × N]`.
pub fn pool_first_order(
    a: ArrayView3<f64>,
    head: &[usize],
    tail: &[usize],
) -> Result<Vec<f64>> {
    if head.is_empty() || tail.is_empty() {
        return Err(Error::input("mention sets must be non-empty"));
    }
    let r_count = a.dim().1;
    let mut scores = Vec::with_capacity(r_count);
    for r in 0..r_count {
        let mut max = f64::NEG_INFINITY;
        for &i in head {
            for &j in tail {
                max = max.max(a[[i, r, j]]);
            }
        }
        let mut sum = 0.0;
        for &i in head {
            for &j in tail {
                sum += (a[[i, r, j]] - max).exp();
            }
        }
        scores.push(max + sum.ln());
    }
    Ok(scores)
}

/// Scatter `d_scores` back into `d_a` using the LogSumExp softmax weights
/// `exp(A[i,r,j] − scores_r)` over the contributing entries.
pub fn pool_first_order_backward(
    a: ArrayView3<f64>,
    head: &[usize],
    tail: &[usize],
    scores: &[f64],
    d_scores: &[f64],
    d_a: &mut ArrayViewMut3<f64>,
) {
    for (r, (&s, &ds)) in scores.iter().zip(d_scores).enumerate() {
        if ds == 0.0 {
            continue;
        }
        for &i in head {
            for &j in tail {
                d_a[[i, r, j]] += ds * (a[[i, r, j]] - s).exp();
            }
        }
    }
}

/// Reference bi-affine evaluation by explicit triple loop; used as the test
/// oracle for [`biaffine`].
pub fn biaffine_oracle(
    e_head: ArrayView2<f64>,
    e_tail: ArrayView2<f64>,
    l: &Array3<f64>,
) -> Array3<f64> {
    let (n, d) = e_head.dim();
    let r_count = l.dim().1;
    let mut a = Array3::zeros((n, r_count, n));
    for i in 0..n {
        for r in 0..r_count {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..d {
                    for q in 0..d {
                        acc += e_head[[i, p]] * l[[p, r, q]] * e_tail[[j, q]];
                    }
                }
                a[[i, r, j]] = acc;
            }
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};
    use rand::{Rng, SeedableRng};

    fn rng() -> RunRng {
        RunRng::seed_from_u64(42)
    }

    fn random_array3(rng: &mut RunRng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_project_to_zero() {
        let proj = Projector {
            w1: Array2::zeros((4, 3)),
            w2: Array2::zeros((3, 2)),
        };
        let reps = random_array3(&mut rng(), (2, 5, 4));
        let (out, _) = proj.forward(&reps, 0.0, Mode::Eval, &mut rng()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_kills_all_negative_inputs_under_identity_weights() {
        let proj = Projector {
            w1: Array2::eye(3),
            w2: Array2::eye(3),
        };
        let reps = Array3::from_elem((1, 4, 3), -0.5);
        let (out, _) = proj.forward(&reps, 0.0, Mode::Eval, &mut rng()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_matches_hand_rolled_matmul() {
        let mut r = rng();
        let proj = Projector {
            w1: Array::from_shape_fn((4, 6), |_| r.gen_range(-1.0..1.0)),
            w2: Array::from_shape_fn((6, 3), |_| r.gen_range(-1.0..1.0)),
        };
        let reps = random_array3(&mut r, (2, 5, 4));
        let (out, _) = proj.forward(&reps, 0.0, Mode::Eval, &mut rng()).unwrap();
        for b in 0..2 {
            for t in 0..5 {
                for o in 0..3 {
                    let mut expected = 0.0;
                    for h in 0..6 {
                        let mut pre = 0.0;
                        for i in 0..4 {
                            pre += reps[[b, t, i]] * proj.w1[[i, h]];
                        }
                        expected += pre.max(0.0) * proj.w2[[h, o]];
                    }
                    assert!((out[[b, t, o]] - expected).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn biaffine_orthogonal_and_aligned_cases() {
        // d=2, R=1, L slice = identity.
        let mut l = Array3::zeros((2, 1, 2));
        l[[0, 0, 0]] = 1.0;
        l[[1, 0, 1]] = 1.0;
        let e_head = arr2(&[[1.0, 0.0]]).insert_axis(ndarray::Axis(0));
        let e_tail_orth = arr2(&[[0.0, 1.0]]).insert_axis(ndarray::Axis(0));
        let e_tail_aligned = arr2(&[[1.0, 0.0]]).insert_axis(ndarray::Axis(0));
        let a = biaffine(&e_head.to_owned(), &e_tail_orth.to_owned(), &l).unwrap();
        assert_eq!(a[[0, 0, 0, 0]], 0.0);
        let a = biaffine(&e_head.to_owned(), &e_tail_aligned.to_owned(), &l).unwrap();
        assert_eq!(a[[0, 0, 0, 0]], 1.0);
    }

    #[test]
    fn biaffine_matches_triple_loop_oracle() {
        let mut r = rng();
        let e_head = random_array3(&mut r, (2, 4, 3));
        let e_tail = random_array3(&mut r, (2, 4, 3));
        let l = random_array3(&mut r, (3, 2, 3));
        let a = biaffine(&e_head, &e_tail, &l).unwrap();
        for b in 0..2 {
            let want = biaffine_oracle(
                e_head.slice(s![b, .., ..]),
                e_tail.slice(s![b, .., ..]),
                &l,
            );
            for i in 0..4 {
                for rr in 0..2 {
                    for j in 0..4 {
                        assert!((a[[b, i, rr, j]] - want[[i, rr, j]]).abs() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn single_mention_pair_pools_to_the_raw_score() {
        let mut r = rng();
        let a = random_array3(&mut r, (5, 3, 5));
        let scores = pool_first_order(a.view(), &[1], &[3]).unwrap();
        for rr in 0..3 {
            assert_eq!(scores[rr], a[[1, rr, 3]]);
        }
    }

    #[test]
    fn two_pair_pooling_matches_closed_form() {
        let mut a = Array3::zeros((2, 1, 2));
        a[[0, 0, 0]] = 0.5;
        a[[0, 0, 1]] = 1.5;
        let scores = pool_first_order(a.view(), &[0], &[0, 1]).unwrap();
        assert!((scores[0] - 1.813262).abs() < 1e-6);
    }

    #[test]
    fn equal_scores_pool_to_c_plus_ln_m() {
        let c = -0.7;
        let a = Array3::from_elem((4, 2, 4), c);
        let head = [0, 2];
        let tail = [1, 3];
        let scores = pool_first_order(a.view(), &head, &tail).unwrap();
        let want = c + (4.0_f64).ln();
        for s in scores {
            assert!((s - want).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mention_set_is_input_error() {
        let a = Array3::zeros((3, 1, 3));
        assert!(pool_first_order(a.view(), &[], &[0]).is_err());
        assert!(pool_first_order(a.view(), &[0], &[]).is_err());
    }

    #[test]
    fn pooling_bounds_and_order_invariance() {
        let mut r = rng();
        for _ in 0..50 {
            let a = random_array3(&mut r, (6, 3, 6));
            let head = vec![0, 2, 4];
            let tail = vec![1, 5];
            let scores = pool_first_order(a.view(), &head, &tail).unwrap();
            let m = (head.len() * tail.len()) as f64;
            for (rr, &s) in scores.iter().enumerate() {
                let mut max = f64::NEG_INFINITY;
                for &i in &head {
                    for &j in &tail {
                        max = max.max(a[[i, rr, j]]);
                    }
                }
                assert!(s >= max - 1e-12);
                assert!(s <= max + m.ln() + 1e-12);
            }
            let shuffled_head = vec![4, 0, 2];
            let shuffled_tail = vec![5, 1];
            let scores2 = pool_first_order(a.view(), &shuffled_head, &shuffled_tail).unwrap();
            for (x, y) in scores.iter().zip(&scores2) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn stabilized_pooling_equals_direct_form_when_safe() {
        let mut r = rng();
        let a = random_array3(&mut r, (4, 2, 4));
        let head = [0, 1];
        let tail = [2, 3];
        let scores = pool_first_order(a.view(), &head, &tail).unwrap();
        for rr in 0..2 {
            let mut sum = 0.0;
            for &i in &head {
                for &j in &tail {
                    sum += a[[i, rr, j]].exp();
                }
            }
            let direct = sum.ln();
            assert!((scores[rr] - direct).abs() <= 1e-9);
        }
    }

    #[test]
    fn pooling_gradient_matches_finite_differences() {
        let mut r = rng();
        let a = random_array3(&mut r, (4, 2, 4));
        let head = [0, 3];
        let tail = [1, 2];
        let scores = pool_first_order(a.view(), &head, &tail).unwrap();
        // Loss = Σ_r scores_r, so d_scores = 1.
        let d_scores = vec![1.0; 2];
        let mut d_a = Array3::zeros((4, 2, 4));
        pool_first_order_backward(a.view(), &head, &tail, &scores, &d_scores, &mut d_a.view_mut());
        let eps = 1e-5;
        for &i in &head {
            for rr in 0..2 {
                for &j in &tail {
                    let mut ap = a.clone();
                    ap[[i, rr, j]] += eps;
                    let mut am = a.clone();
                    am[[i, rr, j]] -= eps;
                    let fp: f64 = pool_first_order(ap.view(), &head, &tail).unwrap().iter().sum();
                    let fm: f64 = pool_first_order(am.view(), &head, &tail).unwrap().iter().sum();
                    let fd = (fp - fm) / (2.0 * eps);
                    let an = d_a[[i, rr, j]];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    assert!(rel <= 1e-4, "rel err {rel} at ({i},{rr},{j})");
                }
            }
        }
    }

    #[test]
    fn projector_backward_matches_finite_differences() {
        let mut r = rng();
        let proj = Projector {
            w1: Array::from_shape_fn((3, 4), |_| r.gen_range(-1.0..1.0)),
            w2: Array::from_shape_fn((4, 2), |_| r.gen_range(-1.0..1.0)),
        };
        let reps = random_array3(&mut r, (1, 3, 3));
        // Loss = sum of outputs.
        let loss = |p: &Projector, x: &Array3<f64>| -> f64 {
            let (out, _) = p.forward(x, 0.0, Mode::Eval, &mut rng()).unwrap();
            out.sum()
        };
        let (out, cache) = proj.forward(&reps, 0.0, Mode::Eval, &mut rng()).unwrap();
        let d_out = Array3::ones(out.raw_dim());
        let mut grads = proj.zeros_like();
        let mut d_reps = Array3::zeros(reps.raw_dim());
        proj.backward(&reps, &cache, &d_out, &mut grads, &mut d_reps);
        let eps = 1e-6;
        for idx in 0..proj.w1.len() {
            let (i, j) = (idx / 4, idx % 4);
            let mut pp = proj.clone();
            pp.w1[[i, j]] += eps;
            let mut pm = proj.clone();
            pm.w1[[i, j]] -= eps;
            let fd = (loss(&pp, &reps) - loss(&pm, &reps)) / (2.0 * eps);
            let an = grads.w1[[i, j]];
            assert!(
                (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1.0),
                "w1[{i},{j}]: analytic {an}, fd {fd}"
            );
        }
        for t in 0..3 {
            for k in 0..3 {
                let mut xp = reps.clone();
                xp[[0, t, k]] += eps;
                let mut xm = reps.clone();
                xm[[0, t, k]] -= eps;
                let fd = (loss(&proj, &xp) - loss(&proj, &xm)) / (2.0 * eps);
                let an = d_reps[[0, t, k]];
                assert!(
                    (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1.0),
                    "reps[0,{t},{k}]: analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn train_mode_dropout_masks_outputs() {
        let mut r = rng();
        let proj = Projector {
            w1: Array::from_shape_fn((3, 3), |_| r.gen_range(0.5..1.0)),
            w2: Array::from_shape_fn((3, 3), |_| r.gen_range(0.5..1.0)),
        };
        let reps = Array3::from_elem((1, 8, 3), 1.0);
        let (out, _) = proj.forward(&reps, 0.9, Mode::Train, &mut r).unwrap();
        let zeros = out.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 0, "expected some dropped outputs at p = 0.9");
        // Eval mode ignores the probability entirely.
        let (out_eval, _) = proj.forward(&reps, 0.9, Mode::Eval, &mut r).unwrap();
        assert!(out_eval.iter().all(|&v| v != 0.0));
    }
}
