//! Second-order relation scoring: two entities bridged through a single
//! context token.
//!
//! Given the intermediate pairwise score tensor `B` (same bilinear form as
//! the first-order tensor, separate parameters), the context-conditioned
//! score of mentions `(i, j)` through context token `k` is
//! `C(i,j|k) = B[i,k] + B[k,j]`, and the pooled second-order score is
//! `log Σ exp(C)` over all mention pairs and context tokens.
//!
//! Two implementations are provided:
//!
//! * [`second_order_naive`] materializes every `C(i,j|k)`, an `O(R·N³)`
//!   auxiliary store, and pools over the masked triples. It is the
//!   correctness oracle and the baseline for the memory benchmark.
//! * [`second_order_efficient`] builds two masked factors `T₁` (head ×
//!   context) and `T₂` (context × tail) holding shifted exponentials of `B`,
//!   contracts them over the context dimension with a batched matrix
//!   multiply of `[pairs·R × N × N]` slabs, sums the surviving entries, and
//!   takes the log. Peak auxiliary memory is `O(pairs·R·N²)`; the `N³`
//!   tensor of `C` values is never formed.

use ndarray::{s, Array2, Array3, Array4, ArrayView3, ArrayView4, NdFloat};

use crate::error::{Error, Result};
use crate::first_order;

/// Pooled score assigned when the context set is empty (a document holding
/// nothing but the two entities): the LogSumExp over an empty set is -inf;
/// a large negative finite value keeps downstream arithmetic finite.
pub const NO_CONTEXT_SCORE: f64 = -1e30;

/// `B[b,i,r,j] = Σ_{p,q} e2_head[b,i,p] · M[p,r,q] · e2_tail[b,j,q]`
///
/// Identical contract to [`first_order::biaffine`], applied to the
/// second-order projections and bilinear tensor `M`.
pub fn intermediate_scores(
    e2_head: &Array3<f64>,
    e2_tail: &Array3<f64>,
    m: &Array3<f64>,
) -> Result<Array4<f64>> {
    first_order::biaffine(e2_head, e2_tail, m)
}

/// Backward of [`intermediate_scores`]; see [`first_order::biaffine_backward`].
pub fn intermediate_scores_backward(
    e2_head: &Array3<f64>,
    e2_tail: &Array3<f64>,
    m: &Array3<f64>,
    d_b: &Array4<f64>,
    d_m: &mut Array3<f64>,
) -> (Array3<f64>, Array3<f64>) {
    first_order::biaffine_backward(e2_head, e2_tail, m, d_b, d_m)
}

/// Index sets selecting one candidate pair inside a batched `B` tensor.
/// All three lists must be sorted and duplicate-free.
#[derive(Debug, Clone)]
pub struct PairIndices {
    /// Row of the batch this pair's document occupies.
    pub doc_index: usize,
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
    pub context: Vec<usize>,
}

impl PairIndices {
    fn validate(&self, batch: usize, n: usize) -> Result<()> {
        if self.doc_index >= batch {
            return Err(Error::input(format!(
                "pair doc_index {} outside batch of {batch}",
                self.doc_index
            )));
        }
        if self.head.is_empty() || self.tail.is_empty() {
            return Err(Error::input("mention sets must be non-empty"));
        }
        for (name, set) in [
            ("head", &self.head),
            ("tail", &self.tail),
            ("context", &self.context),
        ] {
            if !set.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::input(format!("{name} indices must be sorted and unique")));
            }
            if set.last().is_some_and(|&last| last >= n) {
                return Err(Error::input(format!("{name} index out of range (N = {n})")));
            }
        }
        for k in &self.context {
            if self.head.binary_search(k).is_ok() || self.tail.binary_search(k).is_ok() {
                return Err(Error::input(
                    "context set must be disjoint from both mention sets",
                ));
            }
        }
        Ok(())
    }
}

/// Pooled second-order scores for one pair by the naive route: materialize
/// `C(i,j|k) = B[i,r,k] + B[k,r,j]` for **every** triple `(i,j,k)` (the
/// `O(R·N³)` store the efficient kernel exists to avoid), then LogSumExp
/// over the masked triples in max-shifted form.
///
/// `b` is one document's slice `[N × R × N]`. An empty context set yields
/// [`NO_CONTEXT_SCORE`] for every relation.
pub fn second_order_naive<F: NdFloat>(
    b: ArrayView3<F>,
    head: &[usize],
    tail: &[usize],
    ctx: &[usize],
) -> Result<Vec<F>> {
    let (n, r_count, n2) = b.dim();
    debug_assert_eq!(n, n2);
    let pair = PairIndices {
        doc_index: 0,
        head: head.to_vec(),
        tail: tail.to_vec(),
        context: ctx.to_vec(),
    };
    pair.validate(1, n)?;
    if ctx.is_empty() {
        return Ok(vec![F::from(NO_CONTEXT_SCORE).unwrap(); r_count]);
    }

    // The full context-conditioned score store; each relation gets an N×N×N
    // block regardless of how small the mention/context sets are.
    let mut c = Array4::<F>::zeros((r_count, n, n, n));
    for r in 0..r_count {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    c[[r, i, j, k]] = b[[i, r, k]] + b[[k, r, j]];
                }
            }
        }
    }

    let mut scores = Vec::with_capacity(r_count);
    for r in 0..r_count {
        let mut max = F::neg_infinity();
        for &i in head {
            for &j in tail {
                for &k in ctx {
                    max = max.max(c[[r, i, j, k]]);
                }
            }
        }
        let mut sum = F::zero();
        for &i in head {
            for &j in tail {
                for &k in ctx {
                    sum += (c[[r, i, j, k]] - max).exp();
                }
            }
        }
        scores.push(max + sum.ln());
    }
    Ok(scores)
}

/// Auxiliary bytes the naive route allocates for a document of length `n`
/// with `r` relation types.
pub fn naive_aux_bytes<F>(n: usize, r: usize) -> usize {
    r * n * n * n * std::mem::size_of::<F>()
}

/// Auxiliary bytes the efficient kernel allocates for `pairs` candidate
/// pairs (`T₁`, `T₂` and the product tensor).
pub fn efficient_aux_bytes<F>(pairs: usize, n: usize, r: usize) -> usize {
    3 * pairs * r * n * n * std::mem::size_of::<F>()
}

/// Pooled second-order scores for a batch of pairs via the memory-efficient
/// kernel; mathematically equal to [`second_order_naive`] pair by pair.
///
/// Per pair and relation the stabilization shift is the maximum of `B` over
/// the contributing head-row and tail-column slices; both factors carry the
/// shift, and `2·shift` is restored after the log.
pub fn second_order_efficient<F: NdFloat>(
    b: ArrayView4<F>,
    pairs: &[PairIndices],
) -> Result<Array2<F>> {
    let (batch, n, r_count, _) = b.dim();
    for pair in pairs {
        pair.validate(batch, n)?;
    }
    let p_count = pairs.len();

    let mut t1 = Array4::<F>::zeros((p_count, r_count, n, n));
    let mut t2 = Array4::<F>::zeros((p_count, r_count, n, n));
    let mut shifts = Array2::<F>::zeros((p_count, r_count));

    for (p, pair) in pairs.iter().enumerate() {
        if pair.context.is_empty() {
            continue; // leaves zero factors; handled after the contraction
        }
        let doc = b.slice(s![pair.doc_index, .., .., ..]);
        for r in 0..r_count {
            let mut m = F::neg_infinity();
            for &i in &pair.head {
                for &k in &pair.context {
                    m = m.max(doc[[i, r, k]]);
                }
            }
            for &k in &pair.context {
                for &j in &pair.tail {
                    m = m.max(doc[[k, r, j]]);
                }
            }
            shifts[[p, r]] = m;
            for &i in &pair.head {
                for &k in &pair.context {
                    t1[[p, r, i, k]] = (doc[[i, r, k]] - m).exp();
                }
            }
            for &k in &pair.context {
                for &j in &pair.tail {
                    t2[[p, r, k, j]] = (doc[[k, r, j]] - m).exp();
                }
            }
        }
    }

    // Permute is a no-op here (the factors are built [pairs × R × N × N]);
    // reshape to [pairs·R × N × N] slabs and contract over the context
    // dimension with one batched matrix multiply.
    let t1 = t1.into_shape_with_order((p_count * r_count, n, n)).unwrap();
    let t2 = t2.into_shape_with_order((p_count * r_count, n, n)).unwrap();
    let mut prod = Array3::<F>::zeros((p_count * r_count, n, n));
    for s_idx in 0..p_count * r_count {
        let a = t1.slice(s![s_idx, .., ..]);
        let c = t2.slice(s![s_idx, .., ..]);
        let mut out = prod.slice_mut(s![s_idx, .., ..]);
        ndarray::linalg::general_mat_mul(F::one(), &a, &c, F::zero(), &mut out);
    }

    // Sum the surviving entries over the last two dimensions, take the log,
    // and undo the stabilization shift.
    let mut scores = Array2::<F>::zeros((p_count, r_count));
    let two = F::one() + F::one();
    for (p, pair) in pairs.iter().enumerate() {
        for r in 0..r_count {
            if pair.context.is_empty() {
                scores[[p, r]] = F::from(NO_CONTEXT_SCORE).unwrap();
            } else {
                let z = prod.slice(s![p * r_count + r, .., ..]).sum();
                scores[[p, r]] = z.ln() + two * shifts[[p, r]];
            }
        }
    }
    Ok(scores)
}

/// Gradient of the pooled second-order scores w.r.t. `B`: the LogSumExp
/// softmax weights `exp(C(i,j|k) − scores_r)` scattered back into the
/// head-row and tail-column slices. Computed in `O(|head|·|ctx| +
/// |ctx|·|tail|)` per pair and relation via row/column marginals; the `N³`
/// weight tensor is never formed.
pub fn second_order_backward(
    b: ArrayView4<f64>,
    pairs: &[PairIndices],
    scores: &Array2<f64>,
    d_scores: &Array2<f64>,
    d_b: &mut Array4<f64>,
) {
    let r_count = b.dim().2;
    for (p, pair) in pairs.iter().enumerate() {
        if pair.context.is_empty() {
            continue; // constant sentinel carries no gradient
        }
        let doc = b.slice(s![pair.doc_index, .., .., ..]);
        for r in 0..r_count {
            let ds = d_scores[[p, r]];
            if ds == 0.0 {
                continue;
            }
            let mut m = f64::NEG_INFINITY;
            for &i in &pair.head {
                for &k in &pair.context {
                    m = m.max(doc[[i, r, k]]);
                }
            }
            for &k in &pair.context {
                for &j in &pair.tail {
                    m = m.max(doc[[k, r, j]]);
                }
            }
            // scores = ln Z + 2m, so Z = exp(scores − 2m).
            let z = (scores[[p, r]] - 2.0 * m).exp();
            // Per-context marginals of the two factors.
            let mut s1 = vec![0.0; pair.context.len()];
            let mut s2 = vec![0.0; pair.context.len()];
            for (kk, &k) in pair.context.iter().enumerate() {
                for &i in &pair.head {
                    s1[kk] += (doc[[i, r, k]] - m).exp();
                }
                for &j in &pair.tail {
                    s2[kk] += (doc[[k, r, j]] - m).exp();
                }
            }
            for (kk, &k) in pair.context.iter().enumerate() {
                for &i in &pair.head {
                    let w = (doc[[i, r, k]] - m).exp() * s2[kk] / z;
                    d_b[[pair.doc_index, i, r, k]] += ds * w;
                }
                for &j in &pair.tail {
                    let w = s1[kk] * (doc[[k, r, j]] - m).exp() / z;
                    d_b[[pair.doc_index, k, r, j]] += ds * w;
                }
            }
        }
    }
}

/// `scores_r = scores1_r + α · scores2_r`
pub fn combine(scores1: &[f64], scores2: &[f64], alpha: f64) -> Vec<f64> {
    debug_assert_eq!(scores1.len(), scores2.len());
    scores1
        .iter()
        .zip(scores2)
        .map(|(s1, s2)| s1 + alpha * s2)
        .collect()
}
