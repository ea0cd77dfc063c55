//! The full joint model: encoder, first- and second-order scoring heads,
//! and the NER classifier, with manual forward/backward plumbing.

use ndarray::{s, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::encoder::{Encoder, EncoderCache, EncoderConfig, EncoderGrads, EncoderKind};
use crate::error::{Error, Result};
use crate::first_order::{self, HeadTailProjector, ProjectorCache, ProjectorGrads};
use crate::ner::{NerGrads, NerHead};
use crate::second_order::{self, PairIndices};
use crate::util::{Mode, RunRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub encoder_kind: EncoderKind,
    /// Hidden width of the head/tail MLPs.
    pub proj_hidden: usize,
    /// Output dimension `d` of the head/tail MLPs (rows/cols of `L` and `M`).
    pub proj_dim: usize,
    /// Relation types including the negative class.
    pub num_relations: usize,
    /// BIO tag count.
    pub num_tags: usize,
    /// Weight of second-order scores; `0` disables the second-order path
    /// entirely.
    pub alpha: f64,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, num_relations: usize, num_tags: usize) -> Self {
        ModelConfig {
            encoder,
            encoder_kind: EncoderKind::Transformer,
            proj_hidden: 64,
            proj_dim: 32,
            num_relations,
            num_tags,
            alpha: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.proj_hidden == 0 || self.proj_dim == 0 {
            return Err(Error::config("projection dims must be positive"));
        }
        if self.num_relations < 2 {
            return Err(Error::config(
                "need at least the negative class and one relation type",
            ));
        }
        if self.num_tags == 0 {
            return Err(Error::config("num_tags must be positive"));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::config(format!("alpha must be finite and ≥ 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub first: HeadTailProjector,
    pub second: HeadTailProjector,
    /// First-order bilinear tensor `[d × R × d]`.
    pub l: Array3<f64>,
    /// Second-order bilinear tensor `[d × R × d]`.
    pub m: Array3<f64>,
    pub ner: NerHead,
}

/// Gradient buffers mirroring [`Model`].
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub first_head: ProjectorGrads,
    pub first_tail: ProjectorGrads,
    pub second_head: ProjectorGrads,
    pub second_tail: ProjectorGrads,
    pub l: Array3<f64>,
    pub m: Array3<f64>,
    pub ner: NerGrads,
}

/// Relation-scoring outputs for one batch, one row per candidate pair.
#[derive(Debug, Clone)]
pub struct ReOutput {
    pub scores1: Array2<f64>,
    /// Absent when `alpha == 0` (the path is skipped, not just zeroed).
    pub scores2: Option<Array2<f64>>,
    pub combined: Array2<f64>,
}

struct SecondPath {
    e2_head: Array3<f64>,
    e2_tail: Array3<f64>,
    c2_head: ProjectorCache,
    c2_tail: ProjectorCache,
    b: Array4<f64>,
}

pub struct ReCache {
    enc: EncoderCache,
    reps: Array3<f64>,
    e1_head: Array3<f64>,
    e1_tail: Array3<f64>,
    c1_head: ProjectorCache,
    c1_tail: ProjectorCache,
    a: Array4<f64>,
    pair_indices: Vec<PairIndices>,
    second: Option<SecondPath>,
}

pub struct NerCache {
    enc: EncoderCache,
    reps: Array3<f64>,
}

impl Model {
    /// All parameters are drawn from `rng` in a fixed order, so one seed
    /// pins the entire initialization.
    pub fn new(config: ModelConfig, rng: &mut RunRng) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone(), rng)?;
        let dm = config.encoder.d_model;
        let first = HeadTailProjector::new(rng, dm, config.proj_hidden, config.proj_dim);
        let second = HeadTailProjector::new(rng, dm, config.proj_hidden, config.proj_dim);
        let d = config.proj_dim;
        let r = config.num_relations;
        let l = Array3::from_shape_vec(
            (d, r, d),
            crate::util::glorot_uniform(rng, d, d, d * r * d),
        )
        .unwrap();
        let m = Array3::from_shape_vec(
            (d, r, d),
            crate::util::glorot_uniform(rng, d, d, d * r * d),
        )
        .unwrap();
        let ner = NerHead::new(rng, dm, config.num_tags);
        Ok(Model { config, encoder, first, second, l, m, ner })
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            first_head: self.first.head.zeros_like(),
            first_tail: self.first.tail.zeros_like(),
            second_head: self.second.head.zeros_like(),
            second_tail: self.second.tail.zeros_like(),
            l: Array3::zeros(self.l.raw_dim()),
            m: Array3::zeros(self.m.raw_dim()),
            ner: self.ner.zero_grads(),
        }
    }

    /// Relation scores for every candidate pair in the batch.
    ///
    /// With `alpha == 0` the second-order path is skipped entirely: no
    /// projections, no kernel, no RNG draws, and `combined` is a bitwise
    /// copy of `scores1`.
    pub fn forward_re(
        &self,
        batch: &Batch,
        mode: Mode,
        rng: &mut RunRng,
    ) -> Result<(ReOutput, ReCache)> {
        let dropout = self.config.encoder.dropout;
        let (reps, enc) = self.encoder.forward(
            &batch.tokens.ids,
            &batch.tokens.mask,
            self.config.encoder_kind,
            mode,
            rng,
        )?;
        let (e1_head, c1_head) = self.first.head.forward(&reps, dropout, mode, rng)?;
        let (e1_tail, c1_tail) = self.first.tail.forward(&reps, dropout, mode, rng)?;
        let a = first_order::biaffine(&e1_head, &e1_tail, &self.l)?;

        let r = self.config.num_relations;
        let mut scores1 = Array2::zeros((batch.pairs.len(), r));
        for (p, bp) in batch.pairs.iter().enumerate() {
            let doc_scores = first_order::pool_first_order(
                a.slice(s![bp.doc_index, .., .., ..]),
                &bp.pair.head,
                &bp.pair.tail,
            )?;
            for (rr, v) in doc_scores.into_iter().enumerate() {
                scores1[[p, rr]] = v;
            }
        }
        let pair_indices: Vec<PairIndices> = batch
            .pairs
            .iter()
            .map(|bp| PairIndices {
                doc_index: bp.doc_index,
                head: bp.pair.head.clone(),
                tail: bp.pair.tail.clone(),
                context: bp.pair.context.clone(),
            })
            .collect();

        if self.config.alpha == 0.0 {
            let combined = scores1.clone();
            return Ok((
                ReOutput { scores1, scores2: None, combined },
                ReCache {
                    enc,
                    reps,
                    e1_head,
                    e1_tail,
                    c1_head,
                    c1_tail,
                    a,
                    pair_indices,
                    second: None,
                },
            ));
        }

        let (e2_head, c2_head) = self.second.head.forward(&reps, dropout, mode, rng)?;
        let (e2_tail, c2_tail) = self.second.tail.forward(&reps, dropout, mode, rng)?;
        let b = second_order::intermediate_scores(&e2_head, &e2_tail, &self.m)?;
        let scores2 = second_order::second_order_efficient(b.view(), &pair_indices)?;
        let alpha = self.config.alpha;
        let mut combined = scores1.clone();
        combined.zip_mut_with(&scores2, |c, &s2| *c += alpha * s2);

        Ok((
            ReOutput { scores1, scores2: Some(scores2), combined },
            ReCache {
                enc,
                reps,
                e1_head,
                e1_tail,
                c1_head,
                c1_tail,
                a,
                pair_indices,
                second: Some(SecondPath { e2_head, e2_tail, c2_head, c2_tail, b }),
            },
        ))
    }

    /// Backward through the relation pipeline given `d_combined`.
    pub fn backward_re(
        &self,
        output: &ReOutput,
        cache: &ReCache,
        d_combined: &Array2<f64>,
        grads: &mut ModelGrads,
    ) {
        let mut d_reps = Array3::zeros(cache.reps.raw_dim());

        if let Some(second) = &cache.second {
            let scores2 = output.scores2.as_ref().unwrap();
            let d_scores2 = d_combined.mapv(|v| v * self.config.alpha);
            let mut d_b = Array4::zeros(second.b.raw_dim());
            second_order::second_order_backward(
                second.b.view(),
                &cache.pair_indices,
                scores2,
                &d_scores2,
                &mut d_b,
            );
            let (d_e2h, d_e2t) = second_order::intermediate_scores_backward(
                &second.e2_head,
                &second.e2_tail,
                &self.m,
                &d_b,
                &mut grads.m,
            );
            self.second.head.backward(
                &cache.reps,
                &second.c2_head,
                &d_e2h,
                &mut grads.second_head,
                &mut d_reps,
            );
            self.second.tail.backward(
                &cache.reps,
                &second.c2_tail,
                &d_e2t,
                &mut grads.second_tail,
                &mut d_reps,
            );
        }

        let mut d_a = Array4::zeros(cache.a.raw_dim());
        for (p, pi) in cache.pair_indices.iter().enumerate() {
            let scores_row: Vec<f64> = output.scores1.row(p).to_vec();
            let d_row: Vec<f64> = d_combined.row(p).to_vec();
            first_order::pool_first_order_backward(
                cache.a.slice(s![pi.doc_index, .., .., ..]),
                &pi.head,
                &pi.tail,
                &scores_row,
                &d_row,
                &mut d_a.slice_mut(s![pi.doc_index, .., .., ..]),
            );
        }
        let (d_e1h, d_e1t) = first_order::biaffine_backward(
            &cache.e1_head,
            &cache.e1_tail,
            &self.l,
            &d_a,
            &mut grads.l,
        );
        self.first.head.backward(
            &cache.reps,
            &cache.c1_head,
            &d_e1h,
            &mut grads.first_head,
            &mut d_reps,
        );
        self.first.tail.backward(
            &cache.reps,
            &cache.c1_tail,
            &d_e1t,
            &mut grads.first_tail,
            &mut d_reps,
        );

        self.encoder.backward(&cache.enc, &d_reps, &mut grads.encoder);
    }

    /// Tag logits for every token in the batch.
    pub fn forward_ner(
        &self,
        batch: &Batch,
        mode: Mode,
        rng: &mut RunRng,
    ) -> Result<(Array3<f64>, NerCache)> {
        let (reps, enc) = self.encoder.forward(
            &batch.tokens.ids,
            &batch.tokens.mask,
            self.config.encoder_kind,
            mode,
            rng,
        )?;
        let logits = self.ner.logits(&reps);
        Ok((logits, NerCache { enc, reps }))
    }

    pub fn backward_ner(&self, cache: &NerCache, d_logits: &Array3<f64>, grads: &mut ModelGrads) {
        let d_reps = self.ner.backward(&cache.reps, d_logits, &mut grads.ner);
        self.encoder.backward(&cache.enc, &d_reps, &mut grads.encoder);
    }

    /// Named views of every parameter tensor, in a fixed order shared with
    /// [`ModelGrads::tensors`].
    pub fn param_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<f64>)> = Vec::new();
        out.push(("encoder.word_emb".into(), self.encoder.word_emb.view().into_dyn()));
        out.push(("encoder.pos_emb".into(), self.encoder.pos_emb.view().into_dyn()));
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            let name = |f: &str| format!("encoder.layers[{i}].{f}");
            out.push((name("wq"), layer.wq.view().into_dyn()));
            out.push((name("wk"), layer.wk.view().into_dyn()));
            out.push((name("wv"), layer.wv.view().into_dyn()));
            out.push((name("wo"), layer.wo.view().into_dyn()));
            out.push((name("conv1_w"), layer.conv1_w.view().into_dyn()));
            out.push((name("conv1_b"), layer.conv1_b.view().into_dyn()));
            out.push((name("conv5_w"), layer.conv5_w.view().into_dyn()));
            out.push((name("conv5_b"), layer.conv5_b.view().into_dyn()));
            out.push((name("conv_out_w"), layer.conv_out_w.view().into_dyn()));
            out.push((name("conv_out_b"), layer.conv_out_b.view().into_dyn()));
            out.push((name("ln1_gamma"), layer.ln1_gamma.view().into_dyn()));
            out.push((name("ln1_beta"), layer.ln1_beta.view().into_dyn()));
            out.push((name("ln2_gamma"), layer.ln2_gamma.view().into_dyn()));
            out.push((name("ln2_beta"), layer.ln2_beta.view().into_dyn()));
        }
        out.push(("first.head.w1".into(), self.first.head.w1.view().into_dyn()));
        out.push(("first.head.w2".into(), self.first.head.w2.view().into_dyn()));
        out.push(("first.tail.w1".into(), self.first.tail.w1.view().into_dyn()));
        out.push(("first.tail.w2".into(), self.first.tail.w2.view().into_dyn()));
        out.push(("second.head.w1".into(), self.second.head.w1.view().into_dyn()));
        out.push(("second.head.w2".into(), self.second.head.w2.view().into_dyn()));
        out.push(("second.tail.w1".into(), self.second.tail.w1.view().into_dyn()));
        out.push(("second.tail.w2".into(), self.second.tail.w2.view().into_dyn()));
        out.push(("l".into(), self.l.view().into_dyn()));
        out.push(("m".into(), self.m.view().into_dyn()));
        out.push(("ner.w".into(), self.ner.w.view().into_dyn()));
        out.push(("ner.bias".into(), self.ner.bias.view().into_dyn()));
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewMutD<f64>)> = Vec::new();
        out.push(("encoder.word_emb".into(), self.encoder.word_emb.view_mut().into_dyn()));
        out.push(("encoder.pos_emb".into(), self.encoder.pos_emb.view_mut().into_dyn()));
        for (i, layer) in self.encoder.layers.iter_mut().enumerate() {
            let name = |f: &str| format!("encoder.layers[{i}].{f}");
            out.push((name("wq"), layer.wq.view_mut().into_dyn()));
            out.push((name("wk"), layer.wk.view_mut().into_dyn()));
            out.push((name("wv"), layer.wv.view_mut().into_dyn()));
            out.push((name("wo"), layer.wo.view_mut().into_dyn()));
            out.push((name("conv1_w"), layer.conv1_w.view_mut().into_dyn()));
            out.push((name("conv1_b"), layer.conv1_b.view_mut().into_dyn()));
            out.push((name("conv5_w"), layer.conv5_w.view_mut().into_dyn()));
            out.push((name("conv5_b"), layer.conv5_b.view_mut().into_dyn()));
            out.push((name("conv_out_w"), layer.conv_out_w.view_mut().into_dyn()));
            out.push((name("conv_out_b"), layer.conv_out_b.view_mut().into_dyn()));
            out.push((name("ln1_gamma"), layer.ln1_gamma.view_mut().into_dyn()));
            out.push((name("ln1_beta"), layer.ln1_beta.view_mut().into_dyn()));
            out.push((name("ln2_gamma"), layer.ln2_gamma.view_mut().into_dyn()));
            out.push((name("ln2_beta"), layer.ln2_beta.view_mut().into_dyn()));
        }
        out.push(("first.head.w1".into(), self.first.head.w1.view_mut().into_dyn()));
        out.push(("first.head.w2".into(), self.first.head.w2.view_mut().into_dyn()));
        out.push(("first.tail.w1".into(), self.first.tail.w1.view_mut().into_dyn()));
        out.push(("first.tail.w2".into(), self.first.tail.w2.view_mut().into_dyn()));
        out.push(("second.head.w1".into(), self.second.head.w1.view_mut().into_dyn()));
        out.push(("second.head.w2".into(), self.second.head.w2.view_mut().into_dyn()));
        out.push(("second.tail.w1".into(), self.second.tail.w1.view_mut().into_dyn()));
        out.push(("second.tail.w2".into(), self.second.tail.w2.view_mut().into_dyn()));
        out.push(("l".into(), self.l.view_mut().into_dyn()));
        out.push(("m".into(), self.m.view_mut().into_dyn()));
        out.push(("ner.w".into(), self.ner.w.view_mut().into_dyn()));
        out.push(("ner.bias".into(), self.ner.bias.view_mut().into_dyn()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.param_tensors().iter().map(|(_, v)| v.len()).sum()
    }
}

impl ModelGrads {
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<f64>)> = Vec::new();
        out.push(("encoder.word_emb".into(), self.encoder.word_emb.view().into_dyn()));
        out.push(("encoder.pos_emb".into(), self.encoder.pos_emb.view().into_dyn()));
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            let name = |f: &str| format!("encoder.layers[{i}].{f}");
            out.push((name("wq"), layer.wq.view().into_dyn()));
            out.push((name("wk"), layer.wk.view().into_dyn()));
            out.push((name("wv"), layer.wv.view().into_dyn()));
            out.push((name("wo"), layer.wo.view().into_dyn()));
            out.push((name("conv1_w"), layer.conv1_w.view().into_dyn()));
            out.push((name("conv1_b"), layer.conv1_b.view().into_dyn()));
            out.push((name("conv5_w"), layer.conv5_w.view().into_dyn()));
            out.push((name("conv5_b"), layer.conv5_b.view().into_dyn()));
            out.push((name("conv_out_w"), layer.conv_out_w.view().into_dyn()));
            out.push((name("conv_out_b"), layer.conv_out_b.view().into_dyn()));
            out.push((name("ln1_gamma"), layer.ln1_gamma.view().into_dyn()));
            out.push((name("ln1_beta"), layer.ln1_beta.view().into_dyn()));
            out.push((name("ln2_gamma"), layer.ln2_gamma.view().into_dyn()));
            out.push((name("ln2_beta"), layer.ln2_beta.view().into_dyn()));
        }
        out.push(("first.head.w1".into(), self.first_head.w1.view().into_dyn()));
        out.push(("first.head.w2".into(), self.first_head.w2.view().into_dyn()));
        out.push(("first.tail.w1".into(), self.first_tail.w1.view().into_dyn()));
        out.push(("first.tail.w2".into(), self.first_tail.w2.view().into_dyn()));
        out.push(("second.head.w1".into(), self.second_head.w1.view().into_dyn()));
        out.push(("second.head.w2".into(), self.second_head.w2.view().into_dyn()));
        out.push(("second.tail.w1".into(), self.second_tail.w1.view().into_dyn()));
        out.push(("second.tail.w2".into(), self.second_tail.w2.view().into_dyn()));
        out.push(("l".into(), self.l.view().into_dyn()));
        out.push(("m".into(), self.m.view().into_dyn()));
        out.push(("ner.w".into(), self.ner.w.view().into_dyn()));
        out.push(("ner.bias".into(), self.ner.bias.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewMutD<f64>)> = Vec::new();
        out.push(("encoder.word_emb".into(), self.encoder.word_emb.view_mut().into_dyn()));
        out.push(("encoder.pos_emb".into(), self.encoder.pos_emb.view_mut().into_dyn()));
        for (i, layer) in self.encoder.layers.iter_mut().enumerate() {
            let name = |f: &str| format!("encoder.layers[{i}].{f}");
            out.push((name("wq"), layer.wq.view_mut().into_dyn()));
            out.push((name("wk"), layer.wk.view_mut().into_dyn()));
            out.push((name("wv"), layer.wv.view_mut().into_dyn()));
            out.push((name("wo"), layer.wo.view_mut().into_dyn()));
            out.push((name("conv1_w"), layer.conv1_w.view_mut().into_dyn()));
            out.push((name("conv1_b"), layer.conv1_b.view_mut().into_dyn()));
            out.push((name("conv5_w"), layer.conv5_w.view_mut().into_dyn()));
            out.push((name("conv5_b"), layer.conv5_b.view_mut().into_dyn()));
            out.push((name("conv_out_w"), layer.conv_out_w.view_mut().into_dyn()));
            out.push((name("conv_out_b"), layer.conv_out_b.view_mut().into_dyn()));
            out.push((name("ln1_gamma"), layer.ln1_gamma.view_mut().into_dyn()));
            out.push((name("ln1_beta"), layer.ln1_beta.view_mut().into_dyn()));
            out.push((name("ln2_gamma"), layer.ln2_gamma.view_mut().into_dyn()));
            out.push((name("ln2_beta"), layer.ln2_beta.view_mut().into_dyn()));
        }
        out.push(("first.head.w1".into(), self.first_head.w1.view_mut().into_dyn()));
        out.push(("first.head.w2".into(), self.first_head.w2.view_mut().into_dyn()));
        out.push(("first.tail.w1".into(), self.first_tail.w1.view_mut().into_dyn()));
        out.push(("first.tail.w2".into(), self.first_tail.w2.view_mut().into_dyn()));
        out.push(("second.head.w1".into(), self.second_head.w1.view_mut().into_dyn()));
        out.push(("second.head.w2".into(), self.second_head.w2.view_mut().into_dyn()));
        out.push(("second.tail.w1".into(), self.second_tail.w1.view_mut().into_dyn()));
        out.push(("second.tail.w2".into(), self.second_tail.w2.view_mut().into_dyn()));
        out.push(("l".into(), self.l.view_mut().into_dyn()));
        out.push(("m".into(), self.m.view_mut().into_dyn()));
        out.push(("ner.w".into(), self.ner.w.view_mut().into_dyn()));
        out.push(("ner.bias".into(), self.ner.bias.view_mut().into_dyn()));
        out
    }

    /// Error naming the first non-finite gradient tensor, if any.
    pub fn ensure_finite(&self) -> Result<()> {
        for (name, view) in self.tensors() {
            if view.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { context: format!("gradient of {name}") });
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, v)| v.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// In-place scale of every gradient tensor.
    pub fn scale(&mut self, factor: f64) {
        for (_, mut view) in self.tensors_mut() {
            view.mapv_inplace(|g| g * factor);
        }
    }
}
