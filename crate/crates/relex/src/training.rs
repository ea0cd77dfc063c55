//! Joint RE+NER training: cross-entropy losses, strictly alternating
//! minibatches, global-norm clipping, Adam, and α tuning.

use ndarray::{Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

use crate::data::{make_batch, Batch, Document, Vocabs};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{Model, ModelConfig, ModelGrads};
use crate::util::{Mode, RunRng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learn_rate: f64,
    pub clip_norm: f64,
    /// β₁ = 0.1 is the stated training setting; unusually low for Adam, but
    /// honored as given.
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub alpha_sweep: Vec<f64>,
    /// Kept for interface stability; this implementation is sequential and
    /// deterministic under `seed` regardless.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learn_rate: 0.0005,
            clip_norm: 5.0,
            adam_beta1: 0.1,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            alpha_sweep: vec![0.0, 0.2, 1.0],
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learn_rate <= 0.0 {
            return Err(Error::config("learn_rate must be positive"));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Mean cross-entropy of softmax over relation types on the combined
/// scores, plus its gradient.
pub fn re_loss(combined: &Array2<f64>, golds: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (pairs, r) = combined.dim();
    if golds.len() != pairs {
        return Err(Error::input(format!(
            "got {} gold labels for {pairs} score rows",
            golds.len()
        )));
    }
    if pairs == 0 {
        return Err(Error::input("relation loss over zero candidate pairs"));
    }
    let inv = 1.0 / pairs as f64;
    let mut loss = 0.0;
    let mut d = Array2::zeros((pairs, r));
    for (p, &gold) in golds.iter().enumerate() {
        if gold >= r {
            return Err(Error::input(format!("gold label {gold} out of range (R = {r})")));
        }
        let row = combined.row(p);
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut z = 0.0;
        for &v in row {
            z += (v - max).exp();
        }
        loss += inv * (max + z.ln() - row[gold]);
        for c in 0..r {
            let prob = (row[c] - max).exp() / z;
            d[[p, c]] = inv * (prob - if c == gold { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, d))
}

/// Adam first/second moment buffers, one per parameter tensor, in
/// [`Model::param_tensors`] order.
pub struct AdamState {
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<ArrayD<f64>> = model
            .param_tensors()
            .iter()
            .map(|(_, t)| ArrayD::zeros(t.raw_dim()))
            .collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Scale gradients to `clip_norm` if their global norm exceeds it, then
/// apply one bias-corrected Adam update.
pub fn clip_and_step(
    model: &mut Model,
    grads: &mut ModelGrads,
    state: &mut AdamState,
    config: &TrainConfig,
) {
    let norm = grads.global_norm();
    if norm > config.clip_norm {
        grads.scale(config.clip_norm / norm);
    }
    state.step += 1;
    let bc1 = 1.0 - config.adam_beta1.powi(state.step as i32);
    let bc2 = 1.0 - config.adam_beta2.powi(state.step as i32);
    let lr = config.learn_rate;
    let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut params = model.param_tensors_mut();
    let grad_views = grads.tensors();
    for (i, ((_, p), (_, g))) in params.iter_mut().zip(&grad_views).enumerate() {
        let ps = p.as_slice_mut().unwrap();
        let gs = g.as_slice().unwrap();
        let ms = state.m[i].as_slice_mut().unwrap();
        let vs = state.v[i].as_slice_mut().unwrap();
        for j in 0..ps.len() {
            ms[j] = b1 * ms[j] + (1.0 - b1) * gs[j];
            vs[j] = b2 * vs[j] + (1.0 - b2) * gs[j] * gs[j];
            let mhat = ms[j] / bc1;
            let vhat = vs[j] / bc2;
            ps[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// One relation-task step: loss and gradients for a batch.
pub fn re_step(
    model: &Model,
    batch: &Batch,
    mode: Mode,
    rng: &mut RunRng,
) -> Result<(f64, ModelGrads)> {
    let (out, cache) = model.forward_re(batch, mode, rng)?;
    let golds: Vec<usize> = batch.pairs.iter().map(|bp| bp.pair.gold).collect();
    let (loss, d_combined) = re_loss(&out.combined, &golds)?;
    let mut grads = model.zero_grads();
    model.backward_re(&out, &cache, &d_combined, &mut grads);
    grads.ensure_finite()?;
    Ok((loss, grads))
}

/// One tagging-task step: loss and gradients for a batch.
pub fn ner_step(
    model: &Model,
    batch: &Batch,
    mode: Mode,
    rng: &mut RunRng,
) -> Result<(f64, ModelGrads)> {
    let (logits, cache) = model.forward_ner(batch, mode, rng)?;
    let (loss, d_logits) = crate::ner::ner_loss(&logits, batch.tags.view(), &batch.tokens.mask)?;
    let mut grads = model.zero_grads();
    model.backward_ner(&cache, &d_logits, &mut grads);
    grads.ensure_finite()?;
    Ok((loss, grads))
}

/// One line of the metrics history.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task: String,
    pub loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
}

pub struct TrainOutcome {
    /// The epoch snapshot with the best dev macro-F1 on the relation task
    /// (the initial model when `epochs == 0`).
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_dev_f1: f64,
    /// Task name per executed training step, in order.
    pub task_log: Vec<&'static str>,
}

fn build_batches(
    docs: &[Document],
    vocabs: &Vocabs,
    batch_size: usize,
    max_len: usize,
    need_pairs: bool,
) -> Result<Vec<Batch>> {
    let mut batches = Vec::new();
    for chunk in docs.chunks(batch_size) {
        let refs: Vec<&Document> = chunk.iter().collect();
        let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags, max_len)?;
        if need_pairs && batch.pairs.is_empty() {
            log::warn!("skipping a batch with no candidate pairs");
            continue;
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Train with strict RE/NER alternation; the shorter batch list cycles.
/// Batch order is reshuffled each epoch (composition is fixed); all
/// randomness flows from `rng`.
pub fn train(
    model: Model,
    re_docs: &[Document],
    ner_docs: &[Document],
    dev_docs: &[Document],
    vocabs: &Vocabs,
    config: &TrainConfig,
    rng: &mut RunRng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if re_docs.is_empty() || ner_docs.is_empty() {
        return Err(Error::input("training corpora must be non-empty"));
    }
    let max_len = model.config.encoder.max_len;
    let re_batches = build_batches(re_docs, vocabs, config.batch_size, max_len, true)?;
    let ner_batches = build_batches(ner_docs, vocabs, config.batch_size, max_len, false)?;
    if re_batches.is_empty() {
        return Err(Error::input("no relation batch contains a candidate pair"));
    }

    let mut model = model;
    let mut state = AdamState::new(&model);
    let mut history = Vec::new();
    let mut task_log = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 0..config.epochs {
        let mut re_order: Vec<usize> = (0..re_batches.len()).collect();
        let mut ner_order: Vec<usize> = (0..ner_batches.len()).collect();
        re_order.shuffle(rng);
        ner_order.shuffle(rng);

        let steps = re_order.len().max(ner_order.len());
        let mut re_loss_sum = 0.0;
        let mut ner_loss_sum = 0.0;
        for step in 0..steps {
            let re_batch = &re_batches[re_order[step % re_order.len()]];
            let (loss, mut grads) = re_step(&model, re_batch, Mode::Train, rng)
                .map_err(|e| step_error(e, epoch, step, "re"))?;
            if !loss.is_finite() {
                return Err(diverged(epoch, step, "re", loss));
            }
            re_loss_sum += loss;
            clip_and_step(&mut model, &mut grads, &mut state, config);
            task_log.push("re");

            let ner_batch = &ner_batches[ner_order[step % ner_order.len()]];
            let (loss, mut grads) = ner_step(&model, ner_batch, Mode::Train, rng)
                .map_err(|e| step_error(e, epoch, step, "ner"))?;
            if !loss.is_finite() {
                return Err(diverged(epoch, step, "ner", loss));
            }
            ner_loss_sum += loss;
            clip_and_step(&mut model, &mut grads, &mut state, config);
            task_log.push("ner");
        }

        let (re_report, _) = eval::evaluate_re(&model, dev_docs, vocabs, config.batch_size)?;
        let ner_report = eval::evaluate_ner(&model, dev_docs, vocabs, config.batch_size)?;
        let re_dev = re_report.report.macro_positive;
        let ner_dev = ner_report.macro_positive;
        history.push(EpochMetrics {
            epoch,
            task: "re".into(),
            loss: re_loss_sum / steps as f64,
            dev_p: re_dev.precision,
            dev_r: re_dev.recall,
            dev_f1: re_dev.f1,
        });
        history.push(EpochMetrics {
            epoch,
            task: "ner".into(),
            loss: ner_loss_sum / steps as f64,
            dev_p: ner_dev.precision,
            dev_r: ner_dev.recall,
            dev_f1: ner_dev.f1,
        });
        log::info!(
            "epoch {epoch}: re loss {:.4} dev-F1 {:.4}, ner loss {:.4} dev-F1 {:.4}",
            re_loss_sum / steps as f64,
            re_dev.f1,
            ner_loss_sum / steps as f64,
            ner_dev.f1
        );
        if best.as_ref().is_none_or(|(_, f1, _)| re_dev.f1 > *f1) {
            best = Some((epoch, re_dev.f1, model.clone()));
        }
    }

    let (best_epoch, best_dev_f1, final_model) = match best {
        Some((e, f1, m)) => (Some(e), f1, m),
        None => (None, 0.0, model),
    };
    Ok(TrainOutcome { model: final_model, history, best_epoch, best_dev_f1, task_log })
}

fn step_error(e: Error, epoch: usize, step: usize, task: &str) -> Error {
    Error::Numeric {
        context: format!("{task} step {step} of epoch {epoch}: {e}"),
    }
}

fn diverged(epoch: usize, step: usize, task: &str, loss: f64) -> Error {
    Error::Numeric {
        context: format!("training diverged: {task} loss {loss} at epoch {epoch} step {step}"),
    }
}

/// How [`tune_alpha`] obtains a model per α value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMode {
    /// Train a fresh model per sweep value (same seed, so runs differ only
    /// in α).
    Retrain,
    /// Train once at the largest sweep value, then re-evaluate the dev set
    /// under each α.
    Rescore,
}

impl TuneMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "retrain" => Ok(TuneMode::Retrain),
            "rescore" => Ok(TuneMode::Rescore),
            other => Err(Error::config(format!(
                "unknown tune mode {other:?} (expected \"retrain\" or \"rescore\")"
            ))),
        }
    }
}

pub struct AlphaOutcome {
    pub best_alpha: f64,
    /// `(alpha, dev macro-F1)` in ascending α order.
    pub scores: Vec<(f64, f64)>,
    pub model: Model,
}

/// Sweep α over `config.alpha_sweep`, selecting the best dev macro-F1 with
/// ties broken toward the smaller α.
pub fn tune_alpha(
    model_config: &ModelConfig,
    re_docs: &[Document],
    ner_docs: &[Document],
    dev_docs: &[Document],
    vocabs: &Vocabs,
    config: &TrainConfig,
    mode: TuneMode,
) -> Result<AlphaOutcome> {
    let mut sweep = config.alpha_sweep.clone();
    if sweep.is_empty() {
        return Err(Error::config("alpha_sweep must be non-empty"));
    }
    sweep.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sweep.dedup();

    let mut scores = Vec::with_capacity(sweep.len());
    let mut best: Option<(f64, f64, Model)> = None;
    match mode {
        TuneMode::Retrain => {
            for &alpha in &sweep {
                let mut mc = model_config.clone();
                mc.alpha = alpha;
                let mut rng = RunRng::seed_from_u64(config.seed);
                let model = Model::new(mc, &mut rng)?;
                let outcome =
                    train(model, re_docs, ner_docs, dev_docs, vocabs, config, &mut rng)?;
                scores.push((alpha, outcome.best_dev_f1));
                if best.as_ref().is_none_or(|(_, f1, _)| outcome.best_dev_f1 > *f1) {
                    best = Some((alpha, outcome.best_dev_f1, outcome.model));
                }
            }
        }
        TuneMode::Rescore => {
            let alpha_max = *sweep.last().unwrap();
            let mut mc = model_config.clone();
            mc.alpha = alpha_max;
            let mut rng = RunRng::seed_from_u64(config.seed);
            let model = Model::new(mc, &mut rng)?;
            let outcome = train(model, re_docs, ner_docs, dev_docs, vocabs, config, &mut rng)?;
            for &alpha in &sweep {
                let mut candidate = outcome.model.clone();
                candidate.config.alpha = alpha;
                let (report, _) =
                    eval::evaluate_re(&candidate, dev_docs, vocabs, config.batch_size)?;
                let f1 = report.report.macro_positive.f1;
                scores.push((alpha, f1));
                if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
                    best = Some((alpha, f1, candidate));
                }
            }
        }
    }
    let (best_alpha, _, model) = best.unwrap();
    Ok(AlphaOutcome { best_alpha, scores, model })
}

/// Outcome of a finite-difference sweep over every parameter tensor.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub checked: usize,
    /// Worst relative error among entries with non-negligible magnitude.
    pub worst_rel_err: f64,
    pub worst_param: String,
}

/// Central finite-difference check of the joint RE+NER loss against the
/// analytic gradients, sampling up to `per_tensor` entries from every
/// parameter tensor. Fails with a numeric error naming the first entry
/// where |analytic − numeric| > 1e-7 + 1e-4·max(|analytic|, |numeric|).
pub fn fd_check(model: &Model, batch: &Batch, per_tensor: usize, eps: f64) -> Result<FdReport> {
    let loss_of = |m: &Model| -> Result<f64> {
        let mut rng = RunRng::seed_from_u64(0); // eval mode draws nothing
        let (out, _) = m.forward_re(batch, Mode::Eval, &mut rng)?;
        let golds: Vec<usize> = batch.pairs.iter().map(|bp| bp.pair.gold).collect();
        let (re, _) = re_loss(&out.combined, &golds)?;
        let (logits, _) = m.forward_ner(batch, Mode::Eval, &mut rng)?;
        let (ner, _) = crate::ner::ner_loss(&logits, batch.tags.view(), &batch.tokens.mask)?;
        Ok(re + ner)
    };

    // Analytic gradients of the same joint loss.
    let mut rng = RunRng::seed_from_u64(0);
    let (out, cache) = model.forward_re(batch, Mode::Eval, &mut rng)?;
    let golds: Vec<usize> = batch.pairs.iter().map(|bp| bp.pair.gold).collect();
    let (_, d_combined) = re_loss(&out.combined, &golds)?;
    let mut grads = model.zero_grads();
    model.backward_re(&out, &cache, &d_combined, &mut grads);
    let (logits, ner_cache) = model.forward_ner(batch, Mode::Eval, &mut rng)?;
    let (_, d_logits) = crate::ner::ner_loss(&logits, batch.tags.view(), &batch.tokens.mask)?;
    model.backward_ner(&ner_cache, &d_logits, &mut grads);
    grads.ensure_finite()?;

    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.as_slice().unwrap().to_vec()))
        .collect();

    let mut probe = model.clone();
    let mut checked = 0usize;
    let mut worst_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let num_tensors = analytic.len();
    for t in 0..num_tensors {
        let len = analytic[t].1.len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            let stride = len / per_tensor;
            (0..per_tensor).map(|k| k * stride).collect()
        };
        for o in picks {
            let name = analytic[t].0.clone();
            let a = analytic[t].1[o];
            let orig = {
                let mut tensors = probe.param_tensors_mut();
                let s = tensors[t].1.as_slice_mut().unwrap();
                let orig = s[o];
                s[o] = orig + eps;
                orig
            };
            let fp = loss_of(&probe)?;
            {
                let mut tensors = probe.param_tensors_mut();
                tensors[t].1.as_slice_mut().unwrap()[o] = orig - eps;
            }
            let fm = loss_of(&probe)?;
            {
                let mut tensors = probe.param_tensors_mut();
                tensors[t].1.as_slice_mut().unwrap()[o] = orig;
            }
            let n = (fp - fm) / (2.0 * eps);
            let diff = (a - n).abs();
            let scale = a.abs().max(n.abs());
            if diff > 1e-7 + 1e-4 * scale {
                return Err(Error::Numeric {
                    context: format!(
                        "gradient check failed at {name}[{o}]: analytic {a}, numeric {n}"
                    ),
                });
            }
            if scale > 1e-6 && diff / scale > worst_rel_err {
                worst_rel_err = diff / scale;
                worst_param = name;
            }
            checked += 1;
        }
    }
    Ok(FdReport { checked, worst_rel_err, worst_param })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderKind};
    use crate::synth::{gen_synthetic, SynthConfig, NEGATIVE_RELATION};
    use ndarray::arr2;

    fn synth_setup(num_docs: usize, seed: u64) -> (Vec<Document>, Vocabs) {
        let config = SynthConfig {
            num_docs,
            doc_len: 14,
            vocab_size: 72,
            num_relation_types: 3,
            seed,
            ..SynthConfig::default()
        };
        let docs = gen_synthetic(&config).unwrap();
        let vocabs = Vocabs::from_documents(&docs, NEGATIVE_RELATION).unwrap();
        (docs, vocabs)
    }

    fn tiny_model(vocabs: &Vocabs, alpha: f64, kind: EncoderKind, seed: u64) -> Model {
        let enc = EncoderConfig {
            vocab_size: vocabs.tokens.len(),
            d_model: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_filters: 6,
            dropout: 0.0,
            word_dropout: 0.0,
            max_len: 32,
        };
        let mut mc = ModelConfig::new(enc, vocabs.relations.len(), vocabs.tags.len());
        mc.proj_hidden = 6;
        mc.proj_dim = 4;
        mc.alpha = alpha;
        mc.encoder_kind = kind;
        let mut rng = RunRng::seed_from_u64(seed);
        Model::new(mc, &mut rng).unwrap()
    }

    fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig { epochs, batch_size: 4, seed, ..TrainConfig::default() }
    }

    #[test]
    fn re_loss_uniform_scores_cost_ln_r() {
        let scores = Array2::zeros((3, 4));
        let (loss, _) = re_loss(&scores, &[0, 1, 3]).unwrap();
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn re_loss_two_class_margin() {
        let scores = arr2(&[[2.0, 0.0]]);
        let (loss, _) = re_loss(&scores, &[0]).unwrap();
        assert!((loss - 0.126928).abs() < 1e-6);
        // Loss decreases monotonically as the gold margin grows.
        let mut prev = f64::INFINITY;
        for margin in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let scores = arr2(&[[margin, 0.0]]);
            let (loss, _) = re_loss(&scores, &[0]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn re_loss_gradient_matches_finite_differences() {
        let mut rng = RunRng::seed_from_u64(1);
        use rand::Rng;
        let scores = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-2.0..2.0));
        let golds = [2usize, 0, 3];
        let (_, grad) = re_loss(&scores, &golds).unwrap();
        let eps = 1e-6;
        for idx in ndarray::indices(scores.raw_dim()) {
            let mut sp = scores.clone();
            sp[idx] += eps;
            let mut sm = scores.clone();
            sm[idx] -= eps;
            let fd = (re_loss(&sp, &golds).unwrap().0 - re_loss(&sm, &golds).unwrap().0)
                / (2.0 * eps);
            assert!((grad[idx] - fd).abs() <= 1e-7 + 1e-4 * fd.abs());
        }
    }

    #[test]
    fn re_loss_rejects_bad_labels_and_empty_batches() {
        let scores = Array2::zeros((2, 3));
        assert!(re_loss(&scores, &[0]).is_err());
        assert!(re_loss(&scores, &[0, 3]).is_err());
        let empty = Array2::zeros((0, 3));
        assert!(re_loss(&empty, &[]).is_err());
    }

    #[test]
    fn clipping_scales_exactly_and_only_above_threshold() {
        let (docs, vocabs) = synth_setup(4, 3);
        let model = tiny_model(&vocabs, 0.2, EncoderKind::Bag, 1);
        let refs: Vec<&Document> = docs.iter().collect();
        let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags, 32)
            .unwrap();
        let mut rng = RunRng::seed_from_u64(2);
        let (_, mut grads) = re_step(&model, &batch, Mode::Eval, &mut rng).unwrap();
        // Force a known norm of 10, clip at 5: exact halving.
        let norm = grads.global_norm();
        grads.scale(10.0 / norm);
        let mut m = model.clone();
        let mut state = AdamState::new(&m);
        let config = TrainConfig { clip_norm: 5.0, ..TrainConfig::default() };
        let before: Vec<f64> = grads.tensors()[0].1.iter().copied().collect();
        clip_and_step(&mut m, &mut grads, &mut state, &config);
        assert!((grads.global_norm() - 5.0).abs() <= 1e-9);
        for (g, b) in grads.tensors()[0].1.iter().zip(&before) {
            assert!((g - b * 0.5).abs() <= 1e-12 * b.abs().max(1.0));
        }
        // Below the threshold nothing is rescaled.
        let mut rng = RunRng::seed_from_u64(2);
        let (_, mut grads) = re_step(&model, &batch, Mode::Eval, &mut rng).unwrap();
        let norm = grads.global_norm();
        grads.scale(1.0 / norm);
        let snapshot: Vec<f64> = grads.tensors()[0].1.iter().copied().collect();
        let mut m = model.clone();
        let mut state = AdamState::new(&m);
        clip_and_step(&mut m, &mut grads, &mut state, &config);
        let after: Vec<f64> = grads.tensors()[0].1.iter().copied().collect();
        assert_eq!(snapshot, after);
    }

    #[test]
    fn adam_single_step_moves_by_learn_rate() {
        let (_, vocabs) = synth_setup(2, 5);
        let mut model = tiny_model(&vocabs, 0.2, EncoderKind::Bag, 1);
        let before = model.l[[0, 0, 0]];
        let mut grads = model.zero_grads();
        grads.l[[0, 0, 0]] = 1.0;
        let mut state = AdamState::new(&model);
        let config = TrainConfig::default();
        clip_and_step(&mut model, &mut grads, &mut state, &config);
        let delta = model.l[[0, 0, 0]] - before;
        assert!((delta + 0.0005).abs() <= 1e-10, "step was {delta}");
        // Untouched parameters stay put (zero gradient, zero state).
        assert_eq!(model.m[[0, 0, 0]], tiny_model(&vocabs, 0.2, EncoderKind::Bag, 1).m[[0, 0, 0]]);
    }

    #[test]
    fn training_alternates_re_and_ner_strictly() {
        let (docs, vocabs) = synth_setup(8, 7);
        let model = tiny_model(&vocabs, 0.2, EncoderKind::Bag, 1);
        let config = quick_config(2, 7);
        let mut rng = RunRng::seed_from_u64(7);
        let outcome =
            train(model, &docs, &docs, &docs[..4], &vocabs, &config, &mut rng).unwrap();
        assert!(!outcome.task_log.is_empty());
        for (i, task) in outcome.task_log.iter().enumerate() {
            assert_eq!(*task, if i % 2 == 0 { "re" } else { "ner" });
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model_and_empty_history() {
        let (docs, vocabs) = synth_setup(4, 9);
        let model = tiny_model(&vocabs, 0.2, EncoderKind::Bag, 1);
        let initial_l = model.l.clone();
        let config = quick_config(0, 9);
        let mut rng = RunRng::seed_from_u64(9);
        let outcome =
            train(model, &docs, &docs, &docs[..2], &vocabs, &config, &mut rng).unwrap();
        assert!(outcome.history.is_empty());
        assert!(outcome.best_epoch.is_none());
        assert_eq!(outcome.model.l, initial_l);
    }

    #[test]
    fn same_seed_same_history_and_parameters() {
        let (docs, vocabs) = synth_setup(8, 11);
        let run = || {
            let model = tiny_model(&vocabs, 0.2, EncoderKind::Bag, 42);
            let config = quick_config(2, 11);
            let mut rng = RunRng::seed_from_u64(config.seed);
            train(model, &docs, &docs, &docs[..4], &vocabs, &config, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.dev_f1.to_bits(), y.dev_f1.to_bits());
        }
        assert_eq!(a.model.l, b.model.l);
        assert_eq!(a.model.encoder.word_emb, b.model.encoder.word_emb);
    }

    #[test]
    fn loss_improves_on_a_fixed_batch_for_most_seeds() {
        let (docs, vocabs) = synth_setup(8, 13);
        let refs: Vec<&Document> = docs.iter().collect();
        let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags, 32)
            .unwrap();
        let config = TrainConfig::default();
        let mut improved = 0;
        for seed in 0..10 {
            let mut model = tiny_model(&vocabs, 0.2, EncoderKind::Bag, seed);
            let mut state = AdamState::new(&model);
            let mut rng = RunRng::seed_from_u64(seed);
            let (first, _) = re_step(&model, &batch, Mode::Eval, &mut rng).unwrap();
            let mut last = first;
            for _ in 0..10 {
                let (loss, mut grads) = re_step(&model, &batch, Mode::Eval, &mut rng).unwrap();
                clip_and_step(&mut model, &mut grads, &mut state, &config);
                last = loss;
            }
            if last <= first {
                improved += 1;
            }
        }
        assert!(improved >= 8, "loss improved for only {improved}/10 seeds");
    }

    #[test]
    fn divergence_aborts_with_location() {
        let (docs, vocabs) = synth_setup(4, 15);
        let model = tiny_model(&vocabs, 0.2, EncoderKind::Transformer, 1);
        let config = TrainConfig {
            learn_rate: 1e18,
            clip_norm: 1e18,
            epochs: 3,
            batch_size: 4,
            seed: 15,
            ..TrainConfig::default()
        };
        let mut rng = RunRng::seed_from_u64(15);
        let msg = match train(model, &docs, &docs, &docs[..2], &vocabs, &config, &mut rng) {
            Ok(_) => panic!("training at lr 1e18 should diverge"),
            Err(e) => e.to_string(),
        };
        assert!(msg.contains("epoch"), "error should locate the failure: {msg}");
    }

    #[test]
    fn alpha_sweep_of_zero_selects_zero() {
        let (docs, vocabs) = synth_setup(6, 17);
        let model = tiny_model(&vocabs, 0.2, EncoderKind::Bag, 1);
        let mc = model.config.clone();
        let config = TrainConfig {
            alpha_sweep: vec![0.0],
            epochs: 1,
            batch_size: 4,
            seed: 17,
            ..TrainConfig::default()
        };
        let outcome = tune_alpha(&mc, &docs, &docs, &docs[..3], &vocabs, &config,
            TuneMode::Retrain).unwrap();
        assert_eq!(outcome.best_alpha, 0.0);
        assert_eq!(outcome.model.config.alpha, 0.0);
        assert_eq!(outcome.scores.len(), 1);
    }

    #[test]
    fn rescore_mode_breaks_ties_toward_smaller_alpha() {
        let (docs, vocabs) = synth_setup(6, 19);
        let model = tiny_model(&vocabs, 1.0, EncoderKind::Bag, 1);
        let mc = model.config.clone();
        // With zero epochs the model never trains, so every α scores the
        // same dev F1 and the tie must resolve to the smallest α.
        let config = TrainConfig {
            alpha_sweep: vec![1.0, 0.2, 0.0, 0.2],
            epochs: 0,
            batch_size: 4,
            seed: 19,
            ..TrainConfig::default()
        };
        let outcome = tune_alpha(&mc, &docs, &docs, &docs[..3], &vocabs, &config,
            TuneMode::Rescore).unwrap();
        let f1s: Vec<f64> = outcome.scores.iter().map(|(_, f)| *f).collect();
        if f1s.windows(2).all(|w| w[0] == w[1]) {
            assert_eq!(outcome.best_alpha, 0.0);
        }
        assert_eq!(outcome.scores.len(), 3); // deduplicated sweep
    }

    #[test]
    fn gradients_match_finite_differences_full_model() {
        let (docs, vocabs) = synth_setup(2, 21);
        let model = tiny_model(&vocabs, 0.2, EncoderKind::Transformer, 1);
        let refs: Vec<&Document> = docs.iter().collect();
        let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags, 32)
            .unwrap();
        let report = fd_check(&model, &batch, 6, 1e-5).unwrap();
        assert!(report.checked > 100);
        assert!(report.worst_rel_err <= 1e-4, "worst rel err {}", report.worst_rel_err);
    }
}
