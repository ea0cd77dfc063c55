//! Prediction extraction and macro precision/recall/F1.

use ndarray::Array2;

use crate::data::{make_batch, Document, Vocabs, OUTSIDE_TAG};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::util::{Mode, RunRng};
use rand::SeedableRng;

/// Argmax over each score row. An exact tie involving the negative class
/// resolves to negative; other ties resolve to the lowest class index.
pub fn predict_labels(scores: &Array2<f64>, negative: usize) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            if row[negative] == max {
                return negative;
            }
            row.iter().position(|&v| v == max).unwrap()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClassPrf {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences of this class.
    pub support: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PrfReport {
    pub per_class: Vec<ClassPrf>,
    /// Unweighted mean over classes other than the negative one.
    pub macro_positive: Prf,
    /// Unweighted mean over every class, negative included.
    pub macro_all: Prf,
}

/// Per-class and macro precision/recall/F1. Undefined ratios (0/0) are 0.
pub fn macro_prf(
    preds: &[usize],
    golds: &[usize],
    num_classes: usize,
    negative: usize,
) -> Result<PrfReport> {
    if preds.len() != golds.len() {
        return Err(Error::input(format!(
            "got {} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if negative >= num_classes {
        return Err(Error::input("negative class outside label range"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fnn = vec![0usize; num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::input(format!("label out of range: pred {p}, gold {g}")));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnn[g] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let precision = ratio(tp[c], tp[c] + fp[c]);
        let recall = ratio(tp[c], tp[c] + fnn[c]);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassPrf { class: c, precision, recall, f1, support: tp[c] + fnn[c] });
    }
    let mean_over = |keep: &dyn Fn(usize) -> bool| {
        let kept: Vec<&ClassPrf> = per_class.iter().filter(|c| keep(c.class)).collect();
        if kept.is_empty() {
            return Prf { precision: 0.0, recall: 0.0, f1: 0.0 };
        }
        let n = kept.len() as f64;
        Prf {
            precision: kept.iter().map(|c| c.precision).sum::<f64>() / n,
            recall: kept.iter().map(|c| c.recall).sum::<f64>() / n,
            f1: kept.iter().map(|c| c.f1).sum::<f64>() / n,
        }
    };
    let macro_positive = mean_over(&|c| c != negative);
    let macro_all = mean_over(&|_| true);
    Ok(PrfReport { per_class, macro_positive, macro_all })
}

/// One evaluated candidate pair, for score dumps.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PairPrediction {
    pub doc_id: String,
    pub head_entity_id: String,
    pub tail_entity_id: String,
    pub gold: String,
    pub predicted: String,
    pub combined_scores: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReEvalReport {
    pub num_documents: usize,
    pub num_pairs: usize,
    pub relation_names: Vec<String>,
    pub report: PrfReport,
}

/// Run the relation task over `docs` in eval mode and score predictions
/// against gold labels. Documents are processed in fixed order, so the
/// result is deterministic.
pub fn evaluate_re(
    model: &Model,
    docs: &[Document],
    vocabs: &Vocabs,
    batch_size: usize,
) -> Result<(ReEvalReport, Vec<PairPrediction>)> {
    let negative = vocabs.relations.negative_index();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut dump = Vec::new();
    let mut rng = RunRng::seed_from_u64(0); // eval mode draws nothing
    for chunk in docs.chunks(batch_size.max(1)) {
        let refs: Vec<&Document> = chunk.iter().collect();
        let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags,
            model.config.encoder.max_len)?;
        if batch.pairs.is_empty() {
            continue;
        }
        let (out, _) = model.forward_re(&batch, Mode::Eval, &mut rng)?;
        let labels = predict_labels(&out.combined, negative);
        for (p, bp) in batch.pairs.iter().enumerate() {
            preds.push(labels[p]);
            golds.push(bp.pair.gold);
            dump.push(PairPrediction {
                doc_id: batch.doc_ids[bp.doc_index].clone(),
                head_entity_id: bp.pair.head_entity_id.clone(),
                tail_entity_id: bp.pair.tail_entity_id.clone(),
                gold: vocabs.relations.name(bp.pair.gold).to_string(),
                predicted: vocabs.relations.name(labels[p]).to_string(),
                combined_scores: out.combined.row(p).to_vec(),
            });
        }
    }
    let report = macro_prf(&preds, &golds, vocabs.relations.len(), negative)?;
    Ok((
        ReEvalReport {
            num_documents: docs.len(),
            num_pairs: preds.len(),
            relation_names: vocabs.relations.names().to_vec(),
            report,
        },
        dump,
    ))
}

/// Token-level tag metrics over `docs` (macro over tags, `O` excluded).
pub fn evaluate_ner(
    model: &Model,
    docs: &[Document],
    vocabs: &Vocabs,
    batch_size: usize,
) -> Result<PrfReport> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut rng = RunRng::seed_from_u64(0);
    for chunk in docs.chunks(batch_size.max(1)) {
        let refs: Vec<&Document> = chunk.iter().collect();
        let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags,
            model.config.encoder.max_len)?;
        let (logits, _) = model.forward_ner(&batch, Mode::Eval, &mut rng)?;
        let (b, n, t) = logits.dim();
        for bi in 0..b {
            for ti in 0..n {
                if !batch.tokens.mask[[bi, ti]] {
                    continue;
                }
                let mut best = 0;
                for c in 1..t {
                    if logits[[bi, ti, c]] > logits[[bi, ti, best]] {
                        best = c;
                    }
                }
                preds.push(best);
                golds.push(batch.tags[[bi, ti]]);
            }
        }
    }
    macro_prf(&preds, &golds, vocabs.tags.len(), OUTSIDE_TAG)
}
