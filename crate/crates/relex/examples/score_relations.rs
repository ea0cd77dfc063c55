//! Score candidate entity pairs with a freshly initialized model: combined
//! first + second order scores, decoded to relation names.
//!
//!     cargo run --example score_relations

use rand::SeedableRng;
use relex::data::{make_batch, Document, Vocabs};
use relex::encoder::EncoderConfig;
use relex::eval::predict_labels;
use relex::model::{Model, ModelConfig};
use relex::synth::{gen_synthetic, SynthConfig, NEGATIVE_RELATION};
use relex::util::{Mode, RunRng};

fn main() -> relex::Result<()> {
    let synth = SynthConfig { num_docs: 4, doc_len: 18, vocab_size: 60, seed: 2, ..SynthConfig::default() };
    let docs = gen_synthetic(&synth)?;
    let vocabs = Vocabs::from_documents(&docs, NEGATIVE_RELATION)?;

    let encoder = EncoderConfig {
        d_model: 32,
        num_layers: 1,
        num_heads: 4,
        ffn_filters: 64,
        ..EncoderConfig::new(vocabs.tokens.len(), 18)
    };
    let mut config = ModelConfig::new(encoder, vocabs.relations.len(), vocabs.tags.len());
    config.alpha = 0.2;
    let mut rng = RunRng::seed_from_u64(5);
    let model = Model::new(config, &mut rng)?;

    let refs: Vec<&Document> = docs.iter().collect();
    let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags, 18)?;
    let (output, _cache) = model.forward_re(&batch, Mode::Eval, &mut rng)?;

    let negative = vocabs.relations.negative_index();
    let labels = predict_labels(&output.combined, negative);
    println!("{} candidate pairs across {} documents\n", batch.pairs.len(), docs.len());
    for (p, bp) in batch.pairs.iter().enumerate() {
        let doc = &docs[bp.doc_index];
        println!(
            "{} {} -> {}: gold={} predicted={}",
            doc.doc_id,
            bp.pair.head_entity_id,
            bp.pair.tail_entity_id,
            vocabs.relations.name(bp.pair.gold),
            vocabs.relations.name(labels[p]),
        );
        print!("  first-order: ");
        for r in 0..vocabs.relations.len() {
            print!("{}={:+.3} ", vocabs.relations.name(r), output.scores1[[p, r]]);
        }
        print!("\n  combined:    ");
        for r in 0..vocabs.relations.len() {
            print!("{}={:+.3} ", vocabs.relations.name(r), output.combined[[p, r]]);
        }
        println!();
    }
    println!("\n(an untrained model scores near-uniformly; see train_bridge_task)");
    Ok(())
}
