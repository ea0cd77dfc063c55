//! Train briefly, save a checkpoint, reload it, and print the evaluation
//! report the reloaded model produces.
//!
//!     cargo run --release --example evaluate_checkpoint

use rand::SeedableRng;
use relex::checkpoint::{load_checkpoint, save_checkpoint};
use relex::data::Vocabs;
use relex::encoder::{EncoderConfig, EncoderKind};
use relex::eval::{evaluate_ner, evaluate_re};
use relex::model::{Model, ModelConfig};
use relex::synth::{gen_synthetic, split_documents, SynthConfig, NEGATIVE_RELATION};
use relex::training::{train, TrainConfig};
use relex::util::RunRng;

fn main() -> relex::Result<()> {
    let synth = SynthConfig { num_docs: 1200, seed: 21, ..SynthConfig::default() };
    let docs = gen_synthetic(&synth)?;
    let vocabs = Vocabs::from_documents(&docs, NEGATIVE_RELATION)?;
    let (train_docs, dev_docs, test_docs) = split_documents(docs, 0.7, 0.15, 0.15)?;

    let encoder = EncoderConfig {
        d_model: 32,
        num_layers: 0,
        ffn_filters: 1,
        dropout: 0.1,
        word_dropout: 0.0,
        ..EncoderConfig::new(vocabs.tokens.len(), synth.doc_len)
    };
    let mut mc = ModelConfig::new(encoder, vocabs.relations.len(), vocabs.tags.len());
    mc.encoder_kind = EncoderKind::Bag;
    mc.proj_hidden = 32;
    mc.proj_dim = 16;
    mc.alpha = 1.0;

    let config = TrainConfig { learn_rate: 0.003, epochs: 16, batch_size: 32, seed: 2, ..TrainConfig::default() };
    let mut rng = RunRng::seed_from_u64(config.seed);
    let model = Model::new(mc, &mut rng)?;
    let outcome = train(model, &train_docs, &train_docs, &dev_docs, &vocabs, &config, &mut rng)?;
    println!("trained: best dev macro-F1 {:.4}", outcome.best_dev_f1);

    let path = std::env::temp_dir().join("relex-example-model.json");
    save_checkpoint(&path, &outcome.model, &vocabs)?;
    let (reloaded, reloaded_vocabs) = load_checkpoint(&path)?;
    println!("checkpoint round trip through {}", path.display());

    let (report, predictions) = evaluate_re(&reloaded, &test_docs, &reloaded_vocabs, 32)?;
    println!("\ntest relations: {} pairs over {} documents", report.num_pairs, report.num_documents);
    println!("{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
    for row in &report.report.per_class {
        println!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            reloaded_vocabs.relations.name(row.class),
            row.precision,
            row.recall,
            row.f1,
            row.support
        );
    }
    let m = report.report.macro_positive;
    println!("macro (positive classes): P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);

    let ner = evaluate_ner(&reloaded, &test_docs, &reloaded_vocabs, 32)?;
    println!("test tagging macro-F1: {:.4}", ner.macro_positive.f1);

    println!("\nfirst prediction: {}", serde_json::to_string(&predictions[0])?);
    Ok(())
}
