//! Train on the synthetic bridge task with a bag-of-embeddings encoder.
//! The relation type is decided by a single context token, so the
//! second-order path (alpha = 1) solves it while the first-order-only
//! model (alpha = 0) cannot.
//!
//!     cargo run --release --example train_bridge_task

use rand::SeedableRng;
use relex::data::Vocabs;
use relex::encoder::{EncoderConfig, EncoderKind};
use relex::model::{Model, ModelConfig};
use relex::synth::{gen_synthetic, split_documents, SynthConfig, NEGATIVE_RELATION};
use relex::training::{train, TrainConfig};
use relex::util::RunRng;

fn main() -> relex::Result<()> {
    let synth = SynthConfig { num_docs: 1000, seed: 11, ..SynthConfig::default() };
    let docs = gen_synthetic(&synth)?;
    let vocabs = Vocabs::from_documents(&docs, NEGATIVE_RELATION)?;
    let (train_docs, dev_docs, _) = split_documents(docs, 0.8, 0.2, 0.0)?;

    for alpha in [1.0, 0.0] {
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
        mc.alpha = alpha;

        let config = TrainConfig {
            learn_rate: 0.003,
            epochs: 16,
            batch_size: 32,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut rng = RunRng::seed_from_u64(config.seed);
        let model = Model::new(mc, &mut rng)?;
        println!("alpha = {alpha}: training {} parameters", model.num_parameters());
        let outcome = train(model, &train_docs, &train_docs, &dev_docs, &vocabs, &config, &mut rng)?;
        for row in outcome.history.iter().filter(|row| row.task == "re") {
            println!("  epoch {:>2}: loss {:.4}  dev macro-F1 {:.4}", row.epoch, row.loss, row.dev_f1);
        }
        println!(
            "  best epoch {:?} with dev macro-F1 {:.4}\n",
            outcome.best_epoch, outcome.best_dev_f1
        );
    }
    println!("only the second-order model separates the bridge relations");
    Ok(())
}
