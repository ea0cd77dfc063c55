//! Verify the hand-written backward passes against central finite
//! differences on a small batch with the second-order path active.
//!
//!     cargo run --example gradient_check

use rand::SeedableRng;
use relex::data::{make_batch, Document, Vocabs};
use relex::encoder::EncoderConfig;
use relex::model::{Model, ModelConfig};
use relex::synth::{gen_synthetic, SynthConfig, NEGATIVE_RELATION};
use relex::training::fd_check;
use relex::util::RunRng;

fn main() -> relex::Result<()> {
    let synth = SynthConfig { num_docs: 2, doc_len: 12, vocab_size: 40, seed: 3, ..SynthConfig::default() };
    let docs = gen_synthetic(&synth)?;
    let vocabs = Vocabs::from_documents(&docs, NEGATIVE_RELATION)?;

    let encoder = EncoderConfig {
        d_model: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_filters: 6,
        dropout: 0.3, // ignored: the check runs the deterministic eval path
        ..EncoderConfig::new(vocabs.tokens.len(), 12)
    };
    let mut config = ModelConfig::new(encoder, vocabs.relations.len(), vocabs.tags.len());
    config.proj_hidden = 6;
    config.proj_dim = 4;
    config.alpha = 0.2;
    let mut rng = RunRng::seed_from_u64(9);
    let model = Model::new(config, &mut rng)?;

    let refs: Vec<&Document> = docs.iter().collect();
    let batch = make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags, 12)?;

    println!(
        "checking d(joint loss)/d(theta) for {} parameters across {} tensors",
        model.num_parameters(),
        model.param_tensors().len()
    );
    let report = fd_check(&model, &batch, 8, 1e-5)?;
    println!("checked {} sampled entries", report.checked);
    println!("worst relative error: {:.3e} (in {})", report.worst_rel_err, report.worst_param);
    println!("tolerance: |analytic - numeric| <= 1e-7 + 1e-4 * max(|analytic|, |numeric|)");
    Ok(())
}
