//! Generate a synthetic bridge-token corpus, split it, and save it as
//! JSON-lines files.
//!
//!     cargo run --example generate_corpus -- /tmp/relex-corpus

use relex::data::save_documents;
use relex::synth::{gen_synthetic, split_documents, SynthConfig};

fn main() -> relex::Result<()> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "/tmp/relex-corpus".into());

    let config = SynthConfig {
        num_docs: 500,
        doc_len: 24,
        vocab_size: 96,
        num_relation_types: 4,
        positive_fraction: 0.5,
        seed: 7,
        ..SynthConfig::default()
    };
    let docs = gen_synthetic(&config)?;

    let positives = docs
        .iter()
        .filter(|d| d.relations.iter().any(|r| r.relation_type != "none"))
        .count();
    println!("{} documents, {positives} with a positive relation", docs.len());

    let sample = &docs[0];
    println!("\nfirst document ({}):", sample.doc_id);
    println!("  tokens: {}", sample.tokens.join(" "));
    for m in &sample.mentions {
        println!(
            "  mention {} [{}..{}] type={} text={:?}",
            m.entity_id,
            m.start,
            m.end,
            m.entity_type,
            sample.tokens[m.start..m.end].join(" ")
        );
    }
    for r in &sample.relations {
        println!("  relation {} -> {}: {}", r.head_entity_id, r.tail_entity_id, r.relation_type);
    }

    let (train, dev, test) = split_documents(docs, 0.8, 0.1, 0.1)?;
    std::fs::create_dir_all(&out_dir)?;
    save_documents(format!("{out_dir}/train.jsonl"), &train)?;
    save_documents(format!("{out_dir}/dev.jsonl"), &dev)?;
    save_documents(format!("{out_dir}/test.jsonl"), &test)?;
    println!(
        "\nwrote {}/{}/{} train/dev/test documents under {out_dir}",
        train.len(),
        dev.len(),
        test.len()
    );
    Ok(())
}
