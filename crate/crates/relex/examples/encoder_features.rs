//! Poke at the transformer encoder: masked attention rows, padding
//! invariance, and the bag-of-embeddings alternative.
//!
//!     cargo run --example encoder_features

use ndarray::Array2;
use rand::SeedableRng;
use relex::encoder::{Encoder, EncoderConfig, EncoderKind};
use relex::util::{Mode, RunRng};

fn main() -> relex::Result<()> {
    let config = EncoderConfig {
        d_model: 16,
        num_layers: 2,
        num_heads: 4,
        ffn_filters: 32,
        dropout: 0.1,
        word_dropout: 0.1,
        ..EncoderConfig::new(30, 10)
    };
    let mut rng = RunRng::seed_from_u64(4);
    let encoder = Encoder::new(config, &mut rng)?;

    // One 6-token document padded to length 8.
    let ids = Array2::from_shape_vec((1, 8), vec![5, 9, 2, 17, 3, 11, 0, 0]).unwrap();
    let mask = Array2::from_shape_fn((1, 8), |(_, t)| t < 6);

    let (reps, cache) = encoder.forward(&ids, &mask, EncoderKind::Transformer, Mode::Eval, &mut rng)?;
    println!("representations: {:?}", reps.dim());

    let probs = cache.attention_probs(0);
    println!("\nlayer-0 head-0 attention from token 0 (padded keys get zero):");
    for t in 0..8 {
        print!("{:.3} ", probs[[0, 0, 0, t]]);
    }
    println!("\nrow sum = {:.6}", (0..8).map(|t| probs[[0, 0, 0, t]]).sum::<f64>());

    // Extra padding must not change real-token representations.
    let ids_wide = Array2::from_shape_fn((1, 10), |(_, t)| if t < 6 { ids[[0, t]] } else { 0 });
    let mask_wide = Array2::from_shape_fn((1, 10), |(_, t)| t < 6);
    let (reps_wide, _) =
        encoder.forward(&ids_wide, &mask_wide, EncoderKind::Transformer, Mode::Eval, &mut rng)?;
    let mut worst = 0.0f64;
    for t in 0..6 {
        for d in 0..16 {
            worst = worst.max((reps[[0, t, d]] - reps_wide[[0, t, d]]).abs());
        }
    }
    println!("\nmax |difference| after widening padding: {worst:.2e}");

    let (bag, _) = encoder.forward(&ids, &mask, EncoderKind::Bag, Mode::Eval, &mut rng)?;
    println!(
        "bag encoder (embeddings only) first components: [{:+.3}, {:+.3}, {:+.3}, ...]",
        bag[[0, 0, 0]],
        bag[[0, 0, 1]],
        bag[[0, 0, 2]]
    );
    println!("padded positions stay zero: {}", bag[[0, 7, 0]]);
    Ok(())
}
