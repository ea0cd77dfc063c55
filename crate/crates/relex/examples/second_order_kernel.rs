//! The memory-efficient second-order kernel against the cubic-memory
//! reference implementation: identical scores, very different footprints.
//!
//!     cargo run --example second_order_kernel

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use relex::second_order::{
    efficient_aux_bytes, naive_aux_bytes, second_order_efficient, second_order_naive,
    PairIndices,
};
use relex::util::RunRng;

fn main() -> relex::Result<()> {
    let (batch, n, r) = (2, 20, 3);
    let mut rng = RunRng::seed_from_u64(3);
    let b = Array4::from_shape_fn((batch, n, r, n), |_| rng.gen_range(-4.0..4.0));

    // Two entities: head mentioned at {0, 5}, tail at {9}; everything else
    // is context the relation may route through.
    let pair = PairIndices {
        doc_index: 0,
        head: vec![0, 5],
        tail: vec![9],
        context: (0..n).filter(|k| ![0, 5, 9].contains(k)).collect(),
    };

    let fast: ndarray::Array2<f64> =
        second_order_efficient(b.view(), std::slice::from_ref(&pair))?;
    let slow = second_order_naive(
        b.slice(ndarray::s![0, .., .., ..]),
        &pair.head,
        &pair.tail,
        &pair.context,
    )?;

    println!("relation  efficient        naive            |difference|");
    for rel in 0..r {
        println!(
            "{rel:<9} {:<16.10} {:<16.10} {:.2e}",
            fast[[0, rel]],
            slow[rel],
            (fast[[0, rel]] - slow[rel]).abs()
        );
    }

    println!("\nauxiliary bytes needed at various document lengths (1 pair, R = 3):");
    println!("{:>6} {:>14} {:>14}", "N", "naive", "efficient");
    for size in [16usize, 64, 256, 1024] {
        println!(
            "{size:>6} {:>14} {:>14}",
            naive_aux_bytes::<f64>(size, r),
            efficient_aux_bytes::<f64>(1, size, r)
        );
    }

    // A pair with no context tokens gets the no-context sentinel.
    let lonely = PairIndices {
        doc_index: 0,
        head: vec![0],
        tail: vec![1],
        context: vec![],
    };
    let scores = second_order_efficient(b.view(), std::slice::from_ref(&lonely))?;
    println!("\nempty context scores every relation at the sentinel: {:.3e}", scores[[0, 0]]);
    Ok(())
}
