//! Measure wall time and peak auxiliary memory of both second-order
//! kernels and fit their memory-scaling exponents.
//!
//!     cargo run --release --example kernel_bench

use relex::alloc_track::TrackingAllocator;
use relex::bench::{memory_slope, run_case, BenchRecord, Variant};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn main() -> relex::Result<()> {
    let (r, batch, pairs_per_doc) = (4, 2, 2);
    println!(
        "{:>10} {:>5} {:>14} {:>16}",
        "variant", "N", "wall time (us)", "peak aux bytes"
    );

    let mut naive_records: Vec<BenchRecord> = Vec::new();
    for n in [16, 32, 64] {
        let rec = run_case(Variant::Naive, n, r, batch, pairs_per_doc, 3, 1)?;
        println!(
            "{:>10} {:>5} {:>14.1} {:>16}",
            rec.variant.as_str(),
            rec.n,
            rec.wall_time_ns as f64 / 1e3,
            rec.peak_aux_bytes
        );
        naive_records.push(rec);
    }

    let mut efficient_records: Vec<BenchRecord> = Vec::new();
    for n in [16, 32, 64, 128, 256] {
        let rec = run_case(Variant::Efficient, n, r, batch, pairs_per_doc, 3, 1)?;
        println!(
            "{:>10} {:>5} {:>14.1} {:>16}",
            rec.variant.as_str(),
            rec.n,
            rec.wall_time_ns as f64 / 1e3,
            rec.peak_aux_bytes
        );
        efficient_records.push(rec);
    }

    println!("\nnaive memory slope (expect ~3): {:.3}", memory_slope(&naive_records));
    println!("efficient memory slope (expect ~2): {:.3}", memory_slope(&efficient_records));

    let naive_64 = naive_records.iter().find(|rec| rec.n == 64).unwrap();
    let eff_64 = efficient_records.iter().find(|rec| rec.n == 64).unwrap();
    println!(
        "wall-time ratio at N = 64: {:.1}x",
        naive_64.wall_time_ns as f64 / eff_64.wall_time_ns as f64
    );
    Ok(())
}
