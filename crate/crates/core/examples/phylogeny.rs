//! Recovers a two-family synthetic phylogeny from Fisher overlap.
//!
//! `cargo run --release -p pseudofam --example phylogeny -- [seeds]`

use std::time::Instant;

use pseudofam::corpus::PhyloSpec;
use pseudofam::family::{family_for, InitRule};
use pseudofam::pipeline::{run_synthetic, ExperimentConfig};

fn main() -> pseudofam::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for seed in 0..seeds {
        let t0 = Instant::now();
        let cfg = ExperimentConfig::new(PhyloSpec::balanced(2, 3, 0.5, 0.1, 500, seed));
        let out = run_synthetic(&cfg)?;
        let m = &out.matrix;
        let family = |i: usize| m.pairs[i].source().as_bytes()[0];
        let (mut within, mut cross) = (Vec::new(), Vec::new());
        for i in 0..m.pairs.len() {
            for j in 0..m.pairs.len() {
                if i != j {
                    if family(i) == family(j) {
                        &mut within
                    } else {
                        &mut cross
                    }
                    .push(m.scores[i][j]);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "seed {seed}: vocab {} loss {:.3} within {:.4} cross {:.4} ({:.1}s)",
            out.vocab.len(),
            out.train_report.epoch_losses.last().unwrap(),
            mean(&within),
            mean(&cross),
            t0.elapsed().as_secs_f64()
        );
        for p in &m.pairs {
            let (fam, _) = family_for(m, p, InitRule::FirstTwo)?;
            let aux: Vec<String> = fam
                .auxiliaries
                .iter()
                .map(|c| format!("{} {:.3}", c.pair, c.score))
                .collect();
            println!("  {p}: {}", aux.join(", "));
        }
    }
    Ok(())
}
