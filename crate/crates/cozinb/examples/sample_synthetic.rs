//! Draw a synthetic corpus from the generative model and write it to
//! disk next to the ground truth that produced it.
//!
//! Two corpora are drawn: one fully ancestral (every global sampled from
//! its prior) and one with planted block factors, which is the shape the
//! recovery examples consume.

use cozinb::data::{save_counts, Format};
use cozinb::generative::{sample_corpus, HyperParams, Planted, SynthConfig};

fn main() -> cozinb::Result<()> {
    let out = std::path::Path::new("target/example-output/sample_synthetic");
    std::fs::create_dir_all(out).expect("create output dir");

    // Fully ancestral draw. The library's default hyperpriors are vague
    // (meant to stay out of the way during inference), which makes the
    // forward prior collapse to empty corpora; give the demo draw
    // moderately informative ones instead.
    let hyper = HyperParams {
        k: 15,
        j: 100,
        m: 50,
        a0: 2.0,
        b0: 2.0,
        e0: 3.0,
        f0: 1.0,
        ..HyperParams::default()
    };
    let (corpus, vocab, truth) = sample_corpus(&SynthConfig::new(hyper, 11))?;
    let loads: Vec<u64> = corpus.totals().to_vec();
    let zeros = corpus
        .rows()
        .iter()
        .map(|r| corpus.n_features() - r.len())
        .sum::<usize>();
    println!(
        "ancestral: {} x {}, mean load {:.1}, max load {}, {:.1}% zero cells",
        corpus.n_samples(),
        corpus.n_features(),
        loads.iter().sum::<u64>() as f64 / loads.len() as f64,
        loads.iter().max().unwrap(),
        100.0 * zeros as f64 / (corpus.n_samples() * corpus.n_features()) as f64,
    );
    let live = truth
        .b
        .iter()
        .fold(vec![false; 15], |mut acc, row| {
            for (a, &b) in acc.iter_mut().zip(row) {
                *a |= b;
            }
            acc
        })
        .iter()
        .filter(|&&x| x)
        .count();
    println!("ancestral: {live} of 15 factors ever switched on");
    save_counts(&out.join("ancestral.tsv"), Format::TripletTsv, &corpus, &vocab)?;

    // Planted draw: 4 block factors, calibrated mean token load.
    let hyper = HyperParams { k: 4, j: 120, m: 80, ..HyperParams::default() };
    let mut cfg = SynthConfig::new(hyper, 12);
    cfg.planted = Some(Planted::new(4, 30.0));
    let (corpus, vocab, truth) = sample_corpus(&cfg)?;
    let mean_load =
        corpus.totals().iter().sum::<u64>() as f64 / corpus.n_samples() as f64;
    println!(
        "planted: {} x {}, mean load {:.1} (target 30)",
        corpus.n_samples(),
        corpus.n_features(),
        mean_load
    );
    save_counts(&out.join("planted.tsv"), Format::TripletTsv, &corpus, &vocab)?;
    truth.save(&out.join("planted-truth"))?;
    println!("wrote corpora and ground truth under {}", out.display());
    Ok(())
}
