//! Fit a labeled corpus and export the factor report: top features per
//! factor, usage and expected mass, label-by-factor occurrence counts,
//! and per-sample activity, both as a JSON document and as flat TSVs.

use cozinb::data::Vocab;
use cozinb::eval::{factor_report, write_factor_report_tables, write_report_json};
use cozinb::generative::{sample_corpus, HyperParams, Planted, SynthConfig};
use cozinb::inference::{fit, ModelFlags, Schedule};

fn main() -> cozinb::Result<()> {
    let synth = HyperParams { k: 3, j: 90, m: 30, ..HyperParams::default() };
    let mut cfg = SynthConfig::new(synth, 31);
    cfg.planted = Some(Planted::new(3, 25.0));
    let (mut corpus, _, truth) = sample_corpus(&cfg)?;

    // Label each sample by its dominant true factor.
    let labels: Vec<(String, String)> = corpus
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let theta = &truth.theta[j];
            let best = (0..theta.len())
                .max_by(|&a, &b| theta[a].total_cmp(&theta[b]))
                .unwrap();
            (id.clone(), format!("group{best}"))
        })
        .collect();
    corpus.attach_labels(&labels);
    let vocab = Vocab::synthetic(corpus.n_features(), "feat");

    let hyper = HyperParams { k: 6, ..HyperParams::default() };
    let schedule = Schedule {
        max_epochs: 40,
        local_iters: 12,
        validate: false,
        ..Schedule::default()
    };
    let flags = ModelFlags { kernel_enabled: false, ..ModelFlags::default() };
    let outcome = fit(&corpus, &hyper, &schedule, flags, 2)?;

    let report = factor_report(&outcome.globals, &outcome.locals, &corpus, &vocab, 5)?;
    for factor in &report.factors {
        let tops: Vec<String> = factor
            .top_features
            .iter()
            .map(|t| format!("{} ({:.3})", t.feature, t.weight))
            .collect();
        println!(
            "factor {:2}: usage {:6.1}, mass {:8.2}, top: {}",
            factor.factor,
            factor.usage,
            factor.expected_mass,
            tops.join(", ")
        );
    }
    if let Some(rows) = &report.label_occurrence {
        println!("label-by-factor occurrence (count of samples above threshold):");
        for row in rows.iter().filter(|r| r.count > 0) {
            println!("  {:8} x factor {:2}: {}", row.label, row.factor, row.count);
        }
    }

    let out = std::path::Path::new("target/example-output/export_factors");
    std::fs::create_dir_all(out).expect("create output dir");
    write_report_json(&report, &out.join("report.json"))?;
    write_factor_report_tables(&report, out)?;
    println!("wrote report.json, factors.tsv, labels.tsv, activity.tsv to {}", out.display());
    Ok(())
}
