//! Finite-difference audit of the analytic gradients the optimizer uses:
//! the concentration parameter, every factor location coordinate, and a
//! sample of encoder and decoder weights, all checked against a central
//! difference of the full objective.

use cozinb::generative::{sample_corpus, HyperParams, SynthConfig};
use cozinb::inference::{
    compute_gradients, elbo, fit, update_local, GlobalState, LocalState, ModelFlags, Schedule,
};

const STEP: f64 = 1e-5;

/// Central finite difference of the objective along one mutation.
fn fd(
    rows: &[&[(usize, u32)]],
    locals: &[&LocalState],
    globals: &GlobalState,
    hyper: &HyperParams,
    j_total: usize,
    mutate: impl Fn(&mut GlobalState, f64),
) -> f64 {
    let eval = |delta: f64| -> f64 {
        let mut g = globals.clone();
        mutate(&mut g, delta);
        elbo(rows, locals, &g, hyper, j_total).expect("objective")
    };
    (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn main() -> cozinb::Result<()> {
    let hyper = HyperParams {
        k: 4,
        j: 12,
        m: 10,
        d_h: 3,
        d_l: 3,
        enc_hidden: vec![6],
        dec_hidden: vec![5],
        ..HyperParams::default()
    };
    let (corpus, _, _) = sample_corpus(&SynthConfig::new(hyper.clone(), 8))?;

    // A short fit moves every parameter off its symmetric starting point,
    // which makes the check non-trivial.
    let schedule = Schedule {
        max_epochs: 3,
        local_iters: 10,
        validate: false,
        ..Schedule::default()
    };
    let outcome = fit(&corpus, &hyper, &schedule, ModelFlags::default(), 4)?;
    let globals = outcome.globals;
    let exps = globals.expectations();

    let rows: Vec<&[(usize, u32)]> = corpus.rows().iter().map(Vec::as_slice).collect();
    let locals: Vec<LocalState> = (0..corpus.n_samples())
        .map(|j| update_local(j, rows[j], &globals, &exps, &hyper, 20, 1e-10, None, None))
        .collect::<cozinb::Result<_>>()?;
    let local_refs: Vec<&LocalState> = locals.iter().collect();
    let j_total = corpus.n_samples();

    let grads = compute_gradients(&rows, &local_refs, &globals, &hyper, j_total)?;
    let mut worst: f64 = 0.0;

    // Concentration parameter (gradient taken in log space).
    let numeric = fd(&rows, &local_refs, &globals, &hyper, j_total, |g, d| {
        g.gamma0 = (g.gamma0.ln() + d).exp();
    });
    let e = rel_err(grads.d_log_gamma0, numeric);
    println!(
        "log-concentration: analytic {:+.6e}, numeric {:+.6e}, rel err {e:.2e}",
        grads.d_log_gamma0, numeric
    );
    worst = worst.max(e);

    // Every factor-location coordinate.
    for k in 0..globals.k {
        for d in 0..globals.d_l {
            let numeric = fd(&rows, &local_refs, &globals, &hyper, j_total, |g, dd| {
                g.locations[k][d] += dd;
            });
            worst = worst.max(rel_err(grads.d_locations[k][d], numeric));
        }
    }
    println!(
        "locations: {} coordinates checked, worst rel err so far {worst:.2e}",
        globals.k * globals.d_l
    );

    // A spread of encoder and decoder weights (every 7th parameter).
    for (name, analytic_flat, which) in [
        ("encoder", grads.d_encoder.to_flat(), 0),
        ("decoder", grads.d_decoder.to_flat(), 1),
    ] {
        let n = analytic_flat.len();
        let mut checked = 0;
        for idx in (0..n).step_by(7) {
            let numeric = fd(&rows, &local_refs, &globals, &hyper, j_total, |g, d| {
                let net = if which == 0 { &mut g.encoder } else { &mut g.decoder };
                let mut flat = net.to_flat();
                flat[idx] += d;
                *net = cozinb::kernel::Mlp::from_flat(net.spec().clone(), &flat)
                    .expect("same spec");
            });
            worst = worst.max(rel_err(analytic_flat[idx], numeric));
            checked += 1;
        }
        println!("{name}: {checked} of {n} weights checked, worst rel err {worst:.2e}");
    }

    assert!(worst < 1e-4, "gradients must match finite differences");
    println!("all analytic gradients match finite differences (worst {worst:.2e})");
    Ok(())
}
