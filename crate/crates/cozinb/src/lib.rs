//! Mixed-membership factor models for sparse count matrices, built on a
//! zero-inflated negative-binomial likelihood whose zero-inflation is
//! correlated across factors by a learned neural kernel.
//!
//! Each sample j carries a binary selector b_jk per factor; active
//! factors contribute negative-binomial counts that are spread over the
//! vocabulary by per-factor categorical rows. The selectors are not
//! independent: a decoder network maps a sample representation and a
//! per-factor location to a shift on the selector's log-odds, letting
//! groups of factors switch on together or exclude one another. Fitting
//! runs stochastic variational inference with closed-form conjugate
//! updates for all count-side posteriors and Adam steps for the network,
//! locations, and concentration; results are bitwise reproducible for a
//! fixed seed at any worker-thread count.
//!
//! # Where to start
//!
//! The `examples/` directory is the front door; each one is runnable
//! with `cargo run --example <name>` and exercises one capability
//! end to end:
//!
//! - `sample_synthetic` — draw corpora from the generative model
//!   ([`generative::sample_corpus`]), ancestral and planted, and save
//!   them with their ground truth.
//! - `fit_planted` — fit an over-provisioned model on a planted corpus
//!   ([`inference::fit`]), then match fitted factors to the truth
//!   ([`eval::match_factors`]) and count surviving factors
//!   ([`eval::active_factor_count`]).
//! - `heldout_perplexity` — split a corpus ([`data::split_heldout`]),
//!   fit, and score held-out halves ([`eval::evaluate`]), comparing
//!   against the pinned-selector ablation.
//! - `mutual_exclusivity` — plant a kernel that forces factor pairs to
//!   co-activate or exclude each other ([`generative::product_decoder`])
//!   and verify the fitted selectors reproduce both correlation signs.
//! - `gradient_check` — audit every analytic gradient
//!   ([`inference::compute_gradients`]) against finite differences of
//!   the objective ([`inference::elbo`]).
//! - `export_factors` — build and serialize the factor report
//!   ([`eval::factor_report`]): top features, usage, mass, label
//!   cross-tabs, per-sample activity.
//!
//! The same lifecycle is available as a thin binary (`cozinb`) with
//! subcommands `sample`, `fit`, `eval`, `transform`, and
//! `export-factors`; see [`cli`].
//!
//! # Module map
//!
//! - [`data`]: sparse count matrices, triplet/matrix-market I/O,
//!   held-out splits, feature filtering.
//! - [`generative`]: hyperparameters and exact ancestral sampling,
//!   planted-factor corpora, kernel overrides, posterior predictive
//!   draws.
//! - [`inference`]: global/local variational state, closed-form and
//!   gradient updates, the evidence lower bound, [`inference::fit`],
//!   [`inference::transform`], checkpoints.
//! - [`eval`]: held-out perplexity, top-count precision, factor
//!   matching and recovery scores, factor reports.
//! - [`kernel`]: minimal dense MLP with manual backprop and Adam.
//! - [`dist`]: seeded draws and special-purpose samplers (gamma, beta,
//!   Dirichlet, the count-table distribution and its real-valued mean).
//! - [`special`]: digamma/trigamma/log-gamma and stable softplus/sigmoid.
//! - [`rng`]: deterministic per-purpose stream derivation from one seed.
//! - [`store`]: little-endian array files and JSON helpers.
//! - [`cli`]: the subcommand front end over all of the above.

pub mod cli;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod generative;
pub mod inference;
pub mod kernel;
pub mod rng;
pub mod special;
pub mod store;

pub use error::{Error, Result};
