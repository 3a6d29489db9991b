//! Stochastic variational inference for the correlated zero-inflated
//! negative-binomial factor model.
//!
//! The global state carries conjugate posteriors (Dirichlet factor rows,
//! Beta selector probabilities, Gamma rates), point-mass parameters
//! (rate-prior shape, factor locations, encoder/decoder weights), and the
//! Adam moments for the gradient-ascent block. Local state is per-sample:
//! token responsibilities, factor intensities, selector probabilities, the
//! count-probability posterior, and expected table counts.
//!
//! One fitting step alternates
//!   1. per-sample coordinate ascent against an immutable global snapshot
//!      ([`update_local`], parallel over the minibatch),
//!   2. closed-form natural-parameter interpolation for the conjugate
//!      blocks ([`update_global_closed`]),
//!   3. an Adam ascent step on the rate-prior shape and kernel parameters
//!      ([`update_global_gradient`]).
//! With a full batch the interpolation weight is pinned to 1 and the loop
//! reduces to plain coordinate ascent.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_heldout, CountMatrix, HeldoutSplit};
use crate::dist::{
    beta_entropy, crt_mean_real, dirichlet_entropy, e_log_beta_sides, e_log_dirichlet,
    gamma_entropy, kl_gamma, BetaParams,
};
use crate::error::{Error, Result};
use crate::generative::HyperParams;
use crate::kernel::{
    adam_step_flat, adam_step_mlp, AdamConfig, AdamState, Mlp, MlpGrads, MlpSpec,
};
use crate::rng::{shuffled_indices, RngPool};
use crate::special::{
    bernoulli_entropy, digamma, ln_beta, ln_gamma, log_sigmoid, log_sum_exp, sigmoid, trigamma,
};
use crate::store;

/// A factor counts as carrying token mass in a sample once its expected
/// assigned count exceeds this; the selector is then pinned to 1 (a factor
/// that emitted tokens cannot be switched off).
pub const ACTIVE_MASS_EPS: f64 = 1e-8;

/// Lower clamp on selector probabilities, keeping every Gamma shape
/// parameter strictly positive.
const NU_FLOOR: f64 = 1e-12;

/// Step size of the optional table-count relaxation ascent.
const CRT_RELAX_STEP: f64 = 0.05;

/// Samples per work unit when fanning local updates and gradient
/// accumulation across threads. Chunk boundaries depend only on indices,
/// so reductions are bitwise identical for any thread count.
const PAR_CHUNK: usize = 32;

/// Switches altering the variational family or the update schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelFlags {
    /// Use the location/decoder kernel. When off, the selector logits fall
    /// back to the shared Beta posterior and all network terms vanish from
    /// the objective, so fitted results are invariant to network weights.
    pub kernel_enabled: bool,
    /// Sample the kernel shift through its scale head during local updates
    /// instead of using the mean (exploration only; the objective and all
    /// gradients keep the deterministic mean).
    pub kernel_sample: bool,
    /// Ablation: pin every selector to 1, disabling zero-inflation.
    pub fix_nu_one: bool,
    /// Update expected table counts by relaxation ascent instead of the
    /// closed-form expectation (experimental).
    pub crt_gradient: bool,
    /// Skip the gradient block entirely (rate-prior shape and kernel stay
    /// at their current values).
    pub freeze_gradients: bool,
}

impl Default for ModelFlags {
    fn default() -> Self {
        ModelFlags {
            kernel_enabled: true,
            kernel_sample: false,
            fix_nu_one: false,
            crt_gradient: false,
            freeze_gradients: false,
        }
    }
}

/// Optimization schedule. `batch_size = 0` means full batch; full batches
/// always use interpolation weight 1 (plain coordinate ascent), while
/// minibatches follow rho_t = (t + tau0)^(-kappa) over global steps t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub batch_size: usize,
    pub kappa: f64,
    pub tau0: f64,
    pub max_epochs: usize,
    /// Minimum per-epoch improvement of validation perplexity; smaller
    /// improvements count toward the early-stopping patience.
    pub tol: f64,
    /// Consecutive low-improvement epochs tolerated before stopping.
    pub patience: usize,
    /// Coordinate sweeps per local update.
    pub local_iters: usize,
    /// Early-exit threshold on the largest responsibility/selector change
    /// within one local update.
    pub local_tol: f64,
    /// Carve a validation split off the corpus and trace its perplexity.
    pub validate: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            batch_size: 0,
            kappa: 0.7,
            tau0: 1.0,
            max_epochs: 100,
            tol: 1e-4,
            patience: 5,
            local_iters: 15,
            local_tol: 1e-6,
            validate: true,
        }
    }
}

impl Schedule {
    pub fn validate_config(&self) -> Result<()> {
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::config(format!(
                "schedule kappa must lie in (0.5, 1], got {}",
                self.kappa
            )));
        }
        if !(self.tau0 >= 0.0 && self.tau0.is_finite()) {
            return Err(Error::config(format!(
                "schedule tau0 must be a finite nonnegative real, got {}",
                self.tau0
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("schedule max_epochs must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::config("schedule tol must be >= 0"));
        }
        if self.patience == 0 {
            return Err(Error::config("schedule patience must be >= 1"));
        }
        if self.local_iters == 0 {
            return Err(Error::config("schedule local_iters must be >= 1"));
        }
        if !(self.local_tol >= 0.0) {
            return Err(Error::config("schedule local_tol must be >= 0"));
        }
        Ok(())
    }
}

/// Moment lookups shared by every local update in a phase; computed once
/// from a [`GlobalState`] snapshot.
#[derive(Debug, Clone)]
pub struct Expectations {
    /// E[ln phi_km], K x M.
    pub e_ln_phi: Vec<Vec<f64>>,
    pub e_r: Vec<f64>,
    pub e_ln_r: Vec<f64>,
    pub e_ln_pi: Vec<f64>,
    pub e_ln_1m_pi: Vec<f64>,
    /// E[logit pi_k] under the Beta posterior: psi(tau1) - psi(tau2).
    pub e_logit_pi: Vec<f64>,
}

/// Global variational state.
#[derive(Debug, Clone)]
pub struct GlobalState {
    pub k: usize,
    pub m: usize,
    pub d_h: usize,
    pub d_l: usize,
    /// Dirichlet parameters of the factor rows, K x M.
    pub eta: Vec<Vec<f64>>,
    /// Beta posterior of each selector probability.
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Gamma posterior of each factor rate (shape/scale).
    pub r_shape: Vec<f64>,
    pub r_scale: Vec<f64>,
    /// Point estimate of the rate-prior shape.
    pub gamma0: f64,
    /// Point estimates of the factor locations, K x d_l.
    pub locations: Vec<Vec<f64>>,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Most recent scaled per-factor table-count totals (diagnostics and
    /// the relaxation path; refreshed by each gradient step).
    pub crt_totals: Vec<f64>,
    pub adam_cfg: AdamConfig,
    pub adam_loc: AdamState,
    pub adam_gamma0: AdamState,
    pub adam_enc: AdamState,
    pub adam_dec: AdamState,
    pub flags: ModelFlags,
}

impl GlobalState {
    /// Seeded initialization: factor rows at the prior plus uniform noise
    /// to break symmetry, selector and rate posteriors at their priors,
    /// locations from their Gaussian prior, network weights fan-in uniform.
    pub fn init(hyper: &HyperParams, m: usize, flags: ModelFlags, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if m == 0 {
            return Err(Error::config("cannot initialize a model over 0 features"));
        }
        let k = hyper.k;
        let pool = RngPool::new(seed);
        let mut rng = pool.stream("init/eta");
        let eta: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..m).map(|_| hyper.eta0 + 0.1 * rng.random::<f64>()).collect())
            .collect();
        let alpha = hyper.alpha;
        let kf = k as f64;
        let tau1 = vec![alpha / kf; k];
        let tau2 = vec![alpha * (1.0 - 1.0 / kf); k];
        let mut rng = pool.stream("init/locations");
        let loc_sd = hyper.b.sqrt();
        let locations: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..hyper.d_l)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        loc_sd * z
                    })
                    .collect()
            })
            .collect();
        let enc_spec = MlpSpec::new(hyper.encoder_widths(m), hyper.activation)?;
        let dec_spec = MlpSpec::new(hyper.decoder_widths(), hyper.activation)?;
        let encoder = Mlp::init(enc_spec, &mut pool.stream("init/encoder"));
        let decoder = Mlp::init(dec_spec, &mut pool.stream("init/decoder"));
        let adam_cfg = AdamConfig::default();
        let adam_loc = AdamState::new(k * hyper.d_l);
        let adam_gamma0 = AdamState::new(1);
        let adam_enc = AdamState::new(encoder.spec().param_count());
        let adam_dec = AdamState::new(decoder.spec().param_count());
        Ok(GlobalState {
            k,
            m,
            d_h: hyper.d_h,
            d_l: hyper.d_l,
            eta,
            tau1,
            tau2,
            r_shape: vec![1.0; k],
            r_scale: vec![1.0; k],
            gamma0: 1.0,
            locations,
            encoder,
            decoder,
            crt_totals: vec![0.0; k],
            adam_cfg,
            adam_loc,
            adam_gamma0,
            adam_enc,
            adam_dec,
            flags,
        })
    }

    pub fn expectations(&self) -> Expectations {
        let e_ln_phi: Vec<Vec<f64>> = self.eta.iter().map(|row| e_log_dirichlet(row)).collect();
        let mut e_r = Vec::with_capacity(self.k);
        let mut e_ln_r = Vec::with_capacity(self.k);
        let mut e_ln_pi = Vec::with_capacity(self.k);
        let mut e_ln_1m_pi = Vec::with_capacity(self.k);
        let mut e_logit_pi = Vec::with_capacity(self.k);
        for k in 0..self.k {
            e_r.push(self.r_shape[k] * self.r_scale[k]);
            e_ln_r.push(digamma(self.r_shape[k]) + self.r_scale[k].ln());
            let sides = e_log_beta_sides(BetaParams {
                alpha: self.tau1[k],
                beta: self.tau2[k],
            });
            e_ln_pi.push(sides.0);
            e_ln_1m_pi.push(sides.1);
            e_logit_pi.push(digamma(self.tau1[k]) - digamma(self.tau2[k]));
        }
        Expectations { e_ln_phi, e_r, e_ln_r, e_ln_pi, e_ln_1m_pi, e_logit_pi }
    }

    /// Posterior mean factor rows (each a distribution over features).
    pub fn phi_mean(&self) -> Vec<Vec<f64>> {
        self.eta
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                row.iter().map(|&e| e / total).collect()
            })
            .collect()
    }

    /// Kernel shift u_k for one sample representation; zeros with the
    /// kernel disabled. `noise` (per-factor standard normals) routes the
    /// shift through the scale head.
    pub fn kernel_shifts(&self, h: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
        if !self.flags.kernel_enabled {
            return Ok(vec![0.0; self.k]);
        }
        let mut out = Vec::with_capacity(self.k);
        let mut input = vec![0.0; self.d_h + self.d_l];
        input[..self.d_h].copy_from_slice(h);
        for k in 0..self.k {
            input[self.d_h..].copy_from_slice(&self.locations[k]);
            let cache = self.decoder.forward(&input)?;
            let o = cache.output();
            let mut u = o[0];
            if let Some(eps) = noise {
                u += o[1].exp() * eps[k];
            }
            out.push(u);
        }
        Ok(out)
    }

    /// Sample representation h for one row; zeros with the kernel disabled.
    pub fn encode(&self, row: &[(usize, u32)]) -> Result<Vec<f64>> {
        if !self.flags.kernel_enabled {
            return Ok(vec![0.0; self.d_h]);
        }
        Ok(self.encoder.forward_sparse(row)?.output().to_vec())
    }

    /// Check positivity/finiteness of every block; names the offender.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::numerical(format!("global state invalid: {name}")))
            }
        };
        check(
            "eta",
            self.eta.iter().flatten().all(|&v| v > 0.0 && v.is_finite()),
        )?;
        check(
            "tau",
            self.tau1.iter().chain(&self.tau2).all(|&v| v > 0.0 && v.is_finite()),
        )?;
        check(
            "r",
            self.r_shape.iter().chain(&self.r_scale).all(|&v| v > 0.0 && v.is_finite()),
        )?;
        check("gamma0", self.gamma0 > 0.0 && self.gamma0.is_finite())?;
        check(
            "locations",
            self.locations.iter().flatten().all(|v| v.is_finite()),
        )?;
        Ok(())
    }
}

/// Per-sample variational state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    /// Token responsibilities: one row per distinct feature of the sample
    /// (in row storage order), each a distribution over factors.
    pub psi: Vec<Vec<f64>>,
    /// Gamma posterior of the factor intensities (shape/scale).
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    /// Selector probabilities.
    pub nu: Vec<f64>,
    /// Beta posterior of the count probability.
    pub a_tilde: f64,
    pub b_tilde: f64,
    /// Sample representation (encoder output; zeros when the kernel is
    /// disabled).
    pub h: Vec<f64>,
    /// Expected table counts.
    pub l_tilde: Vec<f64>,
}

impl LocalState {
    /// Posterior mean factor intensities.
    pub fn theta_mean(&self) -> Vec<f64> {
        self.theta1.iter().zip(&self.theta2).map(|(&s, &t)| s * t).collect()
    }

    pub fn e_p(&self) -> f64 {
        self.a_tilde / (self.a_tilde + self.b_tilde)
    }

    /// (E[ln p], E[ln(1-p)]) under the count-probability posterior.
    pub fn p_log_sides(&self) -> (f64, f64) {
        e_log_beta_sides(BetaParams { alpha: self.a_tilde, beta: self.b_tilde })
    }

    /// Expected token mass assigned to each factor.
    pub fn assigned_mass(&self, row: &[(usize, u32)], k: usize) -> Vec<f64> {
        let mut s = vec![0.0; k];
        for (t, &(_, c)) in row.iter().enumerate() {
            let c = f64::from(c);
            for (kk, &p) in self.psi[t].iter().enumerate() {
                s[kk] += c * p;
            }
        }
        s
    }
}

/// Coordinate ascent for one sample against a global snapshot.
///
/// Sweep order: responsibilities, intensity posterior, count-probability
/// posterior, selectors, table counts; repeated up to `iters` times or
/// until the largest responsibility/selector change drops below `tol`.
/// `warm` resumes from an existing state (required for strict ascent
/// across epochs); otherwise the state starts at a neutral point.
/// `exps` must be derived from `globals`.
#[allow(clippy::too_many_arguments)]
pub fn update_local(
    j: usize,
    row: &[(usize, u32)],
    globals: &GlobalState,
    exps: &Expectations,
    hyper: &HyperParams,
    iters: usize,
    tol: f64,
    warm: Option<&LocalState>,
    kernel_noise: Option<&[f64]>,
) -> Result<LocalState> {
    let k_n = globals.k;
    for &(m, c) in row {
        if m >= globals.m {
            return Err(Error::data(format!(
                "sample {j}: feature index {m} out of range for {} features",
                globals.m
            )));
        }
        if c == 0 {
            return Err(Error::data(format!("sample {j}: zero count stored for feature {m}")));
        }
    }
    let n_j: f64 = row.iter().map(|&(_, c)| f64::from(c)).sum();
    let h = globals.encode(row)?;
    let shifts = globals.kernel_shifts(&h, kernel_noise)?;
    let flags = globals.flags;

    let mut st = match warm {
        Some(w) => {
            if w.psi.len() != row.len() || w.nu.len() != k_n {
                return Err(Error::config(format!(
                    "sample {j}: warm-start state shaped for a different row"
                )));
            }
            let mut w = w.clone();
            w.h = h;
            w
        }
        None => {
            let nu0 = if flags.fix_nu_one { 1.0 } else { 0.5 };
            let a_t = hyper.a0 + n_j;
            let b_t = hyper.b0 + 0.5 * exps.e_r.iter().sum::<f64>();
            let e_p = a_t / (a_t + b_t);
            LocalState {
                psi: vec![vec![1.0 / k_n as f64; k_n]; row.len()],
                theta1: exps.e_r.iter().map(|&er| nu0 * er + n_j / k_n as f64).collect(),
                theta2: vec![e_p; k_n],
                nu: vec![nu0; k_n],
                a_tilde: a_t,
                b_tilde: b_t,
                h,
                l_tilde: vec![0.0; k_n],
            }
        }
    };

    let mut logits = vec![0.0; k_n];
    for _sweep in 0..iters {
        let mut max_change = 0.0f64;

        // (1) responsibilities from current intensity/factor moments.
        for (t, &(m, _)) in row.iter().enumerate() {
            for k in 0..k_n {
                logits[k] =
                    digamma(st.theta1[k]) + st.theta2[k].ln() + exps.e_ln_phi[k][m];
            }
            let lse = log_sum_exp(&logits);
            for k in 0..k_n {
                let p = (logits[k] - lse).exp();
                let d = (p - st.psi[t][k]).abs();
                if d > max_change {
                    max_change = d;
                }
                st.psi[t][k] = p;
            }
        }
        let s = st.assigned_mass(row, k_n);

        // (2) intensity posterior: shape nu E[r] + s, scale E[p].
        let e_p = st.e_p();
        for k in 0..k_n {
            st.theta1[k] = st.nu[k] * exps.e_r[k] + s[k];
            st.theta2[k] = e_p;
        }

        // (3) count-probability posterior.
        st.a_tilde = hyper.a0 + n_j;
        st.b_tilde = hyper.b0 + st.nu.iter().zip(&exps.e_r).map(|(&n, &r)| n * r).sum::<f64>();

        // (4) selectors: pinned on where the factor carries token mass,
        // otherwise the prior-plus-kernel logit shrunk by the expected
        // zero-probability mass (1 - p)^E[r].
        let e_ln_1m_p = digamma(st.b_tilde) - digamma(st.a_tilde + st.b_tilde);
        for k in 0..k_n {
            let new = if flags.fix_nu_one || s[k] > ACTIVE_MASS_EPS {
                1.0
            } else {
                sigmoid(exps.e_logit_pi[k] + shifts[k] + exps.e_r[k] * e_ln_1m_p)
                    .max(NU_FLOOR)
            };
            let d = (new - st.nu[k]).abs();
            if d > max_change {
                max_change = d;
            }
            st.nu[k] = new;
        }

        // (5) expected table counts.
        if flags.crt_gradient {
            for k in 0..k_n {
                let g = exps.e_ln_r[k] - exps.e_r[k].ln() + globals.gamma0.ln()
                    - digamma(globals.gamma0 + globals.crt_totals[k]);
                st.l_tilde[k] = (st.l_tilde[k] + CRT_RELAX_STEP * g).clamp(0.0, s[k] + 1.0);
            }
        } else {
            for k in 0..k_n {
                st.l_tilde[k] = crt_mean_real(s[k], exps.e_r[k] * st.nu[k]);
            }
        }

        if max_change < tol {
            break;
        }
    }

    let finite = st.theta1.iter().chain(&st.theta2).chain(&st.nu).chain(&st.l_tilde).all(|v| v.is_finite())
        && st.a_tilde.is_finite()
        && st.b_tilde.is_finite()
        && st.psi.iter().flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::numerical(format!(
            "sample {j}: local update produced a non-finite quantity"
        )));
    }
    Ok(st)
}

/// Closed-form natural-parameter interpolation for the conjugate global
/// blocks (factor rows, selector probabilities, rates). `rho` must lie in
/// (0, 1]; `j_total` is the corpus size behind the minibatch scaling.
pub fn update_global_closed(
    rows: &[&[(usize, u32)]],
    locals: &[&LocalState],
    globals: &mut GlobalState,
    hyper: &HyperParams,
    rho: f64,
    j_total: usize,
) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::config(format!(
            "interpolation weight must lie in (0, 1], got {rho}"
        )));
    }
    if rows.is_empty() || rows.len() != locals.len() {
        return Err(Error::config(format!(
            "global update needs a nonempty batch with matching rows/locals, got {}/{}",
            rows.len(),
            locals.len()
        )));
    }
    if j_total < rows.len() {
        return Err(Error::config(format!(
            "corpus size {} smaller than batch {}",
            j_total,
            rows.len()
        )));
    }
    let k_n = globals.k;
    let scale = j_total as f64 / rows.len() as f64;
    let kf = k_n as f64;

    // Factor rows.
    let mut eta_hat = vec![vec![hyper.eta0; globals.m]; k_n];
    for (row, local) in rows.iter().zip(locals) {
        for (t, &(m, c)) in row.iter().enumerate() {
            let c = f64::from(c) * scale;
            for k in 0..k_n {
                eta_hat[k][m] += c * local.psi[t][k];
            }
        }
    }
    for k in 0..k_n {
        for m in 0..globals.m {
            globals.eta[k][m] = (1.0 - rho) * globals.eta[k][m] + rho * eta_hat[k][m];
        }
    }

    // Selector probabilities and rates.
    let j_t = rows.len() as f64;
    for k in 0..k_n {
        let nu_sum: f64 = locals.iter().map(|l| l.nu[k]).sum();
        let tau1_hat = hyper.alpha / kf + scale * nu_sum;
        let tau2_hat = hyper.alpha * (1.0 - 1.0 / kf) + scale * (j_t - nu_sum);
        globals.tau1[k] = (1.0 - rho) * globals.tau1[k] + rho * tau1_hat;
        globals.tau2[k] = (1.0 - rho) * globals.tau2[k] + rho * tau2_hat;

        let l_sum: f64 = locals.iter().map(|l| l.l_tilde[k]).sum();
        let shape_hat = globals.gamma0 + scale * l_sum;
        let weighted: f64 = locals
            .iter()
            .map(|l| {
                let (_, e_ln_1m_p) = l.p_log_sides();
                l.nu[k] * e_ln_1m_p
            })
            .sum();
        let rate_hat = hyper.alpha - scale * weighted;
        if !(rate_hat > 0.0) {
            return Err(Error::numerical(format!(
                "rate update for factor {k} lost positivity ({rate_hat})"
            )));
        }
        globals.r_shape[k] = (1.0 - rho) * globals.r_shape[k] + rho * shape_hat;
        let rate = (1.0 - rho) / globals.r_scale[k] + rho * rate_hat;
        globals.r_scale[k] = 1.0 / rate;
    }
    globals.validate()
}

/// Raw ascent directions for the gradient block.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// d objective / d ln(gamma0).
    pub d_log_gamma0: f64,
    /// Per-factor location gradients, K x d_l.
    pub d_locations: Vec<Vec<f64>>,
    pub d_encoder: MlpGrads,
    pub d_decoder: MlpGrads,
}

/// Analytic gradients of the objective with respect to the point-mass
/// parameters, matching central finite differences of [`elbo`] on the same
/// batch (table counts are part of the state and stay fixed).
pub fn compute_gradients(
    rows: &[&[(usize, u32)]],
    locals: &[&LocalState],
    globals: &GlobalState,
    hyper: &HyperParams,
    j_total: usize,
) -> Result<Gradients> {
    if rows.is_empty() || rows.len() != locals.len() {
        return Err(Error::config(format!(
            "gradient batch mismatch: {} rows, {} locals",
            rows.len(),
            locals.len()
        )));
    }
    let k_n = globals.k;
    let scale = j_total as f64 / rows.len() as f64;
    let exps = globals.expectations();

    // Rate-prior shape, in log space. The objective couples gamma0 to the
    // rate prior, its own prior, and the table-count block whose plug-in
    // L' = crt_mean_real(n', gamma0) is itself a function of gamma0.
    let g = globals.gamma0;
    let mut n_prime = vec![0.0; k_n];
    for local in locals {
        for k in 0..k_n {
            n_prime[k] += local.l_tilde[k];
        }
    }
    for v in &mut n_prime {
        *v *= scale;
    }
    let mut d_gamma0 = (hyper.e0 - 1.0) / g - hyper.f0;
    let ln_g = g.ln();
    for k in 0..k_n {
        let l_prime = crt_mean_real(n_prime[k], g);
        // d/dg of crt_mean_real(n', g) at fixed n'.
        let d_l_prime = if n_prime[k] > 0.0 {
            digamma(g + n_prime[k]) - digamma(g)
                + g * (trigamma(g + n_prime[k]) - trigamma(g))
        } else {
            0.0
        };
        d_gamma0 += hyper.alpha.ln() + exps.e_ln_r[k] - digamma(g + n_prime[k])
            + l_prime / g
            + ln_g * d_l_prime;
    }
    let d_log_gamma0 = g * d_gamma0;

    let mut d_locations = vec![vec![0.0; globals.d_l]; k_n];
    let mut d_encoder = MlpGrads::zeros_like(&globals.encoder);
    let mut d_decoder = MlpGrads::zeros_like(&globals.decoder);

    if globals.flags.kernel_enabled {
        let idx: Vec<usize> = (0..rows.len()).collect();
        let chunks: Vec<(MlpGrads, MlpGrads, Vec<Vec<f64>>)> = idx
            .par_chunks(PAR_CHUNK)
            .map(|chunk| -> Result<(MlpGrads, MlpGrads, Vec<Vec<f64>>)> {
                let mut enc_g = MlpGrads::zeros_like(&globals.encoder);
                let mut dec_g = MlpGrads::zeros_like(&globals.decoder);
                let mut loc_g = vec![vec![0.0; globals.d_l]; k_n];
                let mut input = vec![0.0; globals.d_h + globals.d_l];
                for &j in chunk {
                    let row = rows[j];
                    let local = locals[j];
                    let enc_cache = globals.encoder.forward_sparse(row)?;
                    let h = enc_cache.output().to_vec();
                    input[..globals.d_h].copy_from_slice(&h);
                    let mut dh = vec![0.0; globals.d_h];
                    for k in 0..k_n {
                        input[globals.d_h..].copy_from_slice(&globals.locations[k]);
                        let cache = globals.decoder.forward(&input)?;
                        let u = cache.output()[0];
                        let pihat = sigmoid(exps.e_logit_pi[k] + u);
                        let w = scale * (local.nu[k] - pihat);
                        let (grads, dinput) =
                            globals.decoder.backward_with_input(&cache, &[w, 0.0])?;
                        dec_g.add_scaled(&grads, 1.0);
                        for d in 0..globals.d_l {
                            loc_g[k][d] += dinput[globals.d_h + d];
                        }
                        for d in 0..globals.d_h {
                            dh[d] += dinput[d];
                        }
                    }
                    for d in 0..globals.d_h {
                        dh[d] -= scale * h[d] / hyper.a;
                    }
                    let grads = globals.encoder.backward(&enc_cache, &dh)?;
                    enc_g.add_scaled(&grads, 1.0);
                }
                Ok((enc_g, dec_g, loc_g))
            })
            .collect::<Result<Vec<_>>>()?;
        for (enc_g, dec_g, loc_g) in chunks {
            d_encoder.add_scaled(&enc_g, 1.0);
            d_decoder.add_scaled(&dec_g, 1.0);
            for k in 0..k_n {
                for d in 0..globals.d_l {
                    d_locations[k][d] += loc_g[k][d];
                }
            }
        }
        // Location prior (global, unscaled).
        for k in 0..k_n {
            for d in 0..globals.d_l {
                d_locations[k][d] -= globals.locations[k][d] / hyper.b;
            }
        }
    }

    Ok(Gradients { d_log_gamma0, d_locations, d_encoder, d_decoder })
}

/// Adam ascent on the rate-prior shape (log space) and, with the kernel
/// enabled, the factor locations and both networks. Also refreshes the
/// cached table-count totals.
pub fn update_global_gradient(
    rows: &[&[(usize, u32)]],
    locals: &[&LocalState],
    globals: &mut GlobalState,
    hyper: &HyperParams,
    j_total: usize,
) -> Result<()> {
    if globals.flags.freeze_gradients {
        return Ok(());
    }
    let grads = compute_gradients(rows, locals, globals, hyper, j_total)?;

    let scale = j_total as f64 / rows.len() as f64;
    for k in 0..globals.k {
        globals.crt_totals[k] =
            scale * locals.iter().map(|l| l.l_tilde[k]).sum::<f64>();
    }

    let cfg = globals.adam_cfg;
    let mut log_g = [globals.gamma0.ln()];
    adam_step_flat(&mut log_g, &[grads.d_log_gamma0], &mut globals.adam_gamma0, &cfg)?;
    globals.gamma0 = log_g[0].clamp(-23.0, 23.0).exp();

    if globals.flags.kernel_enabled {
        let mut flat_loc: Vec<f64> = globals.locations.iter().flatten().copied().collect();
        let flat_grad: Vec<f64> = grads.d_locations.iter().flatten().copied().collect();
        adam_step_flat(&mut flat_loc, &flat_grad, &mut globals.adam_loc, &cfg)?;
        for (k, chunk) in flat_loc.chunks(globals.d_l).enumerate() {
            globals.locations[k].copy_from_slice(chunk);
        }
        adam_step_mlp(&mut globals.encoder, &grads.d_encoder, &mut globals.adam_enc, &cfg)?;
        adam_step_mlp(&mut globals.decoder, &grads.d_decoder, &mut globals.adam_dec, &cfg)?;
    }
    globals.validate()
}

/// Evidence lower bound over a batch, with per-sample terms scaled by
/// `j_total / batch` so minibatch values estimate the full objective.
///
/// The value is exactly the functional every closed-form update maximizes
/// coordinatewise; a selector below 1 on a factor that carries token mass
/// lies outside the variational family and yields negative infinity.
pub fn elbo(
    rows: &[&[(usize, u32)]],
    locals: &[&LocalState],
    globals: &GlobalState,
    hyper: &HyperParams,
    j_total: usize,
) -> Result<f64> {
    if rows.is_empty() || rows.len() != locals.len() {
        return Err(Error::config(format!(
            "objective batch mismatch: {} rows, {} locals",
            rows.len(),
            locals.len()
        )));
    }
    let k_n = globals.k;
    let m_n = globals.m;
    let kf = k_n as f64;
    let scale = j_total as f64 / rows.len() as f64;
    let exps = globals.expectations();
    let kernel_on = globals.flags.kernel_enabled;
    let g = globals.gamma0;

    // Scaled per-factor table-count totals for the shape-prior block.
    let mut n_prime = vec![0.0; k_n];
    for local in locals.iter() {
        for k in 0..k_n {
            n_prime[k] += local.l_tilde[k];
        }
    }
    for v in &mut n_prime {
        *v *= scale;
    }

    let mut total = 0.0;

    // Rate-prior shape: its own prior.
    total += (hyper.e0 - 1.0) * g.ln() - hyper.f0 * g + hyper.e0 * hyper.f0.ln()
        - ln_gamma(hyper.e0);

    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    for k in 0..k_n {
        // Factor row prior + entropy.
        let mut phi_term = ln_gamma(m_n as f64 * hyper.eta0) - m_n as f64 * ln_gamma(hyper.eta0);
        for m in 0..m_n {
            phi_term += (hyper.eta0 - 1.0) * exps.e_ln_phi[k][m];
        }
        phi_term += dirichlet_entropy(&globals.eta[k]);

        // Selector-probability prior + entropy.
        let a_pr = hyper.alpha / kf;
        let b_pr = hyper.alpha * (1.0 - 1.0 / kf);
        let pi_term = -ln_beta(a_pr, b_pr)
            + (a_pr - 1.0) * exps.e_ln_pi[k]
            + (b_pr - 1.0) * exps.e_ln_1m_pi[k]
            + beta_entropy(globals.tau1[k], globals.tau2[k]);

        // Rate prior + entropy.
        let r_term = g * hyper.alpha.ln() - ln_gamma(g) + (g - 1.0) * exps.e_ln_r[k]
            - hyper.alpha * exps.e_r[k]
            + gamma_entropy(globals.r_shape[k], globals.r_scale[k]);

        // Table-count coupling to the rate-prior shape, with the plug-in
        // expected top-level table count, and the compensator aligning the
        // rate posterior's stationarity with its closed-form target.
        let l_prime = crt_mean_real(n_prime[k], g);
        let crt_term = l_prime * g.ln() + ln_gamma(g) - ln_gamma(g + n_prime[k]);
        let cmp_term = if n_prime[k] > 0.0 { -n_prime[k] * exps.e_r[k].ln() } else { 0.0 };

        total += phi_term + pi_term + r_term + crt_term + cmp_term;

        if kernel_on {
            let sq: f64 = globals.locations[k].iter().map(|v| v * v).sum();
            total += -sq / (2.0 * hyper.b)
                - 0.5 * globals.d_l as f64 * (ln_2pi + hyper.b.ln());
        }
    }

    // Per-sample terms.
    let mut local_total = 0.0;
    for (row, local) in rows.iter().zip(locals.iter()) {
        let s = local.assigned_mass(row, k_n);
        let n_j: f64 = row.iter().map(|&(_, c)| f64::from(c)).sum();

        // Family constraint: token-bearing factors must be switched on.
        for k in 0..k_n {
            if s[k] > ACTIVE_MASS_EPS && local.nu[k] < 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
        }

        let (h, shifts) = if kernel_on {
            let h = globals.encode(row)?;
            let shifts = globals.kernel_shifts(&h, None)?;
            (h, shifts)
        } else {
            (Vec::new(), vec![0.0; k_n])
        };

        let e_p = local.e_p();
        let (e_ln_p, e_ln_1m_p) = local.p_log_sides();

        let mut t = 0.0;
        // Token assignments and emissions.
        for k in 0..k_n {
            t += s[k] * (digamma(local.theta1[k]) + local.theta2[k].ln());
        }
        for (tok, &(m, c)) in row.iter().enumerate() {
            let c = f64::from(c);
            let mut inner = 0.0;
            for k in 0..k_n {
                let p = local.psi[tok][k];
                if p > 0.0 {
                    inner += p * (exps.e_ln_phi[k][m] - p.ln());
                }
            }
            t += c * inner;
        }
        // Intensity posterior against its conditional Gamma target.
        for k in 0..k_n {
            t -= kl_gamma(
                local.theta1[k],
                local.theta2[k],
                local.nu[k] * exps.e_r[k],
                e_p,
            );
        }
        // Count-probability statistics and prior.
        let nu_r: f64 = local.nu.iter().zip(&exps.e_r).map(|(&n, &r)| n * r).sum();
        t += n_j * (e_ln_p - e_p.ln()) + nu_r * e_ln_1m_p;
        t += (hyper.a0 - 1.0) * e_ln_p + (hyper.b0 - 1.0) * e_ln_1m_p
            - ln_beta(hyper.a0, hyper.b0)
            + beta_entropy(local.a_tilde, local.b_tilde);
        // Selector group with the kernel tilt.
        for k in 0..k_n {
            let nu = local.nu[k];
            t += nu * exps.e_ln_pi[k] + (1.0 - nu) * exps.e_ln_1m_pi[k] + bernoulli_entropy(nu);
            if kernel_on {
                let x0 = exps.e_logit_pi[k];
                let u = shifts[k];
                t += nu * (log_sigmoid(x0 + u) - log_sigmoid(x0))
                    + (1.0 - nu) * (log_sigmoid(-x0 - u) - log_sigmoid(-x0));
            }
        }
        // Table-count statistics.
        for k in 0..k_n {
            t += local.l_tilde[k] * exps.e_ln_r[k];
        }
        // Representation prior.
        if kernel_on {
            let sq: f64 = h.iter().map(|v| v * v).sum();
            t += -sq / (2.0 * hyper.a) - 0.5 * globals.d_h as f64 * (ln_2pi + hyper.a.ln());
        }
        local_total += t;
    }
    total += scale * local_total;

    if total.is_nan() {
        return Err(Error::numerical("objective evaluated to NaN"));
    }
    Ok(total)
}

/// Local inference for every sample of a corpus under frozen globals.
pub fn transform(
    corpus: &CountMatrix,
    globals: &GlobalState,
    hyper: &HyperParams,
    iters: usize,
    tol: f64,
) -> Result<Vec<LocalState>> {
    let exps = globals.expectations();
    let idx: Vec<usize> = (0..corpus.n_samples()).collect();
    let chunks: Vec<Vec<LocalState>> = idx
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&j| {
                    update_local(j, corpus.row(j), globals, &exps, hyper, iters, tol, None, None)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Word-level predictive perplexity of target counts given observed
/// counts: locals are inferred from the observed rows under frozen
/// globals, the per-word predictive is the intensity-weighted mixture of
/// mean factor rows, and the result is exp(-mean log-likelihood).
/// Also returns per-sample summed log-likelihoods.
pub(crate) fn perplexity_core(
    observed: &CountMatrix,
    target: &CountMatrix,
    globals: &GlobalState,
    hyper: &HyperParams,
    iters: usize,
    tol: f64,
) -> Result<(f64, Vec<f64>)> {
    if observed.n_samples() != target.n_samples() {
        return Err(Error::config(format!(
            "observed/target sample counts differ: {} vs {}",
            observed.n_samples(),
            target.n_samples()
        )));
    }
    let locals = transform(observed, globals, hyper, iters, tol)?;
    let phi = globals.phi_mean();
    let mut total_ll = 0.0;
    let mut total_tokens = 0.0;
    let mut per_sample = Vec::with_capacity(target.n_samples());
    for (j, local) in locals.iter().enumerate() {
        let theta = local.theta_mean();
        let theta_sum: f64 = theta.iter().sum();
        let mut ll_j = 0.0;
        for &(m, c) in target.row(j) {
            let mut p = 0.0;
            for k in 0..globals.k {
                p += theta[k] * phi[k][m];
            }
            let p = p / theta_sum;
            if !(p > 0.0) {
                return Err(Error::numerical(format!(
                    "predictive probability vanished for sample {j}, feature {m}"
                )));
            }
            ll_j += f64::from(c) * p.ln();
            total_tokens += f64::from(c);
        }
        total_ll += ll_j;
        per_sample.push(ll_j);
    }
    if total_tokens == 0.0 {
        return Err(Error::data("perplexity needs a nonempty target set"));
    }
    Ok(((-total_ll / total_tokens).exp(), per_sample))
}

/// One row of the per-epoch fitting trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub elbo: f64,
    /// Validation perplexity; NaN when fitting without a validation split.
    pub val_perplexity: f64,
}

/// Everything `fit` produces.
#[derive(Debug)]
pub struct FitOutcome {
    pub globals: GlobalState,
    /// Final local states for the training samples.
    pub locals: Vec<LocalState>,
    /// The samples actually trained on (the full corpus unless a
    /// validation split was carved off).
    pub train: CountMatrix,
    /// Validation split, when one was used.
    pub validation: Option<HeldoutSplit>,
    pub trace: Vec<TraceRow>,
    /// Wall-clock seconds per epoch (kept apart from the trace so trace
    /// files stay byte-reproducible).
    pub wall: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Fraction of each validation sample's tokens scored as targets.
const VAL_WORD_FRACTION: f64 = 0.5;

/// The validation split [`fit`] carves out of `corpus` for a given run
/// seed. Exposed so downstream evaluation can rebuild the exact split a
/// finished run was scored on.
pub fn fit_validation_split(corpus: &CountMatrix, seed: u64) -> Result<HeldoutSplit> {
    let split_seed = RngPool::new(seed).stream("fit/validation-split").random::<u64>();
    split_heldout(corpus, VAL_WORD_FRACTION, split_seed)
}

/// Fit the model: seeded initialization, minibatch epochs of local then
/// global updates, per-epoch objective/validation tracing, early stopping
/// once validation perplexity stalls for `schedule.patience` epochs.
pub fn fit(
    corpus: &CountMatrix,
    hyper: &HyperParams,
    schedule: &Schedule,
    flags: ModelFlags,
    seed: u64,
) -> Result<FitOutcome> {
    hyper.validate()?;
    schedule.validate_config()?;
    if corpus.n_samples() == 0 || corpus.n_features() == 0 {
        return Err(Error::data("cannot fit an empty corpus"));
    }
    let pool = RngPool::new(seed);

    let (train, validation) = if schedule.validate && corpus.n_samples() >= 5 {
        let split = fit_validation_split(corpus, seed)?;
        (split.train.clone(), Some(split))
    } else {
        (corpus.clone(), None)
    };
    let j_train = train.n_samples();

    let mut globals = GlobalState::init(hyper, corpus.n_features(), flags, seed)?;
    let mut locals: Vec<Option<LocalState>> = vec![None; j_train];

    let batch = if schedule.batch_size == 0 || schedule.batch_size >= j_train {
        j_train
    } else {
        schedule.batch_size
    };

    let mut trace = Vec::new();
    let mut wall = Vec::new();
    let mut step = 0u64;
    let mut best_pp = f64::INFINITY;
    let mut stall = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0usize;

    for epoch in 0..schedule.max_epochs {
        let started = Instant::now();
        let mut order_rng = pool.stream_indexed("fit/shuffle", epoch as u64);
        let order = shuffled_indices(j_train, &mut order_rng);

        for chunk in order.chunks(batch) {
            step += 1;
            let rho = if chunk.len() == j_train {
                1.0
            } else {
                (step as f64 + schedule.tau0).powf(-schedule.kappa)
            };
            let exps = globals.expectations();
            let noisy = flags.kernel_sample && flags.kernel_enabled;
            let updated: Vec<LocalState> = chunk
                .par_chunks(PAR_CHUNK)
                .map(|part| {
                    part.iter()
                        .map(|&j| {
                            let noise: Option<Vec<f64>> = if noisy {
                                let mut rng = pool.stream_indexed(
                                    "fit/kernel-noise",
                                    (epoch * j_train + j) as u64,
                                );
                                Some(
                                    (0..globals.k)
                                        .map(|_| StandardNormal.sample(&mut rng))
                                        .collect(),
                                )
                            } else {
                                None
                            };
                            update_local(
                                j,
                                train.row(j),
                                &globals,
                                &exps,
                                hyper,
                                schedule.local_iters,
                                schedule.local_tol,
                                locals[j].as_ref(),
                                noise.as_deref(),
                            )
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();

            let batch_rows: Vec<&[(usize, u32)]> = chunk.iter().map(|&j| train.row(j)).collect();
            let batch_locals: Vec<&LocalState> = updated.iter().collect();
            update_global_closed(&batch_rows, &batch_locals, &mut globals, hyper, rho, j_train)?;
            update_global_gradient(&batch_rows, &batch_locals, &mut globals, hyper, j_train)?;
            for (&j, state) in chunk.iter().zip(updated) {
                locals[j] = Some(state);
            }
        }

        let all_rows: Vec<&[(usize, u32)]> = (0..j_train).map(|j| train.row(j)).collect();
        let all_locals: Vec<&LocalState> = locals
            .iter()
            .map(|l| l.as_ref().expect("every sample visited this epoch"))
            .collect();
        let objective = elbo(&all_rows, &all_locals, &globals, hyper, j_train)?;

        let val_pp = match &validation {
            Some(split) => {
                let (pp, _) = perplexity_core(
                    &split.test_observed,
                    &split.test_target,
                    &globals,
                    hyper,
                    schedule.local_iters,
                    schedule.local_tol,
                )?;
                pp
            }
            None => f64::NAN,
        };
        trace.push(TraceRow { epoch, elbo: objective, val_perplexity: val_pp });
        wall.push(started.elapsed().as_secs_f64());
        epochs_run = epoch + 1;

        if validation.is_some() {
            if best_pp - val_pp < schedule.tol {
                stall += 1;
            } else {
                stall = 0;
            }
            if val_pp < best_pp {
                best_pp = val_pp;
            }
            if stall >= schedule.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(FitOutcome {
        globals,
        locals: locals.into_iter().map(|l| l.expect("trained")).collect(),
        train,
        validation,
        trace,
        wall,
        epochs_run,
        stopped_early,
    })
}

// --- Checkpointing ---

/// Sidecar metadata stored with the binary blocks of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub hyper: HyperParams,
    pub schedule: Schedule,
    pub flags: ModelFlags,
    pub seed: u64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub k: usize,
    pub m: usize,
    pub d_h: usize,
    pub d_l: usize,
    pub adam_cfg: AdamConfig,
    pub adam_steps: [u64; 4],
}

/// Write a checkpoint directory: `manifest.json` plus one little-endian
/// f64 array per state block (including Adam moments).
pub fn save_checkpoint(
    dir: &Path,
    globals: &GlobalState,
    hyper: &HyperParams,
    schedule: &Schedule,
    seed: u64,
    epochs_run: usize,
    stopped_early: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::data(format!("create checkpoint dir {}: {e}", dir.display())))?;
    let manifest = CheckpointManifest {
        hyper: hyper.clone(),
        schedule: schedule.clone(),
        flags: globals.flags,
        seed,
        epochs_run,
        stopped_early,
        k: globals.k,
        m: globals.m,
        d_h: globals.d_h,
        d_l: globals.d_l,
        adam_cfg: globals.adam_cfg,
        adam_steps: [
            globals.adam_loc.step,
            globals.adam_gamma0.step,
            globals.adam_enc.step,
            globals.adam_dec.step,
        ],
    };
    store::write_json(&dir.join("manifest.json"), &manifest)?;
    let flat = |vv: &Vec<Vec<f64>>| -> Vec<f64> { vv.iter().flatten().copied().collect() };
    let blocks: [(&str, Vec<f64>); 9] = [
        ("eta.bin", flat(&globals.eta)),
        ("tau1.bin", globals.tau1.clone()),
        ("tau2.bin", globals.tau2.clone()),
        ("r_shape.bin", globals.r_shape.clone()),
        ("r_scale.bin", globals.r_scale.clone()),
        ("gamma0.bin", vec![globals.gamma0]),
        ("locations.bin", flat(&globals.locations)),
        ("encoder.bin", globals.encoder.to_flat()),
        ("decoder.bin", globals.decoder.to_flat()),
    ];
    for (name, data) in blocks {
        store::write_array(&dir.join(name), &data)?;
    }
    for (name, st) in [
        ("adam_loc", &globals.adam_loc),
        ("adam_gamma0", &globals.adam_gamma0),
        ("adam_enc", &globals.adam_enc),
        ("adam_dec", &globals.adam_dec),
    ] {
        store::write_array(&dir.join(format!("{name}_m.bin")), &st.m)?;
        store::write_array(&dir.join(format!("{name}_v.bin")), &st.v)?;
    }
    store::write_array(&dir.join("crt_totals.bin"), &globals.crt_totals)?;
    Ok(())
}

/// Load a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(GlobalState, CheckpointManifest)> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::data(format!(
            "checkpoint manifest not found: {}",
            manifest_path.display()
        )));
    }
    let manifest: CheckpointManifest = store::read_json(&manifest_path)?;
    let k = manifest.k;
    let m = manifest.m;
    let read = |name: &str, len: usize| store::read_array(&dir.join(name), len);
    let unflat = |v: Vec<f64>, cols: usize| -> Vec<Vec<f64>> {
        v.chunks(cols).map(|c| c.to_vec()).collect()
    };
    let enc_spec = MlpSpec::new(manifest.hyper.encoder_widths(m), manifest.hyper.activation)?;
    let dec_spec = MlpSpec::new(manifest.hyper.decoder_widths(), manifest.hyper.activation)?;
    let encoder = Mlp::from_flat(enc_spec.clone(), &read("encoder.bin", enc_spec.param_count())?)?;
    let decoder = Mlp::from_flat(dec_spec.clone(), &read("decoder.bin", dec_spec.param_count())?)?;
    let gamma0 = read("gamma0.bin", 1)?[0];
    let adam = |name: &str, len: usize, step: u64| -> Result<AdamState> {
        Ok(AdamState {
            step,
            m: read(&format!("{name}_m.bin"), len)?,
            v: read(&format!("{name}_v.bin"), len)?,
        })
    };
    let globals = GlobalState {
        k,
        m,
        d_h: manifest.d_h,
        d_l: manifest.d_l,
        eta: unflat(read("eta.bin", k * m)?, m),
        tau1: read("tau1.bin", k)?,
        tau2: read("tau2.bin", k)?,
        r_shape: read("r_shape.bin", k)?,
        r_scale: read("r_scale.bin", k)?,
        gamma0,
        locations: unflat(read("locations.bin", k * manifest.d_l)?, manifest.d_l),
        adam_loc: adam("adam_loc", k * manifest.d_l, manifest.adam_steps[0])?,
        adam_gamma0: adam("adam_gamma0", 1, manifest.adam_steps[1])?,
        adam_enc: adam("adam_enc", enc_spec.param_count(), manifest.adam_steps[2])?,
        adam_dec: adam("adam_dec", dec_spec.param_count(), manifest.adam_steps[3])?,
        encoder,
        decoder,
        crt_totals: read("crt_totals.bin", k)?,
        adam_cfg: manifest.adam_cfg,
        flags: manifest.flags,
    };
    globals.validate()?;
    Ok((globals, manifest))
}
