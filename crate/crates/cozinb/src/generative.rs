//! Ancestral sampling from the correlated zero-inflated negative-binomial
//! process: priors over factor weights, selector probabilities, and rates;
//! an optional fixed decoder inducing correlated selectors; Gamma-Poisson
//! token emission. Used for synthetic benchmarks, planted-factor recovery
//! fixtures, and posterior-predictive simulation.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CountMatrix, Vocab};
use crate::dist::{
    bernoulli_draw, beta_draw, categorical_draw, dirichlet_draw, gamma_draw, poisson_draw,
    BetaParams, GammaParams,
};
use crate::error::{Error, Result};
use crate::kernel::{kernel_forward, Activation, Mlp, MlpSpec};
use crate::rng::RngPool;
use crate::special::{log_sigmoid, sigmoid};
use crate::store;

/// Model hyperparameters. `j` and `m` size synthetic corpora; fitting
/// reads the corpus dimensions instead and ignores them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Prior variance of the per-sample representation h.
    pub a: f64,
    /// Prior variance of the per-factor location l.
    pub b: f64,
    /// Concentration shared by the selector Beta prior and the rate prior.
    pub alpha: f64,
    /// Symmetric Dirichlet parameter for factor rows.
    pub eta0: f64,
    pub a0: f64,
    pub b0: f64,
    pub e0: f64,
    pub f0: f64,
    /// Truncation level (number of factors carried by inference).
    pub k: usize,
    pub d_h: usize,
    pub d_l: usize,
    pub j: usize,
    pub m: usize,
    /// Hidden widths of the amortizing encoder x -> h.
    pub enc_hidden: Vec<usize>,
    /// Hidden widths of the kernel decoder (h, l) -> (u, log sigma).
    pub dec_hidden: Vec<usize>,
    /// Activation shared by both networks.
    pub activation: Activation,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            a: 1.0,
            b: 1.0,
            alpha: 1.0,
            eta0: 0.2,
            a0: 0.001,
            b0: 0.001,
            e0: 0.001,
            f0: 0.001,
            k: 100,
            d_h: 20,
            d_l: 20,
            j: 0,
            m: 0,
            enc_hidden: vec![1000, 1000, 1000],
            dec_hidden: vec![80, 80, 80],
            activation: Activation::Tanh,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("a", self.a),
            ("b", self.b),
            ("alpha", self.alpha),
            ("eta0", self.eta0),
            ("a0", self.a0),
            ("b0", self.b0),
            ("e0", self.e0),
            ("f0", self.f0),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "hyperparameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.k == 0 {
            return Err(Error::config("truncation level k must be >= 1"));
        }
        if self.d_h == 0 || self.d_l == 0 {
            return Err(Error::config("latent dims d_h and d_l must be >= 1"));
        }
        if self.enc_hidden.iter().any(|&w| w == 0) || self.dec_hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("network hidden widths must be >= 1"));
        }
        Ok(())
    }

    /// Encoder layer widths for a corpus with `m` features.
    pub fn encoder_widths(&self, m: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.enc_hidden.len() + 2);
        w.push(m);
        w.extend_from_slice(&self.enc_hidden);
        w.push(self.d_h);
        w
    }

    /// Decoder layer widths: input is concat(h, l), output two heads
    /// (kernel mean, kernel log-std).
    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.dec_hidden.len() + 2);
        w.push(self.d_h + self.d_l);
        w.extend_from_slice(&self.dec_hidden);
        w.push(2);
        w
    }
}

/// Planted-factor synthesis: block-structured factor rows over the
/// vocabulary, a fixed count of live factors, and deterministic scalar
/// parameters so recovery benchmarks are well-posed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    /// Number of live factors K*; factors `k >= k_star` stay switched off.
    pub k_star: usize,
    /// Target mean tokens per sample; sets the shared rate r unless
    /// `r` is given explicitly.
    pub target_mean_tml: f64,
    /// Explicit shared rate, overriding the target-driven choice.
    pub r: Option<f64>,
    /// Per-(sample, factor) activation probability for live factors.
    /// 0 and 1 are honored exactly (selectors forced off/on).
    pub activate_prob: f64,
    /// Shared count-probability p for every sample.
    pub p: f64,
}

impl Planted {
    pub fn new(k_star: usize, target_mean_tml: f64) -> Self {
        Planted { k_star, target_mean_tml, r: None, activate_prob: 0.5, p: 0.5 }
    }

    /// Shared rate hitting the target mean token load:
    /// E[N_j] = activate_prob * k_star * r * p / (1 - p).
    fn rate(&self) -> f64 {
        if let Some(r) = self.r {
            return r;
        }
        let denom = self.activate_prob * self.k_star as f64 * self.p / (1.0 - self.p);
        if denom > 0.0 {
            self.target_mean_tml / denom
        } else {
            1.0
        }
    }

    fn validate(&self, hyper: &HyperParams) -> Result<()> {
        if self.k_star == 0 || self.k_star > hyper.k {
            return Err(Error::config(format!(
                "planted k_star = {} must lie in 1..=k ({})",
                self.k_star, hyper.k
            )));
        }
        if !(0.0..=1.0).contains(&self.activate_prob) {
            return Err(Error::config("planted activate_prob must lie in [0, 1]"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::config("planted p must lie in (0, 1)"));
        }
        if !(self.rate() > 0.0 && self.rate().is_finite()) {
            return Err(Error::config("planted rate must be positive and finite"));
        }
        Ok(())
    }
}

/// Fixed decoder (and optionally fixed factor locations) used to induce
/// correlated selectors during synthesis.
#[derive(Debug, Clone)]
pub struct KernelOverride {
    pub decoder: Mlp,
    pub locations: Option<Vec<Vec<f64>>>,
}

/// Hand-built decoder whose kernel head approximates `gain * h[0] * l[0]`.
///
/// Four tanh units form the mixed second difference
/// t(a+b+c) - t(a-b+c) - t(a+b-c) + t(a-b-c) with a = eps*h0, b = eps*l0
/// and bias offset c, which equals F(a+b) - F(a-b) for the even, strictly
/// unimodal bump F(y) = tanh(y+c) - tanh(y-c). That difference carries the
/// exact sign of h0*l0 and expands to -8 eps^2 tanh(c) sech^2(c) h0 l0 for
/// small arguments, so the linear output layer rescales it to the target
/// product. Factor pairs with same-sign (opposite-sign) first location
/// coordinates therefore co-activate (exclude each other) across samples.
/// The scale head is pinned far negative so sampled kernel noise stays
/// negligible.
pub fn product_decoder(d_h: usize, d_l: usize, gain: f64) -> Result<Mlp> {
    if d_h == 0 || d_l == 0 {
        return Err(Error::config("product_decoder needs d_h >= 1 and d_l >= 1"));
    }
    if !(gain.is_finite() && gain != 0.0) {
        return Err(Error::config("product_decoder gain must be finite and nonzero"));
    }
    const EPS: f64 = 0.05;
    const C: f64 = 0.5;
    let inp = d_h + d_l;
    let spec = MlpSpec::new(vec![inp, 4, 2], Activation::Tanh)?;
    let mut flat = vec![0.0; spec.param_count()];
    // Hidden rows: eps*(h0 + s_i*l0) + o_i*C for sign patterns
    // (s, o) = (+,+), (-,+), (+,-), (-,-).
    for (i, (s, o)) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)]
        .into_iter()
        .enumerate()
    {
        flat[i * inp] = EPS;
        flat[i * inp + d_h] = s * EPS;
        flat[4 * inp + i] = o * C;
    }
    let out = 4 * inp + 4;
    let g = -gain / (8.0 * EPS * EPS * C.tanh() * (1.0 - C.tanh() * C.tanh()));
    for (i, sign) in [1.0, -1.0, -1.0, 1.0].into_iter().enumerate() {
        flat[out + i] = sign * g;
    }
    flat[out + 8 + 1] = -20.0;
    Mlp::from_flat(spec, &flat)
}

/// Full synthesis configuration.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub hyper: HyperParams,
    pub seed: u64,
    pub planted: Option<Planted>,
    pub kernel: Option<KernelOverride>,
}

impl SynthConfig {
    pub fn new(hyper: HyperParams, seed: u64) -> Self {
        SynthConfig { hyper, seed, planted: None, kernel: None }
    }
}

/// Everything the sampler drew, for scoring recovery later.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub gamma0: f64,
    /// K x M factor rows, each on the simplex.
    pub phi: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub pi: Vec<f64>,
    pub p: Vec<f64>,
    /// J x K selectors.
    pub b: Vec<Vec<bool>>,
    /// J x K factor rates; exactly 0 wherever the selector is off.
    pub theta: Vec<Vec<f64>>,
    /// K x d_l factor locations.
    pub locations: Vec<Vec<f64>>,
    /// J x d_h sample representations.
    pub h: Vec<Vec<f64>>,
}

/// sigma(logit(pi) + f), computed in log space so large |f| cannot
/// overflow; f = 0 returns pi exactly.
pub fn sigma_inv_shift(pi: f64, f: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::numerical(format!(
            "sigma_inv_shift domain: pi = {pi} not in (0, 1)"
        )));
    }
    if f == 0.0 {
        return Ok(pi);
    }
    // logit(pi) + f, then sigma via log_sigmoid to keep saturation exact.
    let x = pi.ln() - (-pi).ln_1p() + f;
    Ok(log_sigmoid(x).exp())
}

fn normal_vec(dim: usize, variance: f64, rng: &mut impl Rng) -> Vec<f64> {
    let sd = variance.sqrt();
    (0..dim).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * sd).collect()
}

/// Block-structured factor rows: factor k owns an equal contiguous slice
/// of the vocabulary (the last block absorbs the remainder) with uniform
/// in-block mass plus 1e-3 background everywhere, renormalized.
pub fn planted_phi(k_star: usize, m: usize) -> Vec<Vec<f64>> {
    const BACKGROUND: f64 = 1e-3;
    let block = (m / k_star).max(1);
    (0..k_star)
        .map(|k| {
            let lo = (k * block).min(m);
            let hi = if k + 1 == k_star { m } else { ((k + 1) * block).min(m) };
            let mut row = vec![BACKGROUND; m];
            for v in row.iter_mut().take(hi).skip(lo) {
                *v += 1.0;
            }
            let total: f64 = row.iter().sum();
            for v in &mut row {
                *v /= total;
            }
            row
        })
        .collect()
}

/// Exact ancestral draw of a corpus plus the latent state that produced
/// it. Deterministic per seed regardless of worker count: every sample
/// consumes its own derived stream.
pub fn sample_corpus(cfg: &SynthConfig) -> Result<(CountMatrix, Vocab, GroundTruth)> {
    let hp = &cfg.hyper;
    hp.validate()?;
    if hp.j == 0 || hp.m == 0 {
        return Err(Error::config(format!(
            "synthesis needs j >= 1 and m >= 1 in the hyperparameters, got j = {}, m = {}",
            hp.j, hp.m
        )));
    }
    if let Some(p) = &cfg.planted {
        p.validate(hp)?;
    }
    if let Some(ko) = &cfg.kernel {
        if ko.decoder.spec().input_dim() != hp.d_h + hp.d_l || ko.decoder.spec().heads() != 2 {
            return Err(Error::config(format!(
                "kernel override decoder must map d_h + d_l = {} inputs to 2 heads",
                hp.d_h + hp.d_l
            )));
        }
        if let Some(locs) = &ko.locations {
            if locs.len() != hp.k || locs.iter().any(|l| l.len() != hp.d_l) {
                return Err(Error::config(format!(
                    "kernel override locations must be k x d_l = {} x {}",
                    hp.k, hp.d_l
                )));
            }
        }
    }
    let pool = RngPool::new(cfg.seed);
    let mut grng = pool.stream("synth/globals");
    let (k, m, j) = (hp.k, hp.m, hp.j);

    // Globals: concentration, rates, selector probabilities, factor rows,
    // factor locations.
    let (gamma0, r, pi, phi) = match &cfg.planted {
        None => {
            let gamma0 = gamma_draw(GammaParams::new(hp.e0, 1.0 / hp.f0)?, &mut grng);
            let r: Vec<f64> = (0..k)
                .map(|_| {
                    // Guard the degenerate shape -> 0 draw region.
                    let shape = gamma0.max(1e-12);
                    gamma_draw(
                        GammaParams::new(shape, 1.0 / hp.alpha).expect("validated hyper"),
                        &mut grng,
                    )
                    .max(1e-12)
                })
                .collect();
            let bp = BetaParams::new(hp.alpha / k as f64, hp.alpha * (1.0 - 1.0 / k as f64))?;
            let pi: Vec<f64> =
                (0..k).map(|_| beta_draw(bp, &mut grng).clamp(1e-12, 1.0 - 1e-12)).collect();
            let alphas = vec![hp.eta0; m];
            let phi: Result<Vec<Vec<f64>>> =
                (0..k).map(|_| dirichlet_draw(&alphas, &mut grng)).collect();
            (gamma0, r, pi, phi?)
        }
        Some(planted) => {
            let rate = planted.rate();
            let r = vec![rate; k];
            let mut pi = vec![1e-9; k];
            for v in pi.iter_mut().take(planted.k_star) {
                *v = planted.activate_prob;
            }
            let mut phi = planted_phi(planted.k_star, m);
            // Dead factors still need simplex rows; keep them uniform.
            phi.extend((planted.k_star..k).map(|_| vec![1.0 / m as f64; m]));
            (1.0, r, pi, phi)
        }
    };
    let locations: Vec<Vec<f64>> = match cfg.kernel.as_ref().and_then(|ko| ko.locations.clone()) {
        Some(locs) => locs,
        None => (0..k).map(|_| normal_vec(hp.d_l, hp.b, &mut grng)).collect(),
    };

    // Per-sample ancestral chain, parallel over samples with derived
    // streams; results collected in sample order.
    struct SampleDraw {
        p: f64,
        h: Vec<f64>,
        b: Vec<bool>,
        theta: Vec<f64>,
        row: Vec<(usize, u32)>,
    }
    let planted = cfg.planted.as_ref();
    let kernel = cfg.kernel.as_ref();
    let draws: Result<Vec<SampleDraw>> = (0..j)
        .into_par_iter()
        .map(|jj| -> Result<SampleDraw> {
            let mut rng = pool.stream_indexed("synth/sample", jj as u64);
            let p_j = match planted {
                Some(pl) => pl.p,
                None => beta_draw(
                    BetaParams::new(hp.a0, hp.b0).expect("validated hyper"),
                    &mut rng,
                )
                .clamp(1e-9, 1.0 - 1e-9),
            };
            let h = normal_vec(hp.d_h, hp.a, &mut rng);
            let scale = p_j / (1.0 - p_j);
            let mut b = Vec::with_capacity(k);
            let mut theta = Vec::with_capacity(k);
            let mut dense = vec![0u32; m];
            for kk in 0..k {
                let f = match kernel {
                    Some(ko) => kernel_forward(&ko.decoder, &h, &locations[kk])?.0.mean,
                    None => 0.0,
                };
                let pi_k = pi[kk];
                let prob = if pi_k <= 0.0 {
                    0.0
                } else if pi_k >= 1.0 {
                    1.0
                } else {
                    sigma_inv_shift(pi_k, f)?
                };
                let b_jk = match planted {
                    // Honor exact 0/1 probabilities from planted configs.
                    Some(pl) if pl.activate_prob == 0.0 && kk < pl.k_star => false,
                    Some(pl) if pl.activate_prob == 1.0 && kk < pl.k_star && f == 0.0 => true,
                    _ => bernoulli_draw(prob, &mut rng),
                };
                b.push(b_jk);
                let th = if b_jk {
                    gamma_draw(
                        GammaParams::new(r[kk].max(1e-12), scale)
                            .map_err(|e| Error::numerical(format!("theta draw: {e}")))?,
                        &mut rng,
                    )
                } else {
                    0.0
                };
                theta.push(th);
                if th > 0.0 {
                    let n_jk = poisson_draw(th, &mut rng)?;
                    for _ in 0..n_jk {
                        let feat = categorical_draw(&phi[kk], &mut rng)?;
                        dense[feat] += 1;
                    }
                }
            }
            let row: Vec<(usize, u32)> =
                dense.iter().enumerate().filter(|&(_, &c)| c > 0).map(|(i, &c)| (i, c)).collect();
            Ok(SampleDraw { p: p_j, h, b, theta, row })
        })
        .collect();
    let draws = draws?;

    let sample_ids: Vec<String> = (1..=j).map(|i| format!("s{i}")).collect();
    let rows: Vec<Vec<(usize, u32)>> = draws.iter().map(|d| d.row.clone()).collect();
    let matrix = CountMatrix::new(m, rows, sample_ids)?;
    let vocab = Vocab::synthetic(m, "f");
    let truth = GroundTruth {
        gamma0,
        phi,
        r,
        pi,
        p: draws.iter().map(|d| d.p).collect(),
        b: draws.iter().map(|d| d.b.clone()).collect(),
        theta: draws.iter().map(|d| d.theta.clone()).collect(),
        locations,
        h: draws.iter().map(|d| d.h.clone()).collect(),
    };
    Ok((matrix, vocab, truth))
}

#[derive(Serialize, Deserialize)]
struct TruthManifest {
    j: usize,
    m: usize,
    k: usize,
    d_l: usize,
    d_h: usize,
    gamma0: f64,
}

impl GroundTruth {
    fn dims(&self) -> (usize, usize, usize, usize, usize) {
        let j = self.p.len();
        let k = self.r.len();
        let m = self.phi.first().map_or(0, Vec::len);
        let d_l = self.locations.first().map_or(0, Vec::len);
        let d_h = self.h.first().map_or(0, Vec::len);
        (j, m, k, d_l, d_h)
    }

    /// Serialize into `dir` as a JSON manifest plus raw f64 arrays.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (j, m, k, d_l, d_h) = self.dims();
        store::write_json(
            &dir.join("truth.json"),
            &TruthManifest { j, m, k, d_l, d_h, gamma0: self.gamma0 },
        )?;
        let flat = |vv: &[Vec<f64>]| -> Vec<f64> { vv.iter().flatten().copied().collect() };
        store::write_array(&dir.join("phi.bin"), &flat(&self.phi))?;
        store::write_array(&dir.join("r.bin"), &self.r)?;
        store::write_array(&dir.join("pi.bin"), &self.pi)?;
        store::write_array(&dir.join("p.bin"), &self.p)?;
        let b_flat: Vec<f64> =
            self.b.iter().flatten().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        store::write_array(&dir.join("b.bin"), &b_flat)?;
        store::write_array(&dir.join("theta.bin"), &flat(&self.theta))?;
        store::write_array(&dir.join("locations.bin"), &flat(&self.locations))?;
        store::write_array(&dir.join("h.bin"), &flat(&self.h))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let man: TruthManifest = store::read_json(&dir.join("truth.json"))?;
        let unflat = |v: Vec<f64>, cols: usize| -> Vec<Vec<f64>> {
            if cols == 0 {
                return Vec::new();
            }
            v.chunks(cols).map(<[f64]>::to_vec).collect()
        };
        let phi = unflat(store::read_array(&dir.join("phi.bin"), man.k * man.m)?, man.m);
        let r = store::read_array(&dir.join("r.bin"), man.k)?;
        let pi = store::read_array(&dir.join("pi.bin"), man.k)?;
        let p = store::read_array(&dir.join("p.bin"), man.j)?;
        let b_flat = store::read_array(&dir.join("b.bin"), man.j * man.k)?;
        let b = b_flat
            .chunks(man.k)
            .map(|row| row.iter().map(|&x| x != 0.0).collect())
            .collect();
        let theta = unflat(store::read_array(&dir.join("theta.bin"), man.j * man.k)?, man.k);
        let locations =
            unflat(store::read_array(&dir.join("locations.bin"), man.k * man.d_l)?, man.d_l);
        let h = unflat(store::read_array(&dir.join("h.bin"), man.j * man.d_h)?, man.d_h);
        Ok(GroundTruth { gamma0: man.gamma0, phi, r, pi, p, b, theta, locations, h })
    }
}

/// The saturating-shift probability used when selectors respond to the
/// kernel; exported for reuse by inference (expected-logit version).
pub fn shifted_probability(logit_pi: f64, f: f64) -> f64 {
    sigmoid(logit_pi + f)
}

/// Simulate one sample's counts from a fitted state: per-factor token
/// totals are Poisson at the posterior mean intensity and features are
/// drawn from the posterior mean factor rows. Returns a sparse row.
pub fn posterior_predictive(
    globals: &crate::inference::GlobalState,
    locals: &[crate::inference::LocalState],
    j: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, u32)>> {
    let local = locals.get(j).ok_or_else(|| {
        Error::config(format!(
            "unknown sample id {j}: only {} fitted local states",
            locals.len()
        ))
    })?;
    let phi = globals.phi_mean();
    let theta = local.theta_mean();
    let mut dense = vec![0u32; globals.m];
    for k in 0..globals.k {
        let n = poisson_draw(theta[k], rng)?;
        for _ in 0..n {
            let m = categorical_draw(&phi[k], rng)?;
            dense[m] += 1;
        }
    }
    Ok(dense
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Activation, MlpSpec};
    use approx::assert_relative_eq;

    fn tiny_hyper(j: usize, m: usize, k: usize) -> HyperParams {
        HyperParams { j, m, k, d_h: 3, d_l: 3, ..HyperParams::default() }
    }

    #[test]
    fn sigma_inv_shift_identities() {
        for &pi in &[0.1, 0.5, 0.73, 0.999] {
            assert_eq!(sigma_inv_shift(pi, 0.0).unwrap(), pi);
        }
        assert_relative_eq!(
            sigma_inv_shift(0.5, 3.0f64.ln()).unwrap(),
            0.75,
            epsilon = 1e-14
        );
        let hi = sigma_inv_shift(0.5, 50.0).unwrap();
        assert!(hi >= 1.0 - 1e-20 && hi <= 1.0 && hi.is_finite());
        let lo = sigma_inv_shift(0.5, -745.0).unwrap();
        assert!(lo >= 0.0 && lo < 1e-300);
        assert!(sigma_inv_shift(0.0, 1.0).is_err());
        assert!(sigma_inv_shift(1.0, 1.0).is_err());
    }

    #[test]
    fn all_selectors_off_gives_empty_corpus() {
        let mut cfg = SynthConfig::new(tiny_hyper(30, 8, 4), 5);
        cfg.planted = Some(Planted { activate_prob: 0.0, ..Planted::new(4, 10.0) });
        let (matrix, _, truth) = sample_corpus(&cfg).unwrap();
        assert!(matrix.totals().iter().all(|&n| n == 0));
        assert!(truth.b.iter().flatten().all(|&b| !b));
        assert!(truth.theta.iter().flatten().all(|&t| t == 0.0));
    }

    #[test]
    fn nb_moment_from_gamma_poisson_chain() {
        // One always-on factor, r = 2, p = 0.5: each sample's token count
        // is NB(2, 0.5) with mean r p/(1-p) = 2 and variance r p/(1-p)^2 = 4.
        let mut cfg = SynthConfig::new(tiny_hyper(100_000, 5, 1), 11);
        cfg.planted = Some(Planted {
            r: Some(2.0),
            activate_prob: 1.0,
            ..Planted::new(1, 0.0)
        });
        let (matrix, _, _) = sample_corpus(&cfg).unwrap();
        let j = matrix.n_samples() as f64;
        let mean = matrix.totals().iter().map(|&n| n as f64).sum::<f64>() / j;
        let se = (4.0 / j).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn expected_token_load_matches_selector_sum() {
        // Always-on selectors: E[N_j] = k_star * r * p / (1 - p).
        let mut cfg = SynthConfig::new(tiny_hyper(20_000, 12, 3), 13);
        cfg.planted = Some(Planted {
            r: Some(4.0),
            activate_prob: 1.0,
            ..Planted::new(3, 0.0)
        });
        let (matrix, _, _) = sample_corpus(&cfg).unwrap();
        let j = matrix.n_samples() as f64;
        let mean = matrix.totals().iter().map(|&n| n as f64).sum::<f64>() / j;
        // Var[N_j] = k_star * r * p / (1-p)^2 = 24.
        let se = (24.0 / j).sqrt();
        assert!((mean - 12.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let mut cfg = SynthConfig::new(tiny_hyper(40, 10, 6), 99);
        cfg.planted = Some(Planted::new(3, 25.0));
        let (m1, v1, t1) = sample_corpus(&cfg).unwrap();
        let (m2, v2, t2) = sample_corpus(&cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(v1, v2);
        assert_eq!(t1, t2);
        let other = SynthConfig { seed: 100, ..cfg.clone() };
        let (m3, _, _) = sample_corpus(&other).unwrap();
        assert_ne!(m1, m3);
    }

    #[test]
    fn planted_phi_blocks_are_simplex_rows() {
        let phi = planted_phi(5, 200);
        assert_eq!(phi.len(), 5);
        for row in &phi {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        // Block mass dominates background mass.
        assert!(phi[0][0] > 100.0 * phi[0][150]);
        // Uneven division: last block absorbs the remainder.
        let phi7 = planted_phi(7, 200);
        assert_relative_eq!(phi7[6].iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kernel_override_shifts_activation_rate() {
        // A decoder with a large positive constant head turns nearly every
        // selector on even though pi is small.
        let hyper = tiny_hyper(400, 6, 3);
        let spec = MlpSpec::new(vec![hyper.d_h + hyper.d_l, 2], Activation::Tanh).unwrap();
        let mut dec = Mlp::zeros(spec);
        let mut flat = dec.to_flat();
        let n = flat.len();
        flat[n - 2] = 8.0; // mean head bias
        dec = Mlp::from_flat(dec.spec().clone(), &flat).unwrap();
        let mut cfg = SynthConfig::new(hyper, 21);
        cfg.planted = Some(Planted { activate_prob: 0.05, ..Planted::new(3, 5.0) });
        let base_rate = {
            let (_, _, t) = sample_corpus(&cfg).unwrap();
            t.b.iter().flatten().filter(|&&b| b).count() as f64
        };
        cfg.kernel = Some(KernelOverride { decoder: dec, locations: None });
        let (_, _, t) = sample_corpus(&cfg).unwrap();
        let shifted_rate = t.b.iter().flatten().filter(|&&b| b).count() as f64;
        assert!(
            shifted_rate > 5.0 * base_rate,
            "base {base_rate}, shifted {shifted_rate}"
        );
    }

    #[test]
    fn ground_truth_round_trip() {
        let mut cfg = SynthConfig::new(tiny_hyper(15, 7, 4), 3);
        cfg.planted = Some(Planted::new(2, 12.0));
        let (_, _, truth) = sample_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        truth.save(dir.path()).unwrap();
        let back = GroundTruth::load(dir.path()).unwrap();
        assert_eq!(truth, back);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut hp = tiny_hyper(10, 5, 3);
        hp.eta0 = 0.0;
        assert!(sample_corpus(&SynthConfig::new(hp, 1)).is_err());
        let mut cfg = SynthConfig::new(tiny_hyper(10, 5, 3), 1);
        cfg.planted = Some(Planted::new(9, 10.0)); // k_star > k
        assert!(sample_corpus(&cfg).is_err());
        let cfg0 = SynthConfig::new(tiny_hyper(0, 5, 3), 1);
        assert!(sample_corpus(&cfg0).is_err());
    }

    fn predictive_fixture(
        theta1: Vec<f64>,
        eta: Vec<Vec<f64>>,
    ) -> (crate::inference::GlobalState, Vec<crate::inference::LocalState>) {
        let k = eta.len();
        let m = eta[0].len();
        let hyper = HyperParams {
            k,
            d_h: 2,
            d_l: 2,
            enc_hidden: vec![3],
            dec_hidden: vec![3],
            ..HyperParams::default()
        };
        let flags = crate::inference::ModelFlags {
            kernel_enabled: false,
            ..crate::inference::ModelFlags::default()
        };
        let mut globals = crate::inference::GlobalState::init(&hyper, m, flags, 1).unwrap();
        globals.eta = eta;
        let local = crate::inference::LocalState {
            psi: vec![],
            theta2: vec![1.0; k],
            theta1,
            nu: vec![1.0; k],
            a_tilde: 1.0,
            b_tilde: 1.0,
            h: vec![0.0; 2],
            l_tilde: vec![0.0; k],
        };
        (globals, vec![local])
    }

    #[test]
    fn predictive_of_zero_intensity_is_empty() {
        let (globals, locals) = predictive_fixture(vec![0.0, 0.0], vec![vec![1.0; 4]; 2]);
        let mut rng = RngPool::new(5).stream("t");
        let row = posterior_predictive(&globals, &locals, 0, &mut rng).unwrap();
        assert!(row.is_empty());
        assert!(posterior_predictive(&globals, &locals, 3, &mut rng).is_err());
    }

    #[test]
    fn predictive_with_concentrated_factor_hits_one_feature() {
        // One hot-factor row: essentially all Dirichlet mass on feature 2.
        let eta = vec![vec![1e-9, 1e-9, 1e9, 1e-9]];
        let (globals, locals) = predictive_fixture(vec![30.0], eta);
        let mut rng = RngPool::new(6).stream("t");
        for _ in 0..20 {
            let row = posterior_predictive(&globals, &locals, 0, &mut rng).unwrap();
            for &(m, _) in &row {
                assert_eq!(m, 2);
            }
        }
    }

    #[test]
    fn predictive_frequencies_match_mean_mixture() {
        // E[theta]^T E[phi] proportions over many draws, within 3 SE.
        let eta = vec![vec![8.0, 1.0, 1.0], vec![1.0, 1.0, 8.0]];
        let (globals, locals) = predictive_fixture(vec![6.0, 3.0], eta);
        let phi = globals.phi_mean();
        let theta = vec![6.0, 3.0];
        let mut expect = vec![0.0; 3];
        for k in 0..2 {
            for m in 0..3 {
                expect[m] += theta[k] * phi[k][m];
            }
        }
        let total_mean: f64 = expect.iter().sum();
        let mut rng = RngPool::new(7).stream("t");
        let trials = 10_000;
        let mut counts = vec![0.0f64; 3];
        for _ in 0..trials {
            for (m, c) in posterior_predictive(&globals, &locals, 0, &mut rng).unwrap() {
                counts[m] += f64::from(c);
            }
        }
        for m in 0..3 {
            let mean = counts[m] / trials as f64;
            // Poisson-mean target expect[m]; SE = sqrt(lambda / trials).
            let se = (expect[m] / trials as f64).sqrt();
            assert!(
                (mean - expect[m]).abs() < 3.0 * se,
                "feature {m}: {mean} vs {} (se {se})",
                expect[m]
            );
        }
        assert_relative_eq!(total_mean, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn product_decoder_tracks_the_coordinate_product() {
        let gain = 4.0;
        let dec = product_decoder(3, 2, gain).unwrap();
        for h0 in [-2.5, -1.0, -0.3, 0.4, 1.0, 2.0] {
            for l0 in [-1.0, 1.0] {
                let h = vec![h0, 0.8, -0.4];
                let l = vec![l0, -0.6];
                let (out, _) = kernel_forward(&dec, &h, &l).unwrap();
                let target = gain * h0 * l0;
                assert!(
                    (out.mean - target).abs() < 0.05 * target.abs(),
                    "kernel {} should track {target}",
                    out.mean
                );
                assert_eq!(out.mean.signum(), target.signum());
                assert_relative_eq!(out.log_sigma, -20.0, epsilon = 1e-12);
            }
        }
        // Off-product coordinates do not leak into the kernel.
        let (a, _) = kernel_forward(&dec, &[1.0, 9.0, -9.0], &[1.0, 7.0]).unwrap();
        let (b, _) = kernel_forward(&dec, &[1.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(a.mean, b.mean, epsilon = 1e-12);
        assert!(product_decoder(0, 2, 1.0).is_err());
        assert!(product_decoder(2, 2, 0.0).is_err());
    }
}
