//! Amortized correlation machinery: the encoder that maps a count row to
//! its representation h, the decoder that turns concat(h, l) into the
//! kernel heads (u_f, log sigma_f), manual reverse-mode gradients, and
//! Adam. No autodiff framework: the nets are small, fixed-topology MLPs
//! and exact hand-written backprop keeps gradient checks tight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative given both the pre-activation and the stored output.
    fn grad(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config(format!(
                "unknown activation '{other}' (expected 'tanh' or 'relu')"
            ))),
        }
    }
}

/// Network topology: `widths[0]` is the input dimension, `widths.last()`
/// the number of scalar output heads; hidden layers use `activation`,
/// the final layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::config(format!(
                "network widths must list input and output with all entries >= 1, got {widths:?}"
            )));
        }
        Ok(MlpSpec { widths, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Number of scalar output heads (the final layer width).
    pub fn heads(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Total parameter count (weights plus biases, all layers).
    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One dense layer; `w` is row-major `[out x in]`, so `w[o * in + i]`.
#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inp: usize,
    out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b.clone();
        for o in 0..self.out {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            let mut acc = 0.0;
            for i in 0..self.inp {
                acc += row[i] * x[i];
            }
            z[o] += acc;
        }
        z
    }
}

/// Multi-layer perceptron with cached-forward/manual-backward support.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Input recorded by a forward pass, kept sparse when the pass was.
#[derive(Debug, Clone)]
enum CacheInput {
    Dense(Vec<f64>),
    Sparse { cols: Vec<(usize, f64)>, dim: usize },
}

/// Activations captured by a forward pass; required by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: CacheInput,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("forward always records layers")
    }
}

/// Per-layer gradients mirroring [`Mlp`] shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            dw: mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// self += c * other.
    pub fn add_scaled(&mut self, other: &MlpGrads, c: f64) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.dw.iter_mut().chain(self.db.iter_mut()) {
            for x in a.iter_mut() {
                *x *= c;
            }
        }
    }

    /// Layer-major flattening matching [`Mlp::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.dw.iter().zip(&self.db) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// All-zero weights and biases (useful to switch the kernel off).
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|d| Dense { inp: d[0], out: d[1], w: vec![0.0; d[0] * d[1]], b: vec![0.0; d[1]] })
            .collect();
        Mlp { spec, layers }
    }

    /// Seeded init: weights uniform on ±1/sqrt(fan_in), biases zero.
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let mut mlp = Mlp::zeros(spec);
        for layer in &mut mlp.layers {
            let scale = 1.0 / (layer.inp as f64).sqrt();
            for w in &mut layer.w {
                *w = (rng.random::<f64>() * 2.0 - 1.0) * scale;
            }
        }
        mlp
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Dense forward pass, recording activations for backprop.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::config(format!(
                "forward: input dim {} but network expects {}",
                x.len(),
                self.spec.input_dim()
            )));
        }
        let z0 = self.layers[0].affine(x);
        self.finish_forward(CacheInput::Dense(x.to_vec()), z0)
    }

    /// Forward pass over a sparse count row: the first layer contracts
    /// only the nonzero columns. Accumulation always runs in ascending
    /// column order, so the result is bitwise independent of storage
    /// order.
    pub fn forward_sparse(&self, row: &[(usize, u32)]) -> Result<ForwardCache> {
        let m = self.spec.input_dim();
        let l0 = &self.layers[0];
        let mut cols = Vec::with_capacity(row.len());
        for &(col, cnt) in row {
            if col >= m {
                return Err(Error::config(format!(
                    "forward_sparse: column {col} out of range (input dim {m})"
                )));
            }
            cols.push((col, f64::from(cnt)));
        }
        if !cols.is_sorted_by_key(|&(col, _)| col) {
            cols.sort_unstable_by_key(|&(col, _)| col);
        }
        let mut z0 = l0.b.clone();
        for &(col, c) in &cols {
            for o in 0..l0.out {
                z0[o] += c * l0.w[o * m + col];
            }
        }
        self.finish_forward(CacheInput::Sparse { cols, dim: m }, z0)
    }

    fn finish_forward(&self, input: CacheInput, z0: Vec<f64>) -> Result<ForwardCache> {
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut z = z0;
        for li in 0..n {
            let a = if li + 1 == n {
                z.clone() // final layer is linear
            } else {
                z.iter().map(|&v| self.spec.activation.apply(v)).collect()
            };
            pre.push(std::mem::take(&mut z));
            post.push(a);
            if li + 1 < n {
                z = self.layers[li + 1].affine(&post[li]);
            }
        }
        let cache = ForwardCache { input, pre, post };
        if cache.output().iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("forward pass produced non-finite output"));
        }
        Ok(cache)
    }

    fn check_cache(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<()> {
        let input_dim = match &cache.input {
            CacheInput::Dense(x) => x.len(),
            CacheInput::Sparse { dim, .. } => *dim,
        };
        let shapes_match = cache.pre.len() == self.layers.len()
            && cache.post.len() == self.layers.len()
            && input_dim == self.spec.input_dim()
            && cache
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.len() == l.out);
        if !shapes_match {
            return Err(Error::config(
                "backward: cached activations do not match this network",
            ));
        }
        if upstream.len() != self.spec.heads() {
            return Err(Error::config(format!(
                "backward: upstream gradient has {} entries for {} heads",
                upstream.len(),
                self.spec.heads()
            )));
        }
        Ok(())
    }

    /// Exact reverse-mode gradients of `sum_o upstream[o] * output[o]`
    /// with respect to all weights and biases.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<MlpGrads> {
        Ok(self.backward_impl(cache, upstream, false)?.0)
    }

    /// As [`Mlp::backward`], also returning the gradient with respect to
    /// the input vector (dense, full input dimension).
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<(MlpGrads, Vec<f64>)> {
        let (g, inp) = self.backward_impl(cache, upstream, true)?;
        Ok((g, inp.expect("requested input gradient")))
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        want_input: bool,
    ) -> Result<(MlpGrads, Option<Vec<f64>>)> {
        self.check_cache(cache, upstream)?;
        let n = self.layers.len();
        let mut grads = MlpGrads::zeros_like(self);
        // delta = dL/d(post of current layer); final layer is linear.
        let mut delta = upstream.to_vec();
        let mut input_grad = None;
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            // Through the activation: dL/d(pre).
            let dpre: Vec<f64> = if li + 1 == n {
                delta.clone()
            } else {
                delta
                    .iter()
                    .zip(cache.pre[li].iter().zip(&cache.post[li]))
                    .map(|(&d, (&z, &a))| d * self.spec.activation.grad(z, a))
                    .collect()
            };
            grads.db[li].copy_from_slice(&dpre);
            if li > 0 {
                let below = &cache.post[li - 1];
                for o in 0..layer.out {
                    let g = dpre[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut grads.dw[li][o * layer.inp..(o + 1) * layer.inp];
                    for i in 0..layer.inp {
                        row[i] += g * below[i];
                    }
                }
                // Propagate to the layer below: delta = W^T dpre.
                let mut next = vec![0.0; layer.inp];
                for o in 0..layer.out {
                    let g = dpre[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &layer.w[o * layer.inp..(o + 1) * layer.inp];
                    for i in 0..layer.inp {
                        next[i] += g * row[i];
                    }
                }
                delta = next;
            } else {
                match &cache.input {
                    CacheInput::Dense(x) => {
                        for o in 0..layer.out {
                            let g = dpre[o];
                            if g == 0.0 {
                                continue;
                            }
                            let row = &mut grads.dw[0][o * layer.inp..(o + 1) * layer.inp];
                            for i in 0..layer.inp {
                                row[i] += g * x[i];
                            }
                        }
                    }
                    CacheInput::Sparse { cols, .. } => {
                        for o in 0..layer.out {
                            let g = dpre[o];
                            if g == 0.0 {
                                continue;
                            }
                            for &(col, c) in cols {
                                grads.dw[0][o * layer.inp + col] += g * c;
                            }
                        }
                    }
                }
                if want_input {
                    let mut gx = vec![0.0; layer.inp];
                    for o in 0..layer.out {
                        let g = dpre[o];
                        if g == 0.0 {
                            continue;
                        }
                        let row = &layer.w[o * layer.inp..(o + 1) * layer.inp];
                        for i in 0..layer.inp {
                            gx[i] += g * row[i];
                        }
                    }
                    input_grad = Some(gx);
                }
            }
        }
        Ok((grads, input_grad))
    }

    /// Flattened parameters, layer-major (per layer: weights then biases).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    /// Inverse of [`Mlp::to_flat`].
    pub fn from_flat(spec: MlpSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::config(format!(
                "parameter vector has {} entries, spec needs {}",
                flat.len(),
                spec.param_count()
            )));
        }
        let mut mlp = Mlp::zeros(spec);
        let mut cur = 0;
        for layer in &mut mlp.layers {
            let (wn, bn) = (layer.w.len(), layer.b.len());
            layer.w.copy_from_slice(&flat[cur..cur + wn]);
            cur += wn;
            layer.b.copy_from_slice(&flat[cur..cur + bn]);
            cur += bn;
        }
        Ok(mlp)
    }
}

/// Two-headed kernel output: the deterministic kernel value and the log
/// of its scale head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOutput {
    pub mean: f64,
    pub log_sigma: f64,
}

/// Apply the decoder to concat(h, l); the two output heads are read as
/// (mean u_f, log sigma_f).
pub fn kernel_forward(decoder: &Mlp, h: &[f64], l: &[f64]) -> Result<(KernelOutput, ForwardCache)> {
    if decoder.spec().heads() != 2 {
        return Err(Error::config(format!(
            "kernel decoder must have 2 output heads, found {}",
            decoder.spec().heads()
        )));
    }
    if h.len() + l.len() != decoder.spec().input_dim() {
        return Err(Error::config(format!(
            "kernel decoder expects input dim {}, got {} + {}",
            decoder.spec().input_dim(),
            h.len(),
            l.len()
        )));
    }
    let mut x = Vec::with_capacity(h.len() + l.len());
    x.extend_from_slice(h);
    x.extend_from_slice(l);
    let cache = decoder.forward(&x)?;
    let out = cache.output();
    Ok((KernelOutput { mean: out[0], log_sigma: out[1] }, cache))
}

// --- Adam (ascent convention: parameters move along the gradient) ---

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam ascent step on a flat parameter vector.
pub fn adam_step_flat(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::config(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        params[i] += cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam ascent step applied to a network in place.
pub fn adam_step_mlp(
    mlp: &mut Mlp,
    grads: &MlpGrads,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut flat = mlp.to_flat();
    let gflat = grads.to_flat();
    adam_step_flat(&mut flat, &gflat, state, cfg)?;
    *mlp = Mlp::from_flat(mlp.spec().clone(), &flat)?;
    Ok(())
}
