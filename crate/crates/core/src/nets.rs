//! Hand-rolled two-hidden-layer MLPs with flat parameter vectors,
//! pre-activation layer normalization, hardcoded backward passes, and a
//! standard Adam optimizer. No general autodiff: the architectures are
//! fixed, which keeps the backward code small enough to check against
//! finite differences.

use crate::mvn::RngState;
use crate::noise::Policy;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Output head of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub enum OutputHead {
    /// tanh scaled componentwise by the given limits.
    TanhScaled(Vec<f64>),
    Linear,
}

#[derive(Debug, Clone, Copy)]
struct Seg {
    off: usize,
    len: usize,
}

/// Fixed two-hidden-layer network with ReLU hiddens. An optional extra
/// input vector can be injected at the second hidden layer (the critic
/// receives the action there). Parameters live in a single flat vector;
/// layer views are offsets into it.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub input_dim: usize,
    pub h1: usize,
    pub h2: usize,
    pub output_dim: usize,
    /// Dimension of the vector injected at the second hidden layer; 0 for none.
    pub inject_dim: usize,
    pub layer_norm: bool,
    pub output: OutputHead,
    params: Vec<f64>,
    w1: Seg,
    b1: Seg,
    ln1_g: Seg,
    ln1_b: Seg,
    w2: Seg,
    b2: Seg,
    ln2_g: Seg,
    ln2_b: Seg,
    w3: Seg,
    b3: Seg,
}

impl Mlp {
    pub fn new(
        input_dim: usize,
        h1: usize,
        h2: usize,
        output_dim: usize,
        inject_dim: usize,
        layer_norm: bool,
        output: OutputHead,
    ) -> Self {
        let mut off = 0;
        let mut seg = |len: usize| {
            let s = Seg { off, len };
            off += len;
            s
        };
        let w1 = seg(h1 * input_dim);
        let b1 = seg(h1);
        let (ln1_g, ln1_b) = if layer_norm {
            (seg(h1), seg(h1))
        } else {
            (seg(0), seg(0))
        };
        let w2 = seg(h2 * (h1 + inject_dim));
        let b2 = seg(h2);
        let (ln2_g, ln2_b) = if layer_norm {
            (seg(h2), seg(h2))
        } else {
            (seg(0), seg(0))
        };
        let w3 = seg(output_dim * h2);
        let b3 = seg(output_dim);
        let mut mlp = Mlp {
            input_dim,
            h1,
            h2,
            output_dim,
            inject_dim,
            layer_norm,
            output,
            params: vec![0.0; off],
            w1,
            b1,
            ln1_g,
            ln1_b,
            w2,
            b2,
            ln2_g,
            ln2_b,
            w3,
            b3,
        };
        // Layer-norm gains start at 1 so a zero-initialized net is still
        // well-formed.
        for i in 0..mlp.ln1_g.len {
            mlp.params[mlp.ln1_g.off + i] = 1.0;
        }
        for i in 0..mlp.ln2_g.len {
            mlp.params[mlp.ln2_g.off + i] = 1.0;
        }
        mlp
    }

    /// DDPG-style init: hidden layers uniform in +-1/sqrt(fan_in), final
    /// layer uniform in +-3e-3.
    pub fn init_weights(&mut self, rng: &mut RngState) {
        let spans = [
            (self.w1, self.input_dim),
            (self.w2, self.h1 + self.inject_dim),
        ];
        for (seg, fan_in) in spans {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for i in 0..seg.len {
                self.params[seg.off + i] = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        for (seg, fan_in) in [(self.b1, self.input_dim), (self.b2, self.h1 + self.inject_dim)] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for i in 0..seg.len {
                self.params[seg.off + i] = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        for seg in [self.w3, self.b3] {
            for i in 0..seg.len {
                self.params[seg.off + i] = 3e-3 * (2.0 * rng.uniform() - 1.0);
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: flat.len(),
            });
        }
        self.params.copy_from_slice(flat);
        Ok(())
    }

    /// Indices of the weight-matrix entries (excluding biases and layer
    /// norm), used for the critic's L2 penalty.
    pub fn weight_indices(&self) -> Vec<(usize, usize)> {
        vec![
            (self.w1.off, self.w1.len),
            (self.w2.off, self.w2.len),
            (self.w3.off, self.w3.len),
        ]
    }

    pub fn forward(&self, input: &[f64], inject: Option<&[f64]>) -> Vec<f64> {
        self.forward_cached(input, inject).0
    }

    pub fn forward_cached(&self, input: &[f64], inject: Option<&[f64]>) -> (Vec<f64>, Cache) {
        assert_eq!(input.len(), self.input_dim, "input dim");
        let inject_buf: &[f64] = inject.unwrap_or(&[]);
        assert_eq!(inject_buf.len(), self.inject_dim, "inject dim");

        let z1 = self.affine(self.w1, self.b1, &[input]);
        let (y1, ln1) = self.norm(&z1, self.ln1_g, self.ln1_b);
        let a1: Vec<f64> = y1.iter().map(|&v| v.max(0.0)).collect();

        let z2 = self.affine(self.w2, self.b2, &[&a1, inject_buf]);
        let (y2, ln2) = self.norm(&z2, self.ln2_g, self.ln2_b);
        let a2: Vec<f64> = y2.iter().map(|&v| v.max(0.0)).collect();

        let z3 = self.affine(self.w3, self.b3, &[&a2]);
        let out: Vec<f64> = match &self.output {
            OutputHead::TanhScaled(limits) => z3
                .iter()
                .zip(limits)
                .map(|(&z, &lim)| lim * z.tanh())
                .collect(),
            OutputHead::Linear => z3.clone(),
        };
        let cache = Cache {
            input: input.to_vec(),
            inject: inject_buf.to_vec(),
            y1,
            a1,
            ln1,
            y2,
            a2,
            ln2,
            z3,
        };
        (out, cache)
    }

    fn affine(&self, w: Seg, b: Seg, inputs: &[&[f64]]) -> Vec<f64> {
        let out_dim = b.len;
        let mut out = vec![0.0; out_dim];
        let total_in: usize = inputs.iter().map(|x| x.len()).sum();
        debug_assert_eq!(w.len, out_dim * total_in);
        for o in 0..out_dim {
            let mut s = self.params[b.off + o];
            let row = w.off + o * total_in;
            let mut col = 0;
            for x in inputs {
                for &xi in *x {
                    s += self.params[row + col] * xi;
                    col += 1;
                }
            }
            out[o] = s;
        }
        out
    }

    fn norm(&self, z: &[f64], g: Seg, b: Seg) -> (Vec<f64>, Option<LnCache>) {
        if !self.layer_norm {
            return (z.to_vec(), None);
        }
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let xhat: Vec<f64> = z.iter().map(|&v| (v - mean) * inv).collect();
        let y: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &xh)| self.params[g.off + i] * xh + self.params[b.off + i])
            .collect();
        (y, Some(LnCache { xhat, inv }))
    }

    /// Backward pass for a single example. Accumulates parameter
    /// gradients into `grads` (same layout as the flat params) and
    /// returns the loss gradient w.r.t. the injected vector.
    pub fn backward(&self, cache: &Cache, dout: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(dout.len(), self.output_dim);
        assert_eq!(grads.len(), self.params.len());

        let dz3: Vec<f64> = match &self.output {
            OutputHead::TanhScaled(limits) => cache
                .z3
                .iter()
                .zip(dout)
                .zip(limits)
                .map(|((&z, &d), &lim)| {
                    let t = z.tanh();
                    d * lim * (1.0 - t * t)
                })
                .collect(),
            OutputHead::Linear => dout.to_vec(),
        };

        // layer 3
        let mut da2 = vec![0.0; self.h2];
        for o in 0..self.output_dim {
            let row = self.w3.off + o * self.h2;
            grads[self.b3.off + o] += dz3[o];
            for i in 0..self.h2 {
                grads[row + i] += dz3[o] * cache.a2[i];
                da2[i] += self.params[row + i] * dz3[o];
            }
        }

        // relu 2 + layer norm 2
        let dy2: Vec<f64> = da2
            .iter()
            .zip(&cache.y2)
            .map(|(&d, &y)| if y > 0.0 { d } else { 0.0 })
            .collect();
        let dz2 = self.norm_backward(&dy2, cache.ln2.as_ref(), self.ln2_g, self.ln2_b, grads);

        // layer 2 (input = a1 ++ inject)
        let total_in2 = self.h1 + self.inject_dim;
        let mut da1 = vec![0.0; self.h1];
        let mut dinject = vec![0.0; self.inject_dim];
        for o in 0..self.h2 {
            let row = self.w2.off + o * total_in2;
            grads[self.b2.off + o] += dz2[o];
            for i in 0..self.h1 {
                grads[row + i] += dz2[o] * cache.a1[i];
                da1[i] += self.params[row + i] * dz2[o];
            }
            for j in 0..self.inject_dim {
                grads[row + self.h1 + j] += dz2[o] * cache.inject[j];
                dinject[j] += self.params[row + self.h1 + j] * dz2[o];
            }
        }

        // relu 1 + layer norm 1
        let dy1: Vec<f64> = da1
            .iter()
            .zip(&cache.y1)
            .map(|(&d, &y)| if y > 0.0 { d } else { 0.0 })
            .collect();
        let dz1 = self.norm_backward(&dy1, cache.ln1.as_ref(), self.ln1_g, self.ln1_b, grads);

        // layer 1
        for o in 0..self.h1 {
            let row = self.w1.off + o * self.input_dim;
            grads[self.b1.off + o] += dz1[o];
            for i in 0..self.input_dim {
                grads[row + i] += dz1[o] * cache.input[i];
            }
        }

        dinject
    }

    fn norm_backward(
        &self,
        dy: &[f64],
        ln: Option<&LnCache>,
        g: Seg,
        b: Seg,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let Some(ln) = ln else {
            return dy.to_vec();
        };
        let n = dy.len();
        let mut dxhat = vec![0.0; n];
        for i in 0..n {
            grads[b.off + i] += dy[i];
            grads[g.off + i] += dy[i] * ln.xhat[i];
            dxhat[i] = dy[i] * self.params[g.off + i];
        }
        let sum_dxhat: f64 = dxhat.iter().sum();
        let sum_dxhat_xhat: f64 = dxhat.iter().zip(&ln.xhat).map(|(&a, &b)| a * b).sum();
        let nf = n as f64;
        (0..n)
            .map(|i| ln.inv / nf * (nf * dxhat[i] - sum_dxhat - ln.xhat[i] * sum_dxhat_xhat))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    inv: f64,
}

/// Per-example forward activations needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    input: Vec<f64>,
    inject: Vec<f64>,
    y1: Vec<f64>,
    a1: Vec<f64>,
    ln1: Option<LnCache>,
    y2: Vec<f64>,
    a2: Vec<f64>,
    ln2: Option<LnCache>,
    z3: Vec<f64>,
}

/// Deterministic actor: state -> tanh-bounded action scaled by per-
/// dimension limits.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    mlp: Mlp,
    limits: Vec<f64>,
}

impl PolicyNet {
    pub fn new(
        state_dim: usize,
        h1: usize,
        h2: usize,
        limits: Vec<f64>,
        layer_norm: bool,
    ) -> Self {
        let mlp = Mlp::new(
            state_dim,
            h1,
            h2,
            limits.len(),
            0,
            layer_norm,
            OutputHead::TanhScaled(limits.clone()),
        );
        PolicyNet { mlp, limits }
    }

    pub fn init_weights(&mut self, rng: &mut RngState) {
        self.mlp.init_weights(rng);
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.input_dim
    }

    pub fn limits(&self) -> &[f64] {
        &self.limits
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    pub fn flat(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.mlp.set_params(flat)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Returns a copy with `flat + eps` parameters; self is untouched.
    pub fn perturb(&self, eps: &[f64]) -> Result<PolicyNet> {
        if eps.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: eps.len(),
            });
        }
        let mut out = self.clone();
        for (p, &e) in out.mlp.params_mut().iter_mut().zip(eps) {
            *p += e;
        }
        Ok(out)
    }

    pub fn same_architecture(&self, other: &PolicyNet) -> bool {
        self.mlp.input_dim == other.mlp.input_dim
            && self.mlp.h1 == other.mlp.h1
            && self.mlp.h2 == other.mlp.h2
            && self.limits == other.limits
            && self.mlp.layer_norm == other.mlp.layer_norm
    }
}

impl Policy for PolicyNet {
    fn action_dim(&self) -> usize {
        self.limits.len()
    }

    fn act(&self, state: &[f64]) -> Vec<f64> {
        self.mlp.forward(state, None)
    }
}

/// Q-network: (state, action) -> scalar, action injected at the second
/// hidden layer.
#[derive(Debug, Clone)]
pub struct CriticNet {
    mlp: Mlp,
}

impl CriticNet {
    pub fn new(state_dim: usize, action_dim: usize, h1: usize, h2: usize, layer_norm: bool) -> Self {
        let mlp = Mlp::new(
            state_dim,
            h1,
            h2,
            1,
            action_dim,
            layer_norm,
            OutputHead::Linear,
        );
        CriticNet { mlp }
    }

    pub fn init_weights(&mut self, rng: &mut RngState) {
        self.mlp.init_weights(rng);
    }

    pub fn q(&self, state: &[f64], action: &[f64]) -> f64 {
        self.mlp.forward(state, Some(action))[0]
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params()
    }
}

/// Standard Adam over a flat parameter vector
/// (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
