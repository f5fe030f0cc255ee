//! From-scratch two-layer perceptrons for the actor (tanh, 128 hidden) and
//! critic (tanh, 64 hidden), with exact reverse-mode gradients and Adam.
//!
//! Arithmetic runs in f64; parameters and optimizer moments are quantized to
//! f32 after initialization and after every optimizer step, so checkpoints
//! (stored as little-endian f32) round-trip bit-exactly.

use crate::error::{Error, Result};
use rand::Rng;

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn round_f32_slice(xs: &mut [f64]) {
    for x in xs {
        *x = round_f32(*x);
    }
}

/// Numerically stable softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One hidden layer, tanh activation, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Row-major `hidden x in_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `out_dim x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// Parameter-shaped gradient (or moment) accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    /// Uniform init in +/- sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Mlp {
        let bound1 = (6.0 / (in_dim + hidden) as f64).sqrt();
        let bound2 = (6.0 / (hidden + out_dim) as f64).sqrt();
        let mut w1: Vec<f64> = (0..hidden * in_dim)
            .map(|_| rng.gen_range(-bound1..bound1))
            .collect();
        let mut w2: Vec<f64> = (0..out_dim * hidden)
            .map(|_| rng.gen_range(-bound2..bound2))
            .collect();
        round_f32_slice(&mut w1);
        round_f32_slice(&mut w2);
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Mlp {
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out_dim * hidden],
            b2: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        debug_assert_eq!(input.len(), self.in_dim);
        assert!(
            input.iter().all(|x| x.is_finite()),
            "non-finite network input"
        );
        let mut hidden = vec![0.0; self.hidden];
        for j in 0..self.hidden {
            let row = &self.w1[j * self.in_dim..(j + 1) * self.in_dim];
            let mut acc = self.b1[j];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            hidden[j] = acc.tanh();
        }
        let mut output = vec![0.0; self.out_dim];
        for (k, out) in output.iter_mut().enumerate() {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            let mut acc = self.b2[k];
            for (w, h) in row.iter().zip(&hidden) {
                acc += w * h;
            }
            *out = acc;
        }
        ForwardCache {
            input: input.to_vec(),
            hidden,
            output,
        }
    }

    /// Accumulate parameter gradients for upstream gradient `d_out` (the
    /// gradient of the scalar loss with respect to the network output).
    pub fn backward_into(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut MlpGrads) {
        debug_assert_eq!(d_out.len(), self.out_dim);
        debug_assert_eq!(cache.hidden.len(), self.hidden);
        let mut d_hidden = vec![0.0; self.hidden];
        for (k, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            let grow = &mut grads.w2[k * self.hidden..(k + 1) * self.hidden];
            for j in 0..self.hidden {
                grow[j] += g * cache.hidden[j];
                d_hidden[j] += g * row[j];
            }
            grads.b2[k] += g;
        }
        for (j, &dz) in d_hidden.iter().enumerate() {
            // d tanh(z) / dz = 1 - tanh(z)^2
            let dh = dz * (1.0 - cache.hidden[j] * cache.hidden[j]);
            if dh == 0.0 {
                continue;
            }
            let grow = &mut grads.w1[j * self.in_dim..(j + 1) * self.in_dim];
            for (g, x) in grow.iter_mut().zip(&cache.input) {
                *g += dh * x;
            }
            grads.b1[j] += dh;
        }
    }

    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> MlpGrads {
        let mut grads = MlpGrads::zeros_like(self);
        self.backward_into(cache, d_out, &mut grads);
        grads
    }

    pub fn check_finite(&self, name: &str) -> Result<()> {
        let ok = self.w1.iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFiniteParam(name.to_string()))
        }
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> MlpGrads {
        MlpGrads {
            w1: vec![0.0; mlp.w1.len()],
            b1: vec![0.0; mlp.b1.len()],
            w2: vec![0.0; mlp.w2.len()],
            b2: vec![0.0; mlp.b2.len()],
        }
    }

    pub fn zero(&mut self) {
        for part in self.parts_mut() {
            for g in part {
                *g = 0.0;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for part in self.parts_mut() {
            for g in part {
                *g *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for part in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for g in part {
                acc += g * g;
            }
        }
        acc.sqrt()
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|p| p.iter().all(|g| g.is_finite()))
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpGrads,
    pub v: MlpGrads,
    pub t: u64,
}

impl AdamState {
    pub fn new(mlp: &Mlp) -> AdamState {
        AdamState {
            m: MlpGrads::zeros_like(mlp),
            v: MlpGrads::zeros_like(mlp),
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.zero();
        self.v.zero();
        self.t = 0;
    }

    /// One bias-corrected Adam step; parameters and moments are quantized to
    /// f32 afterwards. Errors on non-finite gradients.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteParam("gradients".to_string()));
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = round_f32(p[i] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
                m[i] = round_f32(m[i]);
                v[i] = round_f32(v[i]);
            }
        };
        update(&mut mlp.w1, &grads.w1, &mut self.m.w1, &mut self.v.w1);
        update(&mut mlp.b1, &grads.b1, &mut self.m.b1, &mut self.v.b1);
        update(&mut mlp.w2, &grads.w2, &mut self.m.w2, &mut self.v.w2);
        update(&mut mlp.b2, &grads.b2, &mut self.m.b2, &mut self.v.b2);
        Ok(())
    }
}
