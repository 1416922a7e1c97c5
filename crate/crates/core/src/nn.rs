//! Small dense-layer helpers and the Adam optimizer, generic over [`Scalar`].
//!
//! Matrices are row-major slices; `w` of shape `rows x cols` maps a
//! `cols`-vector to a `rows`-vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// `out = w · x + b`
pub fn affine<S: Scalar>(w: &[S], b: &[S], x: &[S], out: &mut [S]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).fold(b[r], |acc, (&a, &c)| acc + a * c);
    }
}

/// `out += wᵀ · g`
pub fn add_transpose_mul<S: Scalar>(w: &[S], g: &[S], out: &mut [S]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    for (r, &gr) in g.iter().enumerate() {
        if gr == S::zero() {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &a) in out.iter_mut().zip(row) {
            *o = *o + a * gr;
        }
    }
}

/// `dw += g ⊗ x`
pub fn add_outer<S: Scalar>(dw: &mut [S], g: &[S], x: &[S]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == S::zero() {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, &xc) in row.iter_mut().zip(x) {
            *d = *d + gr * xc;
        }
    }
}

pub fn add_assign<S: Scalar>(acc: &mut [S], x: &[S]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a = *a + b;
    }
}

/// Fills `out` with `U(-a, a)`, `a = 1/sqrt(fan_in)`.
pub fn init_uniform<S: Scalar, R: Rng>(out: &mut [S], fan_in: usize, rng: &mut R) {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    for x in out {
        *x = S::lit(rng.gen_range(-a..a));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradient norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 5.0 }
    }
}

/// Adam over a single flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    cfg: AdamConfig,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Adam { cfg, m: vec![S::zero(); len], v: vec![S::zero(); len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [S], grad: &[S]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let scale = if self.cfg.clip_norm > 0.0 {
            let n = grad.iter().fold(0.0, |a, g| a + g.as_f64() * g.as_f64()).sqrt();
            if n > self.cfg.clip_norm {
                S::lit(self.cfg.clip_norm / n)
            } else {
                S::one()
            }
        } else {
            S::one()
        };
        let b1 = S::lit(self.cfg.beta1);
        let b2 = S::lit(self.cfg.beta2);
        let one = S::one();
        let bc1 = one - b1.powi(self.t);
        let bc2 = one - b2.powi(self.t);
        let lr = S::lit(self.cfg.learning_rate);
        let eps = S::lit(self.cfg.eps);
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
}
