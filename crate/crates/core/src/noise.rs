//! Isotropic velocity-gradient noise: parameters, covariance and factorization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal;

/// Parameters `(d, tau, A, B)` of the gradient-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStatistics {
    pub d: usize,
    pub tau: f64,
    pub a: f64,
    pub b: f64,
}

/// Coefficients with `dS = E tr(dW) I + F dW^T + G dW` for a matrix `dW`
/// of independent Brownian increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFactorization {
    pub e: f64,
    pub f: f64,
    pub g: f64,
}

impl FlowStatistics {
    /// Validated constructor.
    pub fn new(d: usize, tau: f64, a: f64, b: f64) -> Result<Self> {
        let s = Self { d, tau, a, b };
        s.validate()?;
        Ok(s)
    }

    /// Parameters with the noise switched off (`A = B = 0`). These fail
    /// `validate` and only make sense for deterministic checks.
    pub fn noiseless(d: usize, tau: f64) -> Self {
        Self { d, tau, a: 0.0, b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { d, tau, a, b } = *self;
        let bad = |m: String| Err(Error::InvalidParameters(m));
        if d == 0 {
            return bad("dimension must be at least 1".into());
        }
        if !(tau.is_finite() && tau > 0.0) {
            return bad(format!("tau must be positive, got {tau}"));
        }
        if !(a.is_finite() && b.is_finite()) {
            return bad("A and B must be finite".into());
        }
        if a < b.abs() {
            return bad(format!("need A >= |B|, got A = {a}, B = {b}"));
        }
        if a + (d as f64 + 1.0) * b < 0.0 {
            return bad(format!("need A + (d+1)B >= 0, got {}", a + (d as f64 + 1.0) * b));
        }
        if d == 1 && a + 2.0 * b <= 0.0 {
            return bad("d = 1 needs A + 2B > 0".into());
        }
        if d >= 2 && a <= 0.0 {
            return bad("d >= 2 needs A > 0".into());
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.a == 0.0 && self.b == 0.0
    }

    /// Covariance rate `D^{ik}_{jl}` of `dS^i_j` and `dS^k_l`.
    pub fn covariance(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let dl = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
        self.a * dl(i, k) * dl(j, l) + self.b * (dl(i, j) * dl(k, l) + dl(i, l) * dl(k, j))
    }

    /// Closed-form factorization of the covariance.
    pub fn factorize(&self) -> NoiseFactorization {
        let d = self.d as f64;
        let (a, b) = (self.a, self.b);
        let sp = (a + b).max(0.0).sqrt();
        let sm = (a - b).max(0.0).sqrt();
        let st = (a + (d + 1.0) * b).max(0.0).sqrt();
        NoiseFactorization {
            e: (st - sp) / d,
            f: 0.5 * (sp + sm),
            g: 0.5 * (sp - sm),
        }
    }
}

impl NoiseFactorization {
    /// The tensor `T^{im}_{jn} = E d^i_j d^m_n + F d^{im} d_{jn} + G d^i_n d^m_j`
    /// mapping the Brownian matrix `dW^n_m` to `dS^i_j`.
    pub fn tensor(&self, i: usize, j: usize, m: usize, n: usize) -> f64 {
        let dl = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
        self.e * dl(i, j) * dl(m, n) + self.f * dl(i, m) * dl(j, n) + self.g * dl(i, n) * dl(m, j)
    }

    /// Fill `out` (row-major `d x d`) with one increment `dS` over time `dt`.
    pub fn sample_increment_into<R: Rng + ?Sized>(&self, d: usize, dt: f64, rng: &mut R, out: &mut [f64]) {
        let sd = dt.sqrt();
        // out temporarily holds W[n][m]
        for w in out.iter_mut().take(d * d) {
            *w = sd * normal(rng);
        }
        let tr: f64 = (0..d).map(|k| out[k * d + k]).sum();
        for i in 0..d {
            for j in i..d {
                let (wij, wji) = (out[i * d + j], out[j * d + i]);
                out[i * d + j] = self.f * wji + self.g * wij;
                out[j * d + i] = self.f * wij + self.g * wji;
            }
            out[i * d + i] += self.e * tr;
        }
    }

    pub fn sample_increment<R: Rng + ?Sized>(&self, d: usize, dt: f64, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; d * d];
        self.sample_increment_into(d, dt, rng, &mut out);
        out
    }
}
