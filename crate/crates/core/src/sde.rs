//! The linear dispersion SDE `d rho = chi/tau dt`, `d chi = -chi/tau dt + dS rho`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{FlowStatistics, NoiseFactorization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionState {
    pub rho: Vec<f64>,
    pub chi: Vec<f64>,
}

impl DispersionState {
    pub fn new(rho: Vec<f64>, chi: Vec<f64>) -> Result<Self> {
        if rho.len() != chi.len() || rho.is_empty() {
            return Err(Error::InvalidParameters(format!(
                "rho and chi must have equal nonzero length, got {} and {}",
                rho.len(),
                chi.len()
            )));
        }
        Ok(Self { rho, chi })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            rho: vec![0.0; d],
            chi: vec![0.0; d],
        }
    }

    pub fn d(&self) -> usize {
        self.rho.len()
    }

    pub fn norm(&self) -> f64 {
        self.rho.iter().chain(&self.chi).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.rho.iter_mut().chain(self.chi.iter_mut()).for_each(|v| *v *= k);
    }

    /// The state as one vector `(rho, chi)` of length `2d`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.rho.iter().chain(&self.chi).copied().collect()
    }

    pub fn from_slice(p: &[f64]) -> Self {
        let d = p.len() / 2;
        Self {
            rho: p[..d].to_vec(),
            chi: p[d..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scheme {
    /// Explicit Euler-Maruyama.
    EulerMaruyama,
    /// Half-step exact drift, exact noise shear, half-step exact drift.
    #[default]
    Strang,
}

/// Exact flow of the drift for time `s`.
#[inline]
pub fn drift_flow(rho: &mut [f64], chi: &mut [f64], s: f64, tau: f64) {
    let decay = (-s / tau).exp();
    let gain = -(-s / tau).exp_m1();
    for (r, c) in rho.iter_mut().zip(chi.iter_mut()) {
        *r += gain * *c;
        *c *= decay;
    }
}

/// `chi += dS rho` with `dS` row-major.
#[inline]
pub fn noise_shear(rho: &[f64], chi: &mut [f64], ds: &[f64]) {
    let d = rho.len();
    for i in 0..d {
        let row = &ds[i * d..(i + 1) * d];
        chi[i] += row.iter().zip(rho).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Reusable stepper holding the factorization and a scratch increment.
#[derive(Debug, Clone)]
pub struct DispersionStepper {
    pub stats: FlowStatistics,
    pub scheme: Scheme,
    fac: NoiseFactorization,
    ds: Vec<f64>,
    old_rho: Vec<f64>,
}

impl DispersionStepper {
    pub fn new(stats: FlowStatistics, scheme: Scheme) -> Self {
        let d = stats.d;
        Self {
            stats,
            scheme,
            fac: stats.factorize(),
            ds: vec![0.0; d * d],
            old_rho: vec![0.0; d],
        }
    }

    /// Draw the noise increment for the next step.
    fn draw<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        if self.stats.is_noiseless() {
            self.ds.iter_mut().for_each(|v| *v = 0.0);
        } else {
            self.fac.sample_increment_into(self.stats.d, dt, rng, &mut self.ds);
        }
    }

    fn advance_one(&mut self, rho: &mut [f64], chi: &mut [f64], dt: f64) {
        let tau = self.stats.tau;
        match self.scheme {
            Scheme::EulerMaruyama => {
                self.old_rho.copy_from_slice(rho);
                for (r, c) in rho.iter_mut().zip(chi.iter()) {
                    *r += *c * dt / tau;
                }
                chi.iter_mut().for_each(|c| *c -= *c * dt / tau);
                noise_shear(&self.old_rho, chi, &self.ds);
            }
            Scheme::Strang => {
                drift_flow(rho, chi, 0.5 * dt, tau);
                noise_shear(rho, chi, &self.ds);
                drift_flow(rho, chi, 0.5 * dt, tau);
            }
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut DispersionState, dt: f64, rng: &mut R) {
        self.draw(dt, rng);
        self.advance_one(&mut state.rho, &mut state.chi, dt);
    }

    /// Advance several vectors with one shared noise increment (the SDE is
    /// linear, so this is also its tangent flow).
    pub fn step_frame<R: Rng + ?Sized>(&mut self, columns: &mut [DispersionState], dt: f64, rng: &mut R) {
        self.draw(dt, rng);
        for c in columns.iter_mut() {
            self.advance_one(&mut c.rho, &mut c.chi, dt);
        }
    }
}

/// One Euler-Maruyama step.
pub fn step_dispersion<R: Rng + ?Sized>(
    state: &DispersionState,
    stats: &FlowStatistics,
    dt: f64,
    rng: &mut R,
) -> DispersionState {
    let mut s = state.clone();
    DispersionStepper::new(*stats, Scheme::EulerMaruyama).step(&mut s, dt, rng);
    s
}

/// Unit-norm state plus the accumulated log of the removed norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormalizedTrajectory {
    pub state: DispersionState,
    pub log_norm: f64,
    pub steps: u64,
}

const RENORM_HI: f64 = 1e100;
const RENORM_LO: f64 = 1e-100;

impl RenormalizedTrajectory {
    pub fn new(state: DispersionState) -> Result<Self> {
        let mut t = Self {
            state,
            log_norm: 0.0,
            steps: 0,
        };
        if t.state.norm() == 0.0 {
            return Err(Error::InvalidParameters("initial state must be nonzero".into()));
        }
        t.renormalize();
        Ok(t)
    }

    /// Fold the current norm into `log_norm` and rescale to unit length.
    pub fn renormalize(&mut self) {
        let n = self.state.norm();
        self.log_norm += n.ln();
        self.state.scale(1.0 / n);
    }

    /// `ln` of the norm the unrenormalized process would have now.
    pub fn total_log_norm(&self) -> f64 {
        self.log_norm + self.state.norm().ln()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, stepper: &mut DispersionStepper, dt: f64, rng: &mut R) {
        stepper.step(&mut self.state, dt, rng);
        self.steps += 1;
        let n = self.state.norm();
        if !(RENORM_LO..=RENORM_HI).contains(&n) {
            self.renormalize();
        }
    }
}

/// Generator of the full process applied to `f` by central differences with
/// step `1e-4 (1 + |p|)`.
pub fn apply_generator_l<F: Fn(&DispersionState) -> f64>(f: F, p: &DispersionState, stats: &FlowStatistics) -> f64 {
    let d = p.d();
    let h = 1e-4 * (1.0 + p.norm());
    let x = p.to_vec();
    let at = |shifts: &[(usize, f64)]| {
        let mut y = x.clone();
        for &(k, s) in shifts {
            y[k] += s;
        }
        f(&DispersionState::from_slice(&y))
    };
    let f0 = f(p);
    let grad = |k: usize| (at(&[(k, h)]) - at(&[(k, -h)])) / (2.0 * h);
    let mut out = 0.0;
    for i in 0..d {
        out += p.chi[i] / stats.tau * (grad(i) - grad(d + i));
    }
    for i in 0..d {
        for k in 0..d {
            let mut q = 0.0;
            for j in 0..d {
                for l in 0..d {
                    q += p.rho[j] * p.rho[l] * stats.covariance(i, j, k, l);
                }
            }
            if q == 0.0 {
                continue;
            }
            let (a, b) = (d + i, d + k);
            let second = if a == b {
                (at(&[(a, h)]) - 2.0 * f0 + at(&[(a, -h)])) / (h * h)
            } else {
                (at(&[(a, h), (b, h)]) - at(&[(a, h), (b, -h)]) - at(&[(a, -h), (b, h)]) + at(&[(a, -h), (b, -h)]))
                    / (4.0 * h * h)
            };
            out += 0.5 * q * second;
        }
    }
    out
}

/// `(psi, xi) = e^{t/(2 tau)} (rho, chi + rho/2)`.
pub fn schroedinger_transform(p: &DispersionState, t: f64, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = (t / (2.0 * tau)).exp();
    if !k.is_finite() {
        return Err(Error::Domain(format!("e^(t/2tau) overflows at t/tau = {}", t / tau)));
    }
    let psi = p.rho.iter().map(|r| k * r).collect();
    let xi = p.chi.iter().zip(&p.rho).map(|(c, r)| k * (c + 0.5 * r)).collect();
    Ok((psi, xi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_fixed_point() {
        let stats = FlowStatistics::noiseless(1, 1.0);
        let s = DispersionState::new(vec![1.0], vec![0.0]).unwrap();
        let mut rng = crate::rng::stream(0, 0, 0);
        let n = step_dispersion(&s, &stats, 0.01, &mut rng);
        assert_eq!(n, s);
    }

    #[test]
    fn noiseless_relaxation() {
        let stats = FlowStatistics::noiseless(1, 1.0);
        let mut s = DispersionState::new(vec![0.0], vec![1.0]).unwrap();
        let mut rng = crate::rng::stream(0, 0, 0);
        for _ in 0..100 {
            s = step_dispersion(&s, &stats, 0.01, &mut rng);
        }
        assert!((s.rho[0] - (1.0 - (-1f64).exp())).abs() < 1e-2);
        let mut st = DispersionStepper::new(stats, Scheme::Strang);
        let mut s = DispersionState::new(vec![0.0], vec![1.0]).unwrap();
        for _ in 0..100 {
            st.step(&mut s, 0.01, &mut rng);
        }
        assert!((s.rho[0] - (1.0 - (-1f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn renormalization_preserves_total_log_norm() {
        let mut t = RenormalizedTrajectory::new(DispersionState::new(vec![3.0], vec![4.0]).unwrap()).unwrap();
        assert!((t.log_norm - 5f64.ln()).abs() < 1e-15);
        t.state.scale(1e120);
        let before = t.total_log_norm();
        t.renormalize();
        assert!((t.total_log_norm() - before).abs() < 1e-12);
        assert!((t.state.norm() - 1.0).abs() < 1e-15);
    }
}
