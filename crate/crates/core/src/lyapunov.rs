//! Top Lyapunov exponent by three routes, the full spectrum, and two
//! long-run diagnostics of the reduced process.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airy::airy_pair;
use crate::error::{Error, Result};
use crate::noise::FlowStatistics;
use crate::projective::{reduce_invariants, sample_uniform_sphere};
use crate::reduced::{drift_reduced, step_reduced_d1, HalfPlanePoint, HalfPlaneSplitting};
use crate::rng::{purpose, stream};
use crate::sde::{DispersionState, DispersionStepper, RenormalizedTrajectory, Scheme};
use crate::stats::{linear_fit, RunningStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Airy,
    Direct,
    Invariants,
    Qr,
    DensityQuadrature,
}

/// One exponent with the metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub method: Method,
    pub d: usize,
    pub tau: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t_total: Option<f64>,
    pub ensemble: Option<usize>,
    pub x_cut: Option<f64>,
    pub value: f64,
    pub stderr: f64,
    pub seed: Option<u64>,
}

impl ExponentEstimate {
    fn exact(method: Method, stats: &FlowStatistics, value: f64) -> Self {
        Self {
            method,
            d: stats.d,
            tau: stats.tau,
            a: stats.a,
            b: stats.b,
            dt: None,
            t_total: None,
            ensemble: None,
            x_cut: None,
            value,
            stderr: 0.0,
            seed: None,
        }
    }

    fn sampled(method: Method, stats: &FlowStatistics, run: &RunSettings, s: &RunningStats) -> Self {
        Self {
            method,
            dt: Some(run.dt),
            t_total: Some(run.t_total),
            ensemble: Some(run.ensemble),
            seed: Some(run.seed),
            value: s.mean(),
            stderr: if s.n < 2 { 0.0 } else { s.std_err() },
            ..Self::exact(method, stats, 0.0)
        }
    }

    /// `|a - b|` in units of the combined standard error.
    pub fn z_score(&self, other: &ExponentEstimate) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        let diff = (self.value - other.value).abs();
        if se == 0.0 {
            if diff == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            diff / se
        }
    }

    pub fn relative_difference(&self, other: &ExponentEstimate) -> f64 {
        (self.value - other.value).abs() / other.value.abs()
    }
}

/// Time step, horizon, ensemble size, seed and scheme of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: f64,
    pub t_total: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl RunSettings {
    pub fn new(dt: f64, t_total: f64, ensemble: usize, seed: u64) -> Self {
        Self {
            dt,
            t_total,
            ensemble,
            seed,
            scheme: Scheme::Strang,
        }
    }

    pub fn steps(&self) -> u64 {
        (self.t_total / self.dt).round() as u64
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_total >= self.dt && self.ensemble >= 1) {
            return Err(Error::InvalidParameters(format!(
                "need dt > 0, T >= dt and ensemble >= 1, got dt = {}, T = {}, ensemble = {}",
                self.dt, self.t_total, self.ensemble
            )));
        }
        Ok(())
    }
}

/// `d/dc ln(Ai^2 + Bi^2)`.
pub fn airy_log_derivative(c: f64) -> f64 {
    let p = airy_pair(c);
    2.0 * (p.ai * p.dai + p.bi * p.dbi) / (p.ai * p.ai + p.bi * p.bi)
}

/// Closed-form d = 1 exponent.
pub fn airy_lambda_d1(stats: &FlowStatistics) -> Result<ExponentEstimate> {
    let s = stats.tau * (stats.a + 2.0 * stats.b);
    if stats.d != 1 || !(s > 0.0) {
        return Err(Error::InvalidParameters("Airy formula needs d = 1 and A + 2B > 0".into()));
    }
    let tau = stats.tau;
    let c = (4.0 * s).powf(-2.0 / 3.0);
    let v = -0.5 / tau + airy_log_derivative(c) / (4.0 * tau * c.sqrt());
    Ok(ExponentEstimate::exact(Method::Airy, stats, v))
}

const RENORM_EVERY: u64 = 64;

/// Ensemble mean of `(ln|p(T)| - ln|p(0)|)/T` for the full SDE. Initial points
/// are uniform on the sphere unless `p0` is given.
pub fn top_lyapunov_direct(
    stats: &FlowStatistics,
    run: &RunSettings,
    p0: Option<&DispersionState>,
) -> Result<ExponentEstimate> {
    run.check()?;
    let n = run.steps();
    let rates: Vec<f64> = (0..run.ensemble)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(run.seed, purpose::DIRECT, k as u64);
            let start = match p0 {
                Some(p) => p.clone(),
                None => sample_uniform_sphere(stats.d, &mut rng),
            };
            let mut traj = RenormalizedTrajectory::new(start).expect("nonzero start");
            let l0 = traj.log_norm;
            let mut stepper = DispersionStepper::new(*stats, run.scheme);
            for i in 1..=n {
                traj.step(&mut stepper, run.dt, &mut rng);
                if i % RENORM_EVERY == 0 {
                    traj.renormalize();
                }
            }
            (traj.total_log_norm() - l0) / (n as f64 * run.dt)
        })
        .collect();
    let s: RunningStats = rates.into_iter().collect();
    Ok(ExponentEstimate::sampled(Method::Direct, stats, run, &s))
}

const QR_EVERY: u64 = 16;
const QR_BLOCKS: u64 = 32;

/// Full spectrum from one long run of the tangent frame with periodic QR.
/// Standard errors come from `QR_BLOCKS` consecutive time blocks; the
/// ensemble field of `run` is ignored.
pub fn lyapunov_spectrum_qr(stats: &FlowStatistics, run: &RunSettings) -> Result<Vec<ExponentEstimate>> {
    run.check()?;
    let d = stats.d;
    let m = 2 * d;
    let mut rng = stream(run.seed, purpose::SPECTRUM, 0);
    let mut cols: Vec<DispersionState> = (0..m)
        .map(|j| {
            let mut v = vec![0.0; m];
            v[j] = 1.0;
            DispersionState::from_slice(&v)
        })
        .collect();
    let mut stepper = DispersionStepper::new(*stats, run.scheme);
    let n = run.steps();
    let per_block = (n / QR_BLOCKS).max(QR_EVERY);
    let mut block_sum = vec![0.0; m];
    let mut blocks: Vec<RunningStats> = vec![RunningStats::new(); m];
    let mut total = vec![0.0; m];
    let mut block_steps = 0u64;
    for i in 1..=n {
        stepper.step_frame(&mut cols, run.dt, &mut rng);
        block_steps += 1;
        if i % QR_EVERY == 0 || i == n {
            let a = DMatrix::from_fn(m, m, |r, c| {
                if r < d { cols[c].rho[r] } else { cols[c].chi[r - d] }
            });
            let qr = a.qr();
            let (q, r) = (qr.q(), qr.r());
            for j in 0..m {
                let rjj = r[(j, j)];
                if !(rjj.abs() > 1e-300 && rjj.is_finite()) {
                    return Err(Error::DegenerateFrame(format!(
                        "R[{j},{j}] = {rjj:e} at step {i}"
                    )));
                }
                let l = rjj.abs().ln();
                block_sum[j] += l;
                total[j] += l;
                let sg = rjj.signum();
                for r_ in 0..m {
                    let v = q[(r_, j)] * sg;
                    if r_ < d {
                        cols[j].rho[r_] = v;
                    } else {
                        cols[j].chi[r_ - d] = v;
                    }
                }
            }
            if block_steps >= per_block {
                for j in 0..m {
                    blocks[j].push(block_sum[j] / (block_steps as f64 * run.dt));
                    block_sum[j] = 0.0;
                }
                block_steps = 0;
            }
        }
    }
    let t = n as f64 * run.dt;
    let mut out: Vec<ExponentEstimate> = (0..m)
        .map(|j| {
            let mut e = ExponentEstimate::sampled(Method::Qr, stats, run, &blocks[j]);
            e.value = total[j] / t;
            e.ensemble = Some(1);
            e
        })
        .collect();
    out.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap());
    Ok(out)
}

/// `(1/tau)` times the time average of `x 1{|x| <= x_cut}` along the reduced
/// process. In d = 1 the symmetric cut realizes the principal value.
pub fn lambda_from_invariants(stats: &FlowStatistics, run: &RunSettings, x_cut: f64) -> Result<ExponentEstimate> {
    run.check()?;
    let n = run.steps();
    let d = stats.d;
    let split = if d >= 2 { Some(HalfPlaneSplitting::new(*stats, d)?) } else { None };
    let rates: Vec<f64> = (0..run.ensemble)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(run.seed, purpose::REDUCED, k as u64);
            let start = sample_uniform_sphere(d, &mut rng);
            let c = reduce_invariants(&start).finite();
            let mut acc = 0.0;
            match &split {
                None => {
                    let mut x = c.map(|c| c.x).unwrap_or(0.0);
                    for _ in 0..n {
                        let st = step_reduced_d1(x, stats, run.dt, &mut rng, x_cut);
                        x = st.x;
                        acc += st.x_integral;
                    }
                }
                Some(sp) => {
                    let (x, y) = c.map(|c| (c.x, c.y.unwrap_or(0.0))).unwrap_or((0.0, 1.0));
                    let mut z = HalfPlanePoint::new(x, if d >= 3 && y <= 0.0 { 1.0 } else { y });
                    for _ in 0..n {
                        acc += sp.step(&mut z, run.dt, &mut rng, x_cut);
                    }
                }
            }
            acc / (n as f64 * run.dt)
        })
        .collect();
    let s: RunningStats = rates.into_iter().collect();
    let mut e = ExponentEstimate::sampled(Method::Invariants, stats, run, &s);
    e.x_cut = Some(x_cut);
    Ok(e)
}

/// `(1/tau) pv int x eta(x) dx` from the closed-form d = 1 density.
pub fn lambda_density_quadrature_d1(stats: &FlowStatistics) -> Result<ExponentEstimate> {
    let eta = crate::density::ClosedFormDensityD1::new(stats)?;
    Ok(ExponentEstimate::exact(Method::DensityQuadrature, stats, eta.pv_mean()? / stats.tau))
}

// ---------------------------------------------------------------------------

/// `g_eps = ln(1 + r^2/(1 + eps r^2))` with `r^2 = x^2 + y^2`, and the reduced
/// generator applied to it in closed form.
pub fn g_eps(x: f64, y: f64, eps: f64) -> f64 {
    let u = x * x + y * y;
    (u / (1.0 + eps * u)).ln_1p()
}

pub fn generator_g_eps(p: HalfPlanePoint, stats: &FlowStatistics, d: usize, eps: f64) -> Result<f64> {
    let (bx, by) = drift_reduced(p, stats, d)?;
    let (x, y) = (p.x, p.y);
    let u = x * x + y * y;
    let w = 1.0 + eps * u;
    let h = u / w;
    let h1 = 1.0 / (w * w);
    let h2 = -2.0 * eps / (w * w * w);
    let gu = h1 / (1.0 + h);
    let guu = (h2 * (1.0 + h) - h1 * h1) / ((1.0 + h) * (1.0 + h));
    let gx = 2.0 * x * gu;
    let gxx = 2.0 * gu + 4.0 * x * x * guu;
    let (gy, gyy) = if d >= 2 { (2.0 * y * gu, 2.0 * gu + 4.0 * y * y * guu) } else { (0.0, 0.0) };
    let by = if d >= 2 { by } else { 0.0 };
    Ok(bx * gx + by * gy + 0.5 * (stats.a + 2.0 * stats.b) * gxx + 0.5 * stats.a * gyy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedAverage {
    pub eps: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Time averages of `L g_eps` along the reduced process, for several `eps`
/// on the same trajectories.
pub fn regularized_averages(stats: &FlowStatistics, run: &RunSettings, eps: &[f64]) -> Result<Vec<RegularizedAverage>> {
    run.check()?;
    let d = stats.d;
    let sp = HalfPlaneSplitting::new(*stats, d)?;
    let n = run.steps();
    let per_traj: Vec<Vec<f64>> = (0..run.ensemble)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(run.seed, purpose::REGULARIZED, k as u64);
            let c = reduce_invariants(&sample_uniform_sphere(d, &mut rng)).finite();
            let (x, y) = c.map(|c| (c.x, c.y.unwrap_or(0.0))).unwrap_or((0.0, 1.0));
            let mut z = HalfPlanePoint::new(x, if d >= 3 && y <= 0.0 { 1.0 } else { y });
            let mut sums = vec![0.0; eps.len()];
            for _ in 0..n {
                sp.step(&mut z, run.dt, &mut rng, f64::INFINITY);
                for (s, &e) in sums.iter_mut().zip(eps) {
                    *s += generator_g_eps(z, stats, d, e).unwrap_or(0.0);
                }
            }
            sums.iter().map(|s| s / n as f64).collect()
        })
        .collect();
    Ok(eps
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let s: RunningStats = per_traj.iter().map(|v| v[j]).collect();
            RegularizedAverage {
                eps: e,
                mean: s.mean(),
                stderr: s.std_err(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub lag_times: Vec<f64>,
    pub autocorrelation: Vec<f64>,
    /// First time the autocorrelation falls below 1/e (linear interpolation).
    pub efold_time: f64,
    /// Fit of `ln acf` over `[0, 2 efold_time]`.
    pub decay_rate: f64,
    pub r_squared: f64,
}

/// Bounded sphere-continuous observable `x/(1 + x^2 + y^2) = rho.chi/|p|^2`.
pub fn mixing_observable(x: f64, y: f64) -> f64 {
    x / (1.0 + x * x + y * y)
}

/// Autocorrelation of `mixing_observable` along the stationary reduced process
/// sampled every `sample_every` steps, averaged over the ensemble.
pub fn mixing_autocorrelation(
    stats: &FlowStatistics,
    run: &RunSettings,
    sample_every: u64,
    max_lag: usize,
    burn_in: f64,
) -> Result<MixingReport> {
    run.check()?;
    let d = stats.d;
    let sp = HalfPlaneSplitting::new(*stats, d)?;
    let n = run.steps();
    let burn = (burn_in / run.dt).round() as u64;
    let series: Vec<Vec<f64>> = (0..run.ensemble)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(run.seed, purpose::MIXING, k as u64);
            let c = reduce_invariants(&sample_uniform_sphere(d, &mut rng)).finite();
            let (x, y) = c.map(|c| (c.x, c.y.unwrap_or(0.0))).unwrap_or((0.0, 1.0));
            let mut z = HalfPlanePoint::new(x, if d >= 3 && y <= 0.0 { 1.0 } else { y });
            let mut out = Vec::with_capacity((n / sample_every) as usize);
            for i in 0..burn + n {
                sp.step(&mut z, run.dt, &mut rng, f64::INFINITY);
                if i >= burn && (i - burn) % sample_every == 0 {
                    out.push(mixing_observable(z.x, z.y));
                }
            }
            out
        })
        .collect();
    let all: RunningStats = series.iter().flatten().copied().collect();
    let (mu, var) = (all.mean(), all.variance());
    let mut acf = vec![0.0; max_lag + 1];
    let mut cnt = vec![0u64; max_lag + 1];
    for s in &series {
        for lag in 0..=max_lag.min(s.len().saturating_sub(1)) {
            let mut acc = 0.0;
            for i in 0..s.len() - lag {
                acc += (s[i] - mu) * (s[i + lag] - mu);
            }
            acf[lag] += acc;
            cnt[lag] += (s.len() - lag) as u64;
        }
    }
    for (a, &c) in acf.iter_mut().zip(&cnt) {
        *a /= c.max(1) as f64 * var;
    }
    let dt_s = run.dt * sample_every as f64;
    let lag_times: Vec<f64> = (0..=max_lag).map(|k| k as f64 * dt_s).collect();
    let inv_e = (-1f64).exp();
    let k = acf
        .iter()
        .position(|&a| a < inv_e)
        .ok_or_else(|| Error::InvalidParameters("autocorrelation never falls below 1/e; raise max_lag".into()))?;
    let efold_time = if k == 0 {
        0.0
    } else {
        let (a0, a1) = (acf[k - 1], acf[k]);
        lag_times[k - 1] + dt_s * (a0 - inv_e) / (a0 - a1)
    };
    let (mut fx, mut fy) = (Vec::new(), Vec::new());
    for (t, a) in lag_times.iter().zip(&acf) {
        if *t <= 2.0 * efold_time && *a > 0.0 {
            fx.push(*t);
            fy.push(a.ln());
        }
    }
    let fit = linear_fit(&fx, &fy).ok_or_else(|| Error::InvalidParameters("too few lags for the fit".into()))?;
    Ok(MixingReport {
        lag_times,
        autocorrelation: acf,
        efold_time,
        decay_rate: -fit.slope,
        r_squared: fit.r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn airy_lambda_reference() {
        let s = FlowStatistics::new(1, 1.0, 1.0, 0.0).unwrap();
        let l = airy_lambda_d1(&s).unwrap();
        assert!((l.value + 0.11214996).abs() < 1e-7, "{}", l.value);
    }

    #[test]
    fn noiseless_direct_exponent_vanishes() {
        let s = FlowStatistics::noiseless(2, 1.0);
        let run = RunSettings::new(0.01, 200.0, 4, 1);
        let e = top_lyapunov_direct(&s, &run, None).unwrap();
        assert!(e.value.abs() < 0.02, "{}", e.value);
    }

    #[test]
    fn noiseless_spectrum() {
        let s = FlowStatistics::noiseless(2, 1.0);
        let run = RunSettings::new(0.01, 400.0, 1, 1);
        let sp = lyapunov_spectrum_qr(&s, &run).unwrap();
        let v: Vec<f64> = sp.iter().map(|e| e.value).collect();
        assert!(v[0].abs() < 0.02 && v[1].abs() < 0.02, "{v:?}");
        assert!((v[2] + 1.0).abs() < 0.02 && (v[3] + 1.0).abs() < 0.02, "{v:?}");
    }

    #[test]
    fn generator_g_eps_matches_finite_differences() {
        for d in [2, 3] {
            let s = FlowStatistics::new(d, 1.3, 1.0, 0.2).unwrap();
            for &(x, y) in &[(0.3, 0.7), (-2.0, 1.5), (4.0, 0.2)] {
                let p = HalfPlanePoint::new(x, y);
                for eps in [0.1, 0.001] {
                    let a = generator_g_eps(p, &s, d, eps).unwrap();
                    let f = crate::reduced::apply_reduced_generator(|x, y| g_eps(x, y, eps), p, &s, d).unwrap();
                    assert!((a - f).abs() < 1e-5 * (1.0 + a.abs()), "{a} vs {f}");
                }
            }
        }
    }
}
