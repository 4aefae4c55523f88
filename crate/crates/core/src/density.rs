//! Stationary densities: the closed-form d = 1 law, histograms and tail fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::noise::FlowStatistics;
use crate::projective::{reduce_invariants, sample_uniform_sphere};
use crate::quad::{integrate, QuadOptions};
use crate::reduced::{step_reduced_d1, HalfPlanePoint, HalfPlaneSplitting};
use crate::rng::{purpose, stream};
use crate::stats::linear_fit;

/// The d = 1 stationary density
/// `eta(x) = Z^-1 int_{-inf}^x exp(Phi(x') - Phi(x)) dx'`,
/// `Phi(x) = (2x^3/3 + x^2) / s` with `s = tau (A + 2B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormDensityD1 {
    pub s: f64,
    pub z: f64,
}

impl ClosedFormDensityD1 {
    pub fn new(stats: &FlowStatistics) -> Result<Self> {
        if stats.d != 1 {
            return Err(Error::InvalidParameters("closed-form density needs d = 1".into()));
        }
        let s = stats.tau * (stats.a + 2.0 * stats.b);
        if !(s > 0.0) {
            return Err(Error::InvalidParameters("need tau (A + 2B) > 0".into()));
        }
        let mut me = Self { s, z: 1.0 };
        let opts = QuadOptions::tol(0.0, 1e-12);
        let mut err = None;
        let mut part = |a: f64, b: f64| {
            integrate(
                |x| match me.unnormalized(x) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        f64::NAN
                    }
                },
                a,
                b,
                opts,
            )
        };
        let z = part(f64::NEG_INFINITY, -1.0)? + part(-1.0, 1.0)? + part(1.0, f64::INFINITY)?;
        if let Some(e) = err {
            return Err(e);
        }
        me.z = z;
        Ok(me)
    }

    /// `int_0^inf exp(Phi(x - t) - Phi(x)) dt`.
    pub fn unnormalized(&self, x: f64) -> Result<f64> {
        let s = self.s;
        let a = 2.0 * (x * x + x) / s;
        let b = (2.0 * x + 1.0) / s;
        let c = 2.0 / (3.0 * s);
        if x > 30.0 && b.abs() < 1e-4 * a * a {
            // Watson's lemma on exp(-a t + b t^2 - c t^3)
            let a2 = a * a;
            return Ok(1.0 / a + 2.0 * b / (a2 * a) - 6.0 * c / (a2 * a2) + 12.0 * b * b / (a2 * a2 * a));
        }
        let k = a.max(1.0);
        let g = |v: f64| {
            let t = v / k;
            (-(a * t) + b * t * t - c * t * t * t).exp() / k
        };
        integrate(g, 0.0, f64::INFINITY, QuadOptions::tol(0.0, 1e-13))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.unnormalized(x)? / self.z)
    }

    /// Probability of `[lo, hi]` (either end may be infinite).
    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        integrate(|x| self.eval(x).unwrap_or(f64::NAN), lo, hi, QuadOptions::tol(1e-14, 1e-10))
    }

    /// Principal value `int x eta(x) dx = int_0^inf x (eta(x) - eta(-x)) dx`.
    pub fn pv_mean(&self) -> Result<f64> {
        integrate(
            |x| x * (self.eval(x).unwrap_or(f64::NAN) - self.eval(-x).unwrap_or(f64::NAN)),
            0.0,
            f64::INFINITY,
            QuadOptions::tol(1e-13, 1e-11),
        )
    }
}

/// Convenience wrapper; builds (and normalizes) the density on every call.
pub fn closed_form_density_d1(x: f64, stats: &FlowStatistics) -> Result<f64> {
    ClosedFormDensityD1::new(stats)?.eval(x)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHistogram {
    pub edges: Vec<f64>,
    /// Per-bin probability among in-range samples.
    pub mass: Vec<f64>,
    pub total_samples: u64,
    pub in_range_samples: u64,
}

/// Mergeable histogram counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramAccumulator {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl HistogramAccumulator {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameters("bin edges must be strictly increasing".into()));
        }
        let n = edges.len() - 1;
        Ok(Self {
            edges,
            counts: vec![0; n],
            total: 0,
        })
    }

    pub fn push(&mut self, x: f64) {
        self.total += 1;
        let e = &self.edges;
        if !(x >= e[0] && x <= e[e.len() - 1]) {
            return;
        }
        let i = e.partition_point(|&v| v <= x).saturating_sub(1).min(self.counts.len() - 1);
        self.counts[i] += 1;
    }

    pub fn merge(&mut self, other: &HistogramAccumulator) {
        debug_assert_eq!(self.edges, other.edges);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn finish(&self) -> Result<DensityHistogram> {
        let in_range: u64 = self.counts.iter().sum();
        if in_range == 0 {
            return Err(Error::EmptyHistogram);
        }
        Ok(DensityHistogram {
            edges: self.edges.clone(),
            mass: self.counts.iter().map(|&c| c as f64 / in_range as f64).collect(),
            total_samples: self.total,
            in_range_samples: in_range,
        })
    }
}

pub fn estimate_histogram<I: IntoIterator<Item = f64>>(samples: I, edges: Vec<f64>) -> Result<DensityHistogram> {
    let mut acc = HistogramAccumulator::new(edges)?;
    for x in samples {
        acc.push(x);
    }
    acc.finish()
}

impl DensityHistogram {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    /// Bin probabilities relative to all samples, including out-of-range ones.
    pub fn absolute_mass(&self) -> Vec<f64> {
        let f = self.in_range_samples as f64 / self.total_samples.max(1) as f64;
        self.mass.iter().map(|m| m * f).collect()
    }

    /// L1 distance to a law given by its bin probabilities; the out-of-range
    /// remainder counts as one extra cell on both sides.
    pub fn l1_distance<F: FnMut(f64, f64) -> f64>(&self, mut expected: F) -> f64 {
        let got = self.absolute_mass();
        let mut covered = 0.0;
        let mut l1 = 0.0;
        for (i, g) in got.iter().enumerate() {
            let p = expected(self.edges[i], self.edges[i + 1]);
            covered += p;
            l1 += (g - p).abs();
        }
        let out_got = 1.0 - got.iter().sum::<f64>();
        l1 + (out_got - (1.0 - covered)).abs()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,mass")?;
        for (i, m) in self.mass.iter().enumerate() {
            writeln!(w, "{},{},{}", self.edges[i], self.edges[i + 1], m)?;
        }
        Ok(())
    }
}

/// Linear core bins on `[-core, core]` and log-spaced tail bins out to `tail`
/// on each side.
pub fn tail_binning(core: f64, tail: f64, n_core: usize, n_tail: usize) -> Vec<f64> {
    let mut right: Vec<f64> = (1..=n_tail)
        .map(|k| core * (tail / core).powf(k as f64 / n_tail as f64))
        .collect();
    let mut edges: Vec<f64> = right.iter().rev().map(|v| -v).collect();
    edges.extend((0..=n_core).map(|k| -core + 2.0 * core * k as f64 / n_core as f64));
    edges.append(&mut right);
    edges
}

/// 200 linear core bins and 400 log bins per sign.
pub fn default_binning(core: f64, tail: f64) -> Vec<f64> {
    tail_binning(core, tail, 200, 400)
}

/// Bins equally spaced in `atan x`, covering the whole line (outer edges infinite).
pub fn angle_binning(n: usize) -> Vec<f64> {
    let mut e = vec![f64::NEG_INFINITY];
    for k in 1..n {
        let th = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / n as f64;
        e.push(th.tan());
    }
    e.push(f64::INFINITY);
    e
}

/// Least-squares slope of `log(mass/width)` against `log|x|` over bins lying
/// inside `lo <= |x| <= hi`, with its standard error.
pub fn fit_tail_exponent(hist: &DensityHistogram, window: (f64, f64)) -> Result<(f64, f64)> {
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (i, &m) in hist.mass.iter().enumerate() {
        let (a, b) = (hist.edges[i], hist.edges[i + 1]);
        if m <= 0.0 || !(a.is_finite() && b.is_finite()) || a < 0.0 && b > 0.0 {
            continue;
        }
        let (lo, hi) = if a >= 0.0 { (a, b) } else { (-b, -a) };
        if lo >= window.0 && hi <= window.1 {
            lx.push((lo * hi).sqrt().ln());
            ly.push((m / (hi - lo)).ln());
        }
    }
    if lx.len() < 5 {
        return Err(Error::InvalidParameters(format!(
            "only {} populated bins in the window {window:?}",
            lx.len()
        )));
    }
    let f = linear_fit(&lx, &ly).ok_or_else(|| Error::InvalidParameters("degenerate tail fit".into()))?;
    Ok((f.slope, f.slope_std_err))
}

// ---------------------------------------------------------------------------

/// Sampling plan for stationary statistics of a reduced process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub dt: f64,
    /// Recorded steps per trajectory.
    pub steps: u64,
    pub burn_in_steps: u64,
    pub ensemble: usize,
    pub seed: u64,
}

/// Histogram of `x` (d = 1) or of the `x`-marginal (d >= 2) over an ensemble
/// of stationary runs, sampled after every step.
pub fn stationary_x_histogram(stats: &FlowStatistics, plan: &SamplingPlan, edges: &[f64]) -> Result<DensityHistogram> {
    let base = HistogramAccumulator::new(edges.to_vec())?;
    let parts: Vec<HistogramAccumulator> = (0..plan.ensemble)
        .into_par_iter()
        .map(|k| {
            let mut acc = base.clone();
            visit_stationary(stats, plan, k as u64, |x, _| acc.push(x));
            acc
        })
        .collect();
    let mut acc = base;
    for p in &parts {
        acc.merge(p);
    }
    acc.finish()
}

/// Run trajectory `index` of `plan` and hand every recorded `(x, y)` to `visit`
/// (`y = 0` in d = 1).
pub fn visit_stationary<F: FnMut(f64, f64)>(stats: &FlowStatistics, plan: &SamplingPlan, index: u64, mut visit: F) {
    let mut rng = stream(plan.seed, purpose::REDUCED, index);
    let start = sample_uniform_sphere(stats.d, &mut rng);
    let c = reduce_invariants(&start).finite();
    let (x0, y0) = c.map(|c| (c.x, c.y.unwrap_or(0.0))).unwrap_or((0.0, 1.0));
    if stats.d == 1 {
        let mut x = x0;
        for k in 0..plan.burn_in_steps + plan.steps {
            x = step_reduced_d1(x, stats, plan.dt, &mut rng, f64::INFINITY).x;
            if k >= plan.burn_in_steps {
                visit(x, 0.0);
            }
        }
    } else {
        let sp = HalfPlaneSplitting::new(*stats, stats.d).expect("d >= 2");
        let mut z = HalfPlanePoint::new(x0, if y0 > 0.0 || stats.d == 2 { y0 } else { 1.0 });
        for k in 0..plan.burn_in_steps + plan.steps {
            sp.step(&mut z, plan.dt, &mut rng, f64::INFINITY);
            if k >= plan.burn_in_steps {
                visit(z.x, z.y);
            }
        }
    }
}
