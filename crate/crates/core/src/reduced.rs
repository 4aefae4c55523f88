//! Reduced (rotation-invariant) processes: the d = 1 circle process on the
//! projective line and the d >= 2 process on the (half-)plane `z = x + iy`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::FlowStatistics;
use crate::rng::normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlanePoint {
    pub x: f64,
    pub y: f64,
}

impl HalfPlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn abs(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Coefficients of the shifted process `w = z + 1/2`:
/// `dw = (1/tau)(-w^2 + a + i tau b (d-2)/Im w) dt + sqrt(2 k1/tau) dB1 + i sqrt(2 k2/tau) dB2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedParams {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub tau: f64,
}

impl ShiftedParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameters(m.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if self.b < 0.0 || self.kappa1 < 0.0 || !(self.kappa2 > 0.0) {
            return bad("need b >= 0, kappa1 >= 0, kappa2 > 0");
        }
        if d >= 3 && self.tau * self.b * (d as f64 - 2.0) < self.kappa2 * (1.0 - 1e-12) {
            return bad("need tau*b*(d-2) >= kappa2");
        }
        Ok(())
    }

    /// Drift of `w` (without the `1/tau` already applied: returns `dw/dt`).
    pub fn drift(&self, w: HalfPlanePoint, d: usize) -> (f64, f64) {
        let HalfPlanePoint { x, y } = w;
        let sing = if d >= 3 { self.tau * self.b * (d as f64 - 2.0) / y } else { 0.0 };
        (
            -(x * x - y * y - self.a1) / self.tau,
            -(2.0 * x * y - self.a2 - sing) / self.tau,
        )
    }
}

pub fn map_to_shifted(stats: &FlowStatistics, d: usize) -> Result<ShiftedParams> {
    if d < 2 {
        return Err(Error::InvalidParameters("the shifted process needs d >= 2".into()));
    }
    let p = ShiftedParams {
        a1: 0.25,
        a2: 0.0,
        b: stats.a / 2.0,
        kappa1: stats.tau * (stats.a + 2.0 * stats.b) / 2.0,
        kappa2: stats.tau * stats.a / 2.0,
        tau: stats.tau,
    };
    p.validate(d)?;
    Ok(p)
}

/// First-order coefficients of the reduced generator.
pub fn drift_reduced(p: HalfPlanePoint, stats: &FlowStatistics, d: usize) -> Result<(f64, f64)> {
    let HalfPlanePoint { x, y } = p;
    let tau = stats.tau;
    let sing = if d >= 3 {
        if y <= 0.0 {
            return Err(Error::Domain(format!("singular drift at y = {y} for d = {d}")));
        }
        tau * stats.a * (d as f64 - 2.0) / (2.0 * y)
    } else {
        0.0
    };
    Ok((-(x * x - y * y + x) / tau, -(2.0 * x * y + y - sing) / tau))
}

/// Noise amplitudes `(sqrt(A+2B), sqrt(A))` of the reduced process.
pub fn reduced_noise(stats: &FlowStatistics) -> (f64, f64) {
    ((stats.a + 2.0 * stats.b).max(0.0).sqrt(), stats.a.max(0.0).sqrt())
}

/// Reduced generator applied to `f` by central differences.
pub fn apply_reduced_generator<F: Fn(f64, f64) -> f64>(
    f: F,
    p: HalfPlanePoint,
    stats: &FlowStatistics,
    d: usize,
) -> Result<f64> {
    let (bx, by) = drift_reduced(p, stats, d)?;
    let hx = 1e-4 * (1.0 + p.x.abs());
    let mut hy = 1e-4 * (1.0 + p.y.abs());
    if d >= 3 {
        hy = hy.min(0.25 * p.y);
    }
    let f0 = f(p.x, p.y);
    let (fxp, fxm) = (f(p.x + hx, p.y), f(p.x - hx, p.y));
    let (fyp, fym) = (f(p.x, p.y + hy), f(p.x, p.y - hy));
    let fx = (fxp - fxm) / (2.0 * hx);
    let fxx = (fxp - 2.0 * f0 + fxm) / (hx * hx);
    let (fy, fyy) = if d == 1 {
        (0.0, 0.0)
    } else {
        ((fyp - fym) / (2.0 * hy), (fyp - 2.0 * f0 + fym) / (hy * hy))
    };
    let by = if d == 1 { 0.0 } else { by };
    Ok(bx * fx + by * fy + 0.5 * (stats.a + 2.0 * stats.b) * fxx + 0.5 * stats.a * fyy)
}

// ---------------------------------------------------------------------------
// d = 1

/// Outcome of one circle-process step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleStep {
    pub x: f64,
    /// `(1/tau) * integral of x 1{|x| <= x_cut}` over the step.
    pub x_integral: f64,
    /// The step passed through the point at infinity (exit at -inf, re-entry at +inf).
    pub wrapped: bool,
}

#[inline]
fn ln_abs_1p(u: f64) -> f64 {
    if u > -1.0 {
        u.ln_1p()
    } else {
        (-1.0 - u).ln()
    }
}

/// Exact Riccati flow `x' = -(x + x^2)/tau` over the time with `1 - e^{-t/tau} = qs`.
/// Returns the end point, `(1/tau) * int x 1{|x| <= x_cut} dt` and whether the
/// trajectory passed through infinity.
pub fn riccati_flow(x0: f64, qs: f64, x_cut: f64) -> (f64, f64, bool) {
    if x0 == 0.0 {
        return (0.0, 0.0, false);
    }
    let den = 1.0 + x0 * qs;
    let x1 = if den == 0.0 { -x0.signum() * f64::MAX } else { x0 * (1.0 - qs) / den };
    let pole = -1.0 / x0;
    let wrapped = pole > 0.0 && pole <= qs;
    let mut cuts = [0.0; 4];
    let mut n = 0;
    cuts[n] = 0.0;
    n += 1;
    if x_cut.is_finite() {
        for c in [x_cut, -x_cut] {
            let q = (x0 - c) / (x0 * (1.0 + c));
            if q > 0.0 && q < qs {
                cuts[n] = q;
                n += 1;
            }
        }
    }
    cuts[n] = qs;
    n += 1;
    let cuts = &mut cuts[..n];
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut integral = 0.0;
    for w in cuts.windows(2) {
        let (qa, qb) = (w[0], w[1]);
        if qb <= qa {
            continue;
        }
        let qm = 0.5 * (qa + qb);
        let xm = x0 * (1.0 - qm) / (1.0 + x0 * qm);
        if xm.abs() <= x_cut {
            integral += ln_abs_1p(x0 * qb) - ln_abs_1p(x0 * qa);
        }
    }
    (x1, integral, wrapped)
}

/// One step of the circle process: exact drift half-step, additive noise,
/// exact drift half-step. Excursions through infinity re-enter from the
/// antipode automatically.
pub fn step_reduced_d1<R: Rng + ?Sized>(
    x: f64,
    stats: &FlowStatistics,
    dt: f64,
    rng: &mut R,
    x_cut: f64,
) -> CircleStep {
    let qs = -(-0.5 * dt / stats.tau).exp_m1();
    let sigma = (stats.a + 2.0 * stats.b).max(0.0).sqrt();
    let (x1, i1, w1) = riccati_flow(x, qs, x_cut);
    let x2 = if sigma > 0.0 { x1 + sigma * dt.sqrt() * normal(rng) } else { x1 };
    let (x3, i2, w2) = riccati_flow(x2, qs, x_cut);
    CircleStep {
        x: x3,
        x_integral: i1 + i2,
        wrapped: w1 || w2,
    }
}

// ---------------------------------------------------------------------------
// d >= 2

/// Euler-Maruyama step outcome with halving diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneStep {
    pub point: HalfPlanePoint,
    /// Deepest halving level used inside the step (0 = no halving).
    pub halvings: u32,
    pub substeps: u32,
}

pub const MAX_HALVINGS: u32 = 20;

/// Euler-Maruyama step of the (half-)plane process. A proposal that leaves
/// `y > 0` (d >= 3), is non-finite, or is taken where `|z| h > 1/4` is
/// discarded and retried with half the step and fresh noise; the rest of the
/// interval is then covered by further substeps.
pub fn step_reduced_halfplane<R: Rng + ?Sized>(
    point: HalfPlanePoint,
    stats: &FlowStatistics,
    d: usize,
    dt: f64,
    rng: &mut R,
) -> Result<HalfPlaneStep> {
    if d < 2 {
        return Err(Error::InvalidParameters("half-plane process needs d >= 2".into()));
    }
    if d >= 3 && point.y <= 0.0 {
        return Err(Error::Domain(format!("y = {} must be positive for d = {d}", point.y)));
    }
    let (sx, sy) = reduced_noise(stats);
    let mut z = point;
    let mut left = dt;
    let mut depth = 0u32;
    let mut out = HalfPlaneStep {
        point,
        halvings: 0,
        substeps: 0,
    };
    while left > 0.0 {
        // h = dt / 2^depth, never past the end of the interval
        let h = (dt / f64::from(1u32 << depth)).min(left);
        let mut accepted = None;
        if z.abs() * h <= 0.25 {
            let (bx, by) = drift_reduced(z, stats, d)?;
            let sd = h.sqrt();
            let p = HalfPlanePoint {
                x: z.x + bx * h + sx * sd * normal(rng),
                y: z.y + by * h + sy * sd * normal(rng),
            };
            if p.x.is_finite() && p.y.is_finite() && (d < 3 || p.y > 0.0) {
                accepted = Some(p);
            }
        }
        match accepted {
            Some(p) => {
                z = p;
                left -= h;
                out.substeps += 1;
                out.halvings = out.halvings.max(depth);
                if left <= 1e-12 * dt {
                    break;
                }
                depth = depth.saturating_sub(1);
            }
            None if depth >= MAX_HALVINGS => {
                return Err(Error::Integration(format!(
                    "more than {MAX_HALVINGS} halvings at z = ({}, {}), h = {h:e}",
                    z.x, z.y
                )));
            }
            None => depth += 1,
        }
    }
    out.point = z;
    Ok(out)
}

/// Exact flow of `z' = -(z + z^2)/tau` in the complex plane over the time with
/// `1 - e^{-t/tau} = q`. Returns the end point and `(1/tau) int x dt`.
#[inline]
pub fn complex_riccati_flow(z: HalfPlanePoint, q: f64) -> (HalfPlanePoint, f64) {
    // z (1 - q) / (1 + z q)
    let (dr, di) = (1.0 + z.x * q, z.y * q);
    let den = dr * dr + di * di;
    let (nr, ni) = (z.x * (1.0 - q), z.y * (1.0 - q));
    let w = HalfPlanePoint {
        x: (nr * dr + ni * di) / den,
        y: (ni * dr - nr * di) / den,
    };
    // ln|1 + z q| with ln_1p for accuracy at small q
    let u = z.x * q;
    let lr = if u > -0.5 {
        0.5 * (2.0 * u + u * u + di * di).ln_1p()
    } else {
        0.5 * den.ln()
    };
    (w, lr)
}

/// Splitting scheme for the (half-)plane process: exact Riccati half-steps
/// around an exact step of the noise (and, for d >= 3, of the singular drift,
/// which is a scaled Bessel process of dimension d - 1).
#[derive(Debug, Clone, Copy)]
pub struct HalfPlaneSplitting {
    pub stats: FlowStatistics,
    pub d: usize,
    sx: f64,
    sy: f64,
}

impl HalfPlaneSplitting {
    pub fn new(stats: FlowStatistics, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParameters("half-plane process needs d >= 2".into()));
        }
        let (sx, sy) = reduced_noise(&stats);
        Ok(Self { stats, d, sx, sy })
    }

    /// Advance `z` by `dt`. Returns `(1/tau) int x 1{|x| <= x_cut} dt` over the
    /// drift pieces whose end points stay inside the cut.
    pub fn step<R: Rng + ?Sized>(&self, z: &mut HalfPlanePoint, dt: f64, rng: &mut R, x_cut: f64) -> f64 {
        let q = -(-0.5 * dt / self.stats.tau).exp_m1();
        let mut integral = 0.0;
        let (w, i1) = complex_riccati_flow(*z, q);
        if z.x.abs() <= x_cut && w.x.abs() <= x_cut {
            integral += i1;
        }
        *z = w;
        let sd = dt.sqrt();
        z.x += self.sx * sd * normal(rng);
        if self.d == 2 {
            z.y += self.sy * sd * normal(rng);
        } else {
            let s = self.sy * sd;
            let mut r2 = (z.y + s * normal(rng)).powi(2);
            for _ in 0..self.d - 2 {
                r2 += (s * normal(rng)).powi(2);
            }
            z.y = r2.sqrt();
        }
        let (w, i2) = complex_riccati_flow(*z, q);
        if z.x.abs() <= x_cut && w.x.abs() <= x_cut {
            integral += i2;
        }
        *z = w;
        integral
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_examples() {
        let s = FlowStatistics::new(3, 1.0, 2.0, 0.0).unwrap();
        let p = map_to_shifted(&s, 3).unwrap();
        assert_eq!((p.b, p.kappa2), (1.0, 1.0));
        let s = FlowStatistics::new(3, 2.0, 1.0, 0.0).unwrap();
        let p = map_to_shifted(&s, 3).unwrap();
        assert_eq!((p.kappa1, p.kappa2), (1.0, 1.0));
        assert_eq!((p.a1, p.a2), (0.25, 0.0));
    }

    #[test]
    fn drift_examples() {
        let s = FlowStatistics::new(2, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(drift_reduced(HalfPlanePoint::new(0.0, 0.0), &s, 2).unwrap(), (0.0, 0.0));
        let s = FlowStatistics::new(3, 1.0, 2.0, 0.0).unwrap();
        let (bx, by) = drift_reduced(HalfPlanePoint::new(0.0, 1.0), &s, 3).unwrap();
        assert!((bx - 1.0).abs() < 1e-15 && by.abs() < 1e-15);
        assert!(drift_reduced(HalfPlanePoint::new(0.0, 0.0), &s, 3).is_err());
    }

    #[test]
    fn riccati_flow_matches_closed_form() {
        // x(t) = x0 e^{-t} / (1 + x0 (1 - e^{-t}))
        for &x0 in &[0.3, -0.5, 2.0, -3.0, 40.0] {
            let t: f64 = 0.37;
            let q = 1.0 - (-t).exp();
            let (x1, _, _) = riccati_flow(x0, q, f64::INFINITY);
            let expect = x0 * (-t).exp() / (1.0 + x0 * q);
            assert!((x1 - expect).abs() < 1e-13 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn riccati_integral_is_log_of_rho() {
        // (1/tau) int x dt = ln|rho(t)/rho(0)| along the noiseless flow
        let x0 = 1.7;
        let q = 0.3;
        let (_, i, w) = riccati_flow(x0, q, f64::INFINITY);
        assert!(!w);
        assert!((i - (1.0 + x0 * q).ln()).abs() < 1e-15);
        // crossing infinity, the pv integral over the excursion is still ln|1 + x0 q|
        let x0 = -5.0;
        let (_, i, w) = riccati_flow(x0, q, f64::INFINITY);
        assert!(w);
        assert!((i - (1.0 + x0 * q).abs().ln()).abs() < 1e-14);
    }

    #[test]
    fn truncated_integral_against_quadrature() {
        let (x0, q, cut) = (-1.2, 0.9, 4.0);
        let (_, i, w) = riccati_flow(x0, q, cut);
        assert!(w);
        // integrate x(u) 1{|x|<=cut} du/tau with tau = 1 on a fine grid in u
        let umax = -(1.0f64 - q).ln();
        let n = 2_000_000;
        let h = umax / n as f64;
        let mut s = 0.0;
        for k in 0..n {
            let u = (k as f64 + 0.5) * h;
            let qq = 1.0 - (-u).exp();
            let x = x0 * (1.0 - qq) / (1.0 + x0 * qq);
            if x.abs() <= cut {
                s += x * h;
            }
        }
        assert!((i - s).abs() < 1e-4, "{i} vs {s}");
    }

    #[test]
    fn noiseless_reinjection_time() {
        let s = FlowStatistics::noiseless(1, 1.0);
        let mut rng = crate::rng::stream(0, 0, 0);
        let dt = 1e-3;
        let mut x = -2.0;
        let mut t = 0.0;
        loop {
            let st = step_reduced_d1(x, &s, dt, &mut rng, 1e3);
            t += dt;
            x = st.x;
            if st.wrapped {
                break;
            }
        }
        assert!((t - 2f64.ln()).abs() < 2.0 * dt);
        assert!(x > 0.0);
        let st = step_reduced_d1(0.0, &s, dt, &mut rng, 1e3);
        assert_eq!(st.x, 0.0);
    }

    #[test]
    fn complex_flow_preserves_half_plane_and_matches_real_flow() {
        let q = 0.4;
        let (w, _) = complex_riccati_flow(HalfPlanePoint::new(-3.0, 0.01), q);
        assert!(w.y > 0.0);
        let (w, i) = complex_riccati_flow(HalfPlanePoint::new(0.8, 0.0), q);
        let (x1, i1, _) = riccati_flow(0.8, q, f64::INFINITY);
        assert!((w.x - x1).abs() < 1e-15 && w.y == 0.0);
        assert!((i - i1).abs() < 1e-15);
    }

    #[test]
    fn em_halfplane_d2_noiseless_real_axis() {
        let s = FlowStatistics::noiseless(2, 1.0);
        let mut rng = crate::rng::stream(0, 0, 0);
        let st = step_reduced_halfplane(HalfPlanePoint::new(0.5, 0.0), &s, 2, 0.01, &mut rng).unwrap();
        assert!((st.point.x - (0.5 - 0.75 * 0.01)).abs() < 1e-15);
        assert_eq!(st.point.y, 0.0);
    }
}
