//! Glued Lyapunov function for the shifted half-plane process and a numerical
//! verifier of nonnegativity, growth and generator negativity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::reduced::{HalfPlanePoint, ShiftedParams};

/// Constants of the five local functions and of the gluing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    /// Diffusion level the unscaled function is built for.
    pub kappa2: f64,
    pub delta: f64,
    pub beta: f64,
    pub e_lf: f64,
    pub xi: f64,
    /// Largest `kappa2` the unscaled function is trusted for; fixes `eta`.
    pub eps: f64,
    /// Radius of the ball where the constant filler is used.
    pub exceptional_radius: f64,
    pub collar: f64,
}

impl Default for CertificateParams {
    fn default() -> Self {
        Self::with_kappa2(0.01)
    }
}

impl CertificateParams {
    pub fn with_kappa2(kappa2: f64) -> Self {
        let delta = kappa2 / 7.0;
        Self {
            c1: 5.0e3,
            c2: 1.0e4,
            c3: 1.0e5,
            c4: 1.0e5,
            c5: 2.0e5,
            kappa2,
            delta,
            beta: 11.0 * delta / 4.0,
            e_lf: 5.0,
            xi: 5f64.sqrt() / 2.0,
            eps: 0.05,
            exceptional_radius: 4.0,
            collar: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameters(m.to_string()));
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < self.c3 && self.c3 == self.c4 && self.c4 < self.c5) {
            return bad("need 0 < C1 < C2 < C3 = C4 < C5");
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad("delta must lie in (0, 1/2)");
        }
        if !(self.e_lf * self.beta < 2.0 * self.kappa2) {
            return bad("need E beta < 2 kappa2");
        }
        if !(self.eps > 0.0 && self.exceptional_radius >= 4.0 && self.collar > 0.0) {
            return bad("need eps > 0, exceptional radius >= 4 and a positive collar");
        }
        Ok(())
    }

    /// Scale `eta` with `eps eta^-3 = 2 kappa2` of the process.
    pub fn eta(&self, shifted: &ShiftedParams) -> f64 {
        (self.eps / (2.0 * shifted.kappa2)).cbrt()
    }
}

/// Smooth cut-offs used for gluing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpKit {
    norm: f64,
}

impl Default for BumpKit {
    fn default() -> Self {
        Self::new()
    }
}

impl BumpKit {
    pub fn new() -> Self {
        let norm = integrate(Self::r, 0.0, 1.0, QuadOptions::tol(0.0, 1e-15)).expect("bump integral");
        Self { norm }
    }

    /// `exp(-1/(1 - (2t-1)^2))` on `(0, 1)`, zero elsewhere.
    pub fn r(t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        let u = 2.0 * t - 1.0;
        (-1.0 / (1.0 - u * u)).exp()
    }

    /// Normalized primitive of `r`: 0 below 0, 1 above 1.
    pub fn s(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let opts = QuadOptions::tol(1e-300, 1e-14);
        if x <= 0.5 {
            integrate(Self::r, 0.0, x, opts).unwrap_or(f64::NAN) / self.norm
        } else {
            1.0 - integrate(Self::r, x, 1.0, opts).unwrap_or(f64::NAN) / self.norm
        }
    }

    /// 1 on `(-inf, 1]`, 0 on `[2, inf)`.
    pub fn zeta(&self, x: f64) -> f64 {
        1.0 - self.s(x - 1.0)
    }

    pub fn mu(&self, x: f64) -> f64 {
        self.zeta(x + 3.0)
    }

    pub fn nu(&self, x: f64, y: f64) -> f64 {
        self.zeta(y.abs()) * self.mu(x)
    }

    pub fn q(x: f64, y: f64) -> f64 {
        (x.abs().sqrt() * y.abs() - 1.0).clamp(0.0, 1.0)
    }

    pub fn rho_glue(&self, x: f64, y: f64) -> f64 {
        self.s(Self::q(x, y))
    }
}

/// Which branch of the case table a point falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Filler,
    Collar,
    X1,
    Glue12,
    X2,
    Glue23,
    X3,
    Glue34,
    X4,
    Glue45,
    X5,
}

/// The unscaled function together with its filler level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phi2 {
    pub params: CertificateParams,
    pub bumps: BumpKit,
    /// Constant used inside the exceptional ball: max of the table on its boundary.
    pub filler: f64,
}

impl Phi2 {
    pub fn new(params: CertificateParams) -> Result<Self> {
        params.validate()?;
        let mut me = Self {
            params,
            bumps: BumpKit::new(),
            filler: 0.0,
        };
        let r0 = params.exceptional_radius;
        me.filler = (0..4096)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 4096.0;
                me.table(r0 * t.cos(), r0 * t.sin())
            })
            .fold(0.0, f64::max);
        Ok(me)
    }

    pub fn phi1(&self, x: f64, y: f64) -> f64 {
        self.params.c1 * (x * x + y * y).powf(self.params.delta / 4.0)
    }

    pub fn phi2(&self, x: f64, y: f64) -> f64 {
        self.params.c2 * (2.0 - x + y.abs().powf(self.params.delta / 2.0))
    }

    pub fn phi3(&self, x: f64, y: f64) -> f64 {
        self.params.c3 * ((x * x + y * y) / y.abs().powf(1.5)).powf(self.params.delta)
    }

    pub fn phi4(&self, x: f64, y: f64) -> f64 {
        let d = self.params.delta;
        self.params.c4 * (x.abs().powf(2.0 * d) + y.abs().powf(2.0 * d)) / y.abs().powf(1.5 * d)
    }

    pub fn phi5(&self, x: f64, y: f64) -> f64 {
        let p = &self.params;
        let ax = x.abs();
        p.c5 * (p.e_lf * ax.powf(p.beta) - y * y * ax.powf(p.beta + 1.0))
    }

    /// The glued case table (meaningful outside the exceptional ball).
    pub fn table(&self, x: f64, y: f64) -> f64 {
        let b = &self.bumps;
        let z = b.zeta(x);
        let mut v = 0.0;
        if z < 1.0 {
            v += (1.0 - z) * self.phi1(x, y);
        }
        if z > 0.0 {
            let m = b.mu(x);
            let mut inner = 0.0;
            if m < 1.0 {
                inner += (1.0 - m) * self.phi2(x, y);
            }
            if m > 0.0 {
                let nu = b.nu(x, y);
                let mut left = 0.0;
                if nu < 1.0 {
                    left += (1.0 - nu) * self.phi3(x, y);
                }
                if nu > 0.0 {
                    let g = b.rho_glue(x, y);
                    let mut low = 0.0;
                    if g > 0.0 {
                        low += g * self.phi4(x, y);
                    }
                    if g < 1.0 {
                        low += (1.0 - g) * self.phi5(x, y);
                    }
                    left += nu * low;
                }
                inner += m * left;
            }
            v += z * inner;
        }
        v
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r = x.hypot(y);
        let r0 = self.params.exceptional_radius;
        if r < r0 {
            return self.filler;
        }
        let w = self.bumps.s((r - r0) / self.params.collar);
        if w < 1.0 {
            w * self.table(x, y) + (1.0 - w) * self.filler
        } else {
            self.table(x, y)
        }
    }

    pub fn region(&self, x: f64, y: f64) -> Region {
        let r = x.hypot(y);
        let r0 = self.params.exceptional_radius;
        if r < r0 {
            return Region::Filler;
        }
        if r < r0 + self.params.collar {
            return Region::Collar;
        }
        let ay = y.abs();
        let g = x.abs().sqrt() * ay;
        match x {
            x if x >= 2.0 => Region::X1,
            x if x > 1.0 => Region::Glue12,
            x if x >= -1.0 => Region::X2,
            x if x > -2.0 => Region::Glue23,
            _ if ay >= 2.0 => Region::X3,
            _ if ay > 1.0 => Region::Glue34,
            _ if g >= 2.0 => Region::X4,
            _ if g > 1.0 => Region::Glue45,
            _ => Region::X5,
        }
    }
}

/// `Phi2` as a standalone function (rebuilds the filler on every call).
pub fn phi2(x: f64, y: f64, params: &CertificateParams) -> Result<f64> {
    Ok(Phi2::new(*params)?.eval(x, y))
}

/// Scaled function for a given process: `Phi2(eta x, eta y)`, plus the
/// boundary term `ln(1 + ln^2(eta y / 2))` when `d >= 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub base: Phi2,
    pub shifted: ShiftedParams,
    pub d: usize,
    pub eta: f64,
}

impl Certificate {
    pub fn new(params: CertificateParams, shifted: ShiftedParams, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParameters("certificates are for d >= 2".into()));
        }
        shifted.validate(d)?;
        Ok(Self {
            base: Phi2::new(params)?,
            shifted,
            d,
            eta: params.eta(&shifted),
        })
    }

    pub fn phi2_eta(&self, x: f64, y: f64) -> f64 {
        self.base.eval(self.eta * x, self.eta * y)
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if self.d == 2 {
            return Ok(self.phi2_eta(x, y));
        }
        if !(y > 0.0) {
            return Err(Error::Domain(format!("need y > 0 for d = {}, got {y}", self.d)));
        }
        let l = (self.eta * y / 2.0).ln();
        Ok(self.phi2_eta(x, y) + (l * l).ln_1p())
    }

    pub fn generator(&self, x: f64, y: f64) -> Result<f64> {
        apply_generator_m(|x, y| self.eval(x, y).unwrap_or(f64::NAN), HalfPlanePoint::new(x, y), &self.shifted, self.d)
    }

    pub fn region(&self, x: f64, y: f64) -> Region {
        self.base.region(self.eta * x, self.eta * y)
    }
}

/// `Phi_d` as a standalone function.
pub fn phi_d(x: f64, y: f64, params: &CertificateParams, shifted: &ShiftedParams, d: usize) -> Result<f64> {
    Certificate::new(*params, *shifted, d)?.eval(x, y)
}

/// Shifted generator `M_d f` by central differences.
pub fn apply_generator_m<F: Fn(f64, f64) -> f64>(f: F, p: HalfPlanePoint, shifted: &ShiftedParams, d: usize) -> Result<f64> {
    let HalfPlanePoint { x, y } = p;
    if d >= 3 && !(y > 0.0) {
        return Err(Error::Domain(format!("need y > 0 for d = {d}, got {y}")));
    }
    let hx = 1e-3;
    let hy = if d >= 3 { (y / 4.0).min(1e-3) } else { 1e-3 };
    let f0 = f(x, y);
    let (fxp, fxm) = (f(x + hx, y), f(x - hx, y));
    let (fyp, fym) = (f(x, y + hy), f(x, y - hy));
    let fx = (fxp - fxm) / (2.0 * hx);
    let fy = (fyp - fym) / (2.0 * hy);
    let fxx = (fxp - 2.0 * f0 + fxm) / (hx * hx);
    let fyy = (fyp - 2.0 * f0 + fym) / (hy * hy);
    let (bx, by) = shifted.drift(p, d);
    let tau = shifted.tau;
    Ok(bx * fx + by * fy + shifted.kappa1 / tau * fxx + shifted.kappa2 / tau * fyy)
}

// ---------------------------------------------------------------------------

/// Where and how densely to probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub rays: usize,
    pub radii: Vec<f64>,
    /// Fixed `x` values of the `y -> 0` sequences (d >= 3 only).
    pub boundary_x: Vec<f64>,
    /// Sequences use `y = 2^-k`, `k = 0..=boundary_depth`.
    pub boundary_depth: u32,
    /// Thresholds must lie in the first `fraction` of each probe range.
    pub threshold_fraction: f64,
}

impl ProbePlan {
    pub fn standard(d: usize) -> Self {
        Self::new(d, 64, 1e3, 32)
    }

    pub fn new(d: usize, rays: usize, r_max: f64, sequences: usize) -> Self {
        let n = 240;
        let radii = (0..=n).map(|k| r_max.powf(k as f64 / n as f64)).collect();
        let boundary_x = if d >= 3 {
            (0..sequences)
                .map(|k| -40.0 + 80.0 * k as f64 / (sequences.max(2) - 1) as f64)
                .collect()
        } else {
            Vec::new()
        };
        Self {
            rays,
            radii,
            boundary_x,
            boundary_depth: 40,
            threshold_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub r: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub m_phi: f64,
    pub region: Region,
}

/// Outcome along one probe path (a ray, or a `y -> 0` sequence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub label: String,
    pub probes: Vec<Probe>,
    /// First probe index from which `Phi` strictly increases to the end.
    pub growth_from: Option<usize>,
    /// First probe index from which `M Phi < -1` and non-increasing to the end.
    pub decay_from: Option<usize>,
    pub nonnegative: bool,
    pub passed: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub d: usize,
    pub eta: f64,
    pub filler: f64,
    pub params: CertificateParams,
    pub rays: Vec<PathReport>,
    pub boundary: Vec<PathReport>,
    pub passed: bool,
}

impl CertificateReport {
    pub fn failures(&self) -> Vec<&PathReport> {
        self.rays.iter().chain(&self.boundary).filter(|p| !p.passed).collect()
    }
}

fn tail_start(n: usize, ok: impl Fn(usize) -> bool) -> Option<usize> {
    let mut start = n;
    while start > 0 && ok(start - 1) {
        start -= 1;
    }
    (start < n).then_some(start)
}

fn judge(label: String, probes: Vec<Probe>, limit: usize) -> PathReport {
    let n = probes.len();
    let nonnegative = probes.iter().all(|p| p.phi >= 0.0);
    let growth_from = tail_start(n, |i| i + 1 == n || probes[i + 1].phi > probes[i].phi);
    let decay_from = tail_start(n, |i| {
        probes[i].m_phi < -1.0 && (i + 1 == n || probes[i + 1].m_phi <= probes[i].m_phi)
    });
    let failure = if !nonnegative {
        let p = probes.iter().find(|p| !(p.phi >= 0.0)).unwrap();
        Some(format!("Phi = {} < 0 at ({}, {})", p.phi, p.x, p.y))
    } else if !growth_from.is_some_and(|i| i <= limit) {
        Some(format!("Phi not increasing from probe {limit} on (tail starts at {growth_from:?})"))
    } else if !decay_from.is_some_and(|i| i <= limit) {
        Some(format!("M Phi not below -1 and decreasing from probe {limit} on (tail starts at {decay_from:?})"))
    } else {
        None
    };
    PathReport {
        label,
        probes,
        growth_from,
        decay_from,
        nonnegative,
        passed: failure.is_none(),
        failure,
    }
}

fn probe(cert: &Certificate, r: f64, x: f64, y: f64) -> Probe {
    Probe {
        r,
        x,
        y,
        phi: cert.eval(x, y).unwrap_or(f64::NAN),
        m_phi: cert.generator(x, y).unwrap_or(f64::NAN),
        region: cert.region(x, y),
    }
}

/// Probes rays (the full circle for d = 2, the open upper half-plane for
/// d >= 3) and, for d >= 3, sequences approaching `y = 0` at fixed `x`.
pub fn verify_certificate(params: &CertificateParams, shifted: &ShiftedParams, d: usize, plan: &ProbePlan) -> Result<CertificateReport> {
    let cert = Certificate::new(*params, *shifted, d)?;
    let span = if d == 2 { std::f64::consts::TAU } else { std::f64::consts::PI };
    let r_max = plan.radii.last().copied().unwrap_or(1.0);
    let ray_limit = plan.radii.partition_point(|&r| r <= plan.threshold_fraction * r_max);
    let rays: Vec<PathReport> = (0..plan.rays)
        .into_par_iter()
        .map(|k| {
            let th = span * (k as f64 + 0.5) / plan.rays as f64;
            let (c, s) = (th.cos(), th.sin());
            let probes = plan.radii.iter().map(|&r| probe(&cert, r, r * c, r * s)).collect();
            judge(format!("ray theta={th:.6}"), probes, ray_limit.saturating_sub(1))
        })
        .collect();
    let depth = plan.boundary_depth;
    let seq_limit = ((1.0 - plan.threshold_fraction) * depth as f64).floor() as usize;
    let boundary: Vec<PathReport> = plan
        .boundary_x
        .par_iter()
        .map(|&x| {
            let probes = (0..=depth)
                .map(|k| {
                    let y = 2f64.powi(-(k as i32));
                    probe(&cert, x.hypot(y), x, y)
                })
                .collect();
            judge(format!("boundary x={x:.4}"), probes, seq_limit)
        })
        .collect();
    let passed = rays.iter().chain(&boundary).all(|p| p.passed);
    Ok(CertificateReport {
        d,
        eta: cert.eta,
        filler: cert.base.filler,
        params: *params,
        rays,
        boundary,
        passed,
    })
}
