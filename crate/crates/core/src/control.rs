//! Vector-field frame of the generator, its spanning property, and explicit
//! control paths between two nonzero phase points.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::noise::NoiseFactorization;
use crate::sde::DispersionState;

/// Evaluators for `X0` and the `3 d^2` fields `X^m_n`, `Y^m_n`, `Z^m_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldFrame {
    pub d: usize,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    X,
    Y,
    Z,
}

pub fn build_frame(decomp: &NoiseFactorization, tau: f64, d: usize) -> FieldFrame {
    FieldFrame {
        d,
        e: decomp.e,
        f: decomp.f,
        g: decomp.g,
        tau,
    }
}

impl FieldFrame {
    /// `(w_mn(v))_i = E v_i delta_mn + F delta_im v_n + G delta_in v_m`.
    fn w(&self, m: usize, n: usize, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = if m == n { v.iter().map(|x| self.e * x).collect() } else { vec![0.0; self.d] };
        out[m] += self.f * v[n];
        out[n] += self.g * v[m];
        out
    }

    pub fn x0(&self, p: &DispersionState) -> DispersionState {
        let c: Vec<f64> = p.chi.iter().map(|x| x / self.tau).collect();
        DispersionState {
            rho: c.clone(),
            chi: c.into_iter().map(|x| -x).collect(),
        }
    }

    pub fn field(&self, kind: FieldKind, m: usize, n: usize, p: &DispersionState) -> DispersionState {
        let sum = |a: f64, u: &[f64], b: f64, v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| a * x + b * y).collect() };
        let cr = sum(1.0, &p.chi, 1.0, &p.rho);
        match kind {
            FieldKind::X => DispersionState {
                rho: vec![0.0; self.d],
                chi: self.w(m, n, &p.rho),
            },
            FieldKind::Y => DispersionState {
                rho: self.w(m, n, &p.rho).into_iter().map(|x| -x).collect(),
                chi: self.w(m, n, &cr),
            },
            FieldKind::Z => DispersionState {
                rho: self.w(m, n, &sum(2.0, &p.chi, 1.0, &p.rho)).into_iter().map(|x| -x).collect(),
                chi: self.w(m, n, &cr),
            },
        }
    }

    /// All `3 d^2` field values, X block then Y then Z, each in `(m, n)` row order.
    pub fn all_fields(&self, p: &DispersionState) -> Vec<DispersionState> {
        let d = self.d;
        let mut out = Vec::with_capacity(3 * d * d);
        for kind in [FieldKind::X, FieldKind::Y, FieldKind::Z] {
            for m in 0..d {
                for n in 0..d {
                    out.push(self.field(kind, m, n, p));
                }
            }
        }
        out
    }

    /// `X0(p) + sum_mn u[m][n] X^m_n(p)` with `u` row-major `d x d`.
    pub fn controlled_velocity(&self, p: &DispersionState, u: &[f64]) -> DispersionState {
        let d = self.d;
        let mut v = self.x0(p);
        let tr: f64 = (0..d).map(|m| u[m * d + m]).sum();
        for i in 0..d {
            let mut acc = self.e * p.rho[i] * tr;
            for k in 0..d {
                acc += self.f * u[i * d + k] * p.rho[k] + self.g * u[k * d + i] * p.rho[k];
            }
            v.chi[i] += acc;
        }
        v
    }
}

/// Numerical rank of the stacked field values at `p`.
pub fn hypoellipticity_rank(frame: &FieldFrame, p: &DispersionState, tol: f64) -> usize {
    let fields = frame.all_fields(p);
    let d = frame.d;
    let m = DMatrix::from_fn(fields.len(), 2 * d, |r, c| {
        if c < d { fields[r].rho[c] } else { fields[r].chi[c - d] }
    });
    let sv = m.singular_values();
    let smax = sv.max();
    if !(smax > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

pub const RANK_TOL: f64 = 1e-8;

/// `[V, W](p) = DW(p) V(p) - DV(p) W(p)` by central differences of step `h`.
pub fn lie_bracket_fd<V, W>(v: V, w: W, p: &DispersionState, h: f64) -> DispersionState
where
    V: Fn(&DispersionState) -> DispersionState,
    W: Fn(&DispersionState) -> DispersionState,
{
    let dir = |f: &dyn Fn(&DispersionState) -> DispersionState, along: &DispersionState| -> Vec<f64> {
        let x = p.to_vec();
        let a = along.to_vec();
        let plus: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + h * a).collect();
        let minus: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x - h * a).collect();
        let fp = f(&DispersionState::from_slice(&plus)).to_vec();
        let fm = f(&DispersionState::from_slice(&minus)).to_vec();
        fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    };
    let dw_v = dir(&w, &v(p));
    let dv_w = dir(&v, &w(p));
    DispersionState::from_slice(&dw_v.iter().zip(&dv_w).map(|(a, b)| a - b).collect::<Vec<_>>())
}

/// Largest relative defect of `Y = tau [X0, X]` and `Z = tau [X0, Y]` over all
/// `(m, n)` at `p`.
pub fn bracket_defect(frame: &FieldFrame, p: &DispersionState) -> f64 {
    let d = frame.d;
    let h = 1e-4 * p.norm().max(1e-300);
    let mut worst: f64 = 0.0;
    for m in 0..d {
        for n in 0..d {
            for (lower, upper) in [(FieldKind::X, FieldKind::Y), (FieldKind::Y, FieldKind::Z)] {
                let br = lie_bracket_fd(|q| frame.x0(q), |q| frame.field(lower, m, n, q), p, h);
                let want = frame.field(upper, m, n, p);
                let diff: f64 = br
                    .to_vec()
                    .iter()
                    .zip(want.to_vec())
                    .map(|(a, b)| (frame.tau * a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale = want.norm().max(frame.f.abs().max(frame.e.abs()).max(frame.g.abs()) * p.norm());
                worst = worst.max(diff / scale);
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------

/// One piece of a control path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    /// `u = 0`.
    Free { t0: f64, t1: f64 },
    /// Hermite cubic for `rho` plus `amp (s(1-s))^2 dir`, `s = (t - t0)/(t1 - t0)`.
    Cubic {
        t0: f64,
        t1: f64,
        rho0: Vec<f64>,
        vel0: Vec<f64>,
        rho1: Vec<f64>,
        vel1: Vec<f64>,
        amp: f64,
        dir: Vec<f64>,
    },
}

impl Segment {
    pub fn span(&self) -> (f64, f64) {
        match self {
            Segment::Free { t0, t1 } | Segment::Cubic { t0, t1, .. } => (*t0, *t1),
        }
    }

    /// `(rho, rho', rho'')` in physical time.
    fn curve(&self, t: f64) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let Segment::Cubic { t0, t1, rho0, vel0, rho1, vel1, amp, dir } = self else {
            return None;
        };
        let l = t1 - t0;
        let s = (t - t0) / l;
        let (s2, s3) = (s * s, s * s * s);
        let h = [2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2];
        let h1 = [6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s];
        let h2 = [12.0 * s - 6.0, 6.0 * s - 4.0, -12.0 * s + 6.0, 6.0 * s - 2.0];
        let b = [s2 - 2.0 * s3 + s2 * s2, 2.0 * s - 6.0 * s2 + 4.0 * s3, 2.0 - 12.0 * s + 12.0 * s2];
        let eval = |c: &[f64; 4], bb: f64, k: i32| -> Vec<f64> {
            (0..rho0.len())
                .map(|i| {
                    let v = c[0] * rho0[i] + c[1] * l * vel0[i] + c[2] * rho1[i] + c[3] * l * vel1[i] + amp * bb * dir[i];
                    v / l.powi(k)
                })
                .collect()
        };
        Some((eval(&h, b[0], 0), eval(&h1, b[1], 1), eval(&h2, b[2], 2)))
    }

    /// Control matrix (row-major, `u[m][n]` multiplies `X^m_n`) at time `t`.
    pub fn control(&self, frame: &FieldFrame, t: f64) -> Vec<f64> {
        let d = frame.d;
        let Some((rho, r1, r2)) = self.curve(t) else {
            return vec![0.0; d * d];
        };
        let tau = frame.tau;
        let phi: Vec<f64> = (0..d).map(|i| tau * tau * r2[i] + tau * r1[i]).collect();
        let rr: f64 = rho.iter().map(|x| x * x).sum();
        let rp: f64 = rho.iter().zip(&phi).map(|(a, b)| a * b).sum();
        let (e, f, g) = (frame.e, frame.f, frame.g);
        let alpha = -(e + g) / ((e + f + g) * f) * rp / (rr * rr);
        let beta = 1.0 / (f * rr);
        let mut u = vec![0.0; d * d];
        for m in 0..d {
            for n in 0..d {
                u[m * d + n] = (alpha * rho[n] * rho[m] + beta * rho[n] * phi[m]) / tau;
            }
        }
        u
    }

    fn min_rho(&self) -> f64 {
        let (t0, t1) = self.span();
        (0..=512)
            .map(|k| {
                let (r, _, _) = self.curve(t0 + (t1 - t0) * k as f64 / 512.0).unwrap();
                r.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Piecewise control `u(t)` steering `p0` to `p1` in time `T`, plus a sampled grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub frame: FieldFrame,
    pub t_total: f64,
    pub p0: DispersionState,
    pub p1: DispersionState,
    pub segments: Vec<Segment>,
    pub times: Vec<f64>,
    /// Row-major `d x d` control at each grid time.
    pub u: Vec<Vec<f64>>,
}

pub const GRID_NODES: usize = 1001;

impl ControlPath {
    pub fn control_at(&self, t: f64) -> Vec<f64> {
        let seg = self
            .segments
            .iter()
            .find(|s| t < s.span().1)
            .unwrap_or_else(|| self.segments.last().unwrap());
        seg.control(&self.frame, t)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.frame.d;
        write!(w, "t")?;
        for m in 1..=d {
            for n in 1..=d {
                write!(w, ",u_{m}{n}")?;
            }
        }
        writeln!(w)?;
        for (t, u) in self.times.iter().zip(&self.u) {
            write!(w, "{t}")?;
            for v in u {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// State after free flight of duration `s` (negative `s` runs backwards).
fn free_flight(p: &DispersionState, s: f64, tau: f64) -> DispersionState {
    let k = (-s / tau).exp();
    DispersionState {
        rho: p.rho.iter().zip(&p.chi).map(|(r, c)| r + (1.0 - k) * c).collect(),
        chi: p.chi.iter().map(|c| k * c).collect(),
    }
}

const NEAR_ZERO: f64 = 0.2;
const ZERO_RHO: f64 = 1e-3;
const MAX_BUMPS: usize = 40;

fn cubic(frame: &FieldFrame, t0: f64, t1: f64, a: &DispersionState, b: &DispersionState) -> Result<Segment> {
    let d = frame.d;
    let vel = |p: &DispersionState| p.chi.iter().map(|c| c / frame.tau).collect::<Vec<_>>();
    let mut seg = Segment::Cubic {
        t0,
        t1,
        rho0: a.rho.clone(),
        vel0: vel(a),
        rho1: b.rho.clone(),
        vel1: vel(b),
        amp: 0.0,
        dir: vec![0.0; d],
    };
    let floor = NEAR_ZERO * norm(&a.rho).min(norm(&b.rho));
    if seg.min_rho() >= floor {
        return Ok(seg);
    }
    // Bump direction: orthogonal to the velocity where |rho| is smallest.
    let s_min = (0..=512)
        .map(|k| t0 + (t1 - t0) * k as f64 / 512.0)
        .min_by(|x, y| {
            let n = |t| norm(&seg.curve(t).unwrap().0);
            n(*x).partial_cmp(&n(*y)).unwrap()
        })
        .unwrap();
    let (r, v, _) = seg.curve(s_min).unwrap();
    let dir = if d == 1 {
        vec![a.rho[0].signum()]
    } else {
        let vn = norm(&v).max(1e-300);
        let mut cand: Vec<Vec<f64>> = vec![r.clone()];
        cand.extend((0..d).map(|k| (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect()));
        cand.into_iter()
            .map(|c| {
                let dot: f64 = c.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / (vn * vn);
                c.iter().zip(&v).map(|(x, y)| x - dot * y).collect::<Vec<f64>>()
            })
            .max_by(|x, y| norm(x).partial_cmp(&norm(y)).unwrap())
            .map(|c| {
                let n = norm(&c);
                c.into_iter().map(|x| x / n).collect()
            })
            .unwrap()
    };
    let base = 16.0 * norm(&a.rho).max(norm(&b.rho));
    for k in 0..MAX_BUMPS {
        if let Segment::Cubic { amp, dir: dd, .. } = &mut seg {
            *amp = base * 2f64.powi(k as i32 / 2) * if k % 2 == 0 { 1.0 } else { 1.5 };
            *dd = dir.clone();
        }
        if seg.min_rho() >= floor {
            return Ok(seg);
        }
    }
    Err(Error::Control(format!("designed curve keeps passing near rho = 0 on [{t0}, {t1}]")))
}

/// Builds a control path from `p0` to `p1` over `[0, T]`.
pub fn synthesize_control(p0: &DispersionState, p1: &DispersionState, t_total: f64, frame: &FieldFrame) -> Result<ControlPath> {
    let d = frame.d;
    if p0.d() != d || p1.d() != d {
        return Err(Error::InvalidParameters("endpoint dimension does not match the frame".into()));
    }
    if !(p0.norm() > 0.0 && p1.norm() > 0.0 && t_total > 0.0) {
        return Err(Error::InvalidParameters("need nonzero endpoints and T > 0".into()));
    }
    if !(frame.f != 0.0 && frame.e + frame.f + frame.g != 0.0) {
        return Err(Error::Control("frame with F = 0 or E + F + G = 0 cannot be steered".into()));
    }
    let tau = frame.tau;
    let eps = t_total / 10.0;
    let mut head = Vec::new();
    let mut tail = Vec::new();
    let (mut ta, mut a) = (0.0, p0.clone());
    let (mut tb, mut b) = (t_total, p1.clone());
    if norm(&p0.rho) <= ZERO_RHO * p0.norm() {
        head.push(Segment::Free { t0: 0.0, t1: eps });
        a = free_flight(p0, eps, tau);
        ta = eps;
    }
    if norm(&p1.rho) <= ZERO_RHO * p1.norm() {
        tail.push(Segment::Free { t0: t_total - eps, t1: t_total });
        b = free_flight(p1, -eps, tau);
        tb = t_total - eps;
    }
    let mut mid = Vec::new();
    if d == 1 && a.rho[0].signum() != b.rho[0].signum() {
        // A scalar curve must cross zero: coast through (0, chi_m) instead.
        let tm = 0.5 * (ta + tb);
        let speed = tau * (a.rho[0].abs() + b.rho[0].abs()) / (tb - ta);
        let w = DispersionState {
            rho: vec![0.0],
            chi: vec![-a.rho[0].signum() * speed],
        };
        let before = free_flight(&w, -eps, tau);
        let after = free_flight(&w, eps, tau);
        mid.push(cubic(frame, ta, tm - eps, &a, &before)?);
        mid.push(Segment::Free { t0: tm - eps, t1: tm + eps });
        mid.push(cubic(frame, tm + eps, tb, &after, &b)?);
    } else {
        mid.push(cubic(frame, ta, tb, &a, &b)?);
    }
    let mut segments = head;
    segments.extend(mid);
    segments.extend(tail);
    let mut path = ControlPath {
        frame: *frame,
        t_total,
        p0: p0.clone(),
        p1: p1.clone(),
        segments,
        times: Vec::new(),
        u: Vec::new(),
    };
    path.times = (0..GRID_NODES).map(|k| t_total * k as f64 / (GRID_NODES - 1) as f64).collect();
    path.u = path.times.iter().map(|&t| path.control_at(t)).collect();
    Ok(path)
}

/// Integrates the controlled ODE from `p0` with classical RK4 (`steps` total,
/// split across segments so no step straddles a seam) and returns
/// `|p(T) - p1| / |p1|`.
pub fn verify_control(path: &ControlPath, steps: usize) -> f64 {
    let end = integrate_control(path, steps);
    let diff: Vec<f64> = end.to_vec().iter().zip(path.p1.to_vec()).map(|(a, b)| a - b).collect();
    norm(&diff) / path.p1.norm()
}

pub fn integrate_control(path: &ControlPath, steps: usize) -> DispersionState {
    let frame = &path.frame;
    let mut p = path.p0.to_vec();
    let axpy = |x: &[f64], k: f64, v: &[f64]| -> Vec<f64> { x.iter().zip(v).map(|(a, b)| a + k * b).collect() };
    for seg in &path.segments {
        let (t0, t1) = seg.span();
        let n = ((steps as f64 * (t1 - t0) / path.t_total).round() as usize).max(1);
        let h = (t1 - t0) / n as f64;
        let f = |t: f64, x: &[f64]| -> Vec<f64> {
            frame.controlled_velocity(&DispersionState::from_slice(x), &seg.control(frame, t)).to_vec()
        };
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let k1 = f(t, &p);
            let k2 = f(t + 0.5 * h, &axpy(&p, 0.5 * h, &k1));
            let k3 = f(t + 0.5 * h, &axpy(&p, 0.5 * h, &k2));
            let k4 = f(t + h, &axpy(&p, h, &k3));
            for i in 0..p.len() {
                p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    DispersionState::from_slice(&p)
}
