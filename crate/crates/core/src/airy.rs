//! Airy functions Ai, Bi and their derivatives on the real line.
//!
//! Maclaurin series near the origin, the Macdonald-integral form of Ai for
//! larger positive arguments (the series cancels catastrophically there),
//! and the classical asymptotic expansions far out.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI};

/// `Ai(0)` and `-Ai'(0)`.
const C1: f64 = 0.355_028_053_887_817_239_26;
const C2: f64 = 0.258_819_403_792_806_798_41;
const SQRT3: f64 = 1.732_050_807_568_877_293_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AiryPair {
    pub ai: f64,
    pub bi: f64,
    pub dai: f64,
    pub dbi: f64,
}

impl AiryPair {
    pub fn wronskian(&self) -> f64 {
        self.ai * self.dbi - self.dai * self.bi
    }
}

/// The four Maclaurin sums `(f, g, f', g')` with `Ai = C1 f - C2 g`, `Bi = sqrt3 (C1 f + C2 g)`.
fn maclaurin(x: f64) -> (f64, f64, f64, f64) {
    let x3 = x * x * x;
    let (mut f, mut tf) = (1.0, 1.0);
    let (mut g, mut tg) = (x, x);
    let (mut df, mut tdf) = (0.5 * x * x, 0.5 * x * x);
    let (mut dg, mut tdg) = (1.0, 1.0);
    for k in 0..200 {
        let kf = k as f64;
        tf *= x3 / ((3.0 * kf + 2.0) * (3.0 * kf + 3.0));
        tg *= x3 / ((3.0 * kf + 3.0) * (3.0 * kf + 4.0));
        tdf *= x3 / ((3.0 * kf + 3.0) * (3.0 * kf + 5.0));
        tdg *= x3 / ((3.0 * kf + 1.0) * (3.0 * kf + 3.0));
        f += tf;
        g += tg;
        df += tdf;
        dg += tdg;
        let small = |t: f64, s: f64| t.abs() <= 1e-18 * s.abs().max(1e-300);
        if k > 2 && small(tf, f) && small(tg, g) && small(tdf, df) && small(tdg, dg) {
            break;
        }
    }
    (f, g, df, dg)
}

/// `e^z K_nu(z)` by the trapezoid rule on `int_0^inf exp(-z (cosh t - 1)) cosh(nu t) dt`.
fn scaled_bessel_k(nu: f64, z: f64) -> f64 {
    // the integrand is ~ exp(-z t^2/2): keep several nodes per width
    let h = 0.1 / (0.25 * z).sqrt().max(1.0);
    let mut sum = 0.5;
    let mut k = 1;
    loop {
        let t = k as f64 * h;
        let e = z * (t.cosh() - 1.0);
        let term = (-e).exp() * (nu * t).cosh();
        sum += term;
        if term < 1e-18 * sum || e > 745.0 {
            break;
        }
        k += 1;
    }
    sum * h
}

/// Asymptotic coefficients `u_k`, `v_k`.
fn asymptotic_coefficients(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    for k in 1..n {
        let kf = k as f64;
        u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
            / ((2.0 * kf - 1.0) * 216.0 * kf);
        v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
    }
    (u, v)
}

/// Sum of `c_k s^k z^-k` up to the smallest term.
fn asymptotic_sum(c: &[f64], z: f64, sign: f64) -> f64 {
    let mut s = 0.0;
    let mut p = 1.0;
    let mut last = f64::INFINITY;
    for (k, &ck) in c.iter().enumerate() {
        let t = ck * p;
        if t.abs() > last {
            break;
        }
        s += t;
        last = t.abs();
        if t.abs() < 1e-18 * s.abs() {
            break;
        }
        p *= sign / z;
        let _ = k;
    }
    s
}

/// Split sums `(sum (-1)^k c_{2k} z^{-2k}, sum (-1)^k c_{2k+1} z^{-2k-1})`.
fn oscillatory_sums(c: &[f64], z: f64) -> (f64, f64) {
    let (mut even, mut odd) = (0.0, 0.0);
    let mut p = 1.0;
    let mut last = f64::INFINITY;
    for (k, &ck) in c.iter().enumerate() {
        let t = ck * p;
        if t.abs() > last {
            break;
        }
        last = t.abs();
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            even += sign * t;
        } else {
            odd += sign * t;
        }
        if t.abs() < 1e-18 {
            break;
        }
        p /= z;
    }
    (even, odd)
}

pub fn airy_pair(c: f64) -> AiryPair {
    if c >= 0.0 {
        let (ai, dai) = if c < 1.0 {
            let (f, g, df, dg) = maclaurin(c);
            (C1 * f - C2 * g, C1 * df - C2 * dg)
        } else {
            let z = 2.0 / 3.0 * c * c.sqrt();
            let ez = (-z).exp();
            (
                (c / 3.0).sqrt() / PI * ez * scaled_bessel_k(1.0 / 3.0, z),
                -c / (PI * SQRT3) * ez * scaled_bessel_k(2.0 / 3.0, z),
            )
        };
        let (bi, dbi) = if c <= 12.0 {
            let (f, g, df, dg) = maclaurin(c);
            (SQRT3 * (C1 * f + C2 * g), SQRT3 * (C1 * df + C2 * dg))
        } else {
            let z = 2.0 / 3.0 * c * c.sqrt();
            let (u, v) = asymptotic_coefficients(80);
            let q = c.powf(0.25);
            let ez = z.exp();
            (
                ez / (PI.sqrt() * q) * asymptotic_sum(&u, z, 1.0),
                q * ez / PI.sqrt() * asymptotic_sum(&v, z, 1.0),
            )
        };
        AiryPair { ai, bi, dai, dbi }
    } else if c >= -7.0 {
        let (f, g, df, dg) = maclaurin(c);
        AiryPair {
            ai: C1 * f - C2 * g,
            bi: SQRT3 * (C1 * f + C2 * g),
            dai: C1 * df - C2 * dg,
            dbi: SQRT3 * (C1 * df + C2 * dg),
        }
    } else {
        let x = -c;
        let z = 2.0 / 3.0 * x * x.sqrt();
        let (u, v) = asymptotic_coefficients(80);
        let (ue, uo) = oscillatory_sums(&u, z);
        let (ve, vo) = oscillatory_sums(&v, z);
        let (s, co) = (z - FRAC_PI_4).sin_cos();
        let q = x.powf(0.25);
        let a = 1.0 / (PI.sqrt() * q);
        let b = q / PI.sqrt();
        AiryPair {
            ai: a * (co * ue + s * uo),
            bi: a * (-s * ue + co * uo),
            dai: b * (s * ve - co * vo),
            dbi: b * (co * ve + s * vo),
        }
    }
}
