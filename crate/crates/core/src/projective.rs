//! Projection to the sphere and the rotation invariants `(x, y)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate, QuadOptions};
use crate::rng::{normal, purpose, stream};
use crate::sde::DispersionState;

/// SO(d) invariants of a phase point. `y` is `None` in d = 1, signed in
/// d = 2 and nonnegative for d >= 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedCoordinates {
    pub x: f64,
    pub y: Option<f64>,
}

/// Result of reducing a phase point: the invariants are undefined at rho = 0,
/// which is the point at infinity of the reduced picture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReducedPoint {
    Finite(ReducedCoordinates),
    Infinity,
}

impl ReducedPoint {
    pub fn finite(self) -> Option<ReducedCoordinates> {
        match self {
            ReducedPoint::Finite(c) => Some(c),
            ReducedPoint::Infinity => None,
        }
    }
}

pub fn reduce_invariants(state: &DispersionState) -> ReducedPoint {
    let (rho, chi) = (&state.rho, &state.chi);
    let r2: f64 = rho.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return ReducedPoint::Infinity;
    }
    let dot: f64 = rho.iter().zip(chi).map(|(a, b)| a * b).sum();
    let x = dot / r2;
    let y = match rho.len() {
        1 => None,
        2 => Some((rho[0] * chi[1] - rho[1] * chi[0]) / r2),
        _ => {
            // |chi_perp| / |rho| avoids the cancellation in rho^2 chi^2 - (rho.chi)^2
            let perp2: f64 = rho.iter().zip(chi).map(|(r, c)| (c - x * r).powi(2)).sum();
            Some((perp2 / r2).sqrt())
        }
    };
    ReducedPoint::Finite(ReducedCoordinates { x, y })
}

/// A uniformly distributed point of the unit sphere in R^{2d}.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DispersionState {
    loop {
        let p: Vec<f64> = (0..2 * d).map(|_| normal(rng)).collect();
        let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            let mut s = DispersionState::from_slice(&p);
            s.scale(1.0 / n);
            return s;
        }
    }
}

/// Density of the invariants under the uniform measure on the sphere.
///
/// d = 1 is the Cauchy density in `x` (`y` ignored); d = 2 is normalized on
/// the whole plane; d >= 3 on the half plane `y > 0`.
pub fn uniform_sphere_density(x: f64, y: f64, d: usize) -> f64 {
    match d {
        1 => 1.0 / (PI * (1.0 + x * x)),
        2 => 1.0 / (PI * (1.0 + x * x + y * y).powi(2)),
        _ => {
            if y <= 0.0 {
                return 0.0;
            }
            let df = d as f64;
            (df - 1.0) * 2f64.powi(d as i32 - 1) * y.powi(d as i32 - 2)
                / (PI * (1.0 + x * x + y * y).powf(df))
        }
    }
}

/// Monte Carlo check of the uniform-sphere law of `(x, y)` against its closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereCheck {
    pub d: usize,
    pub samples: u64,
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    pub x_max: f64,
    pub y_max: f64,
    /// `sum |empirical - expected|` over the grid cells plus one overflow cell.
    pub l1: f64,
    /// `int eta0` by adaptive quadrature.
    pub normalization: f64,
}

const SPHERE_BLOCK: u64 = 1 << 16;

/// Histogram of reduced coordinates of uniform sphere samples on an
/// `nx x ny` grid over `[-x_max, x_max] x [0, y_max]` (`[-y_max, y_max]` for d = 2).
pub fn sphere_check(d: usize, samples: u64, seed: u64, nx: usize, ny: usize, x_max: f64, y_max: f64) -> Result<SphereCheck> {
    if d < 2 || samples == 0 || nx == 0 || ny == 0 || !(x_max > 0.0 && y_max > 0.0) {
        return Err(Error::InvalidParameters("sphere check needs d >= 2, samples > 0 and a nonempty grid".into()));
    }
    let y_lo = if d == 2 { -y_max } else { 0.0 };
    let (hx, hy) = (2.0 * x_max / nx as f64, (y_max - y_lo) / ny as f64);
    let cells = nx * ny;
    let blocks = samples.div_ceil(SPHERE_BLOCK);
    let counts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, purpose::SPHERE, b);
            let n = SPHERE_BLOCK.min(samples - b * SPHERE_BLOCK);
            let mut c = vec![0u64; cells + 1];
            for _ in 0..n {
                let cell = match reduce_invariants(&sample_uniform_sphere(d, &mut rng)).finite() {
                    Some(ReducedCoordinates { x, y: Some(y) }) => {
                        let i = ((x + x_max) / hx).floor();
                        let j = ((y - y_lo) / hy).floor();
                        if i >= 0.0 && j >= 0.0 && (i as usize) < nx && (j as usize) < ny {
                            i as usize * ny + j as usize
                        } else {
                            cells
                        }
                    }
                    _ => cells,
                };
                c[cell] += 1;
            }
            c
        })
        .reduce(
            || vec![0u64; cells + 1],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let (gx, gw) = gauss_legendre(8);
    let mut l1 = 0.0;
    let mut inside = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let (x0, y0) = (-x_max + i as f64 * hx, y_lo + j as f64 * hy);
            let mut m = 0.0;
            for (u, wu) in gx.iter().zip(&gw) {
                for (v, wv) in gx.iter().zip(&gw) {
                    let x = x0 + 0.5 * hx * (u + 1.0);
                    let y = y0 + 0.5 * hy * (v + 1.0);
                    m += wu * wv * uniform_sphere_density(x, y, d);
                }
            }
            m *= 0.25 * hx * hy;
            inside += m;
            l1 += (counts[i * ny + j] as f64 / samples as f64 - m).abs();
        }
    }
    l1 += (counts[cells] as f64 / samples as f64 - (1.0 - inside)).abs();
    Ok(SphereCheck {
        d,
        samples,
        seed,
        nx,
        ny,
        x_max,
        y_max,
        l1,
        normalization: sphere_density_mass(d)?,
    })
}

/// `int eta0 dx dy` over the reduced domain by nested adaptive quadrature.
pub fn sphere_density_mass(d: usize) -> Result<f64> {
    let opts = QuadOptions::tol(1e-13, 1e-10);
    let y_lo = if d == 2 { f64::NEG_INFINITY } else { 0.0 };
    integrate(
        |x| integrate(|y| uniform_sphere_density(x, y, d), y_lo, f64::INFINITY, opts).unwrap_or(f64::NAN),
        f64::NEG_INFINITY,
        f64::INFINITY,
        opts,
    )
}
