//! One function per command; each returns a document and, for checks, a verdict.

use std::time::Instant;

use rand::RngExt;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use dispersion_core::certificate::{verify_certificate, CertificateParams, ProbePlan};
use dispersion_core::control::{
    bracket_defect, build_frame, hypoellipticity_rank, synthesize_control, verify_control, RANK_TOL,
};
use dispersion_core::density::{
    angle_binning, fit_tail_exponent, stationary_x_histogram, tail_binning, ClosedFormDensityD1, SamplingPlan,
};
use dispersion_core::lyapunov::{
    airy_lambda_d1, lambda_density_quadrature_d1, lambda_from_invariants, lyapunov_spectrum_qr, mixing_autocorrelation,
    top_lyapunov_direct, ExponentEstimate, RunSettings,
};
use dispersion_core::projective::sample_uniform_sphere;
use dispersion_core::reduced::map_to_shifted;
use dispersion_core::rng::{normal, purpose, stream};
use dispersion_core::sde::{DispersionStepper, RenormalizedTrajectory};
use dispersion_core::stats::RunningStats;
use dispersion_core::DispersionState;

use crate::config::{echo, Command, RunConfig};
use crate::output::{Document, Table};

pub const BUILD_ID: &str = env!("DISPERSION_BUILD_ID");

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] dispersion_core::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub document: Document,
    /// `None` for commands that only report.
    pub passed: Option<bool>,
}

struct Body {
    result: Value,
    table: Option<Table>,
    passed: Option<bool>,
}

/// Runs `cfg` on a pool of `cfg.workers` threads and wraps the result with
/// provenance.
pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let start = Instant::now();
    let body = pool.install(|| dispatch(cfg))?;
    let mut provenance = json!({
        "program": "dispersion",
        "version": env!("CARGO_PKG_VERSION"),
        "build_id": BUILD_ID,
        "config": echo(cfg),
    });
    if cfg.timing {
        provenance["wall_time_s"] = json!(start.elapsed().as_secs_f64());
    }
    let mut doc = json!({
        "command": cfg.command.name(),
        "provenance": provenance,
        "result": body.result,
    });
    if let Some(p) = body.passed {
        doc["passed"] = json!(p);
    }
    Ok(Outcome {
        document: Document {
            json: doc,
            table: body.table,
        },
        passed: body.passed,
    })
}

fn dispatch(cfg: &RunConfig) -> Result<Body, RunError> {
    match cfg.command {
        Command::Simulate => simulate(cfg),
        Command::Lambda => lambda(cfg),
        Command::Spectrum => spectrum(cfg),
        Command::Density => density(cfg),
        Command::SphereCheck => sphere(cfg),
        Command::VerifySpan => span(cfg),
        Command::VerifyControl => control(cfg),
        Command::VerifyCertificate => certificate(cfg),
        Command::Mixing => mixing(cfg),
    }
}

fn settings(cfg: &RunConfig) -> RunSettings {
    RunSettings {
        scheme: cfg.scheme,
        ..RunSettings::new(cfg.dt, cfg.t_total, cfg.ensemble, cfg.seed)
    }
}

fn steps(cfg: &RunConfig, t: f64) -> u64 {
    (t / cfg.dt).round() as u64
}

// ---------------------------------------------------------------------------

fn simulate(cfg: &RunConfig) -> Result<Body, RunError> {
    let stats = cfg.stats();
    let d = cfg.d;
    let n = steps(cfg, cfg.t_total);
    let runs: Vec<(f64, Vec<Vec<f64>>)> = (0..cfg.ensemble)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(cfg.seed, purpose::DIRECT, k as u64);
            let mut traj = RenormalizedTrajectory::new(sample_uniform_sphere(d, &mut rng)).expect("unit start");
            let mut stepper = DispersionStepper::new(stats, cfg.scheme);
            let record = |i: u64, t: &RenormalizedTrajectory| {
                let mut row = vec![k as f64, i as f64 * cfg.dt, t.total_log_norm()];
                let s = t.state.norm();
                row.extend(t.state.to_vec().iter().map(|v| v / s));
                row
            };
            let mut rows = vec![record(0, &traj)];
            for i in 1..=n {
                traj.step(&mut stepper, cfg.dt, &mut rng);
                if i % 64 == 0 {
                    traj.renormalize();
                }
                if i % cfg.record_every == 0 || i == n {
                    rows.push(record(i, &traj));
                }
            }
            (traj.total_log_norm() / (n as f64 * cfg.dt), rows)
        })
        .collect();
    let mut header = vec!["trajectory".to_string(), "t".into(), "log_norm".into()];
    header.extend((1..=d).map(|i| format!("rho_{i}")));
    header.extend((1..=d).map(|i| format!("chi_{i}")));
    let mut table = Table { header, rows: Vec::new() };
    for (_, rows) in &runs {
        for r in rows {
            table.push_numbers(r);
        }
    }
    let rates: RunningStats = runs.iter().map(|(r, _)| *r).collect();
    let result = json!({
        "trajectories": cfg.ensemble,
        "steps": n,
        "records": table.rows.len(),
        "growth_rate": { "mean": rates.mean(), "stderr": rates.std_err() },
        "final_growth_rates": runs.iter().map(|(r, _)| *r).collect::<Vec<_>>(),
    });
    Ok(Body {
        result,
        table: Some(table),
        passed: None,
    })
}

fn agreement(a: &ExponentEstimate, b: &ExponentEstimate, rel_limit: Option<f64>) -> Value {
    let rel = a.relative_difference(b);
    // two deterministic values have no error bar; only the relative gap counts
    let z = (a.stderr > 0.0 || b.stderr > 0.0).then(|| a.z_score(b));
    let ok = z.is_none_or(|z| z < 3.0) && rel_limit.is_none_or(|l| rel < l);
    json!({
        "a": a.method,
        "b": b.method,
        "z": z,
        "relative_difference": rel,
        "agree": ok,
    })
}

fn lambda(cfg: &RunConfig) -> Result<Body, RunError> {
    let stats = cfg.stats();
    let run = settings(cfg);
    let direct = top_lyapunov_direct(&stats, &run, None)?;
    let invariants = lambda_from_invariants(&stats, &run, cfg.x_cut)?;
    let mut estimates = vec![direct.clone(), invariants.clone()];
    let mut flags = Vec::new();
    if cfg.d == 1 {
        let airy = airy_lambda_d1(&stats)?;
        let quad = lambda_density_quadrature_d1(&stats)?;
        flags.push(agreement(&airy, &direct, Some(0.02)));
        flags.push(agreement(&airy, &invariants, Some(0.02)));
        flags.push(agreement(&direct, &invariants, Some(0.02)));
        flags.push(agreement(&airy, &quad, Some(1e-6)));
        estimates.insert(0, quad);
        estimates.insert(0, airy);
    } else {
        flags.push(agreement(&direct, &invariants, None));
    }
    let passed = flags.iter().all(|f| f["agree"] == json!(true));
    let localization = cfg.d == 1 && estimates[0].value + 0.5 / cfg.tau > 0.0;
    let mut result = json!({ "estimates": estimates, "agreement": flags });
    if cfg.d == 1 {
        result["localization_exponent"] = json!(estimates[0].value + 0.5 / cfg.tau);
        result["localization_positive"] = json!(localization);
    }
    Ok(Body {
        result,
        table: None,
        passed: Some(passed),
    })
}

fn spectrum(cfg: &RunConfig) -> Result<Body, RunError> {
    let stats = cfg.stats();
    let spec = lyapunov_spectrum_qr(&stats, &settings(cfg))?;
    let sum: f64 = spec.iter().map(|e| e.value).sum();
    let expected = -(cfg.d as f64) / cfg.tau;
    let rel = (sum - expected).abs() / expected.abs();
    let passed = rel < 0.01;
    Ok(Body {
        result: json!({
            "exponents": spec,
            "sum": sum,
            "expected_sum": expected,
            "relative_error": rel,
        }),
        table: None,
        passed: Some(passed),
    })
}

fn density(cfg: &RunConfig) -> Result<Body, RunError> {
    let stats = cfg.stats();
    let plan = SamplingPlan {
        dt: cfg.dt,
        steps: steps(cfg, cfg.t_total),
        burn_in_steps: steps(cfg, cfg.burn_in),
        ensemble: cfg.ensemble,
        seed: cfg.seed,
    };
    if cfg.d == 1 {
        let eta = ClosedFormDensityD1::new(&stats)?;
        let hist = stationary_x_histogram(&stats, &plan, &angle_binning(cfg.bins))?;
        let mut expected = Vec::with_capacity(hist.bins());
        for w in hist.edges.windows(2) {
            expected.push(eta.mass(w[0], w[1])?);
        }
        let mut k = 0;
        let l1 = hist.l1_distance(|_, _| {
            k += 1;
            expected[k - 1]
        });
        let mut tails = Vec::new();
        for (a, b) in [(50.0, 100.0), (-50.0, -100.0)] {
            let (ta, tb) = (a * a * eta.eval(a)?, b * b * eta.eval(b)?);
            tails.push(json!({ "x": [a, b], "x2_eta": [ta, tb], "ratio": ta / tb }));
        }
        let flat = tails.iter().all(|t| (t["ratio"].as_f64().unwrap_or(f64::NAN) - 1.0).abs() < 0.2);
        let mut table = Table::new(&["bin_lo", "bin_hi", "mass", "expected"]);
        for (i, m) in hist.absolute_mass().iter().enumerate() {
            table.push_numbers(&[hist.edges[i], hist.edges[i + 1], *m, expected[i]]);
        }
        Ok(Body {
            result: json!({
                "samples": hist.total_samples,
                "bins": hist.bins(),
                "l1": l1,
                "tail_check": tails,
                "normalization": eta.z,
            }),
            table: Some(table),
            passed: Some(l1 < 0.05 && flat),
        })
    } else {
        let edges = tail_binning(cfg.tail_lo / 4.0, 4.0 * cfg.tail_hi, 40, cfg.bins);
        let hist = stationary_x_histogram(&stats, &plan, &edges)?;
        let (slope, se) = fit_tail_exponent(&hist, (cfg.tail_lo, cfg.tail_hi))?;
        let expected = -(cfg.d as f64 + 1.0);
        let passed = (slope - expected).abs() < 0.1 * expected.abs();
        let mut table = Table::new(&["bin_lo", "bin_hi", "mass"]);
        for (i, m) in hist.mass.iter().enumerate() {
            table.push_numbers(&[hist.edges[i], hist.edges[i + 1], *m]);
        }
        Ok(Body {
            result: json!({
                "samples": hist.total_samples,
                "in_range": hist.in_range_samples,
                "window": [cfg.tail_lo, cfg.tail_hi],
                "slope": slope,
                "slope_stderr": se,
                "expected_slope": expected,
            }),
            table: Some(table),
            passed: Some(passed),
        })
    }
}

fn sphere(cfg: &RunConfig) -> Result<Body, RunError> {
    let c = dispersion_core::projective::sphere_check(cfg.d, cfg.samples, cfg.seed, cfg.nx, cfg.ny, cfg.x_max, cfg.y_max)?;
    let passed = c.l1 < 0.05 && (c.normalization - 1.0).abs() < 1e-6;
    Ok(Body {
        result: serde_json::to_value(&c).unwrap_or(Value::Null),
        table: None,
        passed: Some(passed),
    })
}

fn random_state(d: usize, rng: &mut impl rand::Rng, zero_rho: bool) -> DispersionState {
    let mut v: Vec<f64> = (0..2 * d).map(|_| normal(rng)).collect();
    if zero_rho {
        v[..d].iter_mut().for_each(|x| *x = 0.0);
    }
    DispersionState::from_slice(&v)
}

fn span(cfg: &RunConfig) -> Result<Body, RunError> {
    let stats = cfg.stats();
    let frame = build_frame(&stats.factorize(), cfg.tau, cfg.d);
    let checks: Vec<(usize, Option<f64>)> = (0..cfg.points)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(cfg.seed, purpose::SPAN, k as u64);
            let p = random_state(cfg.d, &mut rng, k < cfg.zero_points);
            let defect = (k < 50).then(|| bracket_defect(&frame, &p));
            (hypoellipticity_rank(&frame, &p, RANK_TOL), defect)
        })
        .collect();
    let min_rank = checks.iter().map(|c| c.0).min().unwrap_or(0);
    let worst = checks.iter().filter_map(|c| c.1).fold(0.0, f64::max);
    let passed = min_rank == 2 * cfg.d && worst < 1e-6;
    Ok(Body {
        result: json!({
            "points": cfg.points,
            "zero_rho_points": cfg.zero_points,
            "min_rank": min_rank,
            "expected_rank": 2 * cfg.d,
            "bracket_points": checks.iter().filter(|c| c.1.is_some()).count(),
            "max_bracket_defect": worst,
        }),
        table: None,
        passed: Some(passed),
    })
}

fn control(cfg: &RunConfig) -> Result<Body, RunError> {
    let stats = cfg.stats();
    let frame = build_frame(&stats.factorize(), cfg.tau, cfg.d);
    let rows: Vec<Result<[f64; 5], RunError>> = (0..cfg.pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(cfg.seed, purpose::CONTROL, k as u64);
            let (z0, z1) = (k % 10 == 3, k % 10 == 7);
            let p0 = random_state(cfg.d, &mut rng, z0);
            let p1 = random_state(cfg.d, &mut rng, z1);
            let t = 0.5 + 4.5 * rng.random::<f64>();
            let path = synthesize_control(&p0, &p1, t, &frame)?;
            let err = verify_control(&path, cfg.steps);
            Ok([k as f64, t, err, z0 as u8 as f64, z1 as u8 as f64])
        })
        .collect();
    let mut table = Table::new(&["pair", "T", "error", "rho0_zero", "rho1_zero"]);
    let mut worst: f64 = 0.0;
    for r in rows {
        let r = r?;
        worst = worst.max(r[2]);
        table.push_numbers(&r);
    }
    let zeros = table.rows.iter().filter(|r| r[3] == "1" || r[4] == "1").count();
    Ok(Body {
        result: json!({
            "pairs": cfg.pairs,
            "pairs_with_zero_rho": zeros,
            "rk4_steps": cfg.steps,
            "max_relative_error": worst,
        }),
        table: Some(table),
        passed: Some(worst < 1e-6),
    })
}

fn certificate(cfg: &RunConfig) -> Result<Body, RunError> {
    let shifted = map_to_shifted(&cfg.stats(), cfg.d)?;
    let params = CertificateParams::default();
    let plan = ProbePlan::new(cfg.d, cfg.rays, cfg.r_max, cfg.sequences);
    let report = verify_certificate(&params, &shifted, cfg.d, &plan)?;
    let mut table = Table::new(&["path", "r", "x", "y", "phi", "m_phi", "region"]);
    let mut paths = Vec::new();
    for p in report.rays.iter().chain(&report.boundary) {
        for q in &p.probes {
            table.rows.push(vec![
                p.label.clone(),
                q.r.to_string(),
                q.x.to_string(),
                q.y.to_string(),
                q.phi.to_string(),
                q.m_phi.to_string(),
                serde_json::to_value(q.region).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            ]);
        }
        paths.push(json!({
            "label": p.label,
            "probes": p.probes.len(),
            "nonnegative": p.nonnegative,
            "growth_from_r": p.growth_from.map(|i| p.probes[i].r),
            "decay_from_r": p.decay_from.map(|i| p.probes[i].r),
            "min_phi": p.probes.iter().map(|q| q.phi).fold(f64::INFINITY, f64::min),
            "last_m_phi": p.probes.last().map(|q| q.m_phi),
            "passed": p.passed,
            "failure": p.failure,
        }));
    }
    Ok(Body {
        result: json!({
            "d": report.d,
            "eta": report.eta,
            "filler": report.filler,
            "params": report.params,
            "shifted": shifted,
            "rays": report.rays.len(),
            "boundary_sequences": report.boundary.len(),
            "failures": report.failures().len(),
            "paths": paths,
        }),
        table: Some(table),
        passed: Some(report.passed),
    })
}

fn mixing(cfg: &RunConfig) -> Result<Body, RunError> {
    let r = mixing_autocorrelation(&cfg.stats(), &settings(cfg), cfg.sample_every, cfg.max_lag, cfg.burn_in)?;
    let mut table = Table::new(&["lag", "autocorrelation"]);
    for (t, a) in r.lag_times.iter().zip(&r.autocorrelation) {
        table.push_numbers(&[*t, *a]);
    }
    Ok(Body {
        result: json!({
            "efold_time": r.efold_time,
            "decay_rate": r.decay_rate,
            "r_squared": r.r_squared,
            "fit_window": [0.0, 2.0 * r.efold_time],
        }),
        table: Some(table),
        passed: Some(r.r_squared > 0.95),
    })
}
