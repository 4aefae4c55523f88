//! Full-scale acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use dispersion_cli::{run, Command, RunConfig};
use dispersion_core::lyapunov::{airy_lambda_d1, regularized_averages, top_lyapunov_direct, RunSettings};
use dispersion_core::noise::FlowStatistics;
use dispersion_core::reduced::{step_reduced_halfplane, HalfPlanePoint};
use dispersion_core::rng::{purpose, stream};
use rayon::prelude::*;
use serde_json::Value;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn exec(command: Command, pairs: &[(&str, String)]) -> (Value, bool) {
    let mut all = vec![("timing".to_string(), "false".to_string())];
    all.extend(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let cfg = RunConfig::build(command, &all, &[]).expect("valid acceptance config");
    let out = run(&cfg).expect("run");
    (out.document.json["result"].clone(), out.passed == Some(true))
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn c1_airy_cross_check() -> Verdict {
    let start = Instant::now();
    let (r, ok) = exec(
        Command::Lambda,
        &[("d", s(1)), ("T", s(1e4)), ("ensemble", s(64)), ("workers", s(1))],
    );
    let secs = start.elapsed().as_secs_f64();
    let pairs: Vec<String> = r["agreement"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let z = a["z"].as_f64().map_or("exact".to_string(), |z| format!("{z:.2}"));
            format!("{}/{} z={z} rel={:.2e}", a["a"], a["b"], f(&a["relative_difference"]))
        })
        .collect();
    verdict(ok && secs < 300.0, format!("{} ; {secs:.1}s single worker", pairs.join(", ")))
}

fn c2_localization_scan() -> Verdict {
    let mut positive = true;
    let mut signs = Vec::new();
    let mut worst = f64::INFINITY;
    for k in 0..20 {
        let s = 0.05 * 1000f64.powf(k as f64 / 19.0);
        let stats = FlowStatistics::new(1, 1.0, s, 0.0).unwrap();
        let l = airy_lambda_d1(&stats).unwrap().value;
        worst = worst.min(l + 0.5);
        positive &= l + 0.5 > 0.0;
        signs.push(l.signum());
    }
    let change = signs.windows(2).any(|w| w[0] != w[1]);
    verdict(
        positive && change,
        format!("min lambda + 1/(2 tau) = {worst:.4}, sign change: {change}"),
    )
}

fn c3_d1_density() -> Verdict {
    // 8 trajectories x 1.25e6 steps = 1e7 steps
    let (r, ok) = exec(
        Command::Density,
        &[("d", s(1)), ("T", s(1.25e4)), ("ensemble", s(8)), ("bins", s(40))],
    );
    let ratios: Vec<String> = r["tail_check"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| format!("{:.3}", f(&t["ratio"])))
        .collect();
    verdict(
        ok && r["samples"].as_u64() == Some(10_000_000),
        format!("samples={} L1={:.4} tail ratios {}", r["samples"], f(&r["l1"]), ratios.join("/")),
    )
}

fn c4_spectrum_sum() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [2usize, 3] {
        let (r, ok) = exec(Command::Spectrum, &[("d", s(d)), ("T", s(2e4)), ("ensemble", s(4))]);
        let top = &r["exponents"][0];
        let stats = FlowStatistics::new(d, 1.0, 1.0, 0.0).unwrap();
        let direct = top_lyapunov_direct(&stats, &RunSettings::new(0.01, 2e3, 32, 7), None).unwrap();
        let z = (f(&top["value"]) - direct.value).abs() / f(&top["stderr"]).hypot(direct.stderr);
        pass &= ok && z < 3.0;
        parts.push(format!(
            "d={d}: sum={:.6} rel={:.1e} top qr={:.4} direct={:.4} z={z:.2}",
            f(&r["sum"]),
            f(&r["relative_error"]),
            f(&top["value"]),
            direct.value
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c5_d2_invariants() -> Verdict {
    let base = [("d", s(2)), ("T", s(2e3)), ("ensemble", s(64))];
    let (hi, ok_hi) = exec(Command::Lambda, &[base.as_slice(), &[("x_cut", s(1e4))]].concat());
    let (lo, ok_lo) = exec(Command::Lambda, &[base.as_slice(), &[("x_cut", s(1e2))]].concat());
    let (a, b) = (&hi["estimates"][1], &lo["estimates"][1]);
    let cut_z = (f(&a["value"]) - f(&b["value"])).abs() / f(&a["stderr"]).hypot(f(&b["stderr"]));
    verdict(
        ok_hi && ok_lo && cut_z < 3.0,
        format!(
            "direct={:.4} invariants(1e4)={:.4} z={:.2}; invariants(1e2)={:.4} cutoff z={cut_z:.2}",
            f(&hi["estimates"][0]["value"]),
            f(&a["value"]),
            f(&hi["agreement"][0]["z"]),
            f(&b["value"]),
        ),
    )
}

fn c6_tail_exponents() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, ensemble) in [(2usize, 16usize), (3, 64)] {
        let (r, ok) = exec(Command::Density, &[("d", s(d)), ("T", s(1e5)), ("ensemble", s(ensemble))]);
        pass &= ok;
        parts.push(format!(
            "d={d}: slope {:.3} +- {:.3} over {} (expect {})",
            f(&r["slope"]),
            f(&r["slope_stderr"]),
            r["window"],
            r["expected_slope"]
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c7_sphere() -> Verdict {
    let (r, ok) = exec(Command::SphereCheck, &[("d", s(3)), ("samples", s(10_000_000u64))]);
    verdict(
        ok,
        format!("L1={:.4} normalization-1={:.1e}", f(&r["l1"]), f(&r["normalization"]) - 1.0),
    )
}

fn c8_span() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for d in 1..=3usize {
        let (r, ok) = exec(Command::VerifySpan, &[("d", s(d)), ("points", s(1000)), ("zero_points", s(100))]);
        pass &= ok;
        parts.push(format!(
            "d={d}: min rank {} of {}, bracket defect {:.1e} at {} points",
            r["min_rank"],
            r["expected_rank"],
            f(&r["max_bracket_defect"]),
            r["bracket_points"]
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c9_control() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for d in 1..=3usize {
        let (r, ok) = exec(Command::VerifyControl, &[("d", s(d)), ("pairs", s(100)), ("steps", s(10_000))]);
        pass &= ok && r["pairs_with_zero_rho"].as_u64().unwrap_or(0) > 0;
        parts.push(format!(
            "d={d}: max err {:.1e} ({} pairs with rho=0)",
            f(&r["max_relative_error"]),
            r["pairs_with_zero_rho"]
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c10_non_explosion() -> Verdict {
    let stats = FlowStatistics::new(3, 1.0, 1.0, 0.0).unwrap();
    let dt = 0.01;
    let n = (100.0 / dt) as u64;
    let trajectories = 10_000u64;
    let res: Vec<Result<u64, String>> = (0..trajectories)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(10, purpose::REDUCED, k);
            let mut z = HalfPlanePoint::new(0.0, 1.0);
            let mut deep = 0u64;
            for _ in 0..n {
                let st = step_reduced_halfplane(z, &stats, 3, dt, &mut rng).map_err(|e| e.to_string())?;
                z = st.point;
                if !(z.y > 0.0 && z.x.is_finite()) {
                    return Err(format!("trajectory {k} left the half plane"));
                }
                deep += u64::from(st.halvings > 5);
            }
            Ok(deep)
        })
        .collect();
    let mut deep = 0u64;
    for r in res {
        match r {
            Ok(k) => deep += k,
            Err(e) => return verdict(false, e),
        }
    }
    let frac = deep as f64 / (trajectories * n) as f64;
    verdict(
        frac < 1e-3,
        format!("{trajectories} trajectories x {n} steps all with y > 0; >5 halvings in {frac:.2e} of steps"),
    )
}

fn c11_certificate() -> Verdict {
    let (r, ok) = exec(
        Command::VerifyCertificate,
        &[("d", s(3)), ("rays", s(64)), ("r_max", s(1e3)), ("sequences", s(32))],
    );
    verdict(
        ok,
        format!(
            "{} rays + {} boundary sequences, {} failures, eta={:.3}",
            r["rays"],
            r["boundary_sequences"],
            r["failures"],
            f(&r["eta"])
        ),
    )
}

fn c12_regularization_limit() -> Verdict {
    let stats = FlowStatistics::new(2, 1.0, 1.0, 0.0).unwrap();
    let avg = regularized_averages(&stats, &RunSettings::new(0.01, 1e3, 64, 12), &[0.1, 0.01, 0.001]).unwrap();
    let monotone = avg
        .windows(2)
        .all(|w| w[1].mean.abs() <= w[0].mean.abs() + 3.0 * w[0].stderr.hypot(w[1].stderr));
    let last = avg.last().unwrap();
    let near_zero = last.mean.abs() < 3.0 * last.stderr;
    let parts: Vec<String> = avg
        .iter()
        .map(|a| format!("eps={}: {:.4} +- {:.4}", a.eps, a.mean, a.stderr))
        .collect();
    verdict(monotone && near_zero, parts.join("; "))
}

fn c13_mixing() -> Verdict {
    let (r, ok) = exec(Command::Mixing, &[("d", s(2)), ("sample_every", s(2))]);
    verdict(
        ok,
        format!("e-fold time {:.3}, R^2={:.4}", f(&r["efold_time"]), f(&r["r_squared"])),
    )
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored; a name
    // filter selects criteria by number
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Verdict); 13] = [
        ("d=1 Airy cross-check", c1_airy_cross_check),
        ("d=1 localization scan", c2_localization_scan),
        ("d=1 stationary density", c3_d1_density),
        ("spectrum sum", c4_spectrum_sum),
        ("d=2 invariant formula", c5_d2_invariants),
        ("tail exponents", c6_tail_exponents),
        ("uniform sphere law", c7_sphere),
        ("hypoellipticity", c8_span),
        ("controllability", c9_control),
        ("non-explosion", c10_non_explosion),
        ("certificate", c11_certificate),
        ("regularization limit", c12_regularization_limit),
        ("mixing", c13_mixing),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {status} {name}: {} [{:.1}s]",
            v.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
