use dispersion_core::certificate::{
    apply_generator_m, phi2, phi_d, verify_certificate, Certificate, CertificateParams, Phi2, ProbePlan, Region,
};
use dispersion_core::noise::FlowStatistics;
use dispersion_core::reduced::{map_to_shifted, HalfPlanePoint, ShiftedParams};
use dispersion_core::rng::{normal, purpose, stream};

fn shifted(d: usize) -> ShiftedParams {
    map_to_shifted(&FlowStatistics::new(d, 1.0, 1.0, 0.0).unwrap(), d).unwrap()
}

/// Coefficients the unscaled function is built for (`kappa2 = 0.01`).
fn base_process(d: usize) -> ShiftedParams {
    ShiftedParams {
        a1: 0.25,
        a2: 0.0,
        b: 0.01,
        kappa1: 0.01,
        kappa2: 0.01,
        tau: 1.0,
    }
    .validated(d)
}

trait Validated {
    fn validated(self, d: usize) -> Self;
}

impl Validated for ShiftedParams {
    fn validated(self, d: usize) -> Self {
        self.validate(d).unwrap();
        self
    }
}

#[test]
fn generator_of_simple_functions() {
    let mut rng = stream(1, purpose::INITIAL, 0);
    for d in [2usize, 3, 4] {
        let sh = shifted(d);
        for _ in 0..50 {
            let (x, y) = (3.0 * normal(&mut rng), normal(&mut rng).abs() + 0.2);
            let p = HalfPlanePoint::new(x, y);
            assert!(apply_generator_m(|_, _| 7.0, p, &sh, d).unwrap().abs() < 1e-9);
            let m = apply_generator_m(|x, _| x, p, &sh, d).unwrap();
            let want = -(x * x - y * y - sh.a1) / sh.tau;
            assert!((m - want).abs() < 1e-8 * (1.0 + want.abs()));
            let f = |x: f64, y: f64| x * x * y + y * y * y;
            let fy = x * x + 3.0 * y * y;
            let diff = apply_generator_m(f, p, &sh, d).unwrap() - apply_generator_m(f, p, &sh, 2).unwrap();
            let want = sh.b * (d as f64 - 2.0) / y * fy;
            assert!((diff - want).abs() < 1e-5 * (1.0 + want.abs()), "d={d}: {diff} vs {want}");
        }
    }
    assert!(apply_generator_m(|x, _| x, HalfPlanePoint::new(0.0, 0.0), &shifted(3), 3).is_err());
}

#[test]
fn nonnegative_on_grid() {
    let p = Phi2::new(CertificateParams::default()).unwrap();
    let cert = Certificate::new(CertificateParams::default(), shifted(2), 2).unwrap();
    for i in 0..200 {
        for j in 0..200 {
            let x = -50.0 + 100.0 * i as f64 / 199.0;
            let y = -50.0 + 100.0 * j as f64 / 199.0;
            assert!(p.eval(x, y) >= 0.0, "({x}, {y})");
            assert!(cert.eval(x, y).unwrap() >= 0.0, "({x}, {y})");
        }
    }
}

#[test]
fn pure_regions_use_single_local_function() {
    let p = Phi2::new(CertificateParams::default()).unwrap();
    let cases: [(f64, f64, Region, fn(&Phi2, f64, f64) -> f64); 6] = [
        (6.0, 0.0, Region::X1, Phi2::phi1),
        (40.0, -30.0, Region::X1, Phi2::phi1),
        (0.0, 9.0, Region::X2, Phi2::phi2),
        (-30.0, 5.0, Region::X3, Phi2::phi3),
        (-30.0, 0.5, Region::X4, Phi2::phi4),
        (-30.0, 0.1, Region::X5, Phi2::phi5),
    ];
    for (x, y, region, f) in cases {
        assert_eq!(p.region(x, y), region, "({x}, {y})");
        let (a, b) = (p.eval(x, y), f(&p, x, y));
        assert!((a - b).abs() <= 1e-12 * b.abs(), "({x}, {y}): {a} vs {b}");
    }
    let c = p.params;
    assert!((p.table(3.0, 0.0) - c.c1 * 3f64.powf(c.delta / 2.0)).abs() < 1e-9);
    assert_eq!(p.region(3.0, 0.0), Region::Filler);
    assert_eq!(p.eval(0.0, 0.0), p.filler);
}

#[test]
fn seams_are_smooth() {
    // across a kink the one-sided slopes differ by a fixed jump; for a C1
    // function the gap shrinks linearly with the step
    let p = Phi2::new(CertificateParams::default()).unwrap();
    for (x, y) in [(1.5, 6.0), (-1.5, 6.0), (-30.0, 1.5), (-30.0, 1.5 / 30f64.sqrt()), (4.5, 0.0), (5.0, 0.0)] {
        let v = p.eval(x, y);
        for (ux, uy) in [(1.0, 0.0), (0.0, 1.0)] {
            let gap = |h: f64| {
                let fwd = (p.eval(x + h * ux, y + h * uy) - v) / h;
                let bwd = (v - p.eval(x - h * ux, y - h * uy)) / h;
                (fwd - bwd, fwd.abs().max(1.0))
            };
            let (g1, scale) = gap(1e-3);
            let (g2, _) = gap(5e-4);
            assert!(g2.abs() < 0.6 * g1.abs() + 1e-6 * scale, "({x}, {y}): {g1} {g2}");
            let (l, r) = (p.eval(x - 1e-9 * ux, y - 1e-9 * uy), p.eval(x + 1e-9 * ux, y + 1e-9 * uy));
            assert!((r - l).abs() < 1e-12 * v.abs() + 4e-9 * scale, "({x}, {y})");
        }
    }
}

#[test]
fn scaling_and_boundary_term() {
    let params = CertificateParams::default();
    let sh = shifted(3);
    let cert = Certificate::new(params, sh, 3).unwrap();
    let base = Phi2::new(params).unwrap();
    let eta = cert.eta;
    assert!((eta - (0.05f64 / (2.0 * sh.kappa2)).cbrt()).abs() < 1e-15);
    for (x, y) in [(10.0, 3.0), (-50.0, 0.4), (200.0, 20.0)] {
        assert_eq!(cert.phi2_eta(x, y), base.eval(eta * x, eta * y));
    }
    let y0 = 2.0 / eta;
    assert_eq!(cert.eval(7.0, y0).unwrap(), cert.phi2_eta(7.0, y0));
    let mut prev = cert.eval(1.0, 1.0).unwrap();
    for k in 1..60 {
        let v = cert.eval(1.0, 2f64.powi(-k)).unwrap();
        assert!(v > prev);
        prev = v;
    }
    assert!(prev > 1e4);
    assert!(cert.eval(1.0, 0.0).is_err());
    assert_eq!(phi_d(3.0, 4.0, &params, &sh, 3).unwrap(), cert.eval(3.0, 4.0).unwrap());
    assert_eq!(phi2(3.0, 4.0, &params).unwrap(), base.eval(3.0, 4.0));
}

#[test]
fn local_functions_decay_along_their_rays() {
    let p = Phi2::new(CertificateParams::default()).unwrap();
    let sh = base_process(2);
    let delta = p.params.delta;
    for x in [20.0, 100.0, 1e3, 1e4] {
        let m = apply_generator_m(|x, y| p.phi1(x, y), HalfPlanePoint::new(x, 0.0), &sh, 2).unwrap();
        assert!(m < 0.0, "x={x}: {m}");
    }
    for r in [1e3, 1e4, 1e5] {
        let (x, y) = (-r, r);
        let m = apply_generator_m(|x, y| p.phi3(x, y), HalfPlanePoint::new(x, y), &sh, 2).unwrap();
        let lead = delta * x * p.phi3(x, y) / sh.tau;
        assert!((m / lead - 1.0).abs() < 0.1, "r={r}: {m} vs {lead}");
    }
}

#[test]
fn verifier_passes_default_and_rejects_bad_params() {
    let r = verify_certificate(&CertificateParams::default(), &shifted(2), 2, &ProbePlan::new(2, 16, 1e3, 0)).unwrap();
    assert!(r.passed, "{:?}", r.failures().first().map(|f| &f.failure));
    assert_eq!(r.rays.len(), 16);
    let r = verify_certificate(&CertificateParams::default(), &shifted(3), 3, &ProbePlan::new(3, 8, 1e3, 8)).unwrap();
    assert!(r.passed, "{:?}", r.failures().first().map(|f| &f.failure));
    assert_eq!(r.boundary.len(), 8);
    let mut bad = CertificateParams::default();
    bad.c3 = bad.c2 / 2.0;
    assert!(verify_certificate(&bad, &shifted(2), 2, &ProbePlan::new(2, 4, 1e3, 0)).is_err());
}
