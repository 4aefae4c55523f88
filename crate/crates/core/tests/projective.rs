use dispersion_core::projective::{
    reduce_invariants, sample_uniform_sphere, sphere_check, sphere_density_mass, uniform_sphere_density,
};
use dispersion_core::rng::{normal, purpose, stream};
use dispersion_core::stats::RunningStats;
use dispersion_core::DispersionState;
use std::f64::consts::FRAC_PI_2;

/// Composite Simpson over `(-pi/2, pi/2)` (or `(0, pi/2)`) after `x = tan t`.
fn simpson_tan<F: Fn(f64) -> f64>(f: F, half: bool, n: usize) -> f64 {
    let (a, b) = (if half { 0.0 } else { -FRAC_PI_2 }, FRAC_PI_2);
    let h = (b - a) / n as f64;
    let g = |t: f64| {
        if t.abs() >= FRAC_PI_2 {
            return 0.0;
        }
        let c = t.cos();
        f(t.tan()) / (c * c)
    };
    let mut s = g(a) + g(b);
    for k in 1..n {
        s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn eta0_normalization_by_independent_simpson() {
    for d in [2usize, 3, 4] {
        let half = d >= 3;
        let m = simpson_tan(|x| simpson_tan(|y| uniform_sphere_density(x, y, d), half, 2000), false, 2000);
        assert!((m - 1.0).abs() < 1e-6, "d={d}: {m}");
        let q = sphere_density_mass(d).unwrap();
        assert!((q - 1.0).abs() < 1e-6, "d={d}: {q}");
    }
}

#[test]
fn invariants_match_direct_formula() {
    for k in 0..200u64 {
        let mut rng = stream(2, purpose::INITIAL, k);
        let v: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
        let p = DispersionState::from_slice(&v);
        let c = reduce_invariants(&p).finite().unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (rr, cc, rc) = (dot(&p.rho, &p.rho), dot(&p.chi, &p.chi), dot(&p.rho, &p.chi));
        let y = (rr * cc - rc * rc).sqrt() / rr;
        assert!((c.x - rc / rr).abs() < 1e-12 * (1.0 + c.x.abs()));
        assert!((c.y.unwrap() - y).abs() < 1e-9 * (1.0 + y));
    }
}

#[test]
fn sphere_samples_moments() {
    let d = 3;
    let mut rng = stream(4, purpose::SPHERE, 0);
    let mut first: Vec<RunningStats> = vec![RunningStats::new(); 2 * d];
    let mut second: Vec<RunningStats> = vec![RunningStats::new(); 2 * d];
    for _ in 0..1_000_000 {
        let s = sample_uniform_sphere(d, &mut rng);
        assert!((s.norm() - 1.0).abs() < 1e-12);
        for (i, v) in s.to_vec().into_iter().enumerate() {
            first[i].push(v);
            second[i].push(v * v);
        }
    }
    for i in 0..2 * d {
        assert!(first[i].mean().abs() < 4.0 * first[i].std_err());
        let want = 1.0 / (2 * d) as f64;
        assert!((second[i].mean() - want).abs() < 4.0 * second[i].std_err());
    }
}

#[test]
fn sphere_histogram_matches_eta0() {
    let c = sphere_check(3, 1_000_000, 3, 40, 20, 4.0, 2.0).unwrap();
    assert!(c.l1 < 0.05, "{}", c.l1);
    assert!((c.normalization - 1.0).abs() < 1e-6);
    let c = sphere_check(2, 1_000_000, 3, 40, 40, 4.0, 4.0).unwrap();
    assert!(c.l1 < 0.05, "{}", c.l1);
    assert!(sphere_check(1, 10, 0, 4, 4, 1.0, 1.0).is_err());
}

#[test]
fn sphere_check_is_deterministic() {
    let a = sphere_check(3, 100_000, 9, 10, 10, 3.0, 3.0).unwrap();
    let b = sphere_check(3, 100_000, 9, 10, 10, 3.0, 3.0).unwrap();
    assert_eq!(a, b);
}
