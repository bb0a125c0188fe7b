use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use spinchain_core::error::Error;
use spinchain_core::geometry::VecN;
use spinchain_core::model::BoundaryCondition;
use spinchain_core::numerics::integrate;
use spinchain_core::rng::replica_rng;
use spinchain_core::sampling::*;
use spinchain_core::spectral::*;

fn gauss(lo: f64, hi: f64) -> f64 {
    integrate(|x| (-0.5 * x * x).exp(), lo, hi, 1e-13, 0.0).unwrap()
}

#[test]
fn constant_examples() {
    assert!((poincare_c1(1.0, 0.0) - 16.0 * PI).abs() < 1e-12);
    assert!((poincare_c1(0.0, 4.0) - PI.powi(3) * 2.0 / gauss(0.0, PI)).abs() < 1e-10);
    assert_eq!(poincare_c2(2), 1.0);
    assert_eq!(poincare_c2(3), 0.5);
    assert!((poincare_c2(11) - 0.1).abs() < 1e-15);
    assert!((poincare_c3(0.0) - PI * PI / 2.0).abs() < 1e-15);
    assert!((poincare_c3(1.0) - PI.powi(3) / gauss(-PI, PI)).abs() < 1e-10);
}

#[test]
fn constants_respect_large_b_envelopes() {
    for k in 0..=30 {
        let b = 10f64.powf(3.0 * k as f64 / 30.0);
        for a in [0.0, 1.0, 2.0, 3.0] {
            assert!(poincare_c1(a, b) <= 8.0 * PI.powi(3) * 2f64.powf(a) * b.powf((a + 1.0) / 2.0));
        }
        assert!(poincare_c3(b) <= 2.0 * PI.powi(3) * b.sqrt());
    }
}

#[test]
fn poincare_examples() {
    let constant = TrigPoly { c0: 1.3, cos: vec![0.0; 3], sin: vec![0.0; 3] };
    let r = verify_poincare(PoincareMeasure::Pab { a: 0.0, b: 0.0 }, 1.0, &[constant]).unwrap();
    assert_eq!(r.ratios, vec![None]);
    let cos = TrigPoly { c0: 0.0, cos: vec![1.0], sin: vec![0.0] };
    let r = verify_poincare(PoincareMeasure::Pab { a: 0.0, b: 0.0 }, poincare_c1(0.0, 0.0), &[cos]).unwrap();
    assert!((r.max_ratio - 1.0).abs() < 1e-10 && r.pass);

    let mut rng = replica_rng(91, 0);
    let fs: Vec<TrigPoly> = (0..200).map(|_| TrigPoly::random(rng.gen_range(1..=6), &mut rng)).collect();
    let r = verify_poincare(PoincareMeasure::Pab { a: 1.0, b: 4.0 }, poincare_c1(1.0, 4.0), &fs).unwrap();
    assert!(r.pass);
}

#[test]
fn zonal_sphere_and_circle_checks() {
    let mut rng = replica_rng(92, 0);
    let fs: Vec<TrigPoly> = (0..50).map(|_| TrigPoly::random(6, &mut rng)).collect();
    for n in [2usize, 3, 4] {
        let r = verify_poincare(PoincareMeasure::EquatorUniform { n }, poincare_c2(n), &fs).unwrap();
        assert!(r.pass, "N={n}: {}", r.max_ratio);
    }
    for b in [0.0, 1.0, 4.0, 16.0] {
        let r = verify_poincare(PoincareMeasure::Pb { b }, poincare_c3(b), &fs).unwrap();
        assert!(r.pass, "b={b}");
    }
}

#[test]
fn sphere_monte_carlo_check() {
    let mut rng = replica_rng(93, 0);
    for n in [2usize, 3, 4] {
        let r = verify_sphere_poincare_mc(n, 50, 20_000, &mut rng).unwrap();
        assert!(r.pass, "N={n}: z {}", r.max_z);
    }
}

#[test]
fn tensorized_bound_holds() {
    let mut rng = replica_rng(94, 0);
    for (n, beta) in [(3usize, 1.0), (3, 8.0), (4, 2.0)] {
        let r = verify_tensorized_bound(n, beta, 50, 20_000, &mut rng).unwrap();
        assert!(r.pass, "N={n} β={beta}: {}", r.max_ratio);
    }
}

#[test]
fn ou_gap_is_recovered() {
    let rate: f64 = 0.2;
    let dt: f64 = 0.5;
    let a = (-rate * dt).exp();
    let s = (1.0 - a * a).sqrt();
    let replicas = (0..24)
        .map(|r| {
            let mut rng = replica_rng(95, r);
            let mut x: f64 = rng.sample(StandardNormal);
            let series: Vec<f64> = (0..4000)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    x = a * x + s * z;
                    x
                })
                .collect();
            vec![series]
        })
        .collect();
    let set = TrajectorySet {
        dt,
        params: GapParams { n: 1, l: 1, beta: 1.0, bc: BoundaryCondition::Free },
        replicas,
    };
    let g = gap_estimate_autocorr(&set).unwrap();
    assert!((g.value - rate).abs() < 0.1 * rate, "{}", g.value);
    assert_eq!(g.method, GapMethod::Autocorr);
}

#[test]
fn rayleigh_examples() {
    let mut rng = replica_rng(96, 0);
    let mut s = FreeGibbsSampler::new(2, 2, 0.0).unwrap();
    let samples: Vec<WeightedSample> = (0..50_000)
        .map(|_| WeightedSample { chain: s.sample(&mut rng), log_weight: 0.0 })
        .collect();
    let f = LinearObservable { site: 0, axis: VecN::basis(2, 0) };
    let r = rayleigh_upper_bound_gap(&f, &samples, 0.0).unwrap();
    assert!((r.value - 1.0).abs() < 0.05, "{}", r.value);
    let zero = LinearObservable { site: 0, axis: VecN::zeros(2) };
    assert!(matches!(rayleigh_upper_bound_gap(&zero, &samples, 0.0), Err(Error::InvalidParameter { .. })));
}

#[test]
fn rayleigh_bounds_dominate_the_oracle_gap() {
    let beta = 1.0;
    let oracle = gap_oracle_xy(3, beta, 48, BoundaryCondition::Periodic).unwrap();
    let mut rng = replica_rng(97, 0);
    let samples = sample_periodic_batch(2, 3, beta, 100_000, PeriodicMethod::Reweight, 1, &mut rng).unwrap();
    for _ in 0..20 {
        let f = AngleTrigObservable::random(3, 2, 3, &mut rng);
        let Ok(r) = rayleigh_upper_bound_gap(&f, &samples, beta) else { continue };
        assert!(r.value + 2.0 * r.se >= oracle.value, "{}±{} < {}", r.value, r.se, oracle.value);
    }
}

#[test]
fn bottleneck_at_infinite_temperature() {
    let mut rng = replica_rng(98, 0);
    let mut s = XyMixtureSampler::for_bottleneck(8, 0.0, 0.3).unwrap();
    let samples: Vec<WeightedSample> = (0..200_000).map(|_| s.sample(&mut rng)).collect();
    let r = bottleneck_ratio(&samples, 0.3).unwrap();
    for (name, p) in [
        ("A", r.a_delta.probability),
        ("B∖A", r.b_minus_a.probability),
        ("B^c", r.b_complement.probability),
        ("B0", r.b0.probability),
        ("B1", r.b1.probability),
    ] {
        assert!(p > 1e-2 && p <= 1.0, "μ({name}) = {p:e}");
    }
    assert!(r.ratio > 1e-2 && r.ratio < 1e2, "ratio {}", r.ratio);
}

#[test]
fn b0_mass_obeys_the_low_temperature_lower_bound() {
    let delta = 0.3;
    let l = 8;
    let b0 = |beta: f64, seed: u64| {
        let mut rng = replica_rng(seed, 0);
        let mut s = XyMixtureSampler::for_bottleneck(l, beta, delta).unwrap();
        let samples: Vec<WeightedSample> = (0..200_000).map(|_| s.sample(&mut rng)).collect();
        bottleneck_ratio(&samples, delta).unwrap().b0.probability
    };
    // the constant c_{δ,L} is pinned by the β = 0 value
    let c = b0(0.0, 99);
    let at3 = b0(3.0, 100);
    assert!(at3 >= (-delta * delta * l as f64 * 3.0).exp() * c);
}
