use std::f64::consts::PI;

use spinchain_core::geometry::{dot, UnitVector};
use spinchain_core::model::{energy, BoundaryCondition, SpinChain};
use spinchain_core::numerics::{integrate, mean_se};
use spinchain_core::rng::replica_rng;
use spinchain_core::sampling::*;
use spinchain_core::spectral::XyGrid;

fn quad_mean_cos(a: f64, b: f64) -> f64 {
    let w = |x: f64| x.sin().powf(a) * (b * (x.cos() - 1.0)).exp();
    let num = integrate(|x| x.cos() * w(x), 0.0, PI, 1e-12, 0.0).unwrap();
    let den = integrate(w, 0.0, PI, 1e-12, 0.0).unwrap();
    num / den
}

fn within_3se(xs: &[f64], want: f64) -> bool {
    let (m, se) = mean_se(xs);
    (m - want).abs() <= 3.0 * se
}

fn chi_square(counts: &[usize], total: usize) -> f64 {
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

// χ²_{31} upper 1% point
const CHI2_31_01: f64 = 52.19;

#[test]
fn theta_uniform_passes_ks() {
    let mut rng = replica_rng(41, 0);
    let mut s = ThetaSampler::new(0.0, 0.0).unwrap();
    let n = 100_000;
    let mut x: Vec<f64> = (0..n).map(|_| s.sample(&mut rng) / PI).collect();
    x.sort_by(f64::total_cmp);
    let d = x
        .iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64 / n as f64 - v).abs().max((v - i as f64 / n as f64).abs()))
        .fold(0.0, f64::max);
    assert!(d < 1.628 / (n as f64).sqrt(), "KS {d}");
}

#[test]
fn theta_moments_match_quadrature() {
    let mut rng = replica_rng(42, 0);
    for &(a, b, want) in &[(1.0, 0.0, Some(0.0)), (1.0, 4.0, None), (0.0, 4.0, None), (2.0, 16.0, None)] {
        let want = want.unwrap_or_else(|| quad_mean_cos(a, b));
        let mut s = ThetaSampler::new(a, b).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| s.sample(&mut rng).cos()).collect();
        assert!(within_3se(&xs, want), "a={a} b={b}");
    }
}

#[test]
fn coordinate_examples() {
    let mut rng = replica_rng(43, 0);
    let c = IncrementCoordinates {
        thetas: vec![0.0; 5],
        axes: (0..5).map(|_| uniform_equatorial(4, &mut rng)).collect(),
    };
    let s = coords_to_spins(&c, 4).unwrap();
    assert!(s.data().chunks(4).all(|x| x == [1.0, 0.0, 0.0, 0.0]));

    let c = IncrementCoordinates {
        thetas: vec![PI / 2.0, PI / 2.0],
        axes: vec![],
    };
    let s = coords_to_spins(&c, 2).unwrap();
    assert!((s.spin(0)[0]).abs() < 1e-15 && (s.spin(0)[1] - 1.0).abs() < 1e-15);
    assert!((s.spin(1)[0] + 1.0).abs() < 1e-15 && s.spin(1)[1].abs() < 1e-15);

    for _ in 0..100 {
        let c = random_coordinates(3, 6, &mut rng);
        let s = coords_to_spins(&c, 3).unwrap();
        for i in 0..5 {
            assert!((dot(s.spin(i), s.spin(i + 1)) - c.thetas[i + 1].cos()).abs() < 1e-10);
        }
        assert!(c.axes.iter().all(|v| v[0].abs() < 1e-10 && (v.vec().norm() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn free_gibbs_at_infinite_temperature_is_uniform() {
    let mut rng = replica_rng(44, 0);
    let n = 100_000;
    for dim in [2usize, 3] {
        let mut s = FreeGibbsSampler::new(dim, 4, 0.0).unwrap();
        let mut counts = vec![vec![0usize; 32]; 4];
        for _ in 0..n {
            let c = s.sample(&mut rng);
            for (i, cnt) in counts.iter_mut().enumerate() {
                let x = c.spin(i);
                // equal-measure cells: angle bins on S¹, height bands on S² (Archimedes)
                let u = if dim == 2 {
                    (x[1].atan2(x[0]) + PI) / (2.0 * PI)
                } else {
                    (x[2] + 1.0) / 2.0
                };
                cnt[((u * 32.0) as usize).min(31)] += 1;
            }
        }
        for cnt in &counts {
            assert!(chi_square(cnt, n) < CHI2_31_01, "N={dim}: χ² {}", chi_square(cnt, n));
        }
    }
}

#[test]
fn free_gibbs_increments_match_quadrature_and_decorrelate() {
    let mut rng = replica_rng(45, 0);
    let mut s = FreeGibbsSampler::new(3, 6, 2.0).unwrap();
    let draws: Vec<SpinChain> = (0..50_000).map(|_| s.sample(&mut rng)).collect();
    let want = quad_mean_cos(1.0, 2.0);
    for i in 0..5 {
        let xs: Vec<f64> = draws.iter().map(|c| dot(c.spin(i), c.spin(i + 1))).collect();
        assert!(within_3se(&xs, want), "bond {i}");
    }
    for i in 0..4 {
        let prod: Vec<f64> = draws
            .iter()
            .map(|c| (dot(c.spin(i), c.spin(i + 1)) - want) * (dot(c.spin(i + 1), c.spin(i + 2)) - want))
            .collect();
        assert!(within_3se(&prod, 0.0), "bonds {i},{}", i + 1);
    }
    // −H^f = Σ cos θ_i for every draw
    for _ in 0..100 {
        let c = s.sample_coords(&mut rng);
        let chain = coords_to_spins(&c, 3).unwrap();
        let sum: f64 = c.thetas[1..].iter().map(|t| t.cos()).sum();
        assert!((energy(&chain) + sum).abs() < 1e-10);
    }
}

#[test]
fn periodic_at_zero_coupling_has_equal_weights() {
    let mut rng = replica_rng(46, 0);
    let s = sample_periodic_batch(3, 6, 0.0, 100, PeriodicMethod::Reweight, 1, &mut rng).unwrap();
    assert!(s.iter().all(|w| w.log_weight == 0.0));
}

#[test]
fn reweight_and_mcmc_agree() {
    let mut rng = replica_rng(47, 0);
    let rw = sample_periodic_batch(2, 8, 1.0, 100_000, PeriodicMethod::Reweight, 1, &mut rng).unwrap();
    let (m1, s1) = weighted_mean_se(&rw, |c| dot(c.spin(0), c.spin(1)));
    let mc = sample_periodic_batch(2, 8, 1.0, 50_000, PeriodicMethod::Mcmc { burn_in_sweeps: 500 }, 4, &mut rng).unwrap();
    let xs: Vec<f64> = mc.iter().map(|s| dot(s.chain.spin(0), s.chain.spin(1))).collect();
    // batch means absorb the residual autocorrelation
    let batches: Vec<f64> = xs.chunks(500).map(|b| b.iter().sum::<f64>() / b.len() as f64).collect();
    let (m2, s2) = mean_se(&batches);
    assert!((m1 - m2).abs() <= 3.0 * (s1 * s1 + s2 * s2).sqrt(), "{m1}±{s1} vs {m2}±{s2}");
}

#[test]
fn periodic_sampler_matches_grid_oracle() {
    let grid = XyGrid::new(3, 96, BoundaryCondition::Periodic, 1.0, 1.0).unwrap();
    let want = grid.expectation(|a| (a[1] - a[0]).cos());
    let mut rng = replica_rng(48, 0);
    let s = sample_periodic_batch(2, 3, 1.0, 200_000, PeriodicMethod::Reweight, 1, &mut rng).unwrap();
    let (got, _) = weighted_mean_se(&s, |c| dot(c.spin(0), c.spin(1)));
    assert!((got - want).abs() <= 0.02 * want.abs(), "{got} vs {want}");
}

#[test]
fn heat_bath_preserves_the_periodic_law() {
    let m = 96;
    let grid = XyGrid::new(3, m, BoundaryCondition::Periodic, 1.0, 1.0).unwrap();
    let h = grid.spacing();
    let bins = 4;
    let bin = |psi: f64| -> usize {
        let x = (psi + h / 2.0).rem_euclid(2.0 * PI);
        ((x / (2.0 * PI) * bins as f64) as usize).min(bins - 1)
    };
    let cell = |a: &[f64]| bin(a[1] - a[0]) * bins + bin(a[2] - a[1]);
    let mut want = vec![0.0; bins * bins];
    for (idx, p) in grid.stationary().iter().enumerate() {
        want[cell(&grid.angles(idx))] += p;
    }
    let mut rng = replica_rng(49, 0);
    let mut chain = SpinChain::aligned(2, 3, BoundaryCondition::Periodic);
    let mut hb = HeatBath::new(1.0).unwrap();
    for _ in 0..1000 {
        hb.sweep(&mut chain, &mut rng);
    }
    let sweeps = 10_000_000;
    let mut got = vec![0.0; bins * bins];
    for _ in 0..sweeps {
        hb.sweep(&mut chain, &mut rng);
        let a: Vec<f64> = (0..3).map(|i| chain.spin(i)[1].atan2(chain.spin(i)[0])).collect();
        got[cell(&a)] += 1.0 / sweeps as f64;
    }
    let tv: f64 = 0.5 * want.iter().zip(&got).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 1e-3, "TV {tv}");
}

#[test]
fn reweight_error_halves_with_four_times_the_draws() {
    let mut rng = replica_rng(50, 0);
    let se = |n: usize, rng: &mut _| {
        let s = sample_periodic_batch(3, 8, 2.0, n, PeriodicMethod::Reweight, 1, rng).unwrap();
        weighted_mean_se(&s, |c| dot(c.spin(0), c.spin(7))).1
    };
    let a = se(20_000, &mut rng);
    let b = se(80_000, &mut rng);
    let r = a / b;
    assert!((r - 2.0).abs() <= 0.6, "ratio {r}");
}

#[test]
fn derivative_bound_examples() {
    let mut rng = replica_rng(51, 0);
    let c = random_coordinates(3, 6, &mut rng);
    let d = coordinate_derivative_norms(&c, 3, 1e-6).unwrap();
    for i in 0..6 {
        for j in i + 1..6 {
            assert_eq!(d[i][j], (0.0, 0.0));
        }
    }
    let mut z = random_coordinates(3, 4, &mut rng);
    z.thetas.iter_mut().for_each(|t| *t = 0.0);
    let d = coordinate_derivative_norms(&z, 3, 1e-6).unwrap();
    assert!((d[0][0].0 - 1.0).abs() < 1e-6);

    let rep = verify_coordinate_derivative_bounds(3, 6, 200, &mut rng).unwrap();
    assert!(rep.max_theta_norm <= 1.0 + 1e-4 && rep.max_axis_norm <= 4.0 + 1e-4);
    assert!(!rep.theta_violation && !rep.axis_violation);
}

#[test]
fn vmf_draws_concentrate_on_the_mean() {
    let mut rng = replica_rng(52, 0);
    let m = UnitVector::basis(3, 2);
    let xs: Vec<f64> = (0..50_000).map(|_| sample_vmf(m.as_slice(), 5.0, &mut rng).unwrap()[2]).collect();
    // E[x·m] = coth κ − 1/κ on S²
    let want = 1.0 / 5f64.tanh() - 0.2;
    assert!(within_3se(&xs, want));
}
