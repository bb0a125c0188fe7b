//! Winding number, bottleneck events, winding-flip hitting times and
//! autocorrelation estimators.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dynamics::{IntegratorConfig, Langevin};
use crate::error::{invalid, Error, Result};
use crate::geometry::dot;
use crate::model::{BoundaryCondition, SpinChain};
use crate::numerics::{linear_fit, wrap_angle};
use crate::rng::replica_rng;

/// Increments within this distance of π are outside the winding domain.
pub const DOMAIN_GUARD: f64 = 1e-9;
/// Re-evaluate the winding number once some increment is this close to π.
pub const FLIP_TRIGGER_BAND: f64 = 0.3;
pub const DEFAULT_DELTA: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindingDomainFlag {
    pub in_domain: bool,
    pub offending_site: Option<usize>,
}

fn require_xy_periodic(chain: &SpinChain) -> Result<()> {
    if chain.dim() != 2 {
        return Err(invalid("n", "winding number needs N = 2"));
    }
    if chain.bc() != BoundaryCondition::Periodic {
        return Err(invalid("bc", "winding number needs a periodic chain"));
    }
    Ok(())
}

/// Principal increment [S_{k+1} − S_k] ∈ [−π, π] of bond k (N = 2).
#[inline]
pub fn increment(chain: &SpinChain, k: usize) -> f64 {
    let a = chain.spin(k);
    let b = chain.spin((k + 1) % chain.len());
    (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1])
}

pub fn domain_check(chain: &SpinChain) -> WindingDomainFlag {
    for k in 0..chain.bonds() {
        if PI - increment(chain, k).abs() < DOMAIN_GUARD {
            return WindingDomainFlag {
                in_domain: false,
                offending_site: Some(k),
            };
        }
    }
    WindingDomainFlag {
        in_domain: true,
        offending_site: None,
    }
}

/// W = (1/2π) Σ [S_{i+1} − S_i] for a periodic N = 2 chain.
pub fn winding_number(chain: &SpinChain) -> Result<i64> {
    require_xy_periodic(chain)?;
    let mut total = 0.0;
    for k in 0..chain.len() {
        let d = increment(chain, k);
        if PI - d.abs() < DOMAIN_GUARD {
            return Err(Error::OutsideDomain { site: k });
        }
        total += d;
    }
    let w = total / TAU;
    debug_assert!((w - w.round()).abs() < 1e-6);
    Ok(w.round() as i64)
}

/// Equispaced chain S_j at angle 2πwj/L, j = 1..L.
pub fn winding_chain(len: usize, w: i64) -> SpinChain {
    let angles: Vec<f64> = (1..=len)
        .map(|j| TAU * w as f64 * j as f64 / len as f64)
        .collect();
    SpinChain::from_angles(&angles, BoundaryCondition::Periodic)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckEvents {
    pub delta: f64,
    pub in_a_delta: bool,
    pub in_b: bool,
    pub in_b0: bool,
    pub in_b1: bool,
}

/// Reference angle of site i (0-based) for B_δ^1: 2π(i+1)/L.
fn b1_reference(i: usize, len: usize) -> f64 {
    TAU * (i + 1) as f64 / len as f64
}

pub fn classify_bottleneck(chain: &SpinChain, delta: f64) -> Result<BottleneckEvents> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", "must lie in (0, 1)"));
    }
    let w = winding_number(chain)?;
    let l = chain.len();
    let near_pi = (0..l).any(|k| increment(chain, k).abs() >= PI - delta);
    let in_b0 = (0..l).all(|i| wrap_angle(chain.angle(i)).abs() <= delta);
    let in_b1 = (0..l).all(|i| wrap_angle(chain.angle(i) - b1_reference(i, l)).abs() <= delta);
    Ok(BottleneckEvents {
        delta,
        in_a_delta: w == 0 && near_pi,
        in_b: w == 0,
        in_b0,
        in_b1,
    })
}

/// Fraction of global rotations that move the chain into B_δ^0
/// (`winding_one = false`) or B_δ^1 (`true`).
pub fn rotation_fraction(chain: &SpinChain, delta: f64, winding_one: bool) -> f64 {
    let l = chain.len();
    let mut d: Vec<f64> = (0..l)
        .map(|i| {
            let r = if winding_one { b1_reference(i, l) } else { 0.0 };
            wrap_angle(chain.angle(i) - r)
        })
        .collect();
    d.sort_by(|a, b| a.total_cmp(b));
    let mut gap = d[0] + TAU - d[l - 1];
    for k in 1..l {
        gap = gap.max(d[k] - d[k - 1]);
    }
    let span = TAU - gap;
    (2.0 * delta - span).max(0.0) / TAU
}

/// First time the winding number differs from its initial value, or
/// `None` when `max_time` is reached.
pub fn hitting_time_winding_flip<R: Rng + ?Sized>(
    start: &SpinChain,
    beta: f64,
    cfg: &IntegratorConfig,
    rng: &mut R,
    max_time: f64,
) -> Result<Option<f64>> {
    let w0 = winding_number(start)?;
    if !(max_time > 0.0) {
        return Ok(None);
    }
    let trigger = -(FLIP_TRIGGER_BAND.cos());
    let mut stepper = Langevin::new(*cfg, beta)?;
    let mut c = start.clone();
    let steps = (max_time / cfg.dt).ceil() as u64;
    for k in 1..=steps {
        stepper.step(&mut c, rng)?;
        let hot = (0..c.len()).any(|b| c.bond_dot(b) < trigger);
        if hot {
            match winding_number(&c) {
                Ok(w) if w != w0 => return Ok(Some(k as f64 * cfg.dt)),
                Ok(_) | Err(Error::OutsideDomain { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcfMethod {
    IntegratedAct,
    ExpTailFit,
}

/// Autocorrelation time in units of the sampling interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrEstimate {
    pub tau: f64,
    pub ci: (f64, f64),
    pub method: AcfMethod,
}

pub const MIN_SERIES_LEN: usize = 1000;

/// Σ_t (x_t − m)(x_{t+k} − m) for k = 0..=max_lag, via zero-padded FFT.
pub fn autocovariance_sums(x: &[f64], mean: f64, max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fwd.process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf.iter()
        .take(max_lag.min(n - 1) + 1)
        .map(|z| z.re / size as f64)
        .collect()
}

/// Normalized autocorrelation ρ(k) (biased estimator, divides by n).
pub fn autocorrelation(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let s = autocovariance_sums(x, mean, n - 1);
    if !(s[0] > 1e-300 * n as f64) {
        return Err(Error::DegenerateSeries);
    }
    Ok(s.iter().map(|v| v / s[0]).collect())
}

/// τ_int = 1 + 2 Σ_{k≤W} ρ(k) with the self-consistent window W ≥ 5 τ_int.
pub fn integrated_act(rho: &[f64]) -> (f64, usize) {
    let mut tau = 1.0;
    for (w, r) in rho.iter().enumerate().skip(1) {
        tau += 2.0 * r;
        if w as f64 >= 5.0 * tau {
            return (tau, w);
        }
    }
    (tau, rho.len() - 1)
}

/// Exponential tail fit of ln ρ(k) over the window where ρ is between the
/// noise floor and 0.7. Returns τ = −1/slope.
pub fn exp_tail_fit(rho: &[f64], n_eff: f64) -> Result<f64> {
    let floor = (3.0 / n_eff.sqrt()).max(0.05);
    let k0 = rho.iter().position(|&r| r <= 0.7).unwrap_or(rho.len());
    let mut k1 = k0;
    while k1 < rho.len() && rho[k1] > floor {
        k1 += 1;
    }
    let (k0, k1) = if k1 - k0 < 3 {
        // steep decay: use the first lags down to the floor
        let k1 = rho.iter().position(|&r| r <= floor).unwrap_or(rho.len());
        (1, k1)
    } else {
        (k0, k1)
    };
    if k1 < k0 + 2 {
        return Err(Error::NotConverged("too few lags above the noise floor".into()));
    }
    let xs: Vec<f64> = (k0..k1).map(|k| k as f64).collect();
    let ys: Vec<f64> = (k0..k1).map(|k| rho[k].ln()).collect();
    let f = linear_fit(&xs, &ys, &vec![1.0; xs.len()]);
    if !(f.slope < 0.0) {
        return Err(Error::NotConverged("non-decaying autocorrelation".into()));
    }
    Ok(-1.0 / f.slope)
}

fn estimate(x: &[f64], method: AcfMethod) -> Result<f64> {
    let rho = autocorrelation(x)?;
    let (tau_int, _) = integrated_act(&rho);
    match method {
        AcfMethod::IntegratedAct => Ok(tau_int),
        AcfMethod::ExpTailFit => exp_tail_fit(&rho, x.len() as f64 / tau_int.max(1.0)),
    }
}

/// Autocorrelation time of a stationary series with a moving-block
/// bootstrap 95% interval.
pub fn autocorrelation_time(series: &[f64], method: AcfMethod) -> Result<AutocorrEstimate> {
    if series.len() < MIN_SERIES_LEN {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            min: MIN_SERIES_LEN,
        });
    }
    let tau = estimate(series, method)?;
    let n = series.len();
    let block = ((10.0 * tau).ceil() as usize).clamp(10, n / 10);
    let mut rng = replica_rng(0x5eed_ac, n as u64);
    let mut reps = Vec::new();
    let mut buf = Vec::with_capacity(n);
    for _ in 0..100 {
        buf.clear();
        while buf.len() < n {
            let s = rng.gen_range(0..=n - block);
            buf.extend_from_slice(&series[s..s + block]);
        }
        buf.truncate(n);
        if let Ok(t) = estimate(&buf, method) {
            reps.push(t);
        }
    }
    if reps.len() < 20 {
        return Err(Error::NotConverged("bootstrap resamples failed".into()));
    }
    reps.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| reps[((reps.len() - 1) as f64 * p).round() as usize];
    Ok(AutocorrEstimate {
        tau,
        ci: (q(0.025).min(tau), q(0.975).max(tau)),
        method,
    })
}

/// Per-replica lagged covariance sums of a (possibly vector-valued) series,
/// about a shared mean: sums[k] = Σ_t Σ_c (x_tc − m_c)(x_{t+k,c} − m_c).
pub fn vector_covariance_sums(components: &[Vec<f64>], means: &[f64], max_lag: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_lag + 1];
    for (c, m) in components.iter().zip(means) {
        let s = autocovariance_sums(c, *m, max_lag);
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    out
}

/// Dot product helper re-exported for observers.
pub fn neighbor_dot(chain: &SpinChain, i: usize, j: usize) -> f64 {
    dot(chain.spin(i), chain.spin(j))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn winding_of_reference_chains() {
        let c = SpinChain::aligned(2, 8, BoundaryCondition::Periodic);
        assert_eq!(winding_number(&c).unwrap(), 0);
        assert_eq!(winding_number(&winding_chain(8, 1)).unwrap(), 1);
        assert_eq!(winding_number(&winding_chain(8, -1)).unwrap(), -1);
    }

    #[test]
    fn winding_rejects_free_and_antipodal() {
        let c = SpinChain::aligned(2, 4, BoundaryCondition::Free);
        assert!(winding_number(&c).is_err());
        let c = SpinChain::from_angles(&[0.0, PI, 0.0, 0.5], BoundaryCondition::Periodic);
        assert_eq!(winding_number(&c), Err(Error::OutsideDomain { site: 0 }));
        assert_eq!(
            domain_check(&c),
            WindingDomainFlag {
                in_domain: false,
                offending_site: Some(0)
            }
        );
    }

    #[test]
    fn rotation_fraction_of_reference_configurations() {
        let c = SpinChain::aligned(2, 8, BoundaryCondition::Periodic);
        assert!((rotation_fraction(&c, 0.3, false) - 0.6 / TAU).abs() < 1e-12);
        assert_eq!(rotation_fraction(&c, 0.3, true), 0.0);
        let w = winding_chain(8, 1);
        assert!((rotation_fraction(&w, 0.3, true) - 0.6 / TAU).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let x = vec![1.0; 2000];
        assert_eq!(
            autocorrelation_time(&x, AcfMethod::IntegratedAct),
            Err(Error::DegenerateSeries)
        );
        assert!(matches!(
            autocorrelation_time(&x[..10], AcfMethod::IntegratedAct),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn fft_autocovariance_matches_direct() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 7 % 11) as f64).sin()).collect();
        let m = 0.3;
        let s = autocovariance_sums(&x, m, 5);
        for k in 0..=5 {
            let d: f64 = (0..50 - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum();
            assert!((s[k] - d).abs() < 1e-10);
        }
    }
}
