//! Exact sampling of the free-boundary Gibbs measure through increment
//! coordinates, periodic sampling by reweighting or heat-bath MCMC, and the
//! angle density sin^a θ e^{b cos θ}.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, UnitVector, VecN, MAX_DIM};
use crate::model::{BoundaryCondition, SpinChain};
use crate::numerics::wrap_angle;

/// Uniform point on S^{N-1}.
pub fn uniform_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> UnitVector {
    loop {
        let mut v = VecN::zeros(dim);
        for k in 0..dim {
            v[k] = rng.sample(StandardNormal);
        }
        if let Ok(u) = UnitVector::new(v) {
            return u;
        }
    }
}

/// Uniform point on the equatorial sphere {x : x·e1 = 0, ‖x‖ = 1}.
pub fn uniform_equatorial<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> UnitVector {
    loop {
        let mut v = VecN::zeros(dim);
        for k in 1..dim {
            v[k] = rng.sample(StandardNormal);
        }
        if let Ok(u) = UnitVector::new(v) {
            return u;
        }
    }
}

/// Uniform unit vector orthogonal to `p`.
pub fn uniform_tangent_direction<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> VecN {
    loop {
        let mut v = VecN::zeros(p.len());
        for k in 0..p.len() {
            v[k] = rng.sample(StandardNormal);
        }
        let c = dot(v.as_slice(), p);
        crate::geometry::axpy(-c, p, v.as_mut_slice());
        let n = v.norm();
        if n > 1e-8 {
            return v.scale(1.0 / n);
        }
    }
}

/// Rejection sampler for the density ∝ sin^a θ e^{b cos θ} on [0, π].
///
/// For b ≥ 1 the proposal is θ^a e^{−2bθ²/π²} (θ = π sqrt(u/(2b)),
/// u ~ Gamma((a+1)/2)); it dominates the target because sin θ ≤ θ and
/// 1 − cos θ ≥ 2θ²/π² on [0, π]. For b < 1 the proposal is uniform.
#[derive(Clone, Debug)]
pub struct ThetaSampler {
    a: f64,
    b: f64,
    gamma: Option<Gamma<f64>>,
    proposed: u64,
    accepted: u64,
}

impl ThetaSampler {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0) || !(b >= 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(invalid("a, b", "must be finite and non-negative"));
        }
        let gamma = if b >= 1.0 {
            Some(Gamma::new(0.5 * (a + 1.0), 1.0).map_err(|e| invalid("a", e.to_string()))?)
        } else {
            None
        };
        Ok(ThetaSampler {
            a,
            b,
            gamma,
            proposed: 0,
            accepted: 0,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let (a, b) = (self.a, self.b);
        loop {
            self.proposed += 1;
            let (theta, log_acc) = match &self.gamma {
                Some(g) => {
                    let u: f64 = g.sample(rng);
                    let th = PI * (u / (2.0 * b)).sqrt();
                    if th > PI {
                        continue;
                    }
                    let ratio = if th > 0.0 { th.sin() / th } else { 1.0 };
                    let la = a * ratio.ln() + b * (th.cos() - 1.0) + 2.0 * b * th * th / (PI * PI);
                    (th, la)
                }
                None => {
                    let th = rng.gen::<f64>() * PI;
                    let la = if a > 0.0 { a * th.sin().ln() } else { 0.0 } + b * (th.cos() - 1.0);
                    (th, la)
                }
            };
            if rng.gen::<f64>().ln() < log_acc {
                self.accepted += 1;
                return theta;
            }
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposed.max(1) as f64
    }
}

/// One draw from P_{a,b}.
pub fn sample_theta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    Ok(ThetaSampler::new(a, b)?.sample(rng))
}

/// (θ_i, v_i) with S_i = R_1⋯R_i e1; axes are empty for N = 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementCoordinates {
    pub thetas: Vec<f64>,
    pub axes: Vec<UnitVector>,
}

impl IncrementCoordinates {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if dim == 2 {
            if !self.axes.is_empty() {
                return Err(invalid("axes", "must be empty for N = 2"));
            }
        } else {
            if self.axes.len() != self.thetas.len() {
                return Err(invalid("axes", "one axis per angle"));
            }
            for v in &self.axes {
                if v.dim() != dim || v[0].abs() > 1e-10 {
                    return Err(Error::InvalidAxis);
                }
            }
        }
        if self.thetas.len() < 2 {
            return Err(invalid("thetas", "need at least two sites"));
        }
        Ok(())
    }
}

/// Column-major N×N orthogonal matrix.
#[derive(Clone, Copy)]
struct Frame {
    cols: [[f64; MAX_DIM]; MAX_DIM],
    n: usize,
}

impl Frame {
    fn identity(n: usize) -> Self {
        let mut cols = [[0.0; MAX_DIM]; MAX_DIM];
        for (k, c) in cols.iter_mut().enumerate().take(n) {
            c[k] = 1.0;
        }
        Frame { cols, n }
    }

    fn apply(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let mut y = [0.0; MAX_DIM];
        for (k, xk) in x.iter().enumerate() {
            for r in 0..self.n {
                y[r] += self.cols[k][r] * xk;
            }
        }
        y
    }

    /// Q ← Q R_{v,θ}.
    fn compose(&mut self, v: &[f64], theta: f64) {
        let n = self.n;
        let (s, c) = theta.sin_cos();
        let q1 = self.cols[0];
        let qv = self.apply(v);
        // Q R = Q + (c−1)(q1 e1ᵀ + qv vᵀ) + s(qv e1ᵀ − q1 vᵀ)
        for r in 0..n {
            self.cols[0][r] += (c - 1.0) * q1[r] + s * qv[r];
        }
        for k in 1..n {
            if v[k] == 0.0 {
                continue;
            }
            for r in 0..n {
                self.cols[k][r] += ((c - 1.0) * qv[r] - s * q1[r]) * v[k];
            }
        }
    }
}

/// S_i = R_1⋯R_i e1 (free boundary); for N = 2, S_i at angle θ_1+⋯+θ_i.
pub fn coords_to_spins(c: &IncrementCoordinates, dim: usize) -> Result<SpinChain> {
    c.validate(dim)?;
    let l = c.len();
    let mut data = Vec::with_capacity(l * dim);
    if dim == 2 {
        let mut acc = 0.0;
        for th in &c.thetas {
            acc += th;
            let (s, co) = acc.sin_cos();
            data.push(co);
            data.push(s);
        }
    } else {
        let mut q = Frame::identity(dim);
        for (th, v) in c.thetas.iter().zip(&c.axes) {
            q.compose(v.as_slice(), *th);
            let col = q.cols[0];
            let nrm = dot(&col[..dim], &col[..dim]).sqrt();
            data.extend(col[..dim].iter().map(|x| x / nrm));
        }
    }
    SpinChain::from_flat(dim, BoundaryCondition::Free, data)
}

/// Per-bond samplers for a Gibbs measure at fixed (N, β).
pub struct FreeGibbsSampler {
    dim: usize,
    len: usize,
    first: ThetaSampler,
    bond: ThetaSampler,
}

impl FreeGibbsSampler {
    pub fn new(dim: usize, len: usize, beta: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(invalid("n", format!("must be in 2..={MAX_DIM}")));
        }
        if len < 2 {
            return Err(invalid("l", "must be at least 2"));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(invalid("beta", "must be finite and non-negative"));
        }
        let a = (dim - 2) as f64;
        Ok(FreeGibbsSampler {
            dim,
            len,
            first: ThetaSampler::new(a, 0.0)?,
            bond: ThetaSampler::new(a, beta)?,
        })
    }

    pub fn sample_coords<R: Rng + ?Sized>(&mut self, rng: &mut R) -> IncrementCoordinates {
        let mut thetas = Vec::with_capacity(self.len);
        let mut axes = Vec::new();
        if self.dim == 2 {
            thetas.push(rng.gen::<f64>() * TAU);
            for _ in 1..self.len {
                let t = self.bond.sample(rng);
                let t = if rng.gen::<bool>() { t } else { -t };
                thetas.push(t.rem_euclid(TAU));
            }
        } else {
            thetas.push(self.first.sample(rng));
            for _ in 1..self.len {
                thetas.push(self.bond.sample(rng));
            }
            axes = (0..self.len)
                .map(|_| uniform_equatorial(self.dim, rng))
                .collect();
        }
        IncrementCoordinates { thetas, axes }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> SpinChain {
        let c = self.sample_coords(rng);
        coords_to_spins(&c, self.dim).expect("sampled coordinates are valid")
    }

    pub fn bond_acceptance(&self) -> f64 {
        self.bond.acceptance_rate()
    }
}

pub fn sample_free_gibbs<R: Rng + ?Sized>(
    dim: usize,
    len: usize,
    beta: f64,
    rng: &mut R,
) -> Result<SpinChain> {
    Ok(FreeGibbsSampler::new(dim, len, beta)?.sample(rng))
}

/// A configuration with an importance log-weight (0 for unweighted draws).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    pub chain: SpinChain,
    pub log_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PeriodicMethod {
    /// Free-boundary draw with log-weight β S_L·S_1.
    Reweight,
    /// Heat-bath sweeps from a free-boundary draw.
    Mcmc { burn_in_sweeps: usize },
}

impl PeriodicMethod {
    /// Reweight up to `switch_beta`, heat-bath above.
    pub fn by_beta(beta: f64, switch_beta: f64, burn_in_sweeps: usize) -> Self {
        if beta <= switch_beta {
            PeriodicMethod::Reweight
        } else {
            PeriodicMethod::Mcmc { burn_in_sweeps }
        }
    }
}

/// Default β above which periodic sampling switches to MCMC.
pub const DEFAULT_SWITCH_BETA: f64 = 6.0;

/// Draw from the conditional law ∝ e^{κ x·m} on S^{N-1} (von Mises–Fisher).
pub fn sample_vmf<R: Rng + ?Sized>(m: &[f64], kappa: f64, rng: &mut R) -> Result<UnitVector> {
    let dim = m.len();
    if kappa <= 1e-300 {
        return Ok(uniform_sphere(dim, rng));
    }
    let th = sample_theta((dim - 2) as f64, kappa, rng)?;
    let u = uniform_tangent_direction(m, rng);
    let (s, c) = th.sin_cos();
    let mut x = VecN::zeros(dim);
    for k in 0..dim {
        x[k] = c * m[k] + s * u[k];
    }
    UnitVector::new(x)
}

/// Single-site heat-bath for the periodic (or free) Gibbs measure.
pub struct HeatBath {
    beta: f64,
    field: [f64; MAX_DIM],
}

impl HeatBath {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(invalid("beta", "must be finite and non-negative"));
        }
        Ok(HeatBath {
            beta,
            field: [0.0; MAX_DIM],
        })
    }

    pub fn update_site<R: Rng + ?Sized>(&mut self, chain: &mut SpinChain, i: usize, rng: &mut R) {
        let d = chain.dim();
        let h = &mut self.field[..d];
        h.iter_mut().for_each(|x| *x = 0.0);
        if let Some(j) = chain.left(i) {
            crate::geometry::axpy(1.0, chain.spin(j), h);
        }
        if let Some(j) = chain.right(i) {
            crate::geometry::axpy(1.0, chain.spin(j), h);
        }
        let norm = dot(h, h).sqrt();
        let s = if norm < 1e-14 {
            uniform_sphere(d, rng)
        } else {
            let m: Vec<f64> = h.iter().map(|x| x / norm).collect();
            sample_vmf(&m, self.beta * norm, rng).expect("valid κ")
        };
        chain.set_spin(i, &s);
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, chain: &mut SpinChain, rng: &mut R) {
        for i in 0..chain.len() {
            self.update_site(chain, i, rng);
        }
    }
}

pub fn sample_periodic_gibbs<R: Rng + ?Sized>(
    dim: usize,
    len: usize,
    beta: f64,
    rng: &mut R,
    method: PeriodicMethod,
) -> Result<WeightedSample> {
    let chain = sample_free_gibbs(dim, len, beta, rng)?;
    match method {
        PeriodicMethod::Reweight => {
            let lw = beta * dot(chain.spin(len - 1), chain.spin(0));
            Ok(WeightedSample {
                chain: chain.with_bc(BoundaryCondition::Periodic),
                log_weight: lw,
            })
        }
        PeriodicMethod::Mcmc { burn_in_sweeps } => {
            let mut chain = chain.with_bc(BoundaryCondition::Periodic);
            let mut hb = HeatBath::new(beta)?;
            for _ in 0..burn_in_sweeps {
                hb.sweep(&mut chain, rng);
            }
            Ok(WeightedSample {
                chain,
                log_weight: 0.0,
            })
        }
    }
}

/// `count` periodic samples. Reweight draws are independent; MCMC runs one
/// chain, thinned by `thin` sweeps after burn-in.
pub fn sample_periodic_batch<R: Rng + ?Sized>(
    dim: usize,
    len: usize,
    beta: f64,
    count: usize,
    method: PeriodicMethod,
    thin: usize,
    rng: &mut R,
) -> Result<Vec<WeightedSample>> {
    match method {
        PeriodicMethod::Reweight => {
            let mut s = FreeGibbsSampler::new(dim, len, beta)?;
            let out: Vec<WeightedSample> = (0..count)
                .map(|_| {
                    let c = s.sample(rng);
                    let lw = beta * dot(c.spin(len - 1), c.spin(0));
                    WeightedSample {
                        chain: c.with_bc(BoundaryCondition::Periodic),
                        log_weight: lw,
                    }
                })
                .collect();
            let lw: Vec<f64> = out.iter().map(|s| s.log_weight).collect();
            let ratio = effective_sample_size(&lw) / count as f64;
            if ratio < 0.01 {
                return Err(Error::EffectiveSampleSizeTooLow { ratio });
            }
            Ok(out)
        }
        PeriodicMethod::Mcmc { burn_in_sweeps } => {
            let mut chain = sample_free_gibbs(dim, len, beta, rng)?.with_bc(BoundaryCondition::Periodic);
            let mut hb = HeatBath::new(beta)?;
            for _ in 0..burn_in_sweeps {
                hb.sweep(&mut chain, rng);
            }
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                for _ in 0..thin.max(1) {
                    hb.sweep(&mut chain, rng);
                }
                out.push(WeightedSample {
                    chain: chain.clone(),
                    log_weight: 0.0,
                });
            }
            Ok(out)
        }
    }
}

/// Kish effective sample size (Σw)²/Σw² from log-weights.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut s1, mut s2) = (0.0, 0.0);
    for lw in log_weights {
        let w = (lw - m).exp();
        s1 += w;
        s2 += w * w;
    }
    s1 * s1 / s2
}

/// Normalized weights w_k / Σw.
pub fn normalized_weights(samples: &[WeightedSample]) -> Vec<f64> {
    let m = samples
        .iter()
        .map(|s| s.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = samples.iter().map(|s| (s.log_weight - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Self-normalized estimate of E[f] with its delta-method standard error.
/// For unweighted MCMC output the error ignores autocorrelation.
pub fn weighted_mean_se(samples: &[WeightedSample], f: impl Fn(&SpinChain) -> f64) -> (f64, f64) {
    let w = normalized_weights(samples);
    let vals: Vec<f64> = samples.iter().map(|s| f(&s.chain)).collect();
    weighted_mean_se_values(&vals, &w)
}

pub fn weighted_mean_se_values(vals: &[f64], w: &[f64]) -> (f64, f64) {
    let m: f64 = vals.iter().zip(w).map(|(v, w)| v * w).sum();
    let var: f64 = vals.iter().zip(w).map(|(v, w)| (w * (v - m)).powi(2)).sum();
    (m, var.sqrt())
}

/// Importance sampler for the periodic XY chain (N = 2) built from a
/// mixture of products of von Mises increments. Components are given as
/// (mean increment, concentration); S_1 is uniform, the closing increment is
/// whatever closes the loop. Weights are target / mixture density, unnormalized.
pub struct XyMixtureSampler {
    len: usize,
    beta: f64,
    components: Vec<(f64, f64)>,
    samplers: Vec<ThetaSampler>,
    log_norm: Vec<f64>,
}

impl XyMixtureSampler {
    pub fn new(len: usize, beta: f64, components: Vec<(f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("components", "need at least one"));
        }
        let mut samplers = Vec::new();
        let mut log_norm = Vec::new();
        for &(_, k) in &components {
            samplers.push(ThetaSampler::new(0.0, k)?);
            log_norm.push(log_bessel_i0(k) + (TAU).ln());
        }
        Ok(XyMixtureSampler {
            len,
            beta,
            components,
            samplers,
            log_norm,
        })
    }

    /// Components aimed at the bulk, the winding ±1 sectors, the transition
    /// region (one bond near π) and tight clusters around the two references.
    pub fn for_bottleneck(len: usize, beta: f64, delta: f64) -> Result<Self> {
        let b = beta.max(0.5);
        let tight = len as f64 / (delta * delta);
        let w1 = TAU / len as f64;
        let tr = PI / (len - 1) as f64;
        Self::new(
            len,
            beta,
            vec![
                (0.0, b),
                (w1, b),
                (-w1, b),
                (tr, b),
                (-tr, b),
                (0.0, tight),
                (w1, tight),
                (-w1, tight),
            ],
        )
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> WeightedSample {
        let l = self.len;
        let c = rng.gen_range(0..self.components.len());
        let (m, _) = self.components[c];
        let mut angles = Vec::with_capacity(l);
        let mut x = rng.gen::<f64>() * TAU;
        angles.push(x);
        let mut incs = Vec::with_capacity(l - 1);
        for _ in 1..l {
            let t = self.samplers[c].sample(rng);
            let t = if rng.gen::<bool>() { t } else { -t };
            let inc = wrap_angle(m + t);
            incs.push(inc);
            x += inc;
            angles.push(x);
        }
        let chain = SpinChain::from_angles(&angles, BoundaryCondition::Periodic);
        let log_target = self.beta * (0..l).map(|k| chain.bond_dot(k)).sum::<f64>();
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_norm)
            .map(|(&(mc, kc), ln)| {
                incs.iter().map(|d| kc * (d - mc).cos()).sum::<f64>() - (l - 1) as f64 * ln
            })
            .collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mix = mx
            + (logs.iter().map(|v| (v - mx).exp()).sum::<f64>() / self.components.len() as f64).ln();
        WeightedSample {
            chain,
            log_weight: log_target - mix,
        }
    }
}

/// ln I_0(x) for x ≥ 0.
pub fn log_bessel_i0(x: f64) -> f64 {
    if x < 15.0 {
        // power series Σ (x²/4)^k / (k!)²
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= q / (k as f64 * k as f64);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum.ln()
    } else {
        // asymptotic e^x / sqrt(2πx) Σ ((2k−1)!!)² / (k! (8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let f = (2 * k - 1) as f64;
            term *= f * f / (k as f64 * 8.0 * x);
            if term < 1e-17 {
                break;
            }
            sum += term;
        }
        x - 0.5 * (TAU * x).ln() + sum.ln()
    }
}

/// Maximal finite-difference operator norms of ∂S_i/∂θ_j and ∂S_i/∂v_j.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeBoundReport {
    pub draws: usize,
    pub max_theta_norm: f64,
    pub max_axis_norm: f64,
    pub theta_violation: bool,
    pub axis_violation: bool,
    /// max over pairs with j > i (exactly zero in theory)
    pub max_upper_norm: f64,
}

/// Finite-difference derivative norms at coordinates `c` (N ≥ 3), returned
/// as L×L matrices indexed [i][j] of (θ-norm, v-operator-norm).
pub fn coordinate_derivative_norms(c: &IncrementCoordinates, dim: usize, h: f64) -> Result<Vec<Vec<(f64, f64)>>> {
    if dim < 3 {
        return Err(invalid("n", "derivative bounds need N ≥ 3"));
    }
    let l = c.len();
    let mut out = vec![vec![(0.0, 0.0); l]; l];
    for j in 0..l {
        let mut cp = c.clone();
        let mut cm = c.clone();
        cp.thetas[j] += h;
        cm.thetas[j] -= h;
        let sp = coords_to_spins(&cp, dim)?;
        let sm = coords_to_spins(&cm, dim)?;
        for (i, row) in out.iter_mut().enumerate() {
            let d: f64 = (0..dim)
                .map(|k| ((sp.spin(i)[k] - sm.spin(i)[k]) / (2.0 * h)).powi(2))
                .sum();
            row[j].0 = d.sqrt();
        }
        // tangent basis of the equatorial sphere at v_j
        let v = c.axes[j];
        let mut basis: Vec<VecN> = Vec::new();
        for k in 1..dim {
            let mut e = VecN::basis(dim, k);
            let cv = e.dot(v.vec());
            e = e.add_scaled(-cv, v.vec());
            for b in &basis {
                let cb = e.dot(b);
                e = e.add_scaled(-cb, b);
            }
            if e.norm() > 1e-6 {
                let n = e.norm();
                basis.push(e.scale(1.0 / n));
            }
        }
        basis.truncate(dim - 2);
        let mut jac = vec![vec![VecN::zeros(dim); basis.len()]; l];
        for (bi, w) in basis.iter().enumerate() {
            let rot = |sgn: f64| -> Result<SpinChain> {
                let mut cc = c.clone();
                let x = v.vec().scale((sgn * h).cos()).add_scaled((sgn * h).sin(), w);
                cc.axes[j] = UnitVector::new(x)?;
                coords_to_spins(&cc, dim)
            };
            let sp = rot(1.0)?;
            let sm = rot(-1.0)?;
            for (i, col) in jac.iter_mut().enumerate() {
                let mut d = VecN::zeros(dim);
                for k in 0..dim {
                    d[k] = (sp.spin(i)[k] - sm.spin(i)[k]) / (2.0 * h);
                }
                col[bi] = d;
            }
        }
        for (i, row) in out.iter_mut().enumerate() {
            let m = nalgebra::DMatrix::from_fn(dim, jac[i].len(), |r, q| jac[i][q][r]);
            let sv = m.singular_values();
            row[j].1 = sv.iter().cloned().fold(0.0, f64::max);
        }
    }
    Ok(out)
}

/// Random uniform coordinates: θ_i uniform on [0, π], v_i uniform.
pub fn random_coordinates<R: Rng + ?Sized>(dim: usize, len: usize, rng: &mut R) -> IncrementCoordinates {
    IncrementCoordinates {
        thetas: (0..len).map(|_| rng.gen::<f64>() * PI).collect(),
        axes: (0..len).map(|_| uniform_equatorial(dim, rng)).collect(),
    }
}

pub fn verify_coordinate_derivative_bounds<R: Rng + ?Sized>(
    dim: usize,
    len: usize,
    draws: usize,
    rng: &mut R,
) -> Result<DerivativeBoundReport> {
    let h = 1e-6;
    let mut rep = DerivativeBoundReport {
        draws,
        max_theta_norm: 0.0,
        max_axis_norm: 0.0,
        theta_violation: false,
        axis_violation: false,
        max_upper_norm: 0.0,
    };
    for _ in 0..draws {
        let c = random_coordinates(dim, len, rng);
        let norms = coordinate_derivative_norms(&c, dim, h)?;
        for (i, row) in norms.iter().enumerate() {
            for (j, &(nt, nv)) in row.iter().enumerate() {
                rep.max_theta_norm = rep.max_theta_norm.max(nt);
                rep.max_axis_norm = rep.max_axis_norm.max(nv);
                if j > i {
                    rep.max_upper_norm = rep.max_upper_norm.max(nt.max(nv));
                }
            }
        }
    }
    rep.theta_violation = rep.max_theta_norm > 1.0 + 1e-4;
    rep.axis_violation = rep.max_axis_norm > 4.0 + 1e-4;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    #[test]
    fn n2_coordinates_follow_angle_sums() {
        let c = IncrementCoordinates {
            thetas: vec![PI / 2.0, PI / 2.0],
            axes: vec![],
        };
        let s = coords_to_spins(&c, 2).unwrap();
        assert!((s.spin(0)[0]).abs() < 1e-15 && (s.spin(0)[1] - 1.0).abs() < 1e-15);
        assert!((s.spin(1)[0] + 1.0).abs() < 1e-15 && s.spin(1)[1].abs() < 1e-15);
    }

    #[test]
    fn zero_angles_give_aligned_chain() {
        let mut rng = replica_rng(1, 0);
        let mut c = random_coordinates(4, 5, &mut rng);
        c.thetas.iter_mut().for_each(|t| *t = 0.0);
        let s = coords_to_spins(&c, 4).unwrap();
        for i in 0..5 {
            assert!((s.spin(i)[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bessel_matches_reference() {
        // I_0(1) = 1.2660658777520084, I_0(20) = 4.355828255955353e7
        assert!((log_bessel_i0(1.0) - 1.2660658777520084f64.ln()).abs() < 1e-14);
        assert!((log_bessel_i0(20.0) - 4.355828255955353e7f64.ln()).abs() < 1e-12);
        assert!((log_bessel_i0(14.9) - log_bessel_i0(15.1)).abs() < 0.2);
    }

    #[test]
    fn first_spin_derivative_has_unit_norm_at_zero() {
        let mut rng = replica_rng(2, 0);
        let c = IncrementCoordinates {
            thetas: vec![0.0; 3],
            axes: (0..3).map(|_| uniform_equatorial(3, &mut rng)).collect(),
        };
        let n = coordinate_derivative_norms(&c, 3, 1e-6).unwrap();
        assert!((n[0][0].0 - 1.0).abs() < 1e-8);
        assert_eq!(n[0][1], (0.0, 0.0));
    }
}
