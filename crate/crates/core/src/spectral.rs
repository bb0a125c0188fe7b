//! Spectral gap and relaxation time: Poincaré constants of the one-site
//! measures, a discretized-generator oracle for tiny XY chains,
//! autocorrelation fits, Rayleigh quotients and the winding bottleneck ratio.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, VecN};
use crate::lanczos::{smallest_eigenvalues, CsrMatrix, LanczosConfig};
use crate::model::{BoundaryCondition, SpinChain};
use crate::numerics::{integrate, linear_fit, poisson_upper_zero};
use crate::observables::{classify_bottleneck, increment, rotation_fraction, vector_covariance_sums, winding_number};
use crate::rng::replica_rng;
use crate::sampling::{normalized_weights, uniform_sphere, ThetaSampler, WeightedSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapMethod {
    Autocorr,
    Rayleigh,
    OracleMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    pub n: usize,
    pub l: usize,
    pub beta: f64,
    pub bc: BoundaryCondition,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub value: f64,
    pub method: GapMethod,
    pub ci: (f64, f64),
    pub params: GapParams,
}

impl GapEstimate {
    fn new(value: f64, method: GapMethod, ci: (f64, f64), params: GapParams) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NotConverged(format!("non-positive gap estimate {value}")));
        }
        Ok(Self {
            value,
            method,
            ci: (ci.0.min(value), ci.1.max(value)),
            params,
        })
    }

    pub fn relaxation_time(&self) -> f64 {
        1.0 / self.value
    }
}

// ---------------------------------------------------------------------------
// Poincaré constants

/// c1(a, b) for P_{a,b} ∝ sin^a θ e^{b cos θ} on [0, π].
pub fn poincare_c1(a: f64, b: f64) -> f64 {
    assert!(a >= 0.0 && b >= 0.0, "c1 needs a, b ≥ 0");
    if b == 0.0 {
        return PI * PI * 2.0 * (a + 1.0) * 4f64.powf(a) / PI.powf(a);
    }
    let upper = b.sqrt() * PI / 2.0;
    let den = integrate(|x| x.powf(a) * (-0.5 * x * x).exp(), 0.0, upper, 1e-12, 0.0)
        .expect("smooth integrand");
    PI.powi(3) * 2f64.powf(a) * b.powf(0.5 * (a + 1.0)) / den
}

/// c2(N) = 1/(N − 1) for the uniform measure on S^{N−1}.
pub fn poincare_c2(n: usize) -> f64 {
    assert!(n >= 2, "c2 needs N ≥ 2");
    1.0 / (n - 1) as f64
}

/// c3(b) for P_b ∝ e^{b cos θ} on the circle.
pub fn poincare_c3(b: f64) -> f64 {
    assert!(b >= 0.0, "c3 needs b ≥ 0");
    if b == 0.0 {
        return PI * PI / 2.0;
    }
    let r = b.sqrt() * PI;
    let den = integrate(|x| (-0.5 * x * x).exp(), -r, r, 1e-12, 0.0).expect("smooth integrand");
    PI.powi(3) * b.sqrt() / den
}

/// The one-increment constant c(β, N) entering the free-chain bound.
pub fn increment_constant(beta: f64, n: usize) -> f64 {
    if n == 2 {
        poincare_c3(beta).max(poincare_c3(0.0))
    } else {
        let a = (n - 2) as f64;
        poincare_c1(a, beta)
            .max(poincare_c1(a, 0.0))
            .max(poincare_c2(n - 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PoincareMeasure {
    Pab { a: f64, b: f64 },
    /// Uniform measure on S^{N−1}; zonal test functions g(θ), θ the angle to e1.
    EquatorUniform { n: usize },
    Pb { b: f64 },
}

/// c0 + Σ_k cos_k cos(kθ) + sin_k sin(kθ), k = 1, 2, …
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    pub c0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl TrigPoly {
    pub fn random<R: Rng + ?Sized>(degree: usize, rng: &mut R) -> Self {
        let mut g = || rng.gen::<f64>() * 2.0 - 1.0;
        TrigPoly {
            c0: g(),
            cos: (0..degree).map(|_| g()).collect(),
            sin: (0..degree).map(|_| g()).collect(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let mut s = self.c0;
        for (k, (c, d)) in self.cos.iter().zip(&self.sin).enumerate() {
            let kx = (k + 1) as f64 * x;
            s += c * kx.cos() + d * kx.sin();
        }
        s
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for (k, (c, d)) in self.cos.iter().zip(&self.sin).enumerate() {
            let kf = (k + 1) as f64;
            s += kf * (d * (kf * x).cos() - c * (kf * x).sin());
        }
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoincareReport {
    pub measure: PoincareMeasure,
    pub constant: f64,
    /// Var(f)/E|f'|² per test function; `None` when f is constant.
    pub ratios: Vec<Option<f64>>,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Var(f) and E|f'|² under a one-dimensional measure, by adaptive quadrature.
fn var_and_energy(measure: PoincareMeasure, f: &TrigPoly) -> Result<(f64, f64)> {
    let (lo, hi, a, b) = match measure {
        PoincareMeasure::Pab { a, b } => (0.0, PI, a, b),
        PoincareMeasure::EquatorUniform { n } if n == 2 => (-PI, PI, 0.0, 0.0),
        PoincareMeasure::EquatorUniform { n } => (0.0, PI, (n - 2) as f64, 0.0),
        PoincareMeasure::Pb { b } => (-PI, PI, 0.0, b),
    };
    let w = move |x: f64| {
        let s = if a > 0.0 { x.sin().abs().powf(a) } else { 1.0 };
        s * (b * (x.cos() - 1.0)).exp()
    };
    let q = |g: &dyn Fn(f64) -> f64| integrate(|x| w(x) * g(x), lo, hi, 1e-13, 1e-300);
    let z = q(&|_| 1.0)?;
    let m1 = q(&|x| f.value(x))? / z;
    let var = q(&|x| (f.value(x) - m1).powi(2))? / z;
    let en = q(&|x| f.derivative(x).powi(2))? / z;
    Ok((var, en))
}

/// Checks Var(f) ≤ constant · E|f'|² for each test function by quadrature.
pub fn verify_poincare(measure: PoincareMeasure, constant: f64, test_functions: &[TrigPoly]) -> Result<PoincareReport> {
    let mut ratios = Vec::with_capacity(test_functions.len());
    let mut max_ratio: f64 = 0.0;
    for f in test_functions {
        let (var, en) = var_and_energy(measure, f)?;
        if en <= 1e-14 * (1.0 + f.c0 * f.c0) {
            ratios.push(None);
            continue;
        }
        let r = var / en;
        max_ratio = max_ratio.max(r);
        ratios.push(Some(r));
    }
    Ok(PoincareReport {
        measure,
        constant,
        ratios,
        max_ratio,
        pass: max_ratio <= constant * (1.0 + 1e-9),
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TensorReport {
    pub n: usize,
    pub beta: f64,
    pub functions: usize,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Monte-Carlo check of the one-site tensorized bound
/// Var(f) ≤ c2(N−1)E‖∂_v f‖² + c1(N−2, β)E|∂_θ f|² on (θ, v) ~ P_{N−2,β} ⊗ uniform(S^{N−2}),
/// for random f(θ, v) = g0(θ) + g1(θ)(u·v) + g2(θ)(w·v)².
pub fn verify_tensorized_bound<R: Rng + ?Sized>(
    n: usize,
    beta: f64,
    functions: usize,
    samples: usize,
    rng: &mut R,
) -> Result<TensorReport> {
    if n < 3 {
        return Err(invalid("n", "tensorized bound needs N ≥ 3"));
    }
    let cv = poincare_c2(n - 1);
    let ct = poincare_c1((n - 2) as f64, beta);
    let mut ts = ThetaSampler::new((n - 2) as f64, beta)?;
    let draws: Vec<(f64, VecN)> = (0..samples)
        .map(|_| (ts.sample(rng), uniform_sphere(n - 1, rng).vec().clone()))
        .collect();
    let mut max_ratio: f64 = 0.0;
    for _ in 0..functions {
        let g: Vec<TrigPoly> = (0..3).map(|_| TrigPoly::random(4, rng)).collect();
        let u = uniform_sphere(n - 1, rng).vec().clone();
        let w = uniform_sphere(n - 1, rng).vec().clone();
        let (mut s1, mut s2, mut ev, mut et) = (0.0, 0.0, 0.0, 0.0);
        for (th, v) in &draws {
            let (uv, wv) = (u.dot(v), w.dot(v));
            let f = g[0].value(*th) + g[1].value(*th) * uv + g[2].value(*th) * wv * wv;
            let dth = g[0].derivative(*th) + g[1].derivative(*th) * uv + g[2].derivative(*th) * wv * wv;
            // ambient gradient in v, then tangent projection
            let amb = u.clone().scale(g[1].value(*th)).add_scaled(2.0 * g[2].value(*th) * wv, &w);
            let dv = amb.clone().add_scaled(-amb.dot(v), v);
            s1 += f;
            s2 += f * f;
            ev += dv.dot(&dv);
            et += dth * dth;
        }
        let k = samples as f64;
        let var = s2 / k - (s1 / k).powi(2);
        let rhs = cv * ev / k + ct * et / k;
        if rhs > 0.0 {
            max_ratio = max_ratio.max(var / rhs);
        }
    }
    Ok(TensorReport {
        n,
        beta,
        functions,
        max_ratio,
        pass: max_ratio <= 1.0,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SphereMcReport {
    pub n: usize,
    pub functions: usize,
    /// Largest (Var − c2·E‖∇f‖²)/σ over the test functions.
    pub max_z: f64,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Monte-Carlo check of Var(f) ≤ c2(N)E‖∇f‖² on uniform S^{N−1} for random
/// f(x) = a·x + xᵀBx + c(u·x)³, passing when every excess is within 3σ.
pub fn verify_sphere_poincare_mc<R: Rng + ?Sized>(
    n: usize,
    functions: usize,
    samples: usize,
    rng: &mut R,
) -> Result<SphereMcReport> {
    if n < 2 {
        return Err(invalid("n", "sphere dimension must be ≥ 2"));
    }
    if samples < 2 {
        return Err(invalid("samples", "need at least two samples"));
    }
    let c = poincare_c2(n);
    let draws: Vec<VecN> = (0..samples).map(|_| uniform_sphere(n, rng).vec().clone()).collect();
    let mut max_z = f64::NEG_INFINITY;
    let mut max_ratio: f64 = 0.0;
    let g = |rng: &mut R| rng.gen::<f64>() * 2.0 - 1.0;
    for _ in 0..functions {
        let a = VecN::from_slice(&(0..n).map(|_| g(rng)).collect::<Vec<_>>());
        let mut b = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = g(rng);
                b[i * n + j] = v;
                b[j * n + i] = v;
            }
        }
        let cubic = g(rng);
        let u = uniform_sphere(n, rng).vec().clone();
        let (vals, grads): (Vec<f64>, Vec<f64>) = draws
            .iter()
            .map(|x| {
                let bx: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[i * n + j] * x[j]).sum()).collect();
                let ux = u.dot(x);
                let f = a.dot(x) + x.dot(&VecN::from_slice(&bx)) + cubic * ux.powi(3);
                let mut amb = a.clone().add_scaled(3.0 * cubic * ux * ux, &u);
                for (k, v) in bx.iter().enumerate() {
                    amb[k] += 2.0 * v;
                }
                let tan = amb.clone().add_scaled(-amb.dot(x), x);
                (f, tan.dot(&tan))
            })
            .unzip();
        let k = samples as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let d: Vec<f64> = vals.iter().zip(&grads).map(|(f, e)| (f - mean).powi(2) - c * e).collect();
        let dm = d.iter().sum::<f64>() / k;
        let dv = d.iter().map(|x| (x - dm).powi(2)).sum::<f64>() / (k - 1.0);
        let z = dm / (dv / k).sqrt().max(1e-300);
        max_z = max_z.max(z);
        let var = vals.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / k;
        let en = grads.iter().sum::<f64>() / k;
        if en > 0.0 {
            max_ratio = max_ratio.max(var / en);
        }
    }
    Ok(SphereMcReport {
        n,
        functions,
        max_z,
        max_ratio,
        pass: max_z <= 3.0,
    })
}

// ---------------------------------------------------------------------------
// Discretized generator oracle

/// Largest grid the oracle accepts.
pub const ORACLE_STATE_LIMIT: usize = 1_000_000;

/// XY chain with every angle on the grid 2πk/M; Metropolis nearest-neighbor
/// moves with rate (D/h²)·min(1, e^{−βΔH}), h = 2π/M.
pub struct XyGrid {
    len: usize,
    m: usize,
    bc: BoundaryCondition,
    beta: f64,
    diffusion: f64,
    strides: Vec<usize>,
    energies: Vec<f64>,
}

impl XyGrid {
    pub fn new(len: usize, m: usize, bc: BoundaryCondition, beta: f64, diffusion: f64) -> Result<Self> {
        let order: Vec<usize> = (0..len).collect();
        Self::with_site_order(len, m, bc, beta, diffusion, &order)
    }

    /// Site `order[p]` is stored at digit position p of the state index.
    pub fn with_site_order(
        len: usize,
        m: usize,
        bc: BoundaryCondition,
        beta: f64,
        diffusion: f64,
        order: &[usize],
    ) -> Result<Self> {
        if len < 2 {
            return Err(invalid("len", "need at least two sites"));
        }
        if m < 3 {
            return Err(invalid("m", "grid needs at least three points"));
        }
        if !(beta >= 0.0 && diffusion > 0.0) {
            return Err(invalid("beta", "need β ≥ 0 and positive diffusion"));
        }
        let states = (m as f64).powi(len as i32);
        if states > ORACLE_STATE_LIMIT as f64 {
            return Err(Error::StateSpaceTooLarge {
                states: states as usize,
                limit: ORACLE_STATE_LIMIT,
            });
        }
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..len).collect::<Vec<_>>() {
            return Err(invalid("order", "must be a permutation of the sites"));
        }
        let mut strides = vec![0; len];
        let mut s = 1;
        for &site in order {
            strides[site] = s;
            s *= m;
        }
        let n = s;
        let cos_tab: Vec<f64> = (0..m).map(|d| (TAU * d as f64 / m as f64).cos()).collect();
        let bonds: Vec<(usize, usize)> = match bc {
            BoundaryCondition::Free => (0..len - 1).map(|i| (i, i + 1)).collect(),
            BoundaryCondition::Periodic if len == 2 => vec![(0, 1), (1, 0)],
            BoundaryCondition::Periodic => (0..len).map(|i| (i, (i + 1) % len)).collect(),
        };
        let mut digits = vec![0usize; len];
        let energies = (0..n)
            .map(|idx| {
                for (i, d) in digits.iter_mut().enumerate() {
                    *d = (idx / strides[i]) % m;
                }
                -bonds
                    .iter()
                    .map(|&(i, j)| cos_tab[(digits[i] + m - digits[j]) % m])
                    .sum::<f64>()
            })
            .collect();
        Ok(Self {
            len,
            m,
            bc,
            beta,
            diffusion,
            strides,
            energies,
        })
    }

    pub fn states(&self) -> usize {
        self.energies.len()
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.m as f64
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Angles of the state `idx`, site by site.
    pub fn angles(&self, idx: usize) -> Vec<f64> {
        (0..self.len)
            .map(|i| ((idx / self.strides[i]) % self.m) as f64 * self.spacing())
            .collect()
    }

    fn neighbor(&self, idx: usize, site: usize, up: bool) -> usize {
        let d = (idx / self.strides[site]) % self.m;
        let s = self.strides[site];
        match (up, d) {
            (true, d) if d + 1 == self.m => idx - d * s,
            (true, _) => idx + s,
            (false, 0) => idx + (self.m - 1) * s,
            (false, _) => idx - s,
        }
    }

    /// Discrete Gibbs weights, normalized.
    pub fn stationary(&self) -> Vec<f64> {
        let e0 = self.energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = self.energies.iter().map(|e| (-self.beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.stationary()
            .iter()
            .enumerate()
            .map(|(i, p)| p * f(&self.angles(i)))
            .sum()
    }

    /// −(generator) conjugated by the square root of the stationary weights:
    /// symmetric positive semidefinite with null vector √π.
    pub fn symmetric_generator(&self) -> CsrMatrix {
        let n = self.states();
        let rate = self.diffusion / (self.spacing() * self.spacing());
        let per_row = 2 * self.len + 1;
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(n * per_row);
        let mut values = Vec::with_capacity(n * per_row);
        indptr.push(0);
        for x in 0..n {
            let hx = self.energies[x];
            let mut diag = 0.0;
            for site in 0..self.len {
                for up in [true, false] {
                    let y = self.neighbor(x, site, up);
                    let dh = self.energies[y] - hx;
                    diag += rate * (-self.beta * dh).exp().min(1.0);
                    indices.push(y as u32);
                    values.push(-rate * (-0.5 * self.beta * dh.abs()).exp());
                }
            }
            indices.push(x as u32);
            values.push(diag);
            indptr.push(indices.len());
        }
        CsrMatrix::from_rows(n, indptr, indices, values)
    }

    /// Smallest nonzero eigenvalue of −(generator).
    pub fn gap(&self, cfg: &LanczosConfig) -> Result<f64> {
        let a = self.symmetric_generator();
        let null: Vec<f64> = self.stationary().into_iter().map(f64::sqrt).collect();
        let r = smallest_eigenvalues(&a, &[null], cfg)?;
        Ok(r.values[0])
    }
}

/// Gap of the L-site XY chain from the grid generator at M and M/2 points
/// per angle, extrapolated linearly in the grid spacing (2g_M − g_{M/2}).
/// The interval spans the extrapolation correction.
pub fn gap_oracle_xy(len: usize, beta: f64, m: usize, bc: BoundaryCondition) -> Result<GapEstimate> {
    if len > 3 {
        return Err(invalid("len", "oracle is limited to L ≤ 3"));
    }
    if !(beta > 0.0) {
        return Err(invalid("beta", "must be positive"));
    }
    if m % 2 != 0 || m < 8 {
        return Err(invalid("m", "must be even and at least 8"));
    }
    let cfg = LanczosConfig::default();
    let fine = XyGrid::new(len, m, bc, beta, 1.0 / beta)?.gap(&cfg)?;
    let coarse = XyGrid::new(len, m / 2, bc, beta, 1.0 / beta)?.gap(&cfg)?;
    let value = 2.0 * fine - coarse;
    let d = (fine - coarse).abs();
    GapEstimate::new(
        value,
        GapMethod::OracleMatrix,
        (value - d, value + d),
        GapParams { n: 2, l: len, beta, bc },
    )
}

// ---------------------------------------------------------------------------
// Autocorrelation route

/// Independent stationary trajectories of a (vector) observable sampled
/// every `dt`: `replicas[r][c][t]`.
#[derive(Clone, Debug)]
pub struct TrajectorySet {
    pub dt: f64,
    pub params: GapParams,
    pub replicas: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AutocorrFit {
    pub tau: f64,
    pub tau_se: f64,
    pub tau_ci: (f64, f64),
    /// Fit window in time units.
    pub window: (f64, f64),
    pub tau_early: f64,
    pub tau_late: f64,
    pub shifts: usize,
    pub acf: Vec<f64>,
}

pub const MIN_REPLICAS: usize = 20;

struct AcfTable {
    /// per replica, per lag, Σ_t Σ_c (x − m)(x' − m)
    sums: Vec<Vec<f64>>,
    n: usize,
}

impl AcfTable {
    fn rho(&self, pick: &[usize]) -> Vec<f64> {
        let lags = self.sums[0].len();
        let mut c = vec![0.0; lags];
        for &r in pick {
            for (k, v) in self.sums[r].iter().enumerate() {
                c[k] += v;
            }
        }
        let c0 = c[0] / self.n as f64;
        (0..lags).map(|k| c[k] / (self.n - k) as f64 / c0).collect()
    }
}

fn fit_lags(rho: &[f64], lags: &[usize], dt: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .filter(|&&k| rho[k] > 0.0)
        .map(|&k| (k as f64 * dt, rho[k].ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let f = linear_fit(&xs, &ys, &vec![1.0; xs.len()]);
    (f.slope < 0.0).then(|| -1.0 / f.slope)
}

fn spread(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Slowest-exponential fit of the replica-pooled autocorrelation of the
/// observable. The fit window starts where ρ ≤ 0.6 and ends at the noise
/// floor; if the early and late halves of the window disagree by more than
/// 2σ the window start moves to the midpoint (at most three times).
pub fn fit_slowest_exponential(set: &TrajectorySet) -> Result<AutocorrFit> {
    let r = set.replicas.len();
    if r < MIN_REPLICAS {
        return Err(invalid("replicas", "need at least 20 independent replicas"));
    }
    let comps = set.replicas[0].len();
    let n = set.replicas[0][0].len();
    if set
        .replicas
        .iter()
        .any(|rep| rep.len() != comps || rep.iter().any(|c| c.len() != n))
    {
        return Err(invalid("replicas", "all trajectories must share shape"));
    }
    if n < 100 {
        return Err(Error::SeriesTooShort { len: n, min: 100 });
    }
    let means: Vec<f64> = (0..comps)
        .map(|c| set.replicas.iter().map(|rep| rep[c].iter().sum::<f64>()).sum::<f64>() / (r * n) as f64)
        .collect();
    let max_lag = n / 2;
    let table = AcfTable {
        sums: set
            .replicas
            .iter()
            .map(|rep| vector_covariance_sums(rep, &means, max_lag))
            .collect(),
        n,
    };
    if table.sums.iter().map(|s| s[0]).sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateSeries);
    }
    let all: Vec<usize> = (0..r).collect();
    let rho = table.rho(&all);

    // per-lag standard error from the replica spread
    let c0 = table.sums.iter().map(|s| s[0]).sum::<f64>() / (r * n) as f64;
    let se: Vec<f64> = (0..=max_lag)
        .map(|k| {
            let per: Vec<f64> = table.sums.iter().map(|s| s[k] / (n - k) as f64 / c0).collect();
            spread(&per) / (r as f64).sqrt()
        })
        .collect();

    let mut k0 = rho.iter().position(|&x| x <= 0.6).unwrap_or(max_lag);
    let k1 = (k0..=max_lag)
        .find(|&k| rho[k] < (3.0 * se[k]).max(0.02))
        .unwrap_or(max_lag);

    let mut rng = replica_rng(0xb007, r as u64);
    let boots: Vec<Vec<usize>> = (0..200)
        .map(|_| (0..r).map(|_| rng.gen_range(0..r)).collect())
        .collect();
    let boot_rho: Vec<Vec<f64>> = boots.iter().map(|p| table.rho(p)).collect();

    let thin = |a: usize, b: usize| -> Vec<usize> {
        let step = ((b - a) / 200).max(1);
        (a..b).step_by(step).collect()
    };
    let boot_taus = |lags: &[usize]| -> Vec<f64> {
        boot_rho.iter().filter_map(|br| fit_lags(br, lags, set.dt)).collect()
    };

    let mut shifts = 0;
    loop {
        if k1 < k0 + 6 {
            return Err(Error::NotConverged(
                "autocorrelation decays below the noise floor within a few samples".into(),
            ));
        }
        let mid = (k0 + k1) / 2;
        let (early, late) = (thin(k0, mid), thin(mid, k1));
        let te = fit_lags(&rho, &early, set.dt);
        let tl = fit_lags(&rho, &late, set.dt);
        let (be, bl) = (boot_taus(&early), boot_taus(&late));
        let agree = match (te, tl) {
            (Some(te), Some(tl)) if be.len() > 20 && bl.len() > 20 => {
                let s = (spread(&be).powi(2) + spread(&bl).powi(2)).sqrt();
                (te - tl).abs() <= 2.0 * s
            }
            _ => false,
        };
        if agree {
            let lags = thin(k0, k1);
            let tau = fit_lags(&rho, &lags, set.dt)
                .ok_or_else(|| Error::NotConverged("non-decaying autocorrelation".into()))?;
            let mut bt = boot_taus(&lags);
            bt.sort_by(|a, b| a.total_cmp(b));
            let q = |p: f64| bt[((bt.len() - 1) as f64 * p).round() as usize];
            if (n as f64) * set.dt < 50.0 * tau {
                return Err(Error::NotConverged(format!(
                    "trajectory length {} is shorter than 50 τ = {}",
                    n as f64 * set.dt,
                    50.0 * tau
                )));
            }
            return Ok(AutocorrFit {
                tau,
                tau_se: spread(&bt),
                tau_ci: (q(0.025).min(tau), q(0.975).max(tau)),
                window: (k0 as f64 * set.dt, k1 as f64 * set.dt),
                tau_early: te.unwrap(),
                tau_late: tl.unwrap(),
                shifts,
                acf: rho[..k1.min(rho.len())].to_vec(),
            });
        }
        if shifts == 3 {
            return Err(Error::NotConverged(format!(
                "fit window halves disagree (τ_early = {te:?}, τ_late = {tl:?})"
            )));
        }
        shifts += 1;
        k0 = mid;
    }
}

/// Gap = 1/τ of the slowest exponential of the autocorrelation.
pub fn gap_estimate_autocorr(set: &TrajectorySet) -> Result<GapEstimate> {
    let fit = fit_slowest_exponential(set)?;
    GapEstimate::new(
        1.0 / fit.tau,
        GapMethod::Autocorr,
        (1.0 / fit.tau_ci.1, 1.0 / fit.tau_ci.0),
        set.params,
    )
}

// ---------------------------------------------------------------------------
// Rayleigh quotients

/// A smooth function of the chain with its sphere gradients.
pub trait SmoothObservable: Sync {
    fn value(&self, chain: &SpinChain) -> f64;
    /// Σ_i ‖D_i f‖².
    fn grad_norm_sq(&self, chain: &SpinChain) -> f64;
}

/// f = S_site · axis.
#[derive(Clone, Debug)]
pub struct LinearObservable {
    pub site: usize,
    pub axis: VecN,
}

impl SmoothObservable for LinearObservable {
    fn value(&self, chain: &SpinChain) -> f64 {
        dot(chain.spin(self.site), self.axis.as_slice())
    }

    fn grad_norm_sq(&self, chain: &SpinChain) -> f64 {
        let s = self.value(chain);
        self.axis.dot(&self.axis) - s * s
    }
}

/// Trigonometric polynomial in the XY angles:
/// f = Σ_t a_t cos(k_t·φ) + b_t sin(k_t·φ).
#[derive(Clone, Debug)]
pub struct AngleTrigObservable {
    pub terms: Vec<(Vec<i32>, f64, f64)>,
}

impl AngleTrigObservable {
    pub fn random<R: Rng + ?Sized>(len: usize, max_freq: i32, n_terms: usize, rng: &mut R) -> Self {
        let terms = (0..n_terms)
            .map(|_| {
                let mut k: Vec<i32> = (0..len).map(|_| rng.gen_range(-max_freq..=max_freq)).collect();
                if k.iter().all(|&x| x == 0) {
                    k[0] = 1;
                }
                (k, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
            })
            .collect();
        Self { terms }
    }

    fn phase(k: &[i32], chain: &SpinChain) -> f64 {
        k.iter().enumerate().map(|(i, &ki)| ki as f64 * chain.angle(i)).sum()
    }
}

impl SmoothObservable for AngleTrigObservable {
    fn value(&self, chain: &SpinChain) -> f64 {
        self.terms
            .iter()
            .map(|(k, a, b)| {
                let p = Self::phase(k, chain);
                a * p.cos() + b * p.sin()
            })
            .sum()
    }

    fn grad_norm_sq(&self, chain: &SpinChain) -> f64 {
        let mut g = vec![0.0; chain.len()];
        for (k, a, b) in &self.terms {
            let p = Self::phase(k, chain);
            let d = b * p.cos() - a * p.sin();
            for (gi, &ki) in g.iter_mut().zip(k) {
                *gi += ki as f64 * d;
            }
        }
        g.iter().map(|x| x * x).sum()
    }
}

/// C^∞ ramp: 0 on (−∞, δ/2], 1 on [δ, ∞).
fn ramp(u: f64, delta: f64) -> (f64, f64) {
    let t = (u - 0.5 * delta) / (0.5 * delta);
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let (p, q) = ((-1.0 / t).exp(), (-1.0 / (1.0 - t)).exp());
    let (dp, dq) = (p / (t * t), -q / ((1.0 - t) * (1.0 - t)));
    let h = p / (p + q);
    let dh = (dp * (p + q) - p * (dp + dq)) / (p + q).powi(2);
    (h, dh * 2.0 / delta)
}

/// Smooth bottleneck function f = 1{W = 0} · Π_i h(π − |ψ_i|), ψ_i the
/// principal bond increments and h the C^∞ ramp. It vanishes off B, equals
/// 1 on B∖A_δ, and is smooth because every factor vanishes near ψ_i = π.
#[derive(Clone, Copy, Debug)]
pub struct BottleneckObservable {
    pub delta: f64,
}

impl BottleneckObservable {
    fn factors(&self, chain: &SpinChain) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if !matches!(winding_number(chain), Ok(0)) {
            return None;
        }
        let l = chain.len();
        let psi: Vec<f64> = (0..l).map(|k| increment(chain, k)).collect();
        let (h, dh): (Vec<f64>, Vec<f64>) = psi.iter().map(|p| ramp(PI - p.abs(), self.delta)).unzip();
        Some((psi, h, dh))
    }
}

impl SmoothObservable for BottleneckObservable {
    fn value(&self, chain: &SpinChain) -> f64 {
        self.factors(chain).map_or(0.0, |(_, h, _)| h.iter().product())
    }

    fn grad_norm_sq(&self, chain: &SpinChain) -> f64 {
        let Some((psi, h, dh)) = self.factors(chain) else {
            return 0.0;
        };
        let l = chain.len();
        // ∂f/∂ψ_k
        let dpsi: Vec<f64> = (0..l)
            .map(|k| {
                let rest: f64 = (0..l).filter(|&j| j != k).map(|j| h[j]).product();
                -psi[k].signum() * dh[k] * rest
            })
            .collect();
        // ψ_k = φ_{k+1} − φ_k, so ∂f/∂φ_i = ∂f/∂ψ_{i−1} − ∂f/∂ψ_i
        (0..l)
            .map(|i| (dpsi[(i + l - 1) % l] - dpsi[i]).powi(2))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayleighEstimate {
    pub value: f64,
    pub se: f64,
}

/// (1/β)Σ_i E‖D_i f‖² / Var(f) over (weighted) Gibbs samples. At β = 0 the
/// 1/β factor is dropped, i.e. the result is β·(Rayleigh quotient).
pub fn rayleigh_upper_bound_gap(
    f: &dyn SmoothObservable,
    samples: &[WeightedSample],
    beta: f64,
) -> Result<RayleighEstimate> {
    if samples.len() < 2 {
        return Err(invalid("samples", "need at least two samples"));
    }
    let w = normalized_weights(samples);
    let fv: Vec<f64> = samples.iter().map(|s| f.value(&s.chain)).collect();
    let gv: Vec<f64> = samples.iter().map(|s| f.grad_norm_sq(&s.chain)).collect();
    let m: f64 = fv.iter().zip(&w).map(|(a, b)| a * b).sum();
    let var: f64 = fv.iter().zip(&w).map(|(a, b)| b * (a - m).powi(2)).sum();
    let d: f64 = gv.iter().zip(&w).map(|(a, b)| a * b).sum();
    let scale = fv.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    if var <= 1e-12 * scale * scale {
        return Err(invalid("f", "zero variance under the samples"));
    }
    let pre = if beta > 0.0 { 1.0 / beta } else { 1.0 };
    let se2: f64 = (0..samples.len())
        .map(|k| {
            let psi = (gv[k] - d) / var - d / (var * var) * ((fv[k] - m).powi(2) - var);
            (w[k] * psi).powi(2)
        })
        .sum();
    Ok(RayleighEstimate {
        value: pre * d / var,
        se: pre * se2.sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Bottleneck ratio

pub const MIN_RARE_HITS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub hits: usize,
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckRatio {
    pub delta: f64,
    pub samples: usize,
    pub ratio: f64,
    pub log_se: f64,
    pub ci: (f64, f64),
    pub a_delta: EventStats,
    pub b_minus_a: EventStats,
    pub b_complement: EventStats,
    /// B_δ^0 and B_δ^1 are estimated through the average over global rotations.
    pub b0: EventStats,
    pub b1: EventStats,
}

/// μ(A_δ)/(μ(B_δ^0)μ(B_δ^1)) from weighted periodic XY samples.
pub fn bottleneck_ratio(samples: &[WeightedSample], delta: f64) -> Result<BottleneckRatio> {
    if samples.is_empty() {
        return Err(invalid("samples", "empty"));
    }
    if samples[0].chain.dim() != 2 {
        return Err(invalid("n", "bottleneck events are defined for N = 2"));
    }
    let w = normalized_weights(samples);
    let ns = samples.len();
    let mut ind = vec![[0.0f64; 5]; ns];
    let mut hits = [0usize; 5];
    for (k, s) in samples.iter().enumerate() {
        let (a, bma, bc) = match classify_bottleneck(&s.chain, delta) {
            Ok(ev) => (
                ev.in_a_delta as u8 as f64,
                (ev.in_b && !ev.in_a_delta) as u8 as f64,
                (!ev.in_b) as u8 as f64,
            ),
            Err(Error::OutsideDomain { .. }) => (0.0, 0.0, 1.0),
            Err(e) => return Err(e),
        };
        let r0 = rotation_fraction(&s.chain, delta, false);
        let r1 = rotation_fraction(&s.chain, delta, true);
        ind[k] = [a, bma, bc, r0, r1];
        for (h, v) in hits.iter_mut().zip(&ind[k]) {
            *h += (*v > 0.0) as usize;
        }
    }
    let mu: Vec<f64> = (0..5)
        .map(|e| ind.iter().zip(&w).map(|(x, wk)| x[e] * wk).sum())
        .collect();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    if hits[3] == 0 || hits[4] == 0 {
        return Err(Error::NotConverged("no sample near the winding references".into()));
    }
    if hits[0] < MIN_RARE_HITS {
        let k = hits[0] as f64;
        let upper_count = k + 2.0 * k.sqrt() + poisson_upper_zero(0.05);
        let upper_mu = (upper_count / ess).max(mu[0]);
        return Err(Error::InsufficientRareEvents {
            hits: hits[0],
            upper_bound: upper_mu / (mu[3] * mu[4]),
        });
    }
    let ratio = mu[0] / (mu[3] * mu[4]);
    let se2: f64 = (0..ns)
        .map(|k| {
            let x = &ind[k];
            let psi = (x[0] - mu[0]) / mu[0] - (x[3] - mu[3]) / mu[3] - (x[4] - mu[4]) / mu[4];
            (w[k] * psi).powi(2)
        })
        .sum();
    let log_se = se2.sqrt();
    let ev = |e: usize| EventStats {
        hits: hits[e],
        probability: mu[e],
    };
    Ok(BottleneckRatio {
        delta,
        samples: ns,
        ratio,
        log_se,
        ci: (ratio * (-1.96 * log_se).exp(), ratio * (1.96 * log_se).exp()),
        a_delta: ev(0),
        b_minus_a: ev(1),
        b_complement: ev(2),
        b0: ev(3),
        b1: ev(4),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_constants() {
        assert!((poincare_c1(1.0, 0.0) - 16.0 * PI).abs() < 1e-12);
        assert!((poincare_c1(0.0, 0.0) - 2.0 * PI * PI).abs() < 1e-12);
        assert_eq!(poincare_c2(2), 1.0);
        assert_eq!(poincare_c2(11), 0.1);
        assert!((poincare_c3(0.0) - PI * PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ramp_is_smooth_step() {
        assert_eq!(ramp(0.1, 0.3), (0.0, 0.0));
        assert_eq!(ramp(0.31, 0.3), (1.0, 0.0));
        let h = 1e-6;
        let u = 0.2;
        let fd = (ramp(u + h, 0.3).0 - ramp(u - h, 0.3).0) / (2.0 * h);
        assert!((fd - ramp(u, 0.3).1).abs() < 1e-5);
    }

    #[test]
    fn grid_generator_is_symmetric_with_null_vector() {
        let g = XyGrid::new(2, 6, BoundaryCondition::Periodic, 1.3, 0.7).unwrap();
        let a = g.symmetric_generator().to_dense();
        assert!((&a - a.transpose()).abs().max() < 1e-12);
        let null: Vec<f64> = g.stationary().into_iter().map(f64::sqrt).collect();
        let v = nalgebra::DVector::from_vec(null);
        assert!((&a * v).abs().max() < 1e-12);
    }

    #[test]
    fn bottleneck_gradient_matches_finite_difference() {
        let f = BottleneckObservable { delta: 0.3 };
        let angles = [0.0, PI - 0.2, 2.5, 1.5, 0.7, 0.3];
        let c = SpinChain::from_angles(&angles, BoundaryCondition::Periodic);
        assert!(f.value(&c) < 1.0 && f.value(&c) > 0.0);
        let h = 1e-6;
        let mut g2 = 0.0;
        for i in 0..angles.len() {
            let mut p = angles;
            let mut m = angles;
            p[i] += h;
            m[i] -= h;
            let d = (f.value(&SpinChain::from_angles(&p, BoundaryCondition::Periodic))
                - f.value(&SpinChain::from_angles(&m, BoundaryCondition::Periodic)))
                / (2.0 * h);
            g2 += d * d;
        }
        assert!((g2 - f.grad_norm_sq(&c)).abs() < 1e-6 * (1.0 + g2));
    }
}
