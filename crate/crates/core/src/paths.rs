//! Canonical paths: pulling flows, and the explicit N = 3 path (alignment,
//! pole contraction, rotation to e1) with a certifier for the path
//! hypotheses.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{any_orthogonal, cross3, dot, retract, Rotation, UnitVector, VecN};
use crate::sampling::{effective_sample_size, normalized_weights, weighted_mean_se_values, WeightedSample};
use crate::model::{energy, grad_norm_sq, in_arctic, BoundaryCondition, SpinChain, ARCTIC_THRESHOLD};

/// Default cover scale. The contraction endpoint is within 3·asin(ε) of the
/// pole, and cos(3·asin(0.046)) > 0.99 keeps it in the arctic.
pub const DEFAULT_EPSILON: f64 = 0.046;

pub fn epsilon_max() -> f64 {
    (PI / 16.0).sin()
}

/// Largest ε whose contraction endpoint (within 3 asin ε of ±v) rotates into the arctic.
pub fn arctic_epsilon() -> f64 {
    (ARCTIC_THRESHOLD.acos() / 3.0).sin()
}

/// Lower bound on S_i·(σv) at the end of the contraction.
pub fn endpoint_threshold(eps: f64) -> f64 {
    (3.0 * eps.asin()).cos()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= epsilon_max() + 1e-15) {
        return Err(invalid("epsilon", "must lie in (0, sin(π/16)]"));
    }
    Ok(())
}

fn require_n3(chain: &SpinChain) -> Result<()> {
    if chain.dim() != 3 {
        return Err(invalid("n", "the explicit path needs N = 3"));
    }
    Ok(())
}

fn unit3(x: [f64; 3]) -> UnitVector {
    UnitVector::from_unit_slice(&x)
}

fn map_spins(chain: &SpinChain, f: impl Fn(usize, &[f64]) -> [f64; 3]) -> SpinChain {
    let mut out = chain.clone();
    let data = out.data_mut();
    for i in 0..chain.len() {
        let y = f(i, chain.spin(i));
        data[3 * i..3 * i + 3].copy_from_slice(&y);
    }
    out
}

fn bond_count(chain: &SpinChain) -> f64 {
    chain.bonds() as f64
}

// ---------------------------------------------------------------------------
// Pulling flow φ_s

/// φ_s(s', t) = tanh(t − t0) s + sech(t − t0) s̃ with s̃ ⊥ s in span(s, s').
pub fn pulling_flow(s: &UnitVector, s_prime: &UnitVector, t: f64) -> Result<UnitVector> {
    let c = s.dot(s_prime).clamp(-1.0, 1.0);
    if c < -1.0 + 1e-9 {
        return Err(Error::AntipodalStart);
    }
    let perp = s_prime.vec().add_scaled(-c, s.vec());
    if perp.norm() < 1e-15 {
        return Ok(*s);
    }
    let tilde = retract(&perp)?;
    let t0 = -c.atanh();
    let x = t - t0;
    let v = s.vec().clone().scale(x.tanh()).add_scaled(1.0 / x.cosh(), tilde.vec());
    retract(&v)
}

pub fn pulling_flow_chain(chain: &SpinChain, s: &UnitVector, t: f64) -> Result<SpinChain> {
    let spins = chain
        .units()
        .iter()
        .map(|x| pulling_flow(s, x, t))
        .collect::<Result<Vec<_>>>()?;
    SpinChain::new(chain.bc(), &spins)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PullingReport {
    pub energies: Vec<f64>,
    /// Largest increase between consecutive grid times (≤ 1e-9 passes).
    pub max_increase: f64,
    pub total_decrease: f64,
    pub pass: bool,
}

/// Energy along φ_s(S, t) on `t_grid` for a chain in the open hemisphere of s.
pub fn verify_hemisphere_pulling(chain: &SpinChain, s: &UnitVector, t_grid: &[f64]) -> Result<PullingReport> {
    for i in 0..chain.len() {
        if dot(chain.spin(i), s.as_slice()) <= 0.0 {
            return Err(Error::HemisphereViolated { site: i });
        }
    }
    let energies = t_grid
        .iter()
        .map(|&t| Ok(energy(&pulling_flow_chain(chain, s, t)?)))
        .collect::<Result<Vec<f64>>>()?;
    let max_increase = energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let total_decrease = energies.first().unwrap_or(&0.0) - energies.last().unwrap_or(&0.0);
    Ok(PullingReport {
        pass: max_increase <= 1e-9,
        energies,
        max_increase,
        total_decrease,
    })
}

/// For a great-circle chain perpendicular to s:
/// H(φ_s(S, t)) = sech²(t)(H(S) + B) − B, B the number of bonds.
pub fn pulling_energy_closed_form(chain: &SpinChain, t: f64) -> f64 {
    let b = bond_count(chain);
    (energy(chain) + b) / t.cosh().powi(2) - b
}

/// d²/dt² H(φ_s(S, t)) at t = 0 for a great-circle chain perpendicular to s.
pub fn pulling_energy_second_derivative(chain: &SpinChain) -> f64 {
    -2.0 * (energy(chain) + bond_count(chain))
}

fn scatter(chain: &SpinChain) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for i in 0..chain.len() {
        let s = chain.spin(i);
        for a in 0..3 {
            for b in 0..3 {
                m[(a, b)] += s[a] * s[b];
            }
        }
    }
    m
}

/// Unit normal of the plane through the origin that best fits the spins.
pub fn best_plane_normal(chain: &SpinChain) -> UnitVector {
    let e = scatter(chain).symmetric_eigen();
    let k = (0..3)
        .min_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]))
        .expect("three eigenvalues");
    let c = e.eigenvectors.column(k);
    unit3([c[0], c[1], c[2]])
}

/// max_i |S_i·n| for the best-fit plane normal n (N = 3). Zero iff the spins
/// lie on a common great circle.
pub fn coplanarity_residual(chain: &SpinChain) -> Result<f64> {
    require_n3(chain)?;
    let n = best_plane_normal(chain);
    Ok((0..chain.len())
        .map(|i| dot(chain.spin(i), n.as_slice()).abs())
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Sphere cover

/// Largest K·ε² of the cube-surface grid over ε ∈ (0, sin(π/16)].
pub fn cover_constant() -> f64 {
    let e = epsilon_max();
    6.0 * (4.0 + e).powi(2) + 2.0 * e * e
}

#[derive(Clone, Debug)]
pub struct SphereCover {
    pub epsilon: f64,
    /// Grid spacing on the cube faces.
    pub spacing: f64,
    pub points: Vec<UnitVector>,
}

/// Projection onto S² of the grid of spacing ≤ ε/2 on the surface of [−1, 1]³.
pub fn build_cover(epsilon: f64) -> Result<SphereCover> {
    check_eps(epsilon)?;
    let n = (4.0 / epsilon).ceil() as usize;
    let spacing = 2.0 / n as f64;
    let mut points = Vec::with_capacity(6 * n * n + 2);
    let coord = |k: usize| -1.0 + k as f64 * spacing;
    for a in 0..=n {
        for b in 0..=n {
            for c in 0..=n {
                let on_surface = [a, b, c].iter().any(|&x| x == 0 || x == n);
                if on_surface {
                    let v = [coord(a), coord(b), coord(c)];
                    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    points.push(unit3([v[0] / r, v[1] / r, v[2] / r]));
                }
            }
        }
    }
    Ok(SphereCover {
        epsilon,
        spacing,
        points,
    })
}

impl SphereCover {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Any point of S² is within this chord distance of the cover: half the
    /// face-cell diagonal, since radial projection from the cube surface
    /// does not increase distances.
    pub fn mesh_bound(&self) -> f64 {
        self.spacing / SQRT_2
    }

    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, p) in self.points.iter().enumerate() {
            let d = 2.0 - 2.0 * dot(p.as_slice(), x);
            if d < best.1 {
                best = (k, d);
            }
        }
        (best.0, best.1.max(0.0).sqrt())
    }

    /// Cover point v minimizing max_i |S_i·v| among the points closest to the
    /// best-fit plane normal; `Some` only when that maximum is below ε.
    pub fn find_plane_label(&self, chain: &SpinChain) -> Option<(usize, f64)> {
        let n = best_plane_normal(chain);
        let mut near: Vec<(usize, f64)> = self
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| (k, p.dot(&n)))
            .filter(|(_, c)| *c > 0.0)
            .collect();
        let take = 64.min(near.len());
        near.select_nth_unstable_by(take - 1, |a, b| b.1.total_cmp(&a.1));
        near.truncate(take);
        near.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        near.iter()
            .map(|&(k, _)| {
                let p = self.points[k].as_slice();
                let m = (0..chain.len())
                    .map(|i| dot(chain.spin(i), p).abs())
                    .fold(0.0, f64::max);
                (k, m)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .filter(|&(_, m)| m < self.epsilon)
    }
}

// ---------------------------------------------------------------------------
// Alignment

/// Frame (v1, v2, v3) of stage k (0-based target site k): v1 = S_0, v2 the
/// direction of S_k orthogonal to v1, v3 = v1 × v2.
fn align_frame(chain: &SpinChain, k: usize) -> (UnitVector, UnitVector, UnitVector) {
    let v1 = chain.unit(0);
    let sk = chain.unit(k);
    let c = v1.dot(&sk);
    let perp = sk.vec().add_scaled(-c, v1.vec());
    let v2 = if perp.norm() > 1e-12 {
        retract(&perp).expect("non-zero")
    } else {
        any_orthogonal(&v1)
    };
    let v3 = unit3(cross3(v1.as_slice(), v2.as_slice()));
    (v1, v2, v3)
}

/// Azimuth θ_{k−1} of spin k−1 about S_0 in the stage-k frame.
pub fn align_stage_angle(chain: &SpinChain, k: usize) -> f64 {
    let (_, v2, v3) = align_frame(chain, k);
    let s = chain.spin(k - 1);
    dot(s, v3.as_slice()).atan2(dot(s, v2.as_slice()))
}

/// φ_k(S, t): spins 1..k−1 (0-based) rotated about S_0 by −t·θ_{k−1}.
pub fn align_stage(chain: &SpinChain, k: usize, t: f64) -> Result<SpinChain> {
    require_n3(chain)?;
    if k < 2 || k >= chain.len() {
        return Err(invalid("k", "alignment stages target sites 2..L−1 (0-based)"));
    }
    let (_, v2, v3) = align_frame(chain, k);
    let theta = align_stage_angle(chain, k);
    let r = Rotation::in_plane(&v2, &v3, -t * theta)?;
    Ok(map_spins(chain, |i, s| {
        let mut out = [s[0], s[1], s[2]];
        if i >= 1 && i < k {
            r.apply_slice(s, &mut out);
        }
        out
    }))
}

/// Stage duration 1 − η with η = ε/L.
pub fn align_duration(len: usize, eta: f64) -> f64 {
    len.saturating_sub(2) as f64 * (1.0 - eta)
}

/// The composed alignment at raw time t ∈ [0, (L−2)(1−η)].
pub fn align_path_eta(chain: &SpinChain, eta: f64, t: f64) -> Result<SpinChain> {
    require_n3(chain)?;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid("eta", "must lie in (0, 1)"));
    }
    let d = 1.0 - eta;
    let total = align_duration(chain.len(), eta);
    if !(t >= 0.0 && t <= total + 1e-12) {
        return Err(invalid("t", "outside the alignment time domain"));
    }
    let mut c = chain.clone();
    let mut rest = t.min(total);
    for k in 2..chain.len() {
        if rest <= 0.0 {
            break;
        }
        let local = rest.min(d);
        c = align_stage(&c, k, local)?;
        rest -= local;
    }
    Ok(c)
}

/// Alignment with the stage duration 1 − ε/L.
pub fn align_path(chain: &SpinChain, epsilon: f64, t: f64) -> Result<SpinChain> {
    check_eps(epsilon)?;
    align_path_eta(chain, epsilon / chain.len() as f64, t)
}

// ---------------------------------------------------------------------------
// Contraction toward ±s

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Polar angles θ_i + t: spins move to −s.
    Plus,
    /// θ_i − t: spins move to +s.
    Minus,
}

/// Time of the contraction segment, π/2 − 2·asin(ε).
pub fn contraction_duration(eps: f64) -> f64 {
    PI / 2.0 - 2.0 * eps.asin()
}

struct PolarFrame {
    s: [f64; 3],
    theta: Vec<f64>,
    horizontal: Vec<[f64; 3]>,
}

fn polar_frame(chain: &SpinChain, s: &UnitVector) -> PolarFrame {
    let sv = [s[0], s[1], s[2]];
    let fallback = any_orthogonal(s);
    let mut theta = Vec::with_capacity(chain.len());
    let mut horizontal = Vec::with_capacity(chain.len());
    for i in 0..chain.len() {
        let x = chain.spin(i);
        let c = dot(x, &sv).clamp(-1.0, 1.0);
        theta.push(-c.asin());
        let h = [x[0] - c * sv[0], x[1] - c * sv[1], x[2] - c * sv[2]];
        let r = dot(&h, &h).sqrt();
        horizontal.push(if r > 1e-14 {
            [h[0] / r, h[1] / r, h[2] / r]
        } else {
            [fallback[0], fallback[1], fallback[2]]
        });
    }
    PolarFrame { s: sv, theta, horizontal }
}

/// d/dt (−H)(X_t) at t = 0: Σ_bonds sin(θ_i + θ_j)(1 − cos(θ'_i − θ'_j)).
pub fn contraction_slope(chain: &SpinChain, s: &UnitVector) -> f64 {
    let f = polar_frame(chain, s);
    (0..chain.bonds())
        .map(|b| {
            let (i, j) = (b, (b + 1) % chain.len());
            (f.theta[i] + f.theta[j]).sin() * (1.0 - dot(&f.horizontal[i], &f.horizontal[j]))
        })
        .sum()
}

pub fn contraction_branch(chain: &SpinChain, s: &UnitVector) -> Branch {
    if contraction_slope(chain, s) >= 0.0 {
        Branch::Plus
    } else {
        Branch::Minus
    }
}

/// X_{±t}(S) for an explicit branch.
pub fn contract_with(chain: &SpinChain, s: &UnitVector, branch: Branch, t: f64) -> Result<SpinChain> {
    require_n3(chain)?;
    let f = polar_frame(chain, s);
    let sg = if branch == Branch::Plus { 1.0 } else { -1.0 };
    Ok(map_spins(chain, |i, _| {
        let th = f.theta[i] + sg * t;
        let (a, b) = (-th.sin(), th.cos());
        let h = f.horizontal[i];
        [
            a * f.s[0] + b * h[0],
            a * f.s[1] + b * h[1],
            a * f.s[2] + b * h[2],
        ]
    }))
}

/// φ_s(S, t) on D_1(ε, s): the branch is fixed by the sign of the initial slope.
pub fn contract_path(chain: &SpinChain, s: &UnitVector, epsilon: f64, t: f64) -> Result<SpinChain> {
    require_n3(chain)?;
    check_eps(epsilon)?;
    for i in 0..chain.len() {
        if dot(chain.spin(i), s.as_slice()).abs() >= epsilon {
            return Err(Error::NotNearEquator { site: i });
        }
    }
    if !(t >= 0.0 && t <= contraction_duration(epsilon) + 1e-12) {
        return Err(invalid("t", "outside the contraction time domain"));
    }
    contract_with(chain, s, contraction_branch(chain, s), t)
}

/// log density of the contraction pushforward at time t:
/// Σ_i log(cos θ_i / cos(θ_i ± t)).
pub fn contraction_log_jacobian(chain: &SpinChain, s: &UnitVector, branch: Branch, t: f64) -> f64 {
    let f = polar_frame(chain, s);
    let sg = if branch == Branch::Plus { 1.0 } else { -1.0 };
    f.theta
        .iter()
        .map(|th| (th.cos() / (th + sg * t).cos()).ln())
        .sum()
}

// ---------------------------------------------------------------------------
// Final rotation

/// Rotation in the plane of (s, e1), positive from s toward e1; for s = −e1
/// the plane is fixed by the first admissible basis vector.
pub fn final_rotation(s: &UnitVector) -> Result<Rotation> {
    let e1 = UnitVector::e1(s.dim());
    match Rotation::carrying(s, &e1) {
        Ok(r) => Ok(r.with_angle(0.0)),
        Err(Error::AntipodalStart) => Rotation::in_plane(s, &any_orthogonal(s), 0.0),
        Err(e) => Err(e),
    }
}

/// τ(s), the angle between s and e1.
pub fn rotation_duration(s: &UnitVector) -> f64 {
    s[0].clamp(-1.0, 1.0).acos()
}

pub fn rotate_path(chain: &SpinChain, s: &UnitVector, t: f64) -> Result<SpinChain> {
    let r = final_rotation(s)?.with_angle(t);
    Ok(map_spins(chain, |_, x| {
        let mut out = [0.0; 3];
        r.apply_slice(x, &mut out);
        out
    }))
}

// ---------------------------------------------------------------------------
// Composed path

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLabel {
    pub sigma: Sign,
    pub v_index: usize,
    pub v: [f64; 3],
}

/// Alignment stages with η = ε/L are retried with η halved, up to this many
/// times, until the endpoint lands in some D_1(ε, v).
pub const MAX_ETA_HALVINGS: usize = 12;

/// Everything needed to evaluate Ψ_{σ,v}(S, t) at any raw time.
#[derive(Clone, Debug)]
pub struct PathPlan {
    pub label: PathLabel,
    pub epsilon: f64,
    pub eta: f64,
    pub branch: Branch,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    /// Chain at the start of each alignment stage, then after alignment.
    stage_starts: Vec<SpinChain>,
    after_contract: SpinChain,
}

impl PathPlan {
    pub fn total_time(&self) -> f64 {
        self.tau1 + self.tau2 + self.tau3
    }

    /// Number of alignment stages, L − 2.
    pub fn stage_count(&self) -> usize {
        self.stage_starts.len() - 1
    }

    pub fn start(&self) -> &SpinChain {
        &self.stage_starts[0]
    }

    pub fn after_align(&self) -> &SpinChain {
        self.stage_starts.last().expect("non-empty")
    }

    pub fn after_contract(&self) -> &SpinChain {
        &self.after_contract
    }

    fn v(&self) -> UnitVector {
        unit3(self.label.v)
    }

    fn sigma_v(&self) -> UnitVector {
        match self.label.sigma {
            Sign::Plus => self.v(),
            Sign::Minus => self.v().neg(),
        }
    }

    fn stage_len(&self) -> f64 {
        1.0 - self.eta
    }

    /// Segment id (0 align, 1 contract, 2 rotate) and the piece containing
    /// raw time t, with its start time and duration.
    pub fn piece(&self, t: f64) -> (usize, usize, f64, f64) {
        let stages = self.stage_starts.len() - 1;
        if t < self.tau1 && stages > 0 {
            let j = ((t / self.stage_len()) as usize).min(stages - 1);
            return (0, j, j as f64 * self.stage_len(), self.stage_len());
        }
        if t < self.tau1 + self.tau2 {
            return (1, 0, self.tau1, self.tau2);
        }
        (2, 0, self.tau1 + self.tau2, self.tau3)
    }

    /// Ψ(S, t) at raw time t ∈ [0, T_3].
    pub fn at(&self, t: f64) -> Result<SpinChain> {
        let t = t.clamp(0.0, self.total_time());
        let stages = self.stage_starts.len() - 1;
        if t <= self.tau1 && stages > 0 {
            let j = ((t / self.stage_len()) as usize).min(stages - 1);
            let local = t - j as f64 * self.stage_len();
            return align_stage(&self.stage_starts[j], j + 2, local);
        }
        if t <= self.tau1 + self.tau2 {
            return contract_with(self.after_align(), &self.v(), self.branch, t - self.tau1);
        }
        rotate_path(&self.after_contract, &self.sigma_v(), t - self.tau1 - self.tau2)
    }

    /// log density of the pushforward at raw time t.
    pub fn log_jacobian(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.total_time());
        let d = self.stage_len();
        let align_t = t.min(self.tau1);
        let full = (align_t / d).floor();
        let stages = (self.stage_starts.len() - 1) as f64;
        let (full, partial) = if full >= stages {
            (stages, 0.0)
        } else {
            (full, align_t - full * d)
        };
        let mut lj = -full * self.eta.ln() - (1.0 - partial).ln();
        if t > self.tau1 {
            let tc = (t - self.tau1).min(self.tau2);
            lj += contraction_log_jacobian(self.after_align(), &self.v(), self.branch, tc);
        }
        lj
    }
}

fn plan_with_eta(chain: &SpinChain, cover: &SphereCover, eta: f64) -> Result<Option<PathPlan>> {
    let eps = cover.epsilon;
    let mut stage_starts = vec![chain.clone()];
    for k in 2..chain.len() {
        let next = align_stage(stage_starts.last().expect("non-empty"), k, 1.0 - eta)?;
        stage_starts.push(next);
    }
    let aligned = stage_starts.last().expect("non-empty").clone();
    let Some((v_index, _)) = cover.find_plane_label(&aligned) else {
        return Ok(None);
    };
    let v = cover.points[v_index];
    let branch = contraction_branch(&aligned, &v);
    let tau2 = contraction_duration(eps);
    let after_contract = contract_with(&aligned, &v, branch, tau2)?;
    let sigma = match branch {
        Branch::Plus => Sign::Minus,
        Branch::Minus => Sign::Plus,
    };
    let sv = if sigma == Sign::Plus { v } else { v.neg() };
    let thr = endpoint_threshold(eps);
    if (0..chain.len()).any(|i| dot(after_contract.spin(i), sv.as_slice()) < thr) {
        return Ok(None);
    }
    Ok(Some(PathPlan {
        label: PathLabel {
            sigma,
            v_index,
            v: [v[0], v[1], v[2]],
        },
        epsilon: eps,
        eta,
        branch,
        tau1: align_duration(chain.len(), eta),
        tau2,
        tau3: rotation_duration(&sv),
        stage_starts,
        after_contract,
    }))
}

/// Selects the label (σ, v) and precomputes the path for a chain.
pub fn plan_path(chain: &SpinChain, cover: &SphereCover) -> Result<PathPlan> {
    require_n3(chain)?;
    if chain.len() < 3 {
        return Err(invalid("len", "the explicit path needs L ≥ 3"));
    }
    let mut eta = cover.epsilon / chain.len() as f64;
    for _ in 0..=MAX_ETA_HALVINGS {
        if let Some(p) = plan_with_eta(chain, cover, eta)? {
            return Ok(p);
        }
        eta *= 0.5;
    }
    Err(Error::NoLabelFound)
}

/// Ψ_{σ,v}(S, t) at normalized time t ∈ [0, 1].
pub fn full_path(chain: &SpinChain, cover: &SphereCover, t: f64) -> Result<(PathLabel, SpinChain)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("t", "normalized time must lie in [0, 1]"));
    }
    let plan = plan_path(chain, cover)?;
    let c = plan.at(t * plan.total_time())?;
    Ok((plan.label.clone(), c))
}

// ---------------------------------------------------------------------------
// Traces and certificates

#[derive(Clone, Debug)]
pub struct PathTrace {
    /// Raw times.
    pub times: Vec<f64>,
    pub segments: Vec<u8>,
    pub configs: Vec<SpinChain>,
    pub energies: Vec<f64>,
    pub log_jacobian: Vec<f64>,
    /// ‖∂_t Ψ‖² by centered differences, per sample.
    pub speed_sq: Vec<f64>,
    pub max_speed_sq: f64,
    pub label: Option<PathLabel>,
    pub eta: f64,
    pub total_time: f64,
}

fn speed_sq(plan: &PathPlan, t: f64) -> Result<f64> {
    let (_, _, start, dur) = plan.piece(t);
    if dur <= 0.0 {
        return Ok(0.0);
    }
    let h = 1e-4 * dur;
    let lo = (t - h).max(start);
    let hi = (t + h).min(start + dur);
    // stay strictly inside the piece so kinks at joins are not differenced
    let (lo, hi) = if hi - lo < h {
        if t - start < dur / 2.0 {
            (start, start + h)
        } else {
            (start + dur - h, start + dur - 1e-15 * dur)
        }
    } else {
        (lo, hi)
    };
    let a = plan.at(lo)?;
    let b = plan.at(hi)?;
    let d: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (y - x) * (y - x))
        .sum();
    Ok(d / ((hi - lo) * (hi - lo)))
}

/// Samples Ψ at `per_piece` points in each alignment stage, in the
/// contraction and in the rotation.
pub fn trace_path(plan: &PathPlan, per_piece: usize) -> Result<PathTrace> {
    let per_piece = per_piece.max(2);
    let mut pieces: Vec<(u8, f64, f64)> = Vec::new();
    let stages = plan.stage_starts.len() - 1;
    for j in 0..stages {
        pieces.push((0, j as f64 * plan.stage_len(), plan.stage_len()));
    }
    pieces.push((1, plan.tau1, plan.tau2));
    if plan.tau3 > 0.0 {
        pieces.push((2, plan.tau1 + plan.tau2, plan.tau3));
    }
    let mut tr = PathTrace {
        times: Vec::new(),
        segments: Vec::new(),
        configs: Vec::new(),
        energies: Vec::new(),
        log_jacobian: Vec::new(),
        speed_sq: Vec::new(),
        max_speed_sq: 0.0,
        label: Some(plan.label.clone()),
        eta: plan.eta,
        total_time: plan.total_time(),
    };
    for (seg, start, dur) in pieces {
        for q in 0..per_piece {
            let t = start + dur * q as f64 / (per_piece - 1) as f64;
            // evaluate the piece's end from inside the piece
            let t_eval = if q + 1 == per_piece { start + dur } else { t };
            let c = plan.at(t_eval)?;
            let sp = speed_sq(plan, (start + dur * (q as f64 + 0.5) / per_piece as f64).min(start + dur))?;
            tr.energies.push(energy(&c));
            tr.log_jacobian.push(plan.log_jacobian(t_eval));
            tr.configs.push(c);
            tr.times.push(t_eval);
            tr.segments.push(seg);
            tr.speed_sq.push(sp);
            tr.max_speed_sq = tr.max_speed_sq.max(sp);
        }
    }
    Ok(tr)
}

/// Trace of the rotation segment alone, for a chain near s.
pub fn trace_rotation(chain: &SpinChain, s: &UnitVector, samples: usize) -> Result<PathTrace> {
    let tau = rotation_duration(s);
    let samples = samples.max(2);
    let mut tr = PathTrace {
        times: Vec::new(),
        segments: Vec::new(),
        configs: Vec::new(),
        energies: Vec::new(),
        log_jacobian: Vec::new(),
        speed_sq: Vec::new(),
        max_speed_sq: 0.0,
        label: None,
        eta: 0.0,
        total_time: tau,
    };
    let h = 1e-4 * tau.max(1e-12);
    for q in 0..samples {
        let t = tau * q as f64 / (samples - 1) as f64;
        let c = rotate_path(chain, s, t)?;
        let a = rotate_path(chain, s, (t - h).max(0.0))?;
        let b = rotate_path(chain, s, (t + h).min(tau))?;
        let dt = (t + h).min(tau) - (t - h).max(0.0);
        let sp = if dt > 0.0 {
            a.data().iter().zip(b.data()).map(|(x, y)| (y - x) * (y - x)).sum::<f64>() / (dt * dt)
        } else {
            0.0
        };
        tr.energies.push(energy(&c));
        tr.configs.push(c);
        tr.times.push(t);
        tr.segments.push(2);
        tr.log_jacobian.push(0.0);
        tr.speed_sq.push(sp);
        tr.max_speed_sq = tr.max_speed_sq.max(sp);
    }
    Ok(tr)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathCertificate {
    pub label: Option<PathLabel>,
    pub eta: f64,
    pub endpoint_in_arctic: bool,
    /// max_k H(Ψ(t_k)) − H(S).
    pub max_delta_h: f64,
    /// largest increase between consecutive samples.
    pub max_step_increase: f64,
    pub energy_pass: bool,
    pub max_speed_sq_align: f64,
    pub max_speed_sq_other: f64,
    pub speed_pass: bool,
    pub max_log_jacobian: f64,
    pub max_log_jacobian_align: f64,
    pub max_log_jacobian_contract: f64,
    pub jacobian_bound: f64,
    pub jacobian_pass: bool,
    pub pass: bool,
    /// Raw duration T_3; the normalized-time speed is √(speed²)·T_3.
    pub total_time: f64,
}

/// Checks the path hypotheses on a trace: endpoint in the arctic,
/// ΔH ≤ 1e-9·steps, speed² ≤ 4π⁴L on alignment and 4π²L elsewhere, and
/// log-Jacobian ≤ L·log(L/ε) + L·log 2.
pub fn certify_path(trace: &PathTrace, len: usize, epsilon: f64) -> PathCertificate {
    let l = len as f64;
    let steps = trace.energies.len().saturating_sub(1) as f64;
    let e0 = trace.energies.first().copied().unwrap_or(0.0);
    let max_delta_h = trace.energies.iter().map(|e| e - e0).fold(f64::NEG_INFINITY, f64::max);
    let max_step_increase = trace
        .energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let energy_pass = max_delta_h <= 1e-9 * steps.max(1.0) && max_step_increase <= 1e-9;
    let by = |seg: u8| -> f64 {
        trace
            .speed_sq
            .iter()
            .zip(&trace.segments)
            .filter(|(_, &s)| (seg == 0) == (s == 0))
            .map(|(v, _)| *v)
            .fold(0.0, f64::max)
    };
    let (sa, so) = (by(0), by(1));
    let speed_pass = sa <= 4.0 * PI.powi(4) * l && so <= 4.0 * PI * PI * l;
    let seg_max = |seg: u8| -> f64 {
        trace
            .log_jacobian
            .iter()
            .zip(&trace.segments)
            .filter(|(_, &s)| s == seg)
            .map(|(v, _)| *v)
            .fold(0.0, f64::max)
    };
    let max_log_jacobian = trace.log_jacobian.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let jacobian_bound = l * (l / epsilon).ln() + l * 2f64.ln();
    let jacobian_pass = max_log_jacobian <= jacobian_bound;
    let endpoint_in_arctic = trace.configs.last().map(in_arctic).unwrap_or(false);
    PathCertificate {
        label: trace.label.clone(),
        eta: trace.eta,
        endpoint_in_arctic,
        max_delta_h,
        max_step_increase,
        energy_pass,
        max_speed_sq_align: sa,
        max_speed_sq_other: so,
        speed_pass,
        max_log_jacobian,
        max_log_jacobian_align: seg_max(0),
        max_log_jacobian_contract: seg_max(1) - seg_max(0).min(seg_max(1)),
        jacobian_bound,
        jacobian_pass,
        pass: endpoint_in_arctic && energy_pass && speed_pass && jacobian_pass,
        total_time: trace.total_time,
    }
}

/// 3K²β(v²e^{βΔF} + e^{2βΔF}μ(A)) from certificates: K = 2·|cover|,
/// v the largest normalized-time speed, ΔF = max ΔH⁺ + max|log-Jacobian|/β.
pub fn implied_relaxation_bound(certs: &[PathCertificate], cover_size: usize, beta: f64, mu_arctic: f64) -> f64 {
    let k = 2.0 * cover_size as f64;
    let v2 = certs
        .iter()
        .map(|c| c.max_speed_sq_align.max(c.max_speed_sq_other) * c.total_time * c.total_time)
        .fold(0.0, f64::max);
    let dh = certs.iter().map(|c| c.max_delta_h.max(0.0)).fold(0.0, f64::max);
    let lj = certs.iter().map(|c| c.max_log_jacobian).fold(0.0, f64::max);
    let bdf = beta * dh + lj;
    3.0 * k * k * beta * (v2 * bdf.exp() + (2.0 * bdf).exp() * mu_arctic)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ArcticEstimate {
    pub hits: usize,
    pub estimate: f64,
    pub se: f64,
    pub ess: f64,
    /// estimate + 2se, or the 95% Poisson bound −ln(0.05)/ESS with no hits.
    pub upper: f64,
}

/// μ(arctic) from weighted samples.
pub fn arctic_probability(samples: &[WeightedSample]) -> ArcticEstimate {
    let w = normalized_weights(samples);
    let lw: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
    let ess = effective_sample_size(&lw);
    let ind: Vec<f64> = samples.iter().map(|s| in_arctic(&s.chain) as u8 as f64).collect();
    let hits = ind.iter().filter(|&&x| x > 0.0).count();
    let (estimate, se) = weighted_mean_se_values(&ind, &w);
    let upper = if hits == 0 {
        -(0.05f64.ln()) / ess
    } else {
        estimate + 2.0 * se
    };
    ArcticEstimate {
        hits,
        estimate,
        se,
        ess,
        upper,
    }
}

/// Jacobian determinant of S ↦ Ψ-stage map in tangent coordinates, by
/// central differences. Returns det of the 2L×2L matrix.
pub fn tangent_jacobian_det(chain: &SpinChain, map: impl Fn(&SpinChain) -> Result<SpinChain>, h: f64) -> Result<f64> {
    require_n3(chain)?;
    let l = chain.len();
    let base_out = map(chain)?;
    let frame = |c: &SpinChain, i: usize| -> ([f64; 3], [f64; 3]) {
        let p = c.unit(i);
        let a = any_orthogonal(&p);
        let b = cross3(p.as_slice(), a.as_slice());
        ([a[0], a[1], a[2]], b)
    };
    let in_frames: Vec<_> = (0..l).map(|i| frame(chain, i)).collect();
    let out_frames: Vec<_> = (0..l).map(|i| frame(&base_out, i)).collect();
    let mut jac = nalgebra::DMatrix::<f64>::zeros(2 * l, 2 * l);
    for col in 0..2 * l {
        let (site, which) = (col / 2, col % 2);
        let dir = if which == 0 { in_frames[site].0 } else { in_frames[site].1 };
        let push = |sign: f64| -> Result<SpinChain> {
            let mut c = chain.clone();
            let p = chain.spin(site);
            let x = VecN::from_slice(&[p[0] + sign * h * dir[0], p[1] + sign * h * dir[1], p[2] + sign * h * dir[2]]);
            c.set_spin(site, &retract(&x)?);
            map(&c)
        };
        let (a, b) = (push(1.0)?, push(-1.0)?);
        for i in 0..l {
            let d: Vec<f64> = (0..3).map(|k| (a.spin(i)[k] - b.spin(i)[k]) / (2.0 * h)).collect();
            jac[(2 * i, col)] = dot(&d, &out_frames[i].0);
            jac[(2 * i + 1, col)] = dot(&d, &out_frames[i].1);
        }
    }
    Ok(jac.determinant())
}

/// Runs the deterministic gradient flow until ‖DH‖ < tol and returns the
/// coplanarity residual of the end point with the final gradient norm.
pub fn flow_to_critical(chain: &SpinChain, tol: f64, max_time: f64) -> Result<(SpinChain, f64, f64)> {
    let out = crate::dynamics::gradient_flow_until(chain, max_time, 1e-2, tol)?;
    let res = coplanarity_residual(&out.chain)?;
    Ok((out.chain.clone(), res, grad_norm_sq(&out.chain).sqrt()))
}

pub fn periodic(chain: SpinChain) -> SpinChain {
    chain.with_bc(BoundaryCondition::Periodic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(k: usize) -> UnitVector {
        UnitVector::basis(3, k)
    }

    #[test]
    fn pulling_from_orthogonal_start() {
        let s = e(0);
        let sp = e(1);
        let t = 0.7f64;
        let got = pulling_flow(&s, &sp, t).unwrap();
        assert!((got[0] - t.tanh()).abs() < 1e-14);
        assert!((got[1] - 1.0 / t.cosh()).abs() < 1e-14);
        assert_eq!(pulling_flow(&s, &s, 3.0).unwrap(), s);
        assert_eq!(pulling_flow(&s, &s.neg(), 1.0), Err(Error::AntipodalStart));
    }

    #[test]
    fn cover_size_within_constant() {
        let eps = epsilon_max();
        let c = build_cover(eps).unwrap();
        assert!((c.len() as f64) <= cover_constant() / (eps * eps));
        assert!(c.points.iter().all(|p| (p.vec().norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rotation_carries_e2_to_e1() {
        let s = e(1);
        let c = SpinChain::uniform(&s, 5, BoundaryCondition::Periodic);
        let end = rotate_path(&c, &s, rotation_duration(&s)).unwrap();
        for i in 0..5 {
            assert!((end.spin(i)[0] - 1.0).abs() < 1e-12);
        }
        let m = e(0).neg();
        let end = rotate_path(&SpinChain::uniform(&m, 3, BoundaryCondition::Periodic), &m, PI).unwrap();
        assert!((end.spin(0)[0] - 1.0).abs() < 1e-12);
    }
}
