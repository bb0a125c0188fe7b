//! Langevin dynamics (projected Euler–Maruyama with retraction), the
//! deterministic gradient flow, and the lifted center of mass for N = 2.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, MAX_DIM};
use crate::model::{energy, grad_norm_sq, neg_grad_into, BoundaryCondition, SpinChain};
use crate::numerics::wrap_angle;
use crate::observables::winding_number;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    ProjectedEulerMaruyama,
}

/// Noise amplitude per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NoiseConvention {
    /// sqrt(2 dt / β): diffusion coefficient 1/β, matching the generator.
    #[default]
    Generator,
    /// sqrt(2 dt) / β, the prefactor displayed with the SDE.
    DisplayedSde,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub record_stride: usize,
    #[serde(default)]
    pub noise: NoiseConvention,
    /// Multiplies every bond of the Hamiltonian.
    #[serde(default = "unit_coupling")]
    pub coupling: f64,
}

fn unit_coupling() -> f64 {
    1.0
}

impl IntegratorConfig {
    pub fn new(dt: f64, record_stride: usize) -> Result<Self> {
        let c = IntegratorConfig {
            dt,
            scheme: Scheme::ProjectedEulerMaruyama,
            record_stride,
            noise: NoiseConvention::Generator,
            coupling: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", "must be positive"));
        }
        if self.record_stride < 1 {
            return Err(invalid("record_stride", "must be at least 1"));
        }
        if !self.coupling.is_finite() {
            return Err(invalid("coupling", "must be finite"));
        }
        Ok(())
    }

    pub fn noise_amplitude(&self, beta: f64) -> f64 {
        if beta.is_infinite() {
            return 0.0;
        }
        match self.noise {
            NoiseConvention::Generator => (2.0 * self.dt / beta).sqrt(),
            NoiseConvention::DisplayedSde => (2.0 * self.dt).sqrt() / beta,
        }
    }
}

/// Reusable stepper; β = ∞ disables the noise.
pub struct Langevin {
    cfg: IntegratorConfig,
    sigma: f64,
    drift: Vec<f64>,
}

impl Langevin {
    pub fn new(cfg: IntegratorConfig, beta: f64) -> Result<Self> {
        cfg.validate()?;
        if !(beta > 0.0) {
            return Err(invalid("beta", "must be positive"));
        }
        Ok(Langevin {
            cfg,
            sigma: cfg.noise_amplitude(beta),
            drift: Vec::new(),
        })
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    /// S_i ← retract(S_i − D_iH dt + σ P_i ξ_i) for all sites simultaneously.
    pub fn step<R: Rng + ?Sized>(&mut self, chain: &mut SpinChain, rng: &mut R) -> Result<()> {
        let d = chain.dim();
        let l = chain.len();
        let dt = self.cfg.dt;
        let j = self.cfg.coupling;
        self.drift.resize(l * d, 0.0);
        let mut max_g2: f64 = 0.0;
        for i in 0..l {
            let g = &mut self.drift[i * d..(i + 1) * d];
            neg_grad_into(chain, i, g);
            max_g2 = max_g2.max(dot(g, g));
        }
        let guard = dt * j.abs() * max_g2.sqrt();
        if guard >= 0.5 {
            return Err(Error::StepTooLarge { value: guard });
        }
        let sigma = self.sigma;
        let data = chain.data_mut();
        if d == 2 {
            for i in 0..l {
                let (x, y) = (data[2 * i], data[2 * i + 1]);
                let z: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                let nx = x + dt * j * self.drift[2 * i] - sigma * z * y;
                let ny = y + dt * j * self.drift[2 * i + 1] + sigma * z * x;
                let r = (nx * nx + ny * ny).sqrt();
                data[2 * i] = nx / r;
                data[2 * i + 1] = ny / r;
            }
        } else {
            let mut xi = [0.0; MAX_DIM];
            for i in 0..l {
                let s = &mut data[i * d..(i + 1) * d];
                if sigma > 0.0 {
                    for x in xi[..d].iter_mut() {
                        *x = rng.sample(StandardNormal);
                    }
                    let c = dot(&xi[..d], s);
                    for k in 0..d {
                        xi[k] -= c * s[k];
                    }
                }
                let g = &self.drift[i * d..(i + 1) * d];
                for k in 0..d {
                    s[k] += dt * j * g[k] + sigma * xi[k];
                }
                let r = dot(s, s).sqrt();
                s.iter_mut().for_each(|x| *x /= r);
            }
        }
        Ok(())
    }
}

/// One step from `chain`; see [`Langevin::step`].
pub fn langevin_step<R: Rng + ?Sized>(chain: &SpinChain, beta: f64, dt: f64, rng: &mut R) -> Result<SpinChain> {
    let mut l = Langevin::new(IntegratorConfig::new(dt, 1)?, beta)?;
    let mut c = chain.clone();
    l.step(&mut c, rng)?;
    Ok(c)
}

/// Scalar observables recorded along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    Energy,
    /// (1/L) Σ S_i, one column per component.
    Magnetization,
    /// S_i · S_j (0-based sites).
    NeighborDot(usize, usize),
    /// Winding number (N = 2 periodic); NaN outside the domain.
    Winding,
}

impl Observable {
    pub fn names(&self, dim: usize) -> Vec<String> {
        match self {
            Observable::Energy => vec!["energy".into()],
            Observable::Magnetization => (0..dim).map(|k| format!("m{k}")).collect(),
            Observable::NeighborDot(i, j) => vec![format!("dot_{i}_{j}")],
            Observable::Winding => vec!["winding".into()],
        }
    }

    pub fn evaluate(&self, chain: &SpinChain, out: &mut Vec<f64>) {
        match self {
            Observable::Energy => out.push(energy(chain)),
            Observable::Magnetization => {
                let m = chain.total_spin();
                let l = chain.len() as f64;
                out.extend(m.as_slice().iter().map(|x| x / l));
            }
            Observable::NeighborDot(i, j) => out.push(dot(chain.spin(*i), chain.spin(*j))),
            Observable::Winding => out.push(winding_number(chain).map(|w| w as f64).unwrap_or(f64::NAN)),
        }
    }
}

/// Observables sampled at stride points.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// values[k][c]: column c at times[k]
    pub values: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|row| row[c]).collect())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "time")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            write!(w, "{t}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Integrates for `total_time`, recording at step 0 and every
/// `record_stride` steps. Returns the record and the final chain.
pub fn simulate<R: Rng + ?Sized>(
    chain: &SpinChain,
    beta: f64,
    cfg: &IntegratorConfig,
    total_time: f64,
    observables: &[Observable],
    rng: &mut R,
) -> Result<(TrajectoryRecord, SpinChain)> {
    if !(total_time >= 0.0) {
        return Err(invalid("total_time", "must be non-negative"));
    }
    let mut stepper = Langevin::new(*cfg, beta)?;
    let steps = (total_time / cfg.dt).round() as u64;
    let names = observables.iter().flat_map(|o| o.names(chain.dim())).collect();
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity((steps / cfg.record_stride as u64 + 1) as usize),
        names,
        values: Vec::new(),
    };
    let mut c = chain.clone();
    let snap = |c: &SpinChain, t: f64, rec: &mut TrajectoryRecord| {
        let mut row = Vec::new();
        for o in observables {
            o.evaluate(c, &mut row);
        }
        rec.times.push(t);
        rec.values.push(row);
    };
    snap(&c, 0.0, &mut rec);
    for k in 1..=steps {
        stepper.step(&mut c, rng)?;
        if k % cfg.record_stride as u64 == 0 {
            snap(&c, k as f64 * cfg.dt, &mut rec);
        }
    }
    Ok((rec, c))
}

/// Result of a gradient-flow run.
#[derive(Clone, Debug)]
pub struct FlowOutcome {
    pub chain: SpinChain,
    pub time: f64,
    pub steps: usize,
    pub grad_norm: f64,
    /// largest energy increase over any accepted step (≤ 0 unless rounding)
    pub max_energy_increase: f64,
}

fn flow_candidate(chain: &SpinChain, h: f64, drift: &mut Vec<f64>, out: &mut SpinChain) {
    let d = chain.dim();
    drift.resize(chain.data().len(), 0.0);
    for i in 0..chain.len() {
        neg_grad_into(chain, i, &mut drift[i * d..(i + 1) * d]);
    }
    out.data_mut().copy_from_slice(chain.data());
    let data = out.data_mut();
    for i in 0..chain.len() {
        let s = &mut data[i * d..(i + 1) * d];
        for k in 0..d {
            s[k] += h * drift[i * d + k];
        }
        let r = dot(s, s).sqrt();
        s.iter_mut().for_each(|x| *x /= r);
    }
}

/// Projected Euler for ∂_t φ = −DH(φ) with Armijo backtracking: a step of
/// size h is accepted only if the energy drops by at least h‖DH‖²/2.
/// Runs until time `max_time` or until ‖DH‖ < `tol`.
pub fn gradient_flow_until(chain: &SpinChain, max_time: f64, dt: f64, tol: f64) -> Result<FlowOutcome> {
    if !(dt > 0.0 && dt <= 1e-2) {
        return Err(invalid("dt", "must be in (0, 1e-2]"));
    }
    let mut cur = chain.clone();
    let mut cand = chain.clone();
    let mut drift = Vec::new();
    let mut e = energy(&cur);
    let mut t = 0.0;
    let mut h = dt;
    let mut steps = 0;
    let mut max_inc = f64::NEG_INFINITY;
    loop {
        let g2 = grad_norm_sq(&cur);
        if g2.sqrt() < tol || t >= max_time {
            return Ok(FlowOutcome {
                chain: cur,
                time: t,
                steps,
                grad_norm: g2.sqrt(),
                max_energy_increase: max_inc,
            });
        }
        let hmax = dt.min(max_time - t);
        h = h.min(hmax);
        loop {
            flow_candidate(&cur, h, &mut drift, &mut cand);
            let en = energy(&cand);
            // below rounding of H the Armijo test is noise; dt ≤ 1e-2 is stable there
            let noise = 64.0 * f64::EPSILON * (1.0 + e.abs());
            let flat = 0.5 * h * g2 < noise && en <= e + noise;
            if en <= e - 0.5 * h * g2 || flat {
                max_inc = max_inc.max(en - e);
                std::mem::swap(&mut cur, &mut cand);
                e = en;
                t += h;
                steps += 1;
                h = (2.0 * h).min(dt);
                break;
            }
            h *= 0.5;
            if h < 1e-14 {
                // no representable decrease left: at a critical point to rounding
                return Ok(FlowOutcome {
                    grad_norm: g2.sqrt(),
                    chain: cur,
                    time: t,
                    steps,
                    max_energy_increase: max_inc,
                });
            }
        }
    }
}

/// Flows for time `total_time`.
pub fn gradient_flow(chain: &SpinChain, total_time: f64, dt: f64) -> Result<SpinChain> {
    Ok(gradient_flow_until(chain, total_time, dt, 0.0)?.chain)
}

/// Lifted angles X_i of an N = 2 chain, tracked through time.
#[derive(Clone, Debug)]
pub struct AngleLift {
    lifted: Vec<f64>,
}

impl AngleLift {
    /// Spatial lift X_1 = arg S_1, X_{i+1} = X_i + [S_{i+1} − S_i].
    /// Periodic chains must have winding number zero.
    pub fn new(chain: &SpinChain) -> Result<Self> {
        if chain.dim() != 2 {
            return Err(invalid("n", "angle lift needs N = 2"));
        }
        if chain.bc() == BoundaryCondition::Periodic && winding_number(chain)? != 0 {
            return Err(Error::WindingNotZero);
        }
        let mut lifted = Vec::with_capacity(chain.len());
        let mut x = chain.angle(0);
        lifted.push(x);
        for i in 1..chain.len() {
            let inc = wrap_angle(chain.angle(i) - chain.angle(i - 1));
            if PI - inc.abs() < 1e-9 {
                return Err(Error::WindingNotZero);
            }
            x += inc;
            lifted.push(x);
        }
        Ok(AngleLift { lifted })
    }

    /// Per-site temporal unwrap; a site change too close to ±π is ambiguous.
    pub fn update(&mut self, chain: &SpinChain) -> Result<()> {
        for (i, x) in self.lifted.iter_mut().enumerate() {
            let d = wrap_angle(chain.angle(i) - *x);
            if PI - d.abs() < 1e-9 {
                return Err(Error::WindingNotZero);
            }
            *x += d;
        }
        Ok(())
    }

    pub fn angles(&self) -> &[f64] {
        &self.lifted
    }

    pub fn mean(&self) -> f64 {
        self.lifted.iter().sum::<f64>() / self.lifted.len() as f64
    }
}

/// X̄(t) = (1/L) Σ X_i(t) along a sequence of N = 2 configurations.
pub fn center_of_mass_trace(trajectory: &[SpinChain]) -> Result<Vec<f64>> {
    let Some(first) = trajectory.first() else {
        return Ok(Vec::new());
    };
    let mut lift = AngleLift::new(first)?;
    let mut out = vec![lift.mean()];
    for c in &trajectory[1..] {
        if c.bc() == BoundaryCondition::Periodic && winding_number(c)? != 0 {
            return Err(Error::WindingNotZero);
        }
        lift.update(c)?;
        out.push(lift.mean());
    }
    Ok(out)
}
