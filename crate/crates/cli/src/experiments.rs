use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spinchain_core::dynamics::{simulate, AngleLift, IntegratorConfig, Langevin, Observable};
use spinchain_core::numerics::{linear_fit, mean_se};
use spinchain_core::observables::{hitting_time_winding_flip, winding_chain};
use spinchain_core::paths::{build_cover, certify_path, plan_path, trace_path, PathCertificate, SphereCover};
use spinchain_core::rng::{replica_rng, stream_id, ReplicaRng};
use spinchain_core::sampling::{
    sample_periodic_gibbs, FreeGibbsSampler, PeriodicMethod, WeightedSample, XyMixtureSampler,
};
use spinchain_core::spectral::*;
use spinchain_core::{BoundaryCondition, SpinChain};

use crate::config::{Experiment, ExperimentConfig};
use crate::output::*;
use crate::CliError;

pub const SUMMARY: &str = "summary.json";
pub const GAP_CSV: &str = "gap.csv";
pub const FLIP_CSV: &str = "flip_times.csv";
pub const COM_CSV: &str = "com_variance.csv";

const BURN_IN_SWEEPS: usize = 200;
const PATH_SAMPLES_PER_PIECE: usize = 64;

/// One independently seeded job that owns one output file.
#[derive(Clone, Debug)]
struct Unit {
    beta_index: usize,
    replica: usize,
    file: PathBuf,
}

impl Unit {
    fn rng(&self, cfg: &ExperimentConfig) -> ReplicaRng {
        replica_rng(cfg.seed, stream_id(self.beta_index as u32, self.replica as u32))
    }
}

fn units(cfg: &ExperimentConfig, prefix: &str, ext: &str, per_replica: bool) -> Vec<Unit> {
    let mut out = Vec::new();
    for b in 0..cfg.beta_schedule.len() {
        if per_replica {
            for r in 0..cfg.replicas {
                out.push(Unit {
                    beta_index: b,
                    replica: r,
                    file: PathBuf::from(REPLICA_DIR).join(format!("{prefix}_b{b}_r{r}.{ext}")),
                });
            }
        } else {
            out.push(Unit {
                beta_index: b,
                replica: 0,
                file: PathBuf::from(REPLICA_DIR).join(format!("{prefix}_b{b}.{ext}")),
            });
        }
    }
    out
}

/// Runs every unit whose file is absent; completed files are kept.
fn run_units(
    cfg: &ExperimentConfig,
    units: &[Unit],
    job: impl Fn(&Unit) -> Result<Vec<u8>, CliError> + Sync,
) -> Result<(), CliError> {
    units
        .par_iter()
        .filter(|u| !cfg.output_dir.join(&u.file).exists())
        .try_for_each(|u| write_atomic(&cfg.output_dir.join(&u.file), &job(u)?))
}

fn stationary_start(cfg: &ExperimentConfig, beta: f64, rng: &mut ReplicaRng) -> Result<SpinChain, CliError> {
    Ok(match cfg.bc {
        BoundaryCondition::Free => FreeGibbsSampler::new(cfg.n, cfg.l, beta)?.sample(rng),
        BoundaryCondition::Periodic => {
            sample_periodic_gibbs(cfg.n, cfg.l, beta, rng, PeriodicMethod::Mcmc { burn_in_sweeps: BURN_IN_SWEEPS })?
                .chain
        }
    })
}

pub fn run(cfg: &ExperimentConfig, raw: &[u8]) -> Result<&'static str, CliError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    check_resume(cfg)?;
    write_manifest(cfg, raw)?;
    let summary = match cfg.experiment {
        Experiment::FreeRelax => trajectories(cfg, false)?,
        Experiment::GapVsBeta => trajectories(cfg, true)?,
        Experiment::WindingMetastability => metastability(cfg)?,
        Experiment::PathVerify => path_verify(cfg)?,
        Experiment::PoincareCheck => poincare(cfg)?,
        Experiment::CenterOfMass => center_of_mass(cfg)?,
        Experiment::BottleneckScan => bottleneck(cfg)?,
    };
    let doc = json!({
        "experiment": format!("{:?}", cfg.experiment),
        "N": cfg.n,
        "L": cfg.l,
        "bc": cfg.bc,
        "seed": cfg.seed,
        "replicas": cfg.replicas,
        "results": summary,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_atomic(&cfg.output_dir.join(SUMMARY), &bytes)?;
    Ok(SUMMARY)
}

#[derive(Serialize, Deserialize)]
pub struct GapRow {
    pub method: String,
    pub beta: f64,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

fn trajectories(cfg: &ExperimentConfig, with_oracle: bool) -> Result<Value, CliError> {
    let traj = units(cfg, "traj", "csv", true);
    let icfg = IntegratorConfig::new(cfg.dt(), cfg.record_stride())?;
    run_units(cfg, &traj, |u| {
        let beta = cfg.beta_schedule[u.beta_index];
        let mut rng = u.rng(cfg);
        let start = stationary_start(cfg, beta, &mut rng)?;
        let (rec, _) = simulate(
            &start,
            beta,
            &icfg,
            cfg.total_time(),
            &[Observable::Energy, Observable::Magnetization],
            &mut rng,
        )?;
        let mut buf = Vec::new();
        rec.write_csv(&mut buf)?;
        Ok(buf)
    })?;
    let oracle = with_oracle && cfg.n == 2 && cfg.l <= 3;
    let oracle_units = units(cfg, "oracle", "json", false);
    if oracle {
        run_units(cfg, &oracle_units, |u| {
            let beta = cfg.beta_schedule[u.beta_index];
            let g = gap_oracle_xy(cfg.l, beta, cfg.grid_m(), cfg.bc)?;
            Ok(serde_json::to_vec_pretty(&g)?)
        })?;
    }

    let mut rows = Vec::new();
    let mut per_beta = Vec::new();
    for (b, &beta) in cfg.beta_schedule.iter().enumerate() {
        let mut replicas = Vec::new();
        let mut energy = Vec::new();
        for u in traj.iter().filter(|u| u.beta_index == b) {
            let (header, data) = read_numeric_csv(&cfg.output_dir.join(&u.file))?;
            let cols: Vec<usize> = (0..header.len()).filter(|&c| header[c].starts_with('m')).collect();
            let e = header.iter().position(|h| h == "energy");
            replicas.push(cols.iter().map(|&c| data.iter().map(|r| r[c]).collect()).collect());
            if let Some(e) = e {
                energy.extend(data.iter().map(|r| r[e]));
            }
        }
        let set = TrajectorySet {
            dt: cfg.dt() * cfg.record_stride() as f64,
            params: GapParams { n: cfg.n, l: cfg.l, beta, bc: cfg.bc },
            replicas,
        };
        let (e_mean, e_se) = mean_se(&energy);
        let mut entry = json!({ "beta": beta, "mean_energy": e_mean, "mean_energy_se": e_se });
        match gap_estimate_autocorr(&set) {
            Ok(g) => {
                rows.push(GapRow { method: "autocorr".into(), beta, value: g.value, ci_lo: g.ci.0, ci_hi: g.ci.1 });
                entry["autocorr_gap"] = json!(g.value);
                entry["relaxation_time"] = json!(g.relaxation_time());
            }
            Err(e) => entry["autocorr_error"] = json!(e.to_string()),
        }
        if oracle {
            let u = &oracle_units[b];
            let g: GapEstimate = serde_json::from_slice(&std::fs::read(cfg.output_dir.join(&u.file))?)?;
            rows.push(GapRow { method: "oracle".into(), beta, value: g.value, ci_lo: g.ci.0, ci_hi: g.ci.1 });
            entry["oracle_gap"] = json!(g.value);
        }
        per_beta.push(entry);
    }
    write_atomic(&cfg.output_dir.join(GAP_CSV), &csv_bytes(&rows)?)?;
    Ok(json!({ "per_beta": per_beta, "files": { "gap": GAP_CSV } }))
}

#[derive(Serialize, Deserialize)]
pub struct FlipRow {
    pub beta: f64,
    pub replica: usize,
    pub time: f64,
    pub censored: u8,
}

fn metastability(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let us = units(cfg, "flip", "csv", true);
    let icfg = IntegratorConfig::new(cfg.dt(), 1)?;
    let max_time = cfg.total_time();
    run_units(cfg, &us, |u| {
        let beta = cfg.beta_schedule[u.beta_index];
        let mut rng = u.rng(cfg);
        let start = winding_chain(cfg.l, 1);
        let t = hitting_time_winding_flip(&start, beta, &icfg, &mut rng, max_time)?;
        let row = FlipRow { beta, replica: u.replica, time: t.unwrap_or(max_time), censored: t.is_none() as u8 };
        csv_bytes(&[row])
    })?;
    let mut rows: Vec<FlipRow> = Vec::new();
    for u in &us {
        let mut r = csv::Reader::from_path(cfg.output_dir.join(&u.file))?;
        for rec in r.deserialize() {
            rows.push(rec?);
        }
    }
    let mut per_beta = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &beta in &cfg.beta_schedule {
        let logs: Vec<f64> = rows.iter().filter(|r| r.beta == beta).map(|r| r.time.ln()).collect();
        let censored = rows.iter().filter(|r| r.beta == beta && r.censored == 1).count();
        let (m, se) = mean_se(&logs);
        xs.push(beta);
        ys.push(m);
        per_beta.push(json!({ "beta": beta, "mean_log_time": m, "se": se, "censored": censored }));
    }
    write_atomic(&cfg.output_dir.join(FLIP_CSV), &csv_bytes(&rows)?)?;
    let slope = (xs.len() > 1).then(|| linear_fit(&xs, &ys, &vec![1.0; xs.len()]).slope);
    Ok(json!({ "per_beta": per_beta, "log_time_slope": slope, "files": { "flip_times": FLIP_CSV } }))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CertOutcome {
    Certified(Box<PathCertificate>),
    Failed { error: String },
}

fn path_verify(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let us = units(cfg, "cert", "json", true);
    let eps = cfg.epsilon();
    let cover: SphereCover = build_cover(eps)?;
    run_units(cfg, &us, |u| {
        let beta = cfg.beta_schedule[u.beta_index];
        let mut rng = u.rng(cfg);
        let chain = stationary_start(cfg, beta, &mut rng)?;
        let outcome = match plan_path(&chain, &cover).and_then(|p| trace_path(&p, PATH_SAMPLES_PER_PIECE)) {
            Ok(trace) => CertOutcome::Certified(Box::new(certify_path(&trace, cfg.l, eps))),
            Err(e) => CertOutcome::Failed { error: e.to_string() },
        };
        Ok(serde_json::to_vec_pretty(&outcome)?)
    })?;
    let mut per_beta = Vec::new();
    for (b, &beta) in cfg.beta_schedule.iter().enumerate() {
        let mut counts = BTreeMap::from([("pass", 0), ("arctic", 0), ("energy", 0), ("speed", 0), ("jacobian", 0)]);
        let mut failed = 0;
        let mut max_logj = f64::NEG_INFINITY;
        for u in us.iter().filter(|u| u.beta_index == b) {
            match serde_json::from_slice(&std::fs::read(cfg.output_dir.join(&u.file))?)? {
                CertOutcome::Certified(c) => {
                    for (k, ok) in [
                        ("pass", c.pass),
                        ("arctic", c.endpoint_in_arctic),
                        ("energy", c.energy_pass),
                        ("speed", c.speed_pass),
                        ("jacobian", c.jacobian_pass),
                    ] {
                        *counts.get_mut(k).unwrap() += ok as usize;
                    }
                    max_logj = max_logj.max(c.max_log_jacobian);
                }
                CertOutcome::Failed { .. } => failed += 1,
            }
        }
        per_beta.push(json!({
            "beta": beta,
            "passed": counts,
            "unplanned": failed,
            "max_log_jacobian": max_logj,
        }));
    }
    Ok(json!({ "epsilon": eps, "cover_size": cover.len(), "per_beta": per_beta }))
}

#[derive(Serialize, Deserialize)]
struct PoincareRow {
    measure: String,
    a: f64,
    b: f64,
    constant: f64,
    functions: usize,
    /// max Var/(c·E|f'|²) for quadrature rows, max z-score for sphere MC
    statistic: f64,
    pass: u8,
}

fn poincare(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let file = PathBuf::from(REPLICA_DIR).join("poincare.csv");
    let unit = Unit { beta_index: 0, replica: 0, file };
    let nf = cfg.replicas;
    run_units(cfg, std::slice::from_ref(&unit), |_| {
        let mut rows = Vec::new();
        let mut cases: Vec<(String, f64, f64, PoincareMeasure, f64)> = Vec::new();
        for a in [0.0, 1.0, 2.0] {
            for &b in &cfg.beta_schedule {
                cases.push(("pab".into(), a, b, PoincareMeasure::Pab { a, b }, poincare_c1(a, b)));
            }
        }
        for &b in &cfg.beta_schedule {
            cases.push(("pb".into(), 0.0, b, PoincareMeasure::Pb { b }, poincare_c3(b)));
        }
        cases.push((
            "equator".into(),
            0.0,
            0.0,
            PoincareMeasure::EquatorUniform { n: cfg.n },
            poincare_c2(cfg.n),
        ));
        for (k, (name, a, b, m, c)) in cases.into_iter().enumerate() {
            let mut rng = replica_rng(cfg.seed, stream_id(k as u32, 0));
            let fs: Vec<TrigPoly> = (0..nf).map(|_| TrigPoly::random(rng.gen_range(1..=6), &mut rng)).collect();
            let r = verify_poincare(m, c, &fs)?;
            rows.push(PoincareRow { measure: name, a, b, constant: c, functions: nf, statistic: r.max_ratio, pass: r.pass as u8 });
        }
        let mut rng = replica_rng(cfg.seed, stream_id(u32::MAX, 0));
        let r = verify_sphere_poincare_mc(cfg.n, nf, cfg.samples(), &mut rng)?;
        rows.push(PoincareRow {
            measure: "sphere_mc".into(),
            a: 0.0,
            b: 0.0,
            constant: poincare_c2(cfg.n),
            functions: nf,
            statistic: r.max_z,
            pass: r.pass as u8,
        });
        csv_bytes(&rows)
    })?;
    let mut r = csv::Reader::from_path(cfg.output_dir.join(&unit.file))?;
    let rows: Vec<PoincareRow> = r.deserialize().collect::<Result<_, _>>()?;
    let failed: Vec<&PoincareRow> = rows.iter().filter(|r| r.pass == 0).collect();
    Ok(json!({
        "cases": rows.len(),
        "failed": failed.iter().map(|r| json!({ "measure": r.measure, "a": r.a, "b": r.b })).collect::<Vec<_>>(),
        "files": { "poincare": unit.file },
    }))
}

#[derive(Serialize, Deserialize)]
pub struct ComRow {
    pub beta: f64,
    pub time: f64,
    pub variance: f64,
    pub se: f64,
}

fn center_of_mass(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let us = units(cfg, "com", "csv", true);
    let dt = cfg.dt();
    let stride = cfg.record_stride();
    run_units(cfg, &us, |u| {
        let beta = cfg.beta_schedule[u.beta_index];
        let mut rng = u.rng(cfg);
        let mut chain = stationary_start(cfg, beta, &mut rng)?;
        let mut stepper = Langevin::new(IntegratorConfig::new(dt, stride)?, beta)?;
        let mut lift = AngleLift::new(&chain)?;
        let x0 = lift.mean();
        let steps = (cfg.total_time() / dt).round() as u64;
        let mut out = String::from("time,dx\n0,0\n");
        for k in 1..=steps {
            stepper.step(&mut chain, &mut rng)?;
            lift.update(&chain)?;
            if k % stride as u64 == 0 {
                out.push_str(&format!("{},{}\n", k as f64 * dt, lift.mean() - x0));
            }
        }
        Ok(out.into_bytes())
    })?;
    let mut rows = Vec::new();
    let mut per_beta = Vec::new();
    for (b, &beta) in cfg.beta_schedule.iter().enumerate() {
        let mut series = Vec::new();
        let mut times = Vec::new();
        for u in us.iter().filter(|u| u.beta_index == b) {
            let (_, data) = read_numeric_csv(&cfg.output_dir.join(&u.file))?;
            times = data.iter().map(|r| r[0]).collect();
            series.push(data.iter().map(|r| r[1]).collect::<Vec<f64>>());
        }
        let n = series.len() as f64;
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (k, &t) in times.iter().enumerate() {
            let var = series.iter().map(|s| s[k] * s[k]).sum::<f64>() / n;
            let se = var * (2.0 / n).sqrt();
            rows.push(ComRow { beta, time: t, variance: var, se });
            if t > 0.0 {
                ts.push(t);
                vs.push(var);
            }
        }
        // regression through the origin
        let slope = ts.iter().zip(&vs).map(|(t, v)| t * v).sum::<f64>() / ts.iter().map(|t| t * t).sum::<f64>();
        per_beta.push(json!({ "beta": beta, "slope": slope, "expected_slope": 2.0 / (beta * cfg.l as f64) }));
    }
    write_atomic(&cfg.output_dir.join(COM_CSV), &csv_bytes(&rows)?)?;
    Ok(json!({ "per_beta": per_beta, "files": { "variance": COM_CSV } }))
}

fn bottleneck(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let us = units(cfg, "bottleneck", "json", false);
    let delta = cfg.delta();
    run_units(cfg, &us, |u| {
        let beta = cfg.beta_schedule[u.beta_index];
        let samples: Vec<WeightedSample> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(cfg.seed, stream_id(u.beta_index as u32, r as u32));
                let mut s = XyMixtureSampler::for_bottleneck(cfg.l, beta, delta)?;
                Ok((0..cfg.samples()).map(|_| s.sample(&mut rng)).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, CliError>>()?
            .concat();
        Ok(serde_json::to_vec_pretty(&bottleneck_ratio(&samples, delta)?)?)
    })?;
    let mut per_beta = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (u, &beta) in us.iter().zip(&cfg.beta_schedule) {
        let r: BottleneckRatio = serde_json::from_slice(&std::fs::read(cfg.output_dir.join(&u.file))?)?;
        let a = r.a_delta.probability;
        let cross = a / (r.b_minus_a.probability * r.b_complement.probability);
        xs.push(beta);
        ys.push(cross.ln());
        per_beta.push(json!({ "beta": beta, "ratio": r.ratio, "cross_ratio": cross, "stats": r }));
    }
    let slope = (xs.len() > 1).then(|| linear_fit(&xs, &ys, &vec![1.0; xs.len()]).slope);
    Ok(json!({ "delta": delta, "per_beta": per_beta, "log_cross_ratio_slope": slope }))
}

