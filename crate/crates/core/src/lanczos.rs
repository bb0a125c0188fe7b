//! Thick-restart (Krylov–Schur) Lanczos for the low end of the spectrum of
//! a sparse symmetric operator, with explicit deflation of known
//! eigenvectors.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::replica_rng;

pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Compressed sparse row matrix. Only used for symmetric matrices here.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(n: usize, indptr: Vec<usize>, indices: Vec<u32>, values: Vec<f64>) -> Self {
        assert_eq!(indptr.len(), n + 1);
        assert_eq!(indices.len(), values.len());
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .zip(&self.values[r])
            .map(|(&j, &v)| (j as usize, v))
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

impl SymmetricOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(4096).enumerate().for_each(|(c, out)| {
            let base = c * 4096;
            for (k, yi) in out.iter_mut().enumerate() {
                let i = base + k;
                let mut s = 0.0;
                for p in self.indptr[i]..self.indptr[i + 1] {
                    s += self.values[p] * x[self.indices[p] as usize];
                }
                *yi = s;
            }
        });
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosConfig {
    pub nev: usize,
    pub max_basis: usize,
    /// Ritz pairs are accepted when ‖A y − θ y‖ ≤ tol · ‖A‖_est.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self {
            nev: 2,
            max_basis: 40,
            tol: 1e-10,
            max_restarts: 2000,
            seed: 0x1a2c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
    pub restarts: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the components of `w` along `basis` (assumed orthonormal),
/// twice if the first pass cancels most of the norm. Returns the
/// accumulated coefficients.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut coef = vec![0.0; basis.len()];
    let mut before = norm(w);
    for pass in 0..2 {
        let h: Vec<f64> = basis.iter().map(|v| dot(v, w)).collect();
        for (v, c) in basis.iter().zip(&h) {
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= c * vi;
            }
        }
        for (a, c) in coef.iter_mut().zip(&h) {
            *a += c;
        }
        let after = norm(w);
        if pass == 0 && after > std::f64::consts::FRAC_1_SQRT_2 * before {
            break;
        }
        before = after;
    }
    coef
}

fn random_unit(n: usize, against: &[&[Vec<f64>]], rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
    for _ in 0..10 {
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for b in against.iter().chain(against.first()) {
            orthogonalize(&mut x, b);
        }
        let nx = norm(&x);
        if nx > 1e-8 {
            x.iter_mut().for_each(|v| *v /= nx);
            return Ok(x);
        }
    }
    Err(Error::NotConverged("could not draw a fresh Lanczos direction".into()))
}

/// The `nev` smallest eigenvalues of `op` on the orthogonal complement of
/// `deflate` (orthonormal vectors, typically known null vectors).
pub fn smallest_eigenvalues<O: SymmetricOperator>(
    op: &O,
    deflate: &[Vec<f64>],
    cfg: &LanczosConfig,
) -> Result<LanczosResult> {
    let n = op.dim();
    let room = n.saturating_sub(deflate.len());
    if cfg.nev == 0 || cfg.nev > room {
        return Err(invalid("nev", "must be between 1 and the deflated dimension"));
    }
    let m = cfg.max_basis.max(cfg.nev + 2).min(room);
    let keep = ((m + cfg.nev) / 2).clamp(cfg.nev, m.saturating_sub(1).max(cfg.nev));
    let mut rng = replica_rng(cfg.seed, 0);

    let mut v: Vec<Vec<f64>> = vec![random_unit(n, &[deflate], &mut rng)?];
    let mut t = DMatrix::<f64>::zeros(m, m);
    let mut w = vec![0.0; n];
    let mut matvecs = 0;
    let mut anorm = 0.0f64;
    let mut start = 0;

    for restart in 0..=cfg.max_restarts {
        let mut b_last = 0.0;
        let mut resid: Option<Vec<f64>> = None;
        for j in start..m {
            op.apply(&v[j], &mut w);
            matvecs += 1;
            orthogonalize(&mut w, deflate);
            let h = orthogonalize(&mut w, &v);
            // a small residual amplifies rounding along the deflated directions
            orthogonalize(&mut w, deflate);
            for (i, hi) in h.iter().enumerate() {
                t[(i, j)] = *hi;
                t[(j, i)] = *hi;
            }
            anorm = anorm.max(h[j].abs());
            let b = norm(&w);
            let tiny = b <= 1e-13 * anorm.max(1e-300);
            if j + 1 < m {
                let next = if tiny {
                    random_unit(n, &[deflate, &v], &mut rng)?
                } else {
                    w.iter().map(|x| x / b).collect()
                };
                let b = if tiny { 0.0 } else { b };
                t[(j + 1, j)] = b;
                t[(j, j + 1)] = b;
                v.push(next);
            } else if !tiny {
                b_last = b;
                resid = Some(w.iter().map(|x| x / b).collect());
            }
        }

        let eig = t.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        anorm = eig.eigenvalues.iter().fold(anorm, |a, x| a.max(x.abs()));
        let res: Vec<f64> = order
            .iter()
            .map(|&k| (b_last * eig.eigenvectors[(m - 1, k)]).abs())
            .collect();
        let done = res[..cfg.nev].iter().all(|r| *r <= cfg.tol * anorm) || resid.is_none();
        if done {
            return Ok(LanczosResult {
                values: order[..cfg.nev].iter().map(|&k| eig.eigenvalues[k]).collect(),
                residuals: res[..cfg.nev].to_vec(),
                matvecs,
                restarts: restart,
            });
        }

        // thick restart on the `keep` lowest Ritz vectors
        let mut nv: Vec<Vec<f64>> = vec![vec![0.0; n]; keep];
        for (c, out) in nv.iter_mut().enumerate() {
            let k = order[c];
            for (j, vj) in v.iter().enumerate() {
                let y = eig.eigenvectors[(j, k)];
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += y * x;
                }
            }
        }
        t.fill(0.0);
        for c in 0..keep {
            let k = order[c];
            t[(c, c)] = eig.eigenvalues[k];
            let s = b_last * eig.eigenvectors[(m - 1, k)];
            t[(keep, c)] = s;
            t[(c, keep)] = s;
        }
        nv.push(resid.expect("residual present"));
        v = nv;
        start = keep;
    }
    Err(Error::NotConverged(format!(
        "Lanczos: {} restarts without convergence",
        cfg.max_restarts
    )))
}
