//! O(N) chain Hamiltonians with free or periodic boundary, sphere gradients
//! and the arctic set.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, project_tangent, TangentVector, UnitVector, VecN, MAX_DIM};

/// Spins with S·e1 above this value for every site are in the arctic set.
pub const ARCTIC_THRESHOLD: f64 = 0.99;

const UNIT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Free,
    Periodic,
}

/// L unit vectors in R^N, stored contiguously (site-major).
#[derive(Clone, Debug, PartialEq)]
pub struct SpinChain {
    dim: usize,
    bc: BoundaryCondition,
    data: Vec<f64>,
}

impl SpinChain {
    pub fn new(bc: BoundaryCondition, spins: &[UnitVector]) -> Result<Self> {
        let dim = spins.first().map(|s| s.dim()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * spins.len());
        for s in spins {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim(),
                });
            }
            data.extend_from_slice(s.as_slice());
        }
        Self::from_flat(dim, bc, data)
    }

    /// Builds a chain from site-major coordinates; every spin must already
    /// have unit norm.
    pub fn from_flat(dim: usize, bc: BoundaryCondition, data: Vec<f64>) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(invalid("n", format!("spin dimension {dim} not in 2..={MAX_DIM}")));
        }
        if data.len() % dim != 0 || data.len() / dim < 2 {
            return Err(invalid("l", "chain needs at least two spins"));
        }
        for (i, s) in data.chunks_exact(dim).enumerate() {
            let n2 = dot(s, s);
            if !((n2 - 1.0).abs() <= 2.0 * UNIT_TOL) {
                return Err(invalid("spins", format!("spin {i} has norm^2 {n2}")));
            }
        }
        Ok(SpinChain { dim, bc, data })
    }

    /// Every spin equal to e1.
    pub fn aligned(dim: usize, len: usize, bc: BoundaryCondition) -> Self {
        Self::uniform(&UnitVector::e1(dim), len, bc)
    }

    pub fn uniform(s: &UnitVector, len: usize, bc: BoundaryCondition) -> Self {
        let mut data = Vec::with_capacity(len * s.dim());
        for _ in 0..len {
            data.extend_from_slice(s.as_slice());
        }
        SpinChain {
            dim: s.dim(),
            bc,
            data,
        }
    }

    /// N = 2 chain from angles.
    pub fn from_angles(angles: &[f64], bc: BoundaryCondition) -> Self {
        let mut data = Vec::with_capacity(2 * angles.len());
        for a in angles {
            let (s, c) = a.sin_cos();
            data.push(c);
            data.push(s);
        }
        SpinChain { dim: 2, bc, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn with_bc(mut self, bc: BoundaryCondition) -> Self {
        self.bc = bc;
        self
    }

    pub fn spin(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn unit(&self, i: usize) -> UnitVector {
        UnitVector::from_unit_slice(self.spin(i))
    }

    pub fn units(&self) -> Vec<UnitVector> {
        (0..self.len()).map(|i| self.unit(i)).collect()
    }

    pub fn set_spin(&mut self, i: usize, s: &UnitVector) {
        assert_eq!(s.dim(), self.dim);
        let d = self.dim;
        self.data[i * d..(i + 1) * d].copy_from_slice(s.as_slice());
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Raw mutable access; callers keep every spin at unit norm.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn left(&self, i: usize) -> Option<usize> {
        match (i, self.bc) {
            (0, BoundaryCondition::Free) => None,
            (0, BoundaryCondition::Periodic) => Some(self.len() - 1),
            _ => Some(i - 1),
        }
    }

    pub fn right(&self, i: usize) -> Option<usize> {
        let l = self.len();
        match self.bc {
            BoundaryCondition::Free if i + 1 == l => None,
            _ => Some((i + 1) % l),
        }
    }

    /// Number of bonds: L − 1 (free) or L (periodic).
    pub fn bonds(&self) -> usize {
        match self.bc {
            BoundaryCondition::Free => self.len() - 1,
            BoundaryCondition::Periodic => self.len(),
        }
    }

    /// S_k · S_{k+1} for bond k (indices cyclic).
    pub fn bond_dot(&self, k: usize) -> f64 {
        dot(self.spin(k), self.spin((k + 1) % self.len()))
    }

    /// Angle of spin i for N = 2.
    pub fn angle(&self, i: usize) -> f64 {
        let s = self.spin(i);
        s[1].atan2(s[0])
    }

    /// Sum of spins.
    pub fn total_spin(&self) -> VecN {
        let mut m = VecN::zeros(self.dim);
        for s in self.data.chunks_exact(self.dim) {
            crate::geometry::axpy(1.0, s, m.as_mut_slice());
        }
        m
    }

    pub fn max_norm_error(&self) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .map(|s| (dot(s, s).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Pairwise (cascade) summation of f(0) + … + f(n−1).
pub fn pairwise_sum(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= 8 {
            (lo..hi).map(f).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, f)
}

/// H = −Σ S_i·S_{i+1} over the bonds of the boundary condition.
pub fn energy(chain: &SpinChain) -> f64 {
    -pairwise_sum(chain.bonds(), &|k| chain.bond_dot(k))
}

/// Writes −D_iH = h − (h·S_i)S_i into `out`, h the sum of present neighbours.
#[inline]
pub fn neg_grad_into(chain: &SpinChain, i: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    if let Some(j) = chain.left(i) {
        crate::geometry::axpy(1.0, chain.spin(j), out);
    }
    if let Some(j) = chain.right(i) {
        crate::geometry::axpy(1.0, chain.spin(j), out);
    }
    let s = chain.spin(i);
    let c = dot(out, s);
    crate::geometry::axpy(-c, s, out);
}

/// Sphere gradient D_iH at site i (0-based).
pub fn grad_energy(chain: &SpinChain, i: usize) -> TangentVector {
    let mut g = VecN::zeros(chain.dim());
    neg_grad_into(chain, i, g.as_mut_slice());
    // project again so the tangency invariant holds to rounding
    project_tangent(&chain.unit(i), &g.scale(-1.0))
}

/// Σ_i ‖D_iH‖².
pub fn grad_norm_sq(chain: &SpinChain) -> f64 {
    let mut g = [0.0; MAX_DIM];
    let d = chain.dim();
    (0..chain.len())
        .map(|i| {
            neg_grad_into(chain, i, &mut g[..d]);
            dot(&g[..d], &g[..d])
        })
        .sum()
}

pub fn in_arctic(chain: &SpinChain) -> bool {
    in_arctic_with(chain, ARCTIC_THRESHOLD)
}

/// True iff S_i·e1 > threshold for every site.
pub fn in_arctic_with(chain: &SpinChain, threshold: f64) -> bool {
    (0..chain.len()).all(|i| chain.spin(i)[0] > threshold)
}

/// The factor e^β in ‖dμ^f/dμ^per‖_∞ ≤ (Z^per/Z^f) e^β.
pub fn relative_density_bound(beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(invalid("beta", "must be non-negative"));
    }
    Ok(beta.exp())
}

/// Inverse temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsParams {
    beta: f64,
}

impl GibbsParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid("beta", "must be positive and finite"));
        }
        Ok(GibbsParams { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Eigenvalues (ascending) of the Hessian of H in the chart
/// S_i = (sqrt(1 − |y_i|²), y_i) around e1, evaluated at the chain.
/// Requires S_i·e1 > 0 for all i.
pub fn chart_hessian_spectrum(chain: &SpinChain) -> Result<Vec<f64>> {
    let n = chain.dim();
    let m = n - 1;
    let l = chain.len();
    for i in 0..l {
        if chain.spin(i)[0] <= 0.0 {
            return Err(Error::HemisphereViolated { site: i });
        }
    }
    let mut h = DMatrix::<f64>::zeros(l * m, l * m);
    // a_i = S_i·e1, y_i = remaining coordinates
    let a = |i: usize| chain.spin(i)[0];
    let y = |i: usize| &chain.spin(i)[1..];
    for k in 0..chain.bonds() {
        let (i, j) = (k, (k + 1) % l);
        // bond term −(a_i a_j + y_i·y_j)
        for (p, q) in [(i, j), (j, i)] {
            let ap = a(p);
            let yp = y(p);
            for r in 0..m {
                for c in 0..m {
                    let d2 = -(if r == c { 1.0 } else { 0.0 }) / ap - yp[r] * yp[c] / ap.powi(3);
                    h[(p * m + r, p * m + c)] -= a(q) * d2;
                }
            }
        }
        let (ai, aj) = (a(i), a(j));
        let (yi, yj) = (y(i), y(j));
        for r in 0..m {
            for c in 0..m {
                let cross = (yi[r] / ai) * (yj[c] / aj) + if r == c { 1.0 } else { 0.0 };
                h[(i * m + r, j * m + c)] -= cross;
                h[(j * m + c, i * m + r)] -= cross;
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn aligned_and_alternating_energies() {
        let c = SpinChain::aligned(3, 8, BoundaryCondition::Periodic);
        assert_eq!(energy(&c), -8.0);
        let angles: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 0.0 } else { PI }).collect();
        let c = SpinChain::from_angles(&angles, BoundaryCondition::Periodic);
        assert!((energy(&c) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn equispaced_circle_energy() {
        let l = 7;
        let angles: Vec<f64> = (1..=l).map(|j| 2.0 * PI * j as f64 / l as f64).collect();
        let c = SpinChain::from_angles(&angles, BoundaryCondition::Periodic);
        let want = -(l as f64) * (2.0 * PI / l as f64).cos();
        assert!((energy(&c) - want).abs() < 1e-12);
    }

    #[test]
    fn neighbours_respect_boundary() {
        let c = SpinChain::aligned(2, 4, BoundaryCondition::Free);
        assert_eq!(c.left(0), None);
        assert_eq!(c.right(3), None);
        assert_eq!(c.bonds(), 3);
        let c = c.with_bc(BoundaryCondition::Periodic);
        assert_eq!(c.left(0), Some(3));
        assert_eq!(c.right(3), Some(0));
        assert_eq!(c.bonds(), 4);
    }

    #[test]
    fn arctic_membership() {
        let c = SpinChain::aligned(3, 5, BoundaryCondition::Periodic);
        assert!(in_arctic(&c));
        let mut c2 = c.clone();
        c2.set_spin(2, &UnitVector::basis(3, 1));
        assert!(!in_arctic(&c2));
        let s = UnitVector::new(VecN::from_slice(&[0.995, (1.0f64 - 0.995 * 0.995).sqrt(), 0.0]))
            .unwrap();
        let c3 = SpinChain::uniform(&s, 5, BoundaryCondition::Periodic);
        assert!(in_arctic(&c3));
    }

    #[test]
    fn relative_density_values() {
        assert_eq!(relative_density_bound(0.0).unwrap(), 1.0);
        assert_eq!(relative_density_bound(1.0).unwrap(), std::f64::consts::E);
        assert!((relative_density_bound(2.0).unwrap() - 2.0f64.exp()).abs() < 1e-15);
        assert!(relative_density_bound(-1.0).is_err());
    }

    #[test]
    fn hessian_at_aligned_periodic_is_laplacian() {
        // at the ground state the chart Hessian is the cycle Laplacian in each component
        let c = SpinChain::aligned(2, 4, BoundaryCondition::Periodic);
        let ev = chart_hessian_spectrum(&c).unwrap();
        let want = [0.0, 2.0, 2.0, 4.0];
        for (a, b) in ev.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }
}
