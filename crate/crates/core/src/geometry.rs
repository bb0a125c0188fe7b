//! Primitives on the unit sphere S^{N-1}: small fixed-capacity vectors,
//! tangent projection, retraction, geodesic distance and rotations.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spin dimension.
pub const MAX_DIM: usize = 8;

const NORM_FLOOR: f64 = 1e-14;
const AXIS_TOL: f64 = 1e-10;

/// A vector in R^N with N ≤ [`MAX_DIM`], stored inline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VecN {
    data: [f64; MAX_DIM],
    dim: usize,
}

impl VecN {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        VecN {
            data: [0.0; MAX_DIM],
            dim,
        }
    }

    /// The k-th canonical basis vector (0-based).
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[k] = 1.0;
        v
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut v = Self::zeros(xs.len());
        v.data[..xs.len()].copy_from_slice(xs);
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.dim]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data[..self.dim]
    }

    pub fn dot(&self, other: &VecN) -> f64 {
        dot(self.as_slice(), other.as_slice())
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        self
    }

    pub fn add(mut self, other: &VecN) -> Self {
        axpy(1.0, other.as_slice(), self.as_mut_slice());
        self
    }

    pub fn sub(mut self, other: &VecN) -> Self {
        axpy(-1.0, other.as_slice(), self.as_mut_slice());
        self
    }

    /// self + c * other
    pub fn add_scaled(mut self, c: f64, other: &VecN) -> Self {
        axpy(c, other.as_slice(), self.as_mut_slice());
        self
    }
}

impl Index<usize> for VecN {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl IndexMut<usize> for VecN {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.as_mut_slice()[i]
    }
}

impl Serialize for VecN {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for VecN {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom("vector dimension out of range"));
        }
        Ok(VecN::from_slice(&v))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += c * xi);
}

/// A point of S^{N-1}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(VecN);

impl UnitVector {
    /// Normalizes `v`; see [`retract`].
    pub fn new(v: VecN) -> Result<Self> {
        retract(&v)
    }

    pub fn e1(dim: usize) -> Self {
        UnitVector(VecN::basis(dim, 0))
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        UnitVector(VecN::basis(dim, k))
    }

    /// Wraps a vector already known to have unit norm.
    pub fn from_unit_slice(xs: &[f64]) -> Self {
        debug_assert!((dot(xs, xs) - 1.0).abs() < 1e-9);
        UnitVector(VecN::from_slice(xs))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn vec(&self) -> &VecN {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn neg(&self) -> Self {
        UnitVector(self.0.scale(-1.0))
    }
}

impl Index<usize> for UnitVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A vector in the tangent space of the sphere at `base`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector {
    pub base: UnitVector,
    pub direction: VecN,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.direction.norm()
    }
}

/// Orthogonal projection of `x` onto the tangent space at `p`.
pub fn project_tangent(p: &UnitVector, x: &VecN) -> TangentVector {
    let c = p.vec().dot(x);
    TangentVector {
        base: *p,
        direction: x.add_scaled(-c, p.vec()),
    }
}

/// Normalization retraction x ↦ x/‖x‖.
pub fn retract(x: &VecN) -> Result<UnitVector> {
    let n = x.norm();
    if !(n > NORM_FLOOR) {
        return Err(Error::NearZeroVector { norm: n });
    }
    Ok(UnitVector(x.scale(1.0 / n)))
}

/// Great-circle distance, with the dot product clamped to [-1, 1].
pub fn geodesic_distance(p: &UnitVector, q: &UnitVector) -> f64 {
    p.dot(q).clamp(-1.0, 1.0).acos()
}

/// Rotation by `angle` in the oriented plane spanned by the orthonormal pair
/// (u, w): u ↦ cos(angle) u + sin(angle) w, identity on the complement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    u: UnitVector,
    w: UnitVector,
    angle: f64,
}

impl Rotation {
    /// R_{v,θ}: rotation in the plane (e1, v) with R e1 = cos θ e1 + sin θ v.
    pub fn about_e1(v: &UnitVector, theta: f64) -> Result<Self> {
        if v.dim() < 2 || v[0].abs() > AXIS_TOL || (v.vec().norm() - 1.0).abs() > AXIS_TOL {
            return Err(Error::InvalidAxis);
        }
        Ok(Rotation {
            u: UnitVector::e1(v.dim()),
            w: *v,
            angle: theta,
        })
    }

    /// General plane rotation; `u` and `w` must be orthonormal.
    pub fn in_plane(u: &UnitVector, w: &UnitVector, angle: f64) -> Result<Self> {
        if u.dim() != w.dim() {
            return Err(Error::DimensionMismatch {
                expected: u.dim(),
                got: w.dim(),
            });
        }
        if u.dot(w).abs() > AXIS_TOL {
            return Err(Error::InvalidAxis);
        }
        Ok(Rotation {
            u: *u,
            w: *w,
            angle,
        })
    }

    /// The rotation carrying `from` onto `to` along the shortest great circle.
    /// Fails for antipodes.
    pub fn carrying(from: &UnitVector, to: &UnitVector) -> Result<Self> {
        let c = from.dot(to).clamp(-1.0, 1.0);
        let perp = to.vec().add_scaled(-c, from.vec());
        if perp.norm() < 1e-12 {
            if c > 0.0 {
                // identity; any orthonormal completion works
                let w = any_orthogonal(from);
                return Rotation::in_plane(from, &w, 0.0);
            }
            return Err(Error::AntipodalStart);
        }
        let w = retract(&perp)?;
        Rotation::in_plane(from, &w, c.acos())
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn with_angle(&self, angle: f64) -> Self {
        Rotation { angle, ..*self }
    }

    pub fn inverse(&self) -> Self {
        self.with_angle(-self.angle)
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    pub fn apply_slice(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = self.angle.sin_cos();
        let xu = dot(x, self.u.as_slice());
        let xw = dot(x, self.w.as_slice());
        let a = (c - 1.0) * xu - s * xw;
        let b = s * xu + (c - 1.0) * xw;
        for k in 0..x.len() {
            out[k] = x[k] + a * self.u[k] + b * self.w[k];
        }
    }
}

/// x + ((cosθ−1)x·u − sinθ x·w)u + (sinθ x·u + (cosθ−1)x·w)w
pub fn rotate(r: &Rotation, x: &VecN) -> VecN {
    let mut out = VecN::zeros(x.dim());
    r.apply_slice(x.as_slice(), out.as_mut_slice());
    out
}

/// First canonical basis vector with |dot| < 0.9 against `p`, Gram–Schmidt
/// corrected. Deterministic.
pub fn any_orthogonal(p: &UnitVector) -> UnitVector {
    let n = p.dim();
    let k = (0..n).find(|&k| p[k].abs() < 0.9).unwrap_or(0);
    let e = VecN::basis(n, k);
    let c = e.dot(p.vec());
    retract(&e.add_scaled(-c, p.vec())).expect("basis vector not parallel to p")
}

/// Cross product in R^3.
pub fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_of_base_point_is_zero() {
        let p = UnitVector::e1(3);
        let t = project_tangent(&p, p.vec());
        assert_eq!(t.norm(), 0.0);
        let t = project_tangent(&p, &VecN::basis(3, 1));
        assert_eq!(t.direction.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn retract_scales_and_rejects_zero() {
        let u = retract(&VecN::from_slice(&[2.0, 0.0, 0.0])).unwrap();
        assert_eq!(u.as_slice(), &[1.0, 0.0, 0.0]);
        let u = retract(&VecN::from_slice(&[1.0, 1.0, 0.0])).unwrap();
        assert!((u.vec().norm() - 1.0).abs() < 1e-12);
        assert!(matches!(
            retract(&VecN::zeros(3)),
            Err(Error::NearZeroVector { .. })
        ));
    }

    #[test]
    fn rotation_of_e1() {
        let v = UnitVector::basis(4, 2);
        let th = 0.7;
        let r = Rotation::about_e1(&v, th).unwrap();
        let y = rotate(&r, UnitVector::e1(4).vec());
        let want = [th.cos(), 0.0, th.sin(), 0.0];
        for k in 0..4 {
            assert!((y[k] - want[k]).abs() < 1e-15);
        }
        let r0 = Rotation::about_e1(&v, 0.0).unwrap();
        let x = VecN::from_slice(&[0.3, -0.2, 0.5, 0.1]);
        assert_eq!(rotate(&r0, &x), x);
    }

    #[test]
    fn axis_must_be_orthogonal_to_e1() {
        let bad = retract(&VecN::from_slice(&[0.1, 1.0, 0.0])).unwrap();
        assert_eq!(Rotation::about_e1(&bad, 0.3), Err(Error::InvalidAxis));
    }

    #[test]
    fn geodesic_special_cases() {
        let e1 = UnitVector::e1(3);
        let e2 = UnitVector::basis(3, 1);
        assert_eq!(geodesic_distance(&e1, &e1), 0.0);
        assert!((geodesic_distance(&e1, &e1.neg()) - std::f64::consts::PI).abs() < 1e-15);
        assert!((geodesic_distance(&e1, &e2) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn carrying_rotation_maps_from_to_to() {
        let a = retract(&VecN::from_slice(&[0.2, 0.5, -0.8])).unwrap();
        let b = retract(&VecN::from_slice(&[-0.6, 0.1, 0.3])).unwrap();
        let r = Rotation::carrying(&a, &b).unwrap();
        let y = rotate(&r, a.vec());
        for k in 0..3 {
            assert!((y[k] - b[k]).abs() < 1e-12);
        }
        assert_eq!(
            Rotation::carrying(&a, &a.neg()),
            Err(Error::AntipodalStart)
        );
    }
}
