//! Geometry of the factor search space.
//!
//! Each mode's factor U_k is an n_k × r_k matrix constrained to unit
//! Frobenius norm. This is the factorized face of the spectrahedron
//! {Θ ⪰ 0, tr Θ = 1}: Θ = U Uᵀ is automatically positive semidefinite
//! and tr(U Uᵀ) = ‖U‖_F² = 1. Viewing the constraint set as the round
//! sphere in R^{n·r} gives closed-form geometry:
//!
//!   tangent space at U:   {ξ : ⟨U, ξ⟩_F = 0}
//!   projection:           ξ = V − ⟨U, V⟩ U
//!   retraction:           R_U(tξ) = (U + tξ) / ‖U + tξ‖_F
//!   vector transport:     project onto the destination tangent space
//!
//! The full search space is the product over modes, and every operation
//! acts componentwise.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One factor on the unit Frobenius sphere in R^{n×r}.
#[derive(Clone, Debug)]
pub struct SpectrahedronPoint {
    u: Matrix,
}

impl SpectrahedronPoint {
    /// Wraps a factor matrix, requiring n ≥ r ≥ 1 and a nonzero value,
    /// and normalizes it to unit Frobenius norm.
    pub fn new(u: Matrix) -> Result<Self> {
        if u.cols() < 1 || u.rows() < u.cols() {
            return Err(Error::invalid(format!(
                "factor must be n x r with n >= r >= 1, got {}x{}",
                u.rows(),
                u.cols()
            )));
        }
        if !u.is_finite() {
            return Err(Error::NonFinite("factor construction".to_string()));
        }
        let norm = u.frob_norm();
        if norm == 0.0 {
            return Err(Error::invalid("factor must be nonzero"));
        }
        let mut u = u;
        u.scale(1.0 / norm);
        Ok(SpectrahedronPoint { u })
    }

    /// Random point: iid standard normal entries, normalized. The seed
    /// fully determines the result.
    pub fn random(n: usize, r: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(n, r, &mut rng)
    }

    pub(crate) fn random_with(n: usize, r: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut values = Vec::with_capacity(n * r);
        for _ in 0..n * r {
            values.push(rng.sample::<f64, _>(StandardNormal));
        }
        SpectrahedronPoint::new(Matrix::from_values(n, r, values)?)
    }

    #[inline]
    pub fn factor(&self) -> &Matrix {
        &self.u
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.u.cols()
    }
}

/// A tangent direction at some point; only meaningful together with the
/// point it was projected at.
#[derive(Clone, Debug)]
pub struct TangentVector {
    xi: Matrix,
}

impl TangentVector {
    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.xi
    }

    pub fn norm(&self) -> f64 {
        self.xi.frob_norm()
    }

    pub fn zero(n: usize, r: usize) -> Self {
        TangentVector { xi: Matrix::zeros(n, r) }
    }
}

/// Orthogonal projection of an ambient matrix onto the tangent space at
/// `point`: ξ = V − ⟨U, V⟩ U.
pub fn project_to_tangent(point: &SpectrahedronPoint, ambient: &Matrix) -> Result<TangentVector> {
    let radial = point.u.dot(ambient)?;
    let mut xi = ambient.clone();
    xi.add_scaled(&point.u, -radial);
    Ok(TangentVector { xi })
}

/// Metric retraction: move along the tangent and renormalize. A zero step
/// returns the point unchanged, exactly.
pub fn retract(point: &SpectrahedronPoint, xi: &TangentVector, step: f64) -> Result<SpectrahedronPoint> {
    if !step.is_finite() {
        return Err(Error::NonFinite("retraction step".to_string()));
    }
    if step == 0.0 {
        return Ok(point.clone());
    }
    let mut moved = point.u.clone();
    moved.add_scaled(&xi.xi, step);
    SpectrahedronPoint::new(moved)
}

/// Vector transport from `from` to `to`: project the tangent vector onto
/// the destination tangent space.
pub fn transport(
    _from: &SpectrahedronPoint,
    to: &SpectrahedronPoint,
    xi: &TangentVector,
) -> Result<TangentVector> {
    project_to_tangent(to, &xi.xi)
}

// ─── product manifold ───────────────────────────────────────────────────

/// One factor per mode; the outer solver's iterate.
#[derive(Clone, Debug)]
pub struct ProductPoint {
    factors: Vec<SpectrahedronPoint>,
}

impl ProductPoint {
    pub fn new(factors: Vec<SpectrahedronPoint>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::invalid("product point needs at least two factors"));
        }
        Ok(ProductPoint { factors })
    }

    /// Random point with factor sizes (dims[k], ranks[k]), drawn from a
    /// single seeded stream so the whole tuple is reproducible.
    pub fn random(dims: &[usize], ranks: &[usize], seed: u64) -> Result<Self> {
        if dims.len() != ranks.len() {
            return Err(Error::mismatch(format!(
                "{} dims against {} ranks",
                dims.len(),
                ranks.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::with_capacity(dims.len());
        for (&n, &r) in dims.iter().zip(ranks) {
            factors.push(SpectrahedronPoint::random_with(n, r, &mut rng)?);
        }
        ProductPoint::new(factors)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    #[inline]
    pub fn factor(&self, mode: usize) -> &SpectrahedronPoint {
        &self.factors[mode]
    }

    #[inline]
    pub fn factors(&self) -> &[SpectrahedronPoint] {
        &self.factors
    }

    /// Componentwise projection of ambient matrices onto the tangent
    /// space at this point.
    pub fn project(&self, ambient: &[Matrix]) -> Result<ProductTangent> {
        if ambient.len() != self.factors.len() {
            return Err(Error::mismatch(format!(
                "{} ambient matrices for {} factors",
                ambient.len(),
                self.factors.len()
            )));
        }
        let parts = self
            .factors
            .iter()
            .zip(ambient)
            .map(|(p, v)| project_to_tangent(p, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductTangent { parts })
    }

    /// Componentwise retraction.
    pub fn retract(&self, xi: &ProductTangent, step: f64) -> Result<ProductPoint> {
        if xi.parts.len() != self.factors.len() {
            return Err(Error::mismatch("tangent does not match product point"));
        }
        let factors = self
            .factors
            .iter()
            .zip(&xi.parts)
            .map(|(p, x)| retract(p, x, step))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductPoint { factors })
    }

    /// Componentwise transport of a tangent vector from `self` to `to`.
    pub fn transport_to(&self, to: &ProductPoint, xi: &ProductTangent) -> Result<ProductTangent> {
        if to.factors.len() != self.factors.len() || xi.parts.len() != self.factors.len() {
            return Err(Error::mismatch("transport arguments do not match"));
        }
        let parts = self
            .factors
            .iter()
            .zip(&to.factors)
            .zip(&xi.parts)
            .map(|((f, t), x)| transport(f, t, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductTangent { parts })
    }
}

/// Tangent vector on the product manifold, one part per mode.
#[derive(Clone, Debug)]
pub struct ProductTangent {
    parts: Vec<TangentVector>,
}

impl ProductTangent {
    pub fn zero_like(point: &ProductPoint) -> Self {
        let parts = point
            .factors
            .iter()
            .map(|f| TangentVector::zero(f.rows(), f.rank()))
            .collect();
        ProductTangent { parts }
    }

    #[inline]
    pub fn part(&self, mode: usize) -> &TangentVector {
        &self.parts[mode]
    }

    #[inline]
    pub fn parts(&self) -> &[TangentVector] {
        &self.parts
    }

    /// Product metric: √(Σ_k ‖ξ_k‖_F²).
    pub fn norm(&self) -> f64 {
        self.parts.iter().map(|p| p.xi.values().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// Product inner product Σ_k ⟨ξ_k, η_k⟩_F.
    pub fn inner(&self, other: &ProductTangent) -> Result<f64> {
        if self.parts.len() != other.parts.len() {
            return Err(Error::mismatch("tangent vectors from different products"));
        }
        let mut total = 0.0;
        for (a, b) in self.parts.iter().zip(&other.parts) {
            total += a.xi.dot(&b.xi)?;
        }
        Ok(total)
    }

    pub fn scaled(&self, factor: f64) -> ProductTangent {
        let parts = self
            .parts
            .iter()
            .map(|p| TangentVector { xi: p.xi.scaled(factor) })
            .collect();
        ProductTangent { parts }
    }

    /// self += factor · other, componentwise.
    pub fn add_scaled(&mut self, other: &ProductTangent, factor: f64) -> Result<()> {
        if self.parts.len() != other.parts.len() {
            return Err(Error::mismatch("tangent vectors from different products"));
        }
        for (a, b) in self.parts.iter_mut().zip(&other.parts) {
            if a.xi.rows() != b.xi.rows() || a.xi.cols() != b.xi.cols() {
                return Err(Error::mismatch("tangent component sizes differ"));
            }
            a.xi.add_scaled(&b.xi, factor);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_3x2(seed: u64) -> SpectrahedronPoint {
        SpectrahedronPoint::random(3, 2, seed).unwrap()
    }

    #[test]
    fn construction_normalizes_and_validates() {
        let m = Matrix::from_values(2, 1, vec![3.0, 4.0]).unwrap();
        let p = SpectrahedronPoint::new(m).unwrap();
        assert!((p.factor().frob_norm() - 1.0).abs() <= 1e-12);
        assert!((p.factor().get(0, 0) - 0.6).abs() <= 1e-12);

        assert!(SpectrahedronPoint::new(Matrix::zeros(2, 2)).is_err());
        assert!(SpectrahedronPoint::new(Matrix::from_values(1, 2, vec![1., 0.]).unwrap()).is_err());
    }

    #[test]
    fn random_points_are_unit_norm_and_seed_deterministic() {
        for seed in 0..20 {
            let p = point_3x2(seed);
            assert!((p.factor().frob_norm() - 1.0).abs() <= 1e-12);
        }
        let a = point_3x2(7);
        let b = point_3x2(7);
        assert_eq!(a.factor().values(), b.factor().values());
        let c = point_3x2(8);
        assert_ne!(a.factor().values(), c.factor().values());
    }

    #[test]
    fn projection_lands_in_the_tangent_space_and_is_idempotent() {
        let p = point_3x2(1);
        let v = Matrix::from_values(3, 2, vec![1., -2., 0.5, 3., -1., 0.25]).unwrap();
        let xi = project_to_tangent(&p, &v).unwrap();
        assert!(p.factor().dot(xi.matrix()).unwrap().abs() <= 1e-12);
        let again = project_to_tangent(&p, xi.matrix()).unwrap();
        for (a, b) in again.matrix().values().iter().zip(xi.matrix().values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn projection_is_self_adjoint() {
        let p = point_3x2(2);
        let v = Matrix::from_values(3, 2, vec![0.3, 1.2, -0.7, 0.1, 2.0, -1.5]).unwrap();
        let w = Matrix::from_values(3, 2, vec![-1.0, 0.4, 0.9, -0.2, 0.6, 1.1]).unwrap();
        let pv = project_to_tangent(&p, &v).unwrap();
        let pw = project_to_tangent(&p, &w).unwrap();
        let lhs = pv.matrix().dot(&w).unwrap();
        let rhs = v.dot(pw.matrix()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn retraction_stays_on_the_sphere_and_zero_step_is_identity() {
        let p = point_3x2(3);
        let v = Matrix::from_values(3, 2, vec![1., 1., -1., 0., 2., -2.]).unwrap();
        let xi = project_to_tangent(&p, &v).unwrap();
        for &t in &[1e-3, 0.1, 1.0, 10.0, -0.5] {
            let q = retract(&p, &xi, t).unwrap();
            assert!((q.factor().frob_norm() - 1.0).abs() <= 1e-12);
        }
        let same = retract(&p, &xi, 0.0).unwrap();
        assert_eq!(same.factor().values(), p.factor().values());
    }

    #[test]
    fn retraction_agrees_with_its_first_order_expansion() {
        // ‖R_U(tξ) − (U + tξ)‖ = O(t²) for unit ξ.
        let p = point_3x2(4);
        let raw = Matrix::from_values(3, 2, vec![0.2, -0.4, 1.0, 0.3, -0.8, 0.5]).unwrap();
        let xi = project_to_tangent(&p, &raw).unwrap();
        let xi_unit = TangentVector { xi: xi.matrix().scaled(1.0 / xi.norm()) };
        for &t in &[1e-2, 1e-3, 1e-4] {
            let q = retract(&p, &xi_unit, t).unwrap();
            let mut lin = p.factor().clone();
            lin.add_scaled(xi_unit.matrix(), t);
            let diff = q.factor().sub(&lin).unwrap().frob_norm();
            assert!(diff <= 2.0 * t * t, "retraction deviates too fast: t={t}, diff={diff}");
        }
    }

    #[test]
    fn transport_lands_tangent_at_the_destination() {
        let p = point_3x2(5);
        let q = point_3x2(6);
        let v = Matrix::from_values(3, 2, vec![1., 0., 0., 1., 1., -1.]).unwrap();
        let xi = project_to_tangent(&p, &v).unwrap();
        let moved = transport(&p, &q, &xi).unwrap();
        assert!(q.factor().dot(moved.matrix()).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn product_operations_act_componentwise() {
        let point = ProductPoint::random(&[4, 3, 2], &[2, 2, 1], 11).unwrap();
        assert_eq!(point.order(), 3);
        let ambient: Vec<Matrix> = point
            .factors()
            .iter()
            .map(|f| {
                let (n, r) = (f.rows(), f.rank());
                Matrix::from_values(n, r, (0..n * r).map(|i| (i as f64) * 0.1 - 0.3).collect())
                    .unwrap()
            })
            .collect();
        let xi = point.project(&ambient).unwrap();
        for (k, f) in point.factors().iter().enumerate() {
            let solo = project_to_tangent(f, &ambient[k]).unwrap();
            assert_eq!(xi.part(k).matrix().values(), solo.matrix().values());
        }
        let stepped = point.retract(&xi, 0.25).unwrap();
        for (k, f) in point.factors().iter().enumerate() {
            let solo = retract(f, xi.part(k), 0.25).unwrap();
            assert_eq!(stepped.factor(k).factor().values(), solo.factor().values());
            assert!((stepped.factor(k).factor().frob_norm() - 1.0).abs() <= 1e-12);
        }
        let carried = point.transport_to(&stepped, &xi).unwrap();
        for k in 0..3 {
            assert!(
                stepped.factor(k).factor().dot(carried.part(k).matrix()).unwrap().abs() <= 1e-12
            );
        }
    }

    #[test]
    fn product_tangent_algebra() {
        let point = ProductPoint::random(&[3, 3], &[1, 2], 9).unwrap();
        let ambient: Vec<Matrix> = point
            .factors()
            .iter()
            .map(|f| Matrix::from_values(f.rows(), f.rank(), vec![1.0; f.rows() * f.rank()]).unwrap())
            .collect();
        let xi = point.project(&ambient).unwrap();
        let eta = xi.scaled(-2.0);
        assert!((eta.norm() - 2.0 * xi.norm()).abs() <= 1e-12);
        assert!((xi.inner(&eta).unwrap() + 2.0 * xi.norm() * xi.norm()).abs() <= 1e-12);
        let mut combo = xi.clone();
        combo.add_scaled(&eta, 0.5).unwrap();
        assert!(combo.norm() <= 1e-12);
    }

    #[test]
    fn seeded_product_points_reproduce() {
        let a = ProductPoint::random(&[5, 4, 3], &[2, 2, 2], 42).unwrap();
        let b = ProductPoint::random(&[5, 4, 3], &[2, 2, 2], 42).unwrap();
        for k in 0..3 {
            assert_eq!(a.factor(k).factor().values(), b.factor(k).factor().values());
        }
    }
}
