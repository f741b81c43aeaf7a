//! Grassmann manifold geometry.
//!
//! A point of Gr(p,n) is a p-dimensional linear subspace of ℝⁿ, represented
//! here by an n×p matrix `X` with orthonormal columns (`XᵀX = I_p`). Two
//! representatives describe the same point when they differ by a right
//! p×p orthogonal factor. The tangent space at `X` is
//!
//! ```text
//! T_X Gr(p,n) = { A ∈ ℝⁿˣᵖ : XᵀA = 0 },
//! ```
//!
//! the canonical metric is the trace inner product `⟨A,B⟩ = tr(AᵀB)`, the
//! orthogonal projection onto the tangent space is `(I − XXᵀ)G`, and the
//! geodesic through `X` with velocity `A = UΣWᵀ` (thin SVD) is
//!
//! ```text
//! γ(t) = X W cos(tΣ) Wᵀ + U sin(tΣ) Wᵀ.
//! ```
//!
//! Ambient matrices (e.g. unprojected gradients) are plain `DMatrix<f64>`
//! values of shape n×p; everything constrained carries a newtype. All values
//! are immutable after construction and all operations are pure, so they can
//! be called freely from multiple threads.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};

/// Orthonormality tolerance for values this crate produces itself.
pub const ORTHO_TOL: f64 = 1e-10;

/// Tangency tolerance for values that cross the public API boundary.
pub const TANGENCY_INPUT_TOL: f64 = 1e-8;

/// A point of Gr(p,n): an n×p matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannPoint {
    basis: DMatrix<f64>,
}

impl GrassmannPoint {
    /// Wraps an n×p basis, rejecting it unless `basisᵀ·basis = I_p` holds to
    /// [`ORTHO_TOL`] in Frobenius norm and `1 ≤ p < n`.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let (n, p) = (basis.nrows(), basis.ncols());
        if p < 1 || p >= n {
            return Err(dim_err("GrassmannPoint", "1 <= p < n", format!("n={n}, p={p}")));
        }
        let point = Self { basis };
        let res = point.orthonormality_residual();
        if !(res <= ORTHO_TOL) {
            return Err(Error::Contract(format!(
                "basis is not orthonormal: ||X'X - I||_F = {res:.3e} > {ORTHO_TOL:.0e}"
            )));
        }
        Ok(point)
    }

    /// Wraps a matrix already known to be orthonormal (QR / geodesic output).
    pub(crate) fn from_orthonormal(basis: DMatrix<f64>) -> Self {
        debug_assert!({
            let p = Self { basis: basis.clone() };
            p.orthonormality_residual() <= ORTHO_TOL
        });
        Self { basis }
    }

    /// Ambient dimension n.
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// Subspace dimension p.
    pub fn p(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn into_basis(self) -> DMatrix<f64> {
        self.basis
    }

    /// `||XᵀX − I_p||_F`.
    pub fn orthonormality_residual(&self) -> f64 {
        let p = self.p();
        (self.basis.transpose() * &self.basis - DMatrix::<f64>::identity(p, p)).norm()
    }
}

/// A tangent vector at a [`GrassmannPoint`]: an n×p matrix `A` with `XᵀA = 0`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    mat: DMatrix<f64>,
    base: GrassmannPoint,
}

impl TangentVector {
    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn base(&self) -> &GrassmannPoint {
        &self.base
    }

    /// Frobenius norm, which equals the canonical-metric norm.
    pub fn norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Same direction scaled by `c`; tangency is preserved by linearity.
    pub fn scale(&self, c: f64) -> TangentVector {
        TangentVector {
            mat: &self.mat * c,
            base: self.base.clone(),
        }
    }

    /// Unit-norm version, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<TangentVector> {
        let n = self.norm();
        if n == 0.0 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    /// `||Xᵀ·A||_F`, zero in exact arithmetic.
    pub fn tangency_residual(&self) -> f64 {
        (self.base.basis().transpose() * &self.mat).norm()
    }
}

/// Orthogonal projection of an ambient n×p matrix onto the tangent space at
/// `x`, computed as `g − X(Xᵀg)`. This is the canonical-metric-nearest
/// tangent vector to `g` and is idempotent.
pub fn project_tangent(x: &GrassmannPoint, g: &DMatrix<f64>) -> Result<TangentVector> {
    if g.nrows() != x.n() || g.ncols() != x.p() {
        return Err(dim_err(
            "project_tangent",
            format!("{}x{}", x.n(), x.p()),
            format!("{}x{}", g.nrows(), g.ncols()),
        ));
    }
    let coeff = x.basis().transpose() * g;
    let mat = g - x.basis() * coeff;
    Ok(TangentVector {
        mat,
        base: x.clone(),
    })
}

/// Canonical metric `tr(aᵀb)` of two tangent vectors at `x`.
pub fn inner(x: &GrassmannPoint, a: &TangentVector, b: &TangentVector) -> Result<f64> {
    if a.base() != x || b.base() != x {
        return Err(Error::Contract(
            "inner: tangent vectors do not share the given base point".into(),
        ));
    }
    Ok(a.mat().dot(b.mat()))
}

/// Metric norm `sqrt(⟨a,a⟩)` of a tangent vector at `x`.
pub fn norm(x: &GrassmannPoint, a: &TangentVector) -> Result<f64> {
    Ok(inner(x, a, a)?.sqrt())
}

/// Exponential map: follows the geodesic from `x` with velocity `v` for
/// (signed) time `t` and returns the re-orthonormalized endpoint.
///
/// With the thin SVD `v = UΣWᵀ` the endpoint is
/// `X·W·cos(tΣ)·Wᵀ + U·sin(tΣ)·Wᵀ`; a final QR pass (with a nonnegative-
/// diagonal sign convention) removes the floating-point drift that would
/// otherwise accumulate over long optimization runs. `t = 0` or `v = 0`
/// return `x` unchanged.
pub fn exp_map(x: &GrassmannPoint, v: &TangentVector, t: f64) -> Result<GrassmannPoint> {
    if v.mat().nrows() != x.n() || v.mat().ncols() != x.p() {
        return Err(dim_err(
            "exp_map",
            format!("{}x{}", x.n(), x.p()),
            format!("{}x{}", v.mat().nrows(), v.mat().ncols()),
        ));
    }
    if !t.is_finite() {
        return Err(Error::Contract(format!("exp_map: step {t} is not finite")));
    }
    let res = (x.basis().transpose() * v.mat()).norm();
    if res > TANGENCY_INPUT_TOL {
        return Err(Error::Contract(format!(
            "exp_map: direction is not tangent at x: ||X'v||_F = {res:.3e} > {TANGENCY_INPUT_TOL:.0e}"
        )));
    }

    let svd = v.mat().clone().svd(true, true);
    let sigma = &svd.singular_values;
    if t == 0.0 || sigma.max() == 0.0 {
        return Ok(x.clone());
    }
    let u = svd.u.as_ref().expect("svd with u requested");
    let w = svd.v_t.as_ref().expect("svd with v_t requested").transpose();

    let cos = DMatrix::from_diagonal(&sigma.map(|s| (t * s).cos()));
    let sin = DMatrix::from_diagonal(&sigma.map(|s| (t * s).sin()));
    let endpoint = x.basis() * &w * cos * w.transpose() + u * sin * w.transpose();
    Ok(GrassmannPoint::from_orthonormal(qr_orthonormalize(endpoint)))
}

/// Orthonormal basis drawn by QR-factorizing an n×p standard-normal matrix.
pub fn random_point<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<GrassmannPoint> {
    if p < 1 || p >= n {
        return Err(dim_err("random_point", "1 <= p < n", format!("n={n}, p={p}")));
    }
    let gauss = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    Ok(GrassmannPoint::from_orthonormal(qr_orthonormalize(gauss)))
}

/// Tangent direction obtained by projecting an n×p standard-normal matrix.
pub fn random_tangent<R: Rng + ?Sized>(x: &GrassmannPoint, rng: &mut R) -> TangentVector {
    let gauss = DMatrix::from_fn(x.n(), x.p(), |_, _| rng.sample(StandardNormal));
    project_tangent(x, &gauss).expect("shapes are consistent by construction")
}

/// Geodesic distance via principal angles: `sqrt(Σᵢ θᵢ²)` with
/// `cos θᵢ = σᵢ(xᵀy)`.
///
/// The cosines alone lose half the significant digits for nearly identical
/// subspaces, so the angles are recovered from the matched sine/cosine pair
/// `θᵢ = atan2(σᵢ(y − x(xᵀy)), σᵢ(xᵀy))` (Björck–Golub), accurate at both
/// ends of [0, π/2].
pub fn subspace_distance(x: &GrassmannPoint, y: &GrassmannPoint) -> Result<f64> {
    if x.n() != y.n() || x.p() != y.p() {
        return Err(dim_err(
            "subspace_distance",
            format!("{}x{}", x.n(), x.p()),
            format!("{}x{}", y.n(), y.p()),
        ));
    }
    let p = x.p();
    let overlap = x.basis().transpose() * y.basis();
    let residual = y.basis() - x.basis() * &overlap;
    let cos_sv = overlap.svd(false, false).singular_values;
    let sin_sv = residual.svd(false, false).singular_values;
    // Both lists are sorted descending; the largest cosine pairs with the
    // smallest sine (angles sorted ascending).
    let sum_sq: f64 = (0..p)
        .map(|i| {
            let c = cos_sv[i].clamp(0.0, 1.0);
            let s = sin_sv[p - 1 - i].clamp(0.0, 1.0);
            s.atan2(c).powi(2)
        })
        .sum();
    Ok(sum_sq.sqrt())
}

/// Thin QR with the R-diagonal forced nonnegative so the factor is unique.
pub(crate) fn qr_orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let p = m.ncols();
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
