//! Jeffrey's-divergence objective for channelized quadratic discrimination,
//! plus a quadratic trace objective with a known smoothness bound.
//!
//! Two Gaussian image classes with covariances `K₁, K₂` and mean difference
//! `s` are compressed through a subspace basis `X` (n×p). The channelized
//! statistics are `Cᵢ = XᵀKᵢX` and `Xᵀs`, and the divergence between the
//! compressed classes has the closed form
//!
//! ```text
//! J(X) = −2·dim_offset + tr(C₂⁻¹C₁) + (Xᵀs)ᵀC₂⁻¹(Xᵀs)
//!                      + tr(C₁⁻¹C₂) + (Xᵀs)ᵀC₁⁻¹(Xᵀs).
//! ```
//!
//! With `dim_offset = p` this is the symmetrized Kullback-Leibler divergence
//! of the two channelized Gaussians: nonnegative, zero exactly when the
//! channels coincide, and invariant under any full-rank recombination of the
//! basis columns, which makes the maximization a Grassmann problem.
//!
//! The ambient derivative with respect to the basis entries is
//!
//! ```text
//! ∇J(X) = 2·[ (K₁+ssᵀ)X C₂⁻¹ − K₂X C₂⁻¹(C₁ + XᵀssᵀX)C₂⁻¹
//!           + (K₂+ssᵀ)X C₁⁻¹ − K₁X C₁⁻¹(C₂ + XᵀssᵀX)C₁⁻¹ ].
//! ```
//!
//! A frequently quoted shorthand for this derivative omits the leading factor
//! of two (each trace term depends on `X` through both the channelizing and
//! the channelized factor, and the two contributions are equal); the form
//! above is the one that passes central finite-difference validation, which
//! this crate treats as the ground truth for gradients.
//!
//! All inverses are applied through Cholesky solves; nothing here forms an
//! explicit matrix inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{dim_err, Error, Result};
use crate::grassmann::GrassmannPoint;

/// Symmetry tolerance for covariance inputs.
const SYMMETRY_TOL: f64 = 1e-10;

/// Ambient second-order statistics of the two classes.
#[derive(Debug, Clone)]
pub struct ClassStats {
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    s: DVector<f64>,
}

impl ClassStats {
    /// Validated constructor: both covariances must be symmetric to 1e-10 and
    /// positive definite (checked by Cholesky).
    pub fn new(k1: DMatrix<f64>, k2: DMatrix<f64>, s: DVector<f64>) -> Result<Self> {
        let stats = Self::new_unchecked(k1, k2, s)?;
        for (name, k) in [("K1", &stats.k1), ("K2", &stats.k2)] {
            if k.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(format!(
                    "{name} failed Cholesky factorization"
                )));
            }
        }
        Ok(stats)
    }

    /// Shape/symmetry-validated constructor that skips the positive
    /// definiteness check. Surrogate statistics (perturbed or rank-deficient
    /// sample covariances) are legitimately indefinite in ambient space; only
    /// their channelized compressions must be positive definite.
    pub fn new_unchecked(k1: DMatrix<f64>, k2: DMatrix<f64>, s: DVector<f64>) -> Result<Self> {
        let n = k1.nrows();
        if k1.ncols() != n || k2.nrows() != n || k2.ncols() != n || s.len() != n {
            return Err(dim_err(
                "ClassStats",
                format!("square {n}x{n} covariances and length-{n} mean difference"),
                format!(
                    "K1 {}x{}, K2 {}x{}, s {}",
                    k1.nrows(),
                    k1.ncols(),
                    k2.nrows(),
                    k2.ncols(),
                    s.len()
                ),
            ));
        }
        for (name, k) in [("K1", &k1), ("K2", &k2)] {
            let asym = (k - k.transpose()).norm();
            if !(asym <= SYMMETRY_TOL) {
                return Err(Error::Contract(format!(
                    "{name} is not symmetric: ||K - K'||_F = {asym:.3e}"
                )));
            }
        }
        Ok(Self { k1, k2, s })
    }

    pub fn n(&self) -> usize {
        self.k1.nrows()
    }

    pub fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }

    pub fn k2(&self) -> &DMatrix<f64> {
        &self.k2
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    /// True when the mean difference vector is exactly zero.
    pub fn zero_mean_difference(&self) -> bool {
        self.s.iter().all(|&v| v == 0.0)
    }

    /// Same statistics with the class labels swapped.
    pub fn swapped(&self) -> ClassStats {
        ClassStats {
            k1: self.k2.clone(),
            k2: self.k1.clone(),
            s: -&self.s,
        }
    }
}

/// The p×p compressed statistics `Cᵢ = XᵀKᵢX`, `ts = Xᵀs`.
#[derive(Debug, Clone)]
pub struct ChannelizedStats {
    c1: DMatrix<f64>,
    c2: DMatrix<f64>,
    ts: DVector<f64>,
}

impl ChannelizedStats {
    /// Validates symmetry and positive definiteness of both channels.
    pub fn new(c1: DMatrix<f64>, c2: DMatrix<f64>, ts: DVector<f64>) -> Result<Self> {
        let p = c1.nrows();
        if c1.ncols() != p || c2.nrows() != p || c2.ncols() != p || ts.len() != p {
            return Err(dim_err("ChannelizedStats", format!("{p}x{p}"), "mismatched shapes"));
        }
        let stats = Self { c1, c2, ts };
        stats.factor()?;
        Ok(stats)
    }

    pub fn p(&self) -> usize {
        self.c1.nrows()
    }

    pub fn c1(&self) -> &DMatrix<f64> {
        &self.c1
    }

    pub fn c2(&self) -> &DMatrix<f64> {
        &self.c2
    }

    pub fn ts(&self) -> &DVector<f64> {
        &self.ts
    }

    pub(crate) fn factor(&self) -> Result<ChannelFactors> {
        let chol1 = self
            .c1
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularChannel("C1 failed Cholesky factorization".into()))?;
        let chol2 = self
            .c2
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularChannel("C2 failed Cholesky factorization".into()))?;
        Ok(ChannelFactors { chol1, chol2 })
    }
}

/// Cached Cholesky factors of the two channels.
pub(crate) struct ChannelFactors {
    pub chol1: Cholesky<f64, Dyn>,
    pub chol2: Cholesky<f64, Dyn>,
}

impl ChannelFactors {
    pub fn log_det_1(&self) -> f64 {
        2.0 * self.chol1.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn log_det_2(&self) -> f64 {
        2.0 * self.chol2.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Scalar configuration of the divergence: the constant subtracted from the
/// two trace terms. `dim_offset = p` makes identical channels score zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveConfig {
    pub dim_offset: f64,
}

impl ObjectiveConfig {
    /// The divergence normalization for a p-dimensional channel space.
    pub fn for_subspace_dim(p: usize) -> Self {
        Self { dim_offset: p as f64 }
    }
}

/// Compresses ambient statistics through an orthonormal basis:
/// `Cᵢ = XᵀKᵢX` (symmetrized against round-off) and `ts = Xᵀs`.
pub fn channelize(stats: &ClassStats, x: &GrassmannPoint) -> Result<ChannelizedStats> {
    if stats.n() != x.n() {
        return Err(dim_err("channelize", stats.n(), x.n()));
    }
    let c1 = symmetrize(x.basis().transpose() * &stats.k1 * x.basis());
    let c2 = symmetrize(x.basis().transpose() * &stats.k2 * x.basis());
    let ts = x.basis().transpose() * &stats.s;
    ChannelizedStats::new(c1, c2, ts)
}

/// Jeffrey's divergence of the channelized classes at `x`.
pub fn jeffreys(stats: &ClassStats, x: &GrassmannPoint, cfg: &ObjectiveConfig) -> Result<f64> {
    let ch = channelize(stats, x)?;
    jeffreys_from_channels(&ch, cfg)
}

/// The divergence evaluated directly from channelized statistics.
pub fn jeffreys_from_channels(ch: &ChannelizedStats, cfg: &ObjectiveConfig) -> Result<f64> {
    let f = ch.factor()?;
    let tr21 = f.chol2.solve(ch.c1()).trace();
    let tr12 = f.chol1.solve(ch.c2()).trace();
    let q2 = ch.ts().dot(&f.chol2.solve(ch.ts()));
    let q1 = ch.ts().dot(&f.chol1.solve(ch.ts()));
    Ok(-2.0 * cfg.dim_offset + tr21 + q2 + tr12 + q1)
}

/// The divergence formula evaluated on an arbitrary full-rank (not
/// necessarily orthonormal) n×p basis. The value depends only on the column
/// span, so `jeffreys_general(B·M) = jeffreys_general(B)` for any invertible
/// p×p `M`; this entry point exists so that invariance can be exercised
/// without re-orthonormalizing.
pub fn jeffreys_general(
    stats: &ClassStats,
    basis: &DMatrix<f64>,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    if basis.nrows() != stats.n() {
        return Err(dim_err("jeffreys_general", stats.n(), basis.nrows()));
    }
    let c1 = symmetrize(basis.transpose() * &stats.k1 * basis);
    let c2 = symmetrize(basis.transpose() * &stats.k2 * basis);
    let ts = basis.transpose() * &stats.s;
    let ch = ChannelizedStats::new(c1, c2, ts)?;
    jeffreys_from_channels(&ch, cfg)
}

/// Ambient derivative of `J` with respect to the basis entries (n×p). See the
/// module docs for the expression; the Riemannian gradient is its tangent
/// projection.
pub fn jeffreys_grad_ambient(stats: &ClassStats, x: &GrassmannPoint) -> Result<DMatrix<f64>> {
    let ch = channelize(stats, x)?;
    let f = ch.factor()?;
    let xb = x.basis();

    let xs = xb.transpose() * &stats.s; // p
    let g1 = &stats.k1 * xb; // n×p
    let g2 = &stats.k2 * xb; // n×p
    let sxt = &stats.s * xs.transpose(); // n×p, equals (ssᵀ)X
    let ms = &xs * xs.transpose(); // p×p, equals Xᵀ(ssᵀ)X

    // (K1 + ssᵀ)X C2⁻¹  −  K2 X · C2⁻¹(C1 + Ms)C2⁻¹
    let term_a = right_solve(&f.chol2, &(&g1 + &sxt));
    let w2 = right_solve(&f.chol2, &f.chol2.solve(&(ch.c1() + &ms)));
    let term_b = &g2 * w2;

    // (K2 + ssᵀ)X C1⁻¹  −  K1 X · C1⁻¹(C2 + Ms)C1⁻¹
    let term_c = right_solve(&f.chol1, &(&g2 + &sxt));
    let w1 = right_solve(&f.chol1, &f.chol1.solve(&(ch.c2() + &ms)));
    let term_d = &g1 * w1;

    Ok(2.0 * (term_a - term_b + term_c - term_d))
}

/// `M · C⁻¹` for symmetric positive definite `C`, via the Cholesky factor.
fn right_solve(chol: &Cholesky<f64, Dyn>, m: &DMatrix<f64>) -> DMatrix<f64> {
    chol.solve(&m.transpose()).transpose()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// A smooth function on Gr(p,n) presented to the optimizer as paired value
/// and ambient-gradient evaluators.
pub trait Objective: Sync {
    /// Ambient dimension n the objective is defined over.
    fn ambient_dim(&self) -> usize;

    /// Function value at a point.
    fn value(&self, x: &GrassmannPoint) -> Result<f64>;

    /// Euclidean derivative with respect to the basis entries (n×p).
    fn ambient_grad(&self, x: &GrassmannPoint) -> Result<DMatrix<f64>>;

    /// Secondary reporting metric derived from a value of this objective,
    /// e.g. the divergence `J = −f` for the negated adapter. `None` when the
    /// objective has no such reading.
    fn merit_from_value(&self, f: f64) -> Option<f64> {
        let _ = f;
        None
    }
}

/// Minimization adapter `f = −J` for the divergence: maximizing `J` over the
/// manifold is run as `min f` with the gradient negated to match.
#[derive(Debug, Clone)]
pub struct NegJeffreys {
    stats: ClassStats,
    cfg: ObjectiveConfig,
}

impl NegJeffreys {
    pub fn new(stats: ClassStats, cfg: ObjectiveConfig) -> Self {
        Self { stats, cfg }
    }

    pub fn stats(&self) -> &ClassStats {
        &self.stats
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }
}

impl Objective for NegJeffreys {
    fn ambient_dim(&self) -> usize {
        self.stats.n()
    }

    fn value(&self, x: &GrassmannPoint) -> Result<f64> {
        Ok(-jeffreys(&self.stats, x, &self.cfg)?)
    }

    fn ambient_grad(&self, x: &GrassmannPoint) -> Result<DMatrix<f64>> {
        Ok(-jeffreys_grad_ambient(&self.stats, x)?)
    }

    fn merit_from_value(&self, f: f64) -> Option<f64> {
        Some(-f)
    }
}

/// `f(X) = −tr(XᵀAX)` for symmetric positive definite `A`: the negated
/// Rayleigh trace, minimized by the span of the p leading eigenvectors.
///
/// Along a unit-speed geodesic `γ` the second derivative of `f∘γ` is bounded
/// by `4‖A‖₂` (one factor of `2‖A‖₂` from the velocity term `tr(γ'ᵀAγ')` and
/// one from the acceleration term, whose outer product `γ''γᵀ` has nuclear
/// norm `tr(Σ²) = 1`), so the geodesic smoothness constant reported by
/// [`RayleighObjective::smoothness_bound`] is `4·λ_max(A)`.
#[derive(Debug, Clone)]
pub struct RayleighObjective {
    a: DMatrix<f64>,
    eigs_desc: Vec<f64>,
}

impl RayleighObjective {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim_err("RayleighObjective", "square matrix", format!("{}x{}", n, a.ncols())));
        }
        let asym = (&a - a.transpose()).norm();
        if !(asym <= SYMMETRY_TOL) {
            return Err(Error::Contract(format!(
                "A is not symmetric: ||A - A'||_F = {asym:.3e}"
            )));
        }
        if a.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("A failed Cholesky factorization".into()));
        }
        let mut eigs: Vec<f64> = nalgebra::SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        Ok(Self { a, eigs_desc: eigs })
    }

    /// Geodesic smoothness constant `L = 4·λ_max(A)`.
    pub fn smoothness_bound(&self) -> f64 {
        4.0 * self.eigs_desc[0]
    }

    /// Global minimum over Gr(p,n): minus the sum of the p largest
    /// eigenvalues of `A`.
    pub fn global_min(&self, p: usize) -> f64 {
        -self.eigs_desc[..p].iter().sum::<f64>()
    }
}

impl Objective for RayleighObjective {
    fn ambient_dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, x: &GrassmannPoint) -> Result<f64> {
        if x.n() != self.a.nrows() {
            return Err(dim_err("RayleighObjective::value", self.a.nrows(), x.n()));
        }
        Ok(-x.basis().dot(&(&self.a * x.basis())))
    }

    fn ambient_grad(&self, x: &GrassmannPoint) -> Result<DMatrix<f64>> {
        if x.n() != self.a.nrows() {
            return Err(dim_err("RayleighObjective::grad", self.a.nrows(), x.n()));
        }
        Ok(-2.0 * (&self.a * x.basis()))
    }
}
