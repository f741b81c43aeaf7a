//! Gradient oracles with controlled inexactness.
//!
//! The optimizers never differentiate anything themselves; they ask an oracle
//! for an ambient gradient estimate at the current point. The oracle kinds
//! cover the error regimes of interest:
//!
//! * [`OracleKind::Exact`] — the true ambient gradient.
//! * [`OracleKind::AdditiveSchedule`] — true gradient plus a random ambient
//!   direction of Frobenius norm `c/(k+1)^exponent`, the summable-error
//!   schedule used by the rate experiments.
//! * [`OracleKind::RelativeBounded`] — true gradient plus a tangent error of
//!   norm strictly below `delta·‖grad‖`, the relative-error condition under
//!   which monotone descent and line-search termination are guaranteed.
//! * [`OracleKind::SurrogateStats`] — the exact gradient of a *different*
//!   (estimated or perturbed) pair of class covariances; the bias of interest
//!   in the imaging experiments.
//!
//! Each optimizer run owns one oracle; the only state is the RNG stream, so a
//! fixed seed reproduces a run bit for bit.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grassmann::{self, GrassmannPoint, TangentVector};
use crate::objective::{jeffreys_grad_ambient, ClassStats, Objective};

/// How surrogate statistics evolve over the iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshPolicy {
    /// Use the supplied statistics unchanged for the whole run (e.g. a sample
    /// covariance estimated once from training data).
    Fixed,
    /// Re-draw a uniform elementwise perturbation of the supplied statistics
    /// at every iteration: entry (i,j) of each covariance becomes
    /// `K[i,j] + Y/k` with `Y ~ U(0,1)`, mirrored to keep the matrix
    /// symmetric. The perturbation index starts at 1 on the first iteration.
    UniformDiminishing,
}

/// Oracle selector and parameters.
#[derive(Debug, Clone)]
pub enum OracleKind {
    Exact,
    AdditiveSchedule { c: f64, exponent: f64 },
    RelativeBounded { delta: f64 },
    SurrogateStats { stats: ClassStats, refresh: RefreshPolicy },
}

/// Gradient estimate plus the logging quantities the trace records.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    /// The ambient gradient estimate handed to the tangent projection.
    pub ambient: DMatrix<f64>,
    /// Model of `‖e_k‖`: the schedule value for the additive oracle, the
    /// realized tangent error norm for the relative oracle, zero for the
    /// exact oracle, and the projected distance to the reference gradient for
    /// surrogate statistics (absent when no reference objective is known).
    pub err_norm: Option<f64>,
    /// `‖grad f(x_k)‖` of the reference objective, for trace diagnostics.
    pub true_grad_norm: Option<f64>,
}

/// A stateful gradient oracle; owns its RNG stream.
pub struct GradientOracle {
    kind: OracleKind,
    rng: ChaCha8Rng,
    seed: u64,
}

/// Retry budget for re-drawing a perturbation whose channelized covariance
/// fails its Cholesky factorization.
const PERTURB_RETRIES: u32 = 10;

impl GradientOracle {
    pub fn new(kind: OracleKind, seed: u64) -> Result<Self> {
        match &kind {
            OracleKind::AdditiveSchedule { c, exponent } => {
                if !(*c > 0.0) || !c.is_finite() {
                    return Err(Error::Config(format!("additive oracle: c must be positive, got {c}")));
                }
                if !(*exponent >= 0.0) || !exponent.is_finite() {
                    return Err(Error::Config(format!(
                        "additive oracle: exponent must be finite and nonnegative, got {exponent}"
                    )));
                }
            }
            OracleKind::RelativeBounded { delta } => {
                if !(*delta >= 0.0 && *delta < 1.0) {
                    return Err(Error::Config(format!(
                        "relative oracle: delta must lie in [0, 1), got {delta}"
                    )));
                }
            }
            OracleKind::Exact | OracleKind::SurrogateStats { .. } => {}
        }
        Ok(Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> &OracleKind {
        &self.kind
    }

    /// Short label for run metadata.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            OracleKind::Exact => "exact".into(),
            OracleKind::AdditiveSchedule { c, exponent } => {
                format!("additive(c={c}, exponent={exponent})")
            }
            OracleKind::RelativeBounded { delta } => format!("relative(delta={delta})"),
            OracleKind::SurrogateStats { refresh, .. } => match refresh {
                RefreshPolicy::Fixed => "surrogate(fixed)".into(),
                RefreshPolicy::UniformDiminishing => "surrogate(uniform-diminishing)".into(),
            },
        }
    }

    /// Produces the gradient estimate at `x` for iteration `k`.
    ///
    /// `objective` is the function being optimized (the basis for the exact
    /// and noise-injected kinds); `reference` is the objective used for error
    /// diagnostics when it differs from `objective` (surrogate runs).
    pub fn gradient_at(
        &mut self,
        objective: &dyn Objective,
        reference: Option<&dyn Objective>,
        x: &GrassmannPoint,
        k: usize,
    ) -> Result<OracleOutput> {
        match &self.kind {
            OracleKind::Exact => {
                let g = objective.ambient_grad(x)?;
                let true_grad_norm = match reference {
                    None => grassmann::project_tangent(x, &g)?.norm(),
                    Some(r) => projected_grad(r, x)?.norm(),
                };
                Ok(OracleOutput {
                    ambient: g,
                    err_norm: Some(0.0),
                    true_grad_norm: Some(true_grad_norm),
                })
            }
            OracleKind::AdditiveSchedule { c, exponent } => {
                let scale = c / ((k + 1) as f64).powf(*exponent);
                let g = objective.ambient_grad(x)?;
                let true_grad_norm = match reference {
                    None => grassmann::project_tangent(x, &g)?.norm(),
                    Some(r) => projected_grad(r, x)?.norm(),
                };
                let noise = random_unit_ambient(x.n(), x.p(), &mut self.rng);
                Ok(OracleOutput {
                    ambient: g + noise * scale,
                    err_norm: Some(scale),
                    true_grad_norm: Some(true_grad_norm),
                })
            }
            OracleKind::RelativeBounded { delta } => {
                let g = objective.ambient_grad(x)?;
                let pg = grassmann::project_tangent(x, &g)?;
                let grad_norm = pg.norm();
                let true_grad_norm = match reference {
                    None => grad_norm,
                    Some(r) => projected_grad(r, x)?.norm(),
                };
                if grad_norm == 0.0 {
                    return Ok(OracleOutput {
                        ambient: g,
                        err_norm: Some(0.0),
                        true_grad_norm: Some(true_grad_norm),
                    });
                }
                // Strictly inside the delta ball so the relative bound holds
                // with margin even after rounding.
                let frac: f64 = self.rng.random();
                let magnitude = delta * frac * grad_norm;
                let dir = loop {
                    if let Some(d) = grassmann::random_tangent(x, &mut self.rng).normalized() {
                        break d;
                    }
                };
                Ok(OracleOutput {
                    ambient: g + dir.mat() * magnitude,
                    err_norm: Some(magnitude),
                    true_grad_norm: Some(true_grad_norm),
                })
            }
            OracleKind::SurrogateStats { stats, refresh } => {
                let surrogate_grad = match refresh {
                    RefreshPolicy::Fixed => -jeffreys_grad_ambient(stats, x)?,
                    RefreshPolicy::UniformDiminishing => {
                        self.perturbed_gradient(stats.clone(), x, k)?
                    }
                };
                let diag = reference.or(Some(objective));
                let (err_norm, true_grad_norm) = match diag {
                    Some(r) => {
                        let tg = projected_grad(r, x)?;
                        let pg = grassmann::project_tangent(x, &surrogate_grad)?;
                        ((pg.mat() - tg.mat()).norm().into(), Some(tg.norm()))
                    }
                    None => (None, None),
                };
                Ok(OracleOutput {
                    ambient: surrogate_grad,
                    err_norm,
                    true_grad_norm,
                })
            }
        }
    }

    /// Gradient of the negated divergence under a fresh uniform perturbation
    /// of the base statistics, retrying on singular channelized covariances.
    fn perturbed_gradient(
        &mut self,
        base: ClassStats,
        x: &GrassmannPoint,
        k: usize,
    ) -> Result<DMatrix<f64>> {
        // Y_k/k indexing starts at 1; optimizer iterations start at 0.
        let perturb_index = k + 1;
        let mut last = String::new();
        for _ in 0..PERTURB_RETRIES {
            let k1 = uniform_perturb(base.k1(), perturb_index, &mut self.rng);
            let k2 = uniform_perturb(base.k2(), perturb_index, &mut self.rng);
            let surrogate = ClassStats::new_unchecked(k1, k2, base.s().clone())?;
            match jeffreys_grad_ambient(&surrogate, x) {
                Ok(g) => return Ok(-g),
                Err(Error::SingularChannel(msg)) => last = msg,
                Err(other) => return Err(other),
            }
        }
        Err(Error::OracleExhausted {
            iteration: k,
            attempts: PERTURB_RETRIES,
            cause: format!("channelized covariance stayed singular: {last}"),
        })
    }
}

/// Uniform elementwise perturbation `K̂[i,j] = K[i,j] + Y/k`, `Y ~ U(0,1)`,
/// drawn once per unordered index pair and mirrored so `K̂` stays symmetric.
pub fn uniform_perturb<R: Rng + ?Sized>(
    k_true: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    assert!(k >= 1, "perturbation iteration index starts at 1");
    let n = k_true.nrows();
    let scale = 1.0 / k as f64;
    let mut out = k_true.clone();
    for i in 0..n {
        for j in i..n {
            let y: f64 = rng.random();
            let v = k_true[(i, j)] + y * scale;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn projected_grad(objective: &dyn Objective, x: &GrassmannPoint) -> Result<TangentVector> {
    let g = objective.ambient_grad(x)?;
    grassmann::project_tangent(x, &g)
}

/// Random ambient n×p matrix scaled to unit Frobenius norm.
fn random_unit_ambient<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let m = DMatrix::<f64>::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let norm = m.norm();
        if norm > 0.0 {
            return m / norm;
        }
    }
}
