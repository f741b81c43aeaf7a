//! Inexact gradient descent on the Grassmann manifold.
//!
//! Both drivers share the same iteration skeleton: ask the oracle for an
//! ambient gradient estimate, project it onto the tangent space to get the
//! search direction `Δ_k`, and follow the geodesic `x_{k+1} =
//! Exp_{x_k}(−η_k Δ_k)`. They differ only in how `η_k` is chosen:
//!
//! * [`run_fixed_step`] applies a predetermined [`StepRule`];
//! * [`run_line_search`] backtracks from `η₀` by a factor `β` until the
//!   sufficient-decrease condition
//!   `f(x_{k+1}) ≤ f(x_k) − σ·η_k·‖Δ_k‖²` holds.
//!
//! Every run produces a [`Trace`] with one record per iteration; failures
//! return the partial trace inside the error. A single run is sequential —
//! iterations are data-dependent — but independent runs can execute
//! concurrently, each owning its oracle and RNG.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::grassmann::{self, GrassmannPoint};
use crate::objective::Objective;
use crate::oracle::GradientOracle;

/// Step-size schedules for [`run_fixed_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepRule {
    /// The same `η` every iteration.
    Constant { eta: f64 },
    /// `η = 1/(3L)` from a known smoothness constant; paired with a summable
    /// gradient-error schedule this keeps the best squared gradient norm
    /// decaying like `1/K`.
    LipschitzConstant { lipschitz: f64 },
    /// Logarithmically diminishing `η_k = 1/(4L·ln²(k+2))`, the schedule that
    /// tolerates a borderline (non-summable) `1/(k+1)` squared-error decay at
    /// the price of an extra `ln²K` factor in the rate.
    LogDiminishing { lipschitz: f64 },
}

impl StepRule {
    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            StepRule::Constant { eta } => eta,
            StepRule::LipschitzConstant { lipschitz } => 1.0 / (3.0 * lipschitz),
            StepRule::LogDiminishing { lipschitz } => {
                let lg = ((k + 2) as f64).ln();
                1.0 / (4.0 * lipschitz * lg * lg)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = match *self {
            StepRule::Constant { eta } => eta,
            StepRule::LipschitzConstant { lipschitz } | StepRule::LogDiminishing { lipschitz } => {
                lipschitz
            }
        };
        if !(positive > 0.0) || !positive.is_finite() {
            return Err(Error::Config(format!(
                "step rule parameter must be positive and finite, got {positive}"
            )));
        }
        Ok(())
    }
}

/// Configuration of the fixed-step driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedStepConfig {
    pub step_rule: StepRule,
    pub max_iters: usize,
    /// Early stop once the reference gradient norm falls to this value;
    /// zero disables early stopping (production surrogate runs use a fixed
    /// iteration budget).
    #[serde(default)]
    pub grad_tol: f64,
}

impl FixedStepConfig {
    pub fn validate(&self) -> Result<()> {
        self.step_rule.validate()?;
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::Config(format!(
                "grad_tol must be nonnegative, got {}",
                self.grad_tol
            )));
        }
        Ok(())
    }
}

fn default_max_backtracks() -> u32 {
    60
}

/// Configuration of the backtracking driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    /// Initial step tried at every iteration (the search restarts from
    /// `eta0` each time rather than warm-starting).
    pub eta0: f64,
    /// Geometric shrinkage factor in (0,1).
    pub beta: f64,
    /// Sufficient-decrease parameter in (0,1).
    pub sigma: f64,
    /// Backtracks allowed per iteration before the run aborts. The default
    /// of 60 takes `eta` below 1e-9 from `eta0 = 2` at `beta = 0.7`; a step
    /// that small failing the test means the error model is wrong, not the
    /// step.
    #[serde(default = "default_max_backtracks")]
    pub max_backtracks: u32,
    pub max_iters: usize,
    #[serde(default)]
    pub grad_tol: f64,
}

impl LineSearchConfig {
    pub fn new(eta0: f64, beta: f64, sigma: f64, max_iters: usize) -> Self {
        Self {
            eta0,
            beta,
            sigma,
            max_backtracks: default_max_backtracks(),
            max_iters,
            grad_tol: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::Config(format!("sigma must lie in (0,1), got {}", self.sigma)));
        }
        if self.max_backtracks < 1 {
            return Err(Error::Config("max_backtracks must be at least 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::Config(format!(
                "grad_tol must be nonnegative, got {}",
                self.grad_tol
            )));
        }
        Ok(())
    }
}

/// One optimization step as recorded in the trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Objective value at the iterate (before the step).
    pub f_value: f64,
    /// Divergence reading, when the objective (or the diagnostics reference)
    /// carries one.
    pub j_value: Option<f64>,
    /// Norm of the projected search direction `‖Δ_k‖`.
    pub delta_norm: f64,
    /// Reference gradient norm `‖grad f(x_k)‖`, when available.
    pub true_grad_norm: Option<f64>,
    /// Oracle error model for this step (see the oracle docs).
    pub err_norm: Option<f64>,
    /// Step size actually taken.
    pub eta_used: f64,
    /// Backtracks performed this iteration (always 0 for fixed steps).
    pub backtracks: u32,
    /// Cumulative objective-value evaluations, including every line-search
    /// probe.
    pub func_evals: u64,
    /// Wall time of this iteration. Measured always, but serialized only on
    /// request since it would break bytewise reproducibility of artifacts.
    pub wall_ns: u64,
}

/// Run provenance attached to every trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub threads: usize,
    pub optimizer: serde_json::Value,
    pub oracle: String,
}

/// Per-iteration history of one optimization run.
#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<IterationRecord>,
}

impl Trace {
    fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
        }
    }

    fn push(&mut self, record: IterationRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.k > last.k, "iteration indices must increase");
            assert!(
                record.func_evals >= last.func_evals,
                "func_evals must be cumulative"
            );
        }
        self.records.push(record);
    }

    /// Running minimum of the squared reference gradient norm — the series
    /// whose decay the convergence guarantees bound. `None` when any record
    /// lacks a reference gradient.
    pub fn min_grad_sq_so_far(&self) -> Option<Vec<f64>> {
        let mut best = f64::INFINITY;
        let mut out = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            let g = rec.true_grad_norm?;
            best = best.min(g * g);
            out.push(best);
        }
        Some(out)
    }

    pub fn f_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f_value).collect()
    }
}

struct RunState<'a> {
    objective: &'a dyn Objective,
    reference: Option<&'a dyn Objective>,
    trace: Trace,
    func_evals: u64,
}

impl<'a> RunState<'a> {
    fn new(
        objective: &'a dyn Objective,
        reference: Option<&'a dyn Objective>,
        oracle: &GradientOracle,
        x0: &GrassmannPoint,
        optimizer_snapshot: serde_json::Value,
    ) -> Result<Self> {
        if x0.n() != objective.ambient_dim() {
            return Err(dim_err("optimizer", objective.ambient_dim(), x0.n()));
        }
        if let Some(r) = reference {
            if r.ambient_dim() != objective.ambient_dim() {
                return Err(dim_err("optimizer reference", objective.ambient_dim(), r.ambient_dim()));
            }
        }
        let meta = TraceMeta {
            seed: oracle.seed(),
            threads: rayon::current_num_threads(),
            optimizer: optimizer_snapshot,
            oracle: oracle.descriptor(),
        };
        Ok(Self {
            objective,
            reference,
            trace: Trace::new(meta),
            func_evals: 0,
        })
    }

    fn eval(&mut self, x: &GrassmannPoint, k: usize) -> Result<f64> {
        self.func_evals += 1;
        self.objective.value(x).map_err(|e| self.fail(k, e))
    }

    /// Divergence reading for the trace: from the diagnostics reference when
    /// present, otherwise derived from the current objective value.
    fn merit(&mut self, x: &GrassmannPoint, f_curr: f64, k: usize) -> Result<Option<f64>> {
        match self.reference {
            Some(r) => {
                let f_ref = r.value(x).map_err(|e| self.fail(k, e))?;
                Ok(r.merit_from_value(f_ref))
            }
            None => Ok(self.objective.merit_from_value(f_curr)),
        }
    }

    fn fail(&self, iteration: usize, cause: Error) -> Error {
        Error::Run {
            iteration,
            cause: Box::new(cause),
            trace: Box::new(self.trace.clone()),
        }
    }

    fn finish(self, x: GrassmannPoint) -> (GrassmannPoint, Trace) {
        (x, self.trace)
    }
}

/// Gradient descent with a predetermined step schedule.
///
/// `objective` is minimized; `reference` optionally supplies a second
/// objective used purely for diagnostics (true gradient norms, divergence
/// values, oracle error distances) when the optimized objective is a
/// surrogate. The returned trace holds one record per completed iteration;
/// the iterate after the final recorded step is the returned point.
pub fn run_fixed_step(
    objective: &dyn Objective,
    reference: Option<&dyn Objective>,
    oracle: &mut GradientOracle,
    x0: &GrassmannPoint,
    cfg: &FixedStepConfig,
) -> Result<(GrassmannPoint, Trace)> {
    cfg.validate()?;
    let snapshot = serde_json::json!({ "fixed": cfg });
    let mut state = RunState::new(objective, reference, oracle, x0, snapshot)?;
    let mut x = x0.clone();
    let mut f_curr = state.eval(&x, 0)?;

    for k in 0..cfg.max_iters {
        let started = Instant::now();
        if !f_curr.is_finite() {
            return Err(state.fail(k, Error::Diverged { iteration: k }));
        }
        let out = oracle
            .gradient_at(objective, reference, &x, k)
            .map_err(|e| state.fail(k, e))?;
        let delta = grassmann::project_tangent(&x, &out.ambient).map_err(|e| state.fail(k, e))?;
        let delta_norm = delta.norm();
        let eta = cfg.step_rule.eta(k);
        let j_value = state.merit(&x, f_curr, k)?;

        let stop = cfg.grad_tol > 0.0
            && out
                .true_grad_norm
                .map(|g| g <= cfg.grad_tol)
                .unwrap_or(false);
        let (x_next, f_next) = if stop {
            (x.clone(), f_curr)
        } else {
            let x_next = grassmann::exp_map(&x, &delta, -eta).map_err(|e| state.fail(k, e))?;
            let f_next = state.eval(&x_next, k)?;
            (x_next, f_next)
        };

        state.trace.push(IterationRecord {
            k,
            f_value: f_curr,
            j_value,
            delta_norm,
            true_grad_norm: out.true_grad_norm,
            err_norm: out.err_norm,
            eta_used: eta,
            backtracks: 0,
            func_evals: state.func_evals,
            wall_ns: started.elapsed().as_nanos() as u64,
        });
        if stop {
            break;
        }
        x = x_next;
        f_curr = f_next;
    }
    Ok(state.finish(x))
}

/// Gradient descent with backtracking line search.
///
/// Each iteration restarts from `eta0` and shrinks by `beta` until
/// `f(Exp_x(−η Δ)) ≤ f(x) − σ·η·‖Δ‖²`. Objective evaluations that come back
/// non-finite or with a singular channelized covariance are treated like a
/// failed decrease test (the step was too long) and backtracked; exceeding
/// `max_backtracks` aborts the run with the partial trace attached.
///
/// The run ends early once the largest decrease the search could demand,
/// `σ·η₀·‖Δ‖²`, drops below the f64 resolution of the current value: past
/// that point the acceptance test would be decided by rounding noise rather
/// than actual descent. Every *accepted* step in the trace satisfies the
/// decrease inequality exactly as evaluated.
pub fn run_line_search(
    objective: &dyn Objective,
    reference: Option<&dyn Objective>,
    oracle: &mut GradientOracle,
    x0: &GrassmannPoint,
    cfg: &LineSearchConfig,
) -> Result<(GrassmannPoint, Trace)> {
    cfg.validate()?;
    let snapshot = serde_json::json!({ "line-search": cfg });
    let mut state = RunState::new(objective, reference, oracle, x0, snapshot)?;
    let mut x = x0.clone();
    let mut f_curr = state.eval(&x, 0)?;

    for k in 0..cfg.max_iters {
        let started = Instant::now();
        if !f_curr.is_finite() {
            return Err(state.fail(k, Error::Diverged { iteration: k }));
        }
        let out = oracle
            .gradient_at(objective, reference, &x, k)
            .map_err(|e| state.fail(k, e))?;
        let delta = grassmann::project_tangent(&x, &out.ambient).map_err(|e| state.fail(k, e))?;
        let delta_norm = delta.norm();
        let delta_sq = delta_norm * delta_norm;
        let j_value = state.merit(&x, f_curr, k)?;

        let tol_stop = cfg.grad_tol > 0.0
            && out
                .true_grad_norm
                .map(|g| g <= cfg.grad_tol)
                .unwrap_or(false);
        let resolution_floor = f64::EPSILON * (1.0 + f_curr.abs());
        let unresolvable = delta_sq > 0.0 && cfg.sigma * cfg.eta0 * delta_sq < resolution_floor;
        let stop = tol_stop || unresolvable;

        let (x_next, f_next, eta_used, backtracks) = if stop {
            (x.clone(), f_curr, 0.0, 0)
        } else {
            let mut eta = cfg.eta0;
            let mut backtracks = 0u32;
            loop {
                let trial = grassmann::exp_map(&x, &delta, -eta).map_err(|e| state.fail(k, e))?;
                state.func_evals += 1;
                let f_trial = match objective.value(&trial) {
                    Ok(v) if v.is_finite() => Some(v),
                    Ok(_) => None,
                    Err(Error::SingularChannel(_)) => None,
                    Err(e) => return Err(state.fail(k, e)),
                };
                if let Some(ft) = f_trial {
                    if ft <= f_curr - cfg.sigma * eta * delta_sq {
                        break (trial, ft, eta, backtracks);
                    }
                }
                backtracks += 1;
                if backtracks > cfg.max_backtracks {
                    return Err(state.fail(
                        k,
                        Error::LineSearchStall {
                            iteration: k,
                            backtracks,
                            eta,
                        },
                    ));
                }
                eta *= cfg.beta;
            }
        };

        state.trace.push(IterationRecord {
            k,
            f_value: f_curr,
            j_value,
            delta_norm,
            true_grad_norm: out.true_grad_norm,
            err_norm: out.err_norm,
            eta_used,
            backtracks,
            func_evals: state.func_evals,
            wall_ns: started.elapsed().as_nanos() as u64,
        });
        if stop {
            break;
        }
        x = x_next;
        f_curr = f_next;
    }
    Ok(state.finish(x))
}
