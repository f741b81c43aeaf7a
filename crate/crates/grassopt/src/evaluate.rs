//! Detection-side evaluation: the analytic Fukunaga-Koontz optimum,
//! log-likelihood-ratio scoring, AUC, convergence-rate fitting, and the
//! finite-difference gradient check.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::grassmann::{self, qr_orthonormalize, GrassmannPoint};
use crate::objective::{ChannelizedStats, ClassStats, Objective};

/// The analytic optimum of the zero-mean-difference discrimination problem.
#[derive(Debug, Clone)]
pub struct FkSolution {
    /// Orthonormal basis of the selected subspace.
    pub t_star: GrassmannPoint,
    /// The p selected generalized eigenvalues of `K₁w = λK₂w`, in selection
    /// order (largest per-channel contribution first).
    pub gen_eigs: Vec<f64>,
    /// `Σ(λ + 1/λ) − 2p`, the divergence the selected channels achieve.
    pub j_closed_form: f64,
}

/// Solves the generalized symmetric eigenproblem `K₁w = λK₂w` and selects the
/// p channels with the largest per-channel contribution `λ + 1/λ` (ties broken
/// toward larger `λ`). The generalized eigenvectors simultaneously
/// diagonalize both channelized covariances, so with zero mean difference the
/// divergence decomposes additively per channel and this greedy selection is
/// exactly optimal among the eigenvector channels.
///
/// Requires `s = 0`; with a mean-difference signal present no analytic
/// optimum exists and callers should optimize numerically instead.
pub fn fukunaga_koontz(stats: &ClassStats, p: usize) -> Result<FkSolution> {
    if !stats.zero_mean_difference() {
        return Err(Error::Contract(
            "fukunaga_koontz: requires a zero mean-difference vector".into(),
        ));
    }
    let n = stats.n();
    if p < 1 || p >= n {
        return Err(dim_err("fukunaga_koontz", "1 <= p < n", format!("n={n}, p={p}")));
    }
    let chol2 = stats
        .k2()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("K2 failed Cholesky factorization".into()))?;
    let l = chol2.l();
    // Whitened matrix L⁻¹ K₁ L⁻ᵀ shares eigenvalues with K₂⁻¹K₁.
    let b = l
        .solve_lower_triangular(stats.k1())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor of K2".into()))?;
    let m = l
        .solve_lower_triangular(&b.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor of K2".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(m);

    let lt = l.transpose();
    let mut channels: Vec<(f64, DVector<f64>)> = (0..n)
        .map(|i| {
            let lam = eig.eigenvalues[i];
            let y = eig.eigenvectors.column(i).into_owned();
            let w = lt
                .solve_upper_triangular(&y)
                .expect("triangular factor of an SPD matrix is invertible");
            (lam, w)
        })
        .collect();
    // Deterministic selection: order by eigenvalue, then stably by score, so
    // equal scores resolve toward the larger eigenvalue.
    channels.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite eigenvalues"));
    channels.sort_by(|a, b| {
        let score = |lam: f64| lam + 1.0 / lam;
        score(b.0).partial_cmp(&score(a.0)).expect("finite scores")
    });
    channels.truncate(p);

    let gen_eigs: Vec<f64> = channels.iter().map(|(lam, _)| *lam).collect();
    let mut w = DMatrix::<f64>::zeros(n, p);
    for (j, (_, col)) in channels.iter().enumerate() {
        w.set_column(j, col);
    }
    let t_star = GrassmannPoint::from_orthonormal(qr_orthonormalize(w));
    let j_closed_form =
        gen_eigs.iter().map(|&lam| lam + 1.0 / lam).sum::<f64>() - 2.0 * p as f64;
    Ok(FkSolution {
        t_star,
        gen_eigs,
        j_closed_form,
    })
}

/// Precomputed Gaussian log-likelihood-ratio discriminant for channelized
/// data. Positive scores favor class 1.
pub struct LlrScorer {
    chol1: Cholesky<f64, Dyn>,
    chol2: Cholesky<f64, Dyn>,
    m1: DVector<f64>,
    m2: DVector<f64>,
    log_det_diff: f64,
}

impl LlrScorer {
    pub fn new(ch: &ChannelizedStats, m1: DVector<f64>, m2: DVector<f64>) -> Result<Self> {
        let p = ch.p();
        if m1.len() != p || m2.len() != p {
            return Err(dim_err("LlrScorer", p, format!("{} and {}", m1.len(), m2.len())));
        }
        let f = ch.factor()?;
        let log_det_diff = f.log_det_2() - f.log_det_1();
        Ok(Self {
            chol1: f.chol1,
            chol2: f.chol2,
            m1,
            m2,
            log_det_diff,
        })
    }

    /// `λ(v) = (v−m₂)ᵀC₂⁻¹(v−m₂) − (v−m₁)ᵀC₁⁻¹(v−m₁) + ln det C₂ − ln det C₁`,
    /// twice the Gaussian log-likelihood ratio in favor of class 1.
    pub fn score(&self, v: &DVector<f64>) -> f64 {
        let d2 = v - &self.m2;
        let d1 = v - &self.m1;
        let q2 = d2.dot(&self.chol2.solve(&d2));
        let q1 = d1.dot(&self.chol1.solve(&d1));
        q2 - q1 + self.log_det_diff
    }
}

/// One-shot log-likelihood ratio; build an [`LlrScorer`] to score in bulk.
pub fn log_likelihood_ratio(
    ch: &ChannelizedStats,
    means: (&DVector<f64>, &DVector<f64>),
    v: &DVector<f64>,
) -> Result<f64> {
    let scorer = LlrScorer::new(ch, means.0.clone(), means.1.clone())?;
    if v.len() != ch.p() {
        return Err(dim_err("log_likelihood_ratio", ch.p(), v.len()));
    }
    Ok(scorer.score(v))
}

/// Area under the ROC curve with sample counts.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RocResult {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Mann-Whitney AUC estimate: the fraction of (class-1, class-2) pairs where
/// the class-1 score is larger, ties counted one half. Pair counts are
/// accumulated exactly in integer arithmetic (doubled to keep half-ties
/// integral) and divided once at the end.
pub fn auc(scores_class1: &[f64], scores_class2: &[f64]) -> Result<RocResult> {
    if scores_class1.is_empty() || scores_class2.is_empty() {
        return Err(Error::Contract("auc: both score sets must be nonempty".into()));
    }
    if scores_class1.iter().chain(scores_class2).any(|v| v.is_nan()) {
        return Err(Error::Contract("auc: scores must not be NaN".into()));
    }
    let mut sorted2 = scores_class2.to_vec();
    sorted2.sort_by(|a, b| a.partial_cmp(b).expect("NaN rejected above"));

    let mut doubled: u128 = 0; // 2·wins + ties
    for &s in scores_class1 {
        let below = sorted2.partition_point(|&t| t < s) as u128;
        let not_above = sorted2.partition_point(|&t| t <= s) as u128;
        doubled += below + not_above; // = 2·below + (ties at s)
    }
    let n_pos = scores_class1.len();
    let n_neg = scores_class2.len();
    let auc = doubled as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(RocResult { auc, n_pos, n_neg })
}

/// Least-squares slope of `log(value)` against `log(k)` over `k ∈ [k_min, k_max]`.
///
/// Requires at least ten in-range points with strictly positive values.
pub fn rate_fit(series: &[(usize, f64)], k_min: usize, k_max: usize) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(k, _)| *k >= k_min && *k <= k_max)
        .map(|&(k, v)| (k as f64, v))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Contract(format!(
            "rate_fit: need at least 10 points in [{k_min}, {k_max}], got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|&(k, v)| k <= 0.0 || v <= 0.0) {
        return Err(Error::Contract(
            "rate_fit: iteration indices and values must be positive".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(k, v)| (k.ln(), v.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Central finite-difference validation of an objective's gradient.
///
/// For `m` random unit tangent directions `v` at `x`, compares the analytic
/// directional derivative `⟨P(∇f), v⟩` against
/// `(f(Exp_x(h·v)) − f(Exp_x(−h·v))) / 2h` and returns the largest
/// `|analytic − numeric| / (1 + |numeric|)` observed.
pub fn fd_gradient_check<R: Rng + ?Sized>(
    objective: &dyn Objective,
    x: &GrassmannPoint,
    directions: usize,
    h: f64,
    rng: &mut R,
) -> Result<f64> {
    if directions < 1 || h <= 0.0 {
        return Err(Error::Contract(
            "fd_gradient_check: need at least one direction and h > 0".into(),
        ));
    }
    let grad = objective.ambient_grad(x)?;
    let pg = grassmann::project_tangent(x, &grad)?;
    let mut max_rel: f64 = 0.0;
    for _ in 0..directions {
        let v = match grassmann::random_tangent(x, rng).normalized() {
            Some(v) => v,
            None => continue,
        };
        let analytic = grassmann::inner(x, &pg, &v)?;
        let f_plus = objective.value(&grassmann::exp_map(x, &v, h)?)?;
        let f_minus = objective.value(&grassmann::exp_map(x, &v, -h)?)?;
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let rel = (analytic - numeric).abs() / (1.0 + numeric.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Channel-space eigenvectors of `C₂⁻¹C₁` at `x`, back-projected to ambient
/// space as `basis·v` for visual inspection. Returns an n×count matrix whose
/// columns follow descending eigenvalue order.
pub fn back_projection(
    stats: &ClassStats,
    x: &GrassmannPoint,
    count: usize,
) -> Result<DMatrix<f64>> {
    let ch = crate::objective::channelize(stats, x)?;
    let p = ch.p();
    let count = count.min(p);
    let f = ch.factor()?;
    let l2 = f.chol2.l();
    let b = l2
        .solve_lower_triangular(ch.c1())
        .ok_or_else(|| Error::SingularChannel("singular Cholesky factor of C2".into()))?;
    let m = l2
        .solve_lower_triangular(&b.transpose())
        .ok_or_else(|| Error::SingularChannel("singular Cholesky factor of C2".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let lt = l2.transpose();
    let mut out = DMatrix::<f64>::zeros(x.n(), count);
    for (j, &idx) in order.iter().take(count).enumerate() {
        let y = eig.eigenvectors.column(idx).into_owned();
        let v = lt
            .solve_upper_triangular(&y)
            .expect("triangular factor of an SPD matrix is invertible");
        out.set_column(j, &(x.basis() * v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::random_point;
    use crate::objective::{
        jeffreys, jeffreys_grad_ambient, NegJeffreys, ObjectiveConfig, RayleighObjective,
    };
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn fk_two_dimensional_example() {
        let k1 = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let k2 = DMatrix::<f64>::identity(2, 2);
        let stats = ClassStats::new(k1, k2, DVector::zeros(2)).unwrap();
        let fk = fukunaga_koontz(&stats, 1).unwrap();
        assert_relative_eq!(fk.gen_eigs[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(fk.j_closed_form, 2.25, epsilon = 1e-12);
        let j = jeffreys(&stats, &fk.t_star, &ObjectiveConfig::for_subspace_dim(1)).unwrap();
        assert_relative_eq!(j, 2.25, max_relative = 1e-10);
    }

    #[test]
    fn fk_identical_classes_scores_zero() {
        let mut r = rng(1);
        let k = random_spd(6, &mut r);
        let stats = ClassStats::new(k.clone(), k, DVector::zeros(6)).unwrap();
        let fk = fukunaga_koontz(&stats, 2).unwrap();
        assert!(fk.j_closed_form.abs() < 1e-9);
        assert!(fk.gen_eigs.iter().all(|&l| (l - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fk_rejects_mean_signal() {
        let mut r = rng(2);
        let stats = ClassStats::new(
            random_spd(4, &mut r),
            random_spd(4, &mut r),
            DVector::from_element(4, 0.1),
        )
        .unwrap();
        assert!(matches!(fukunaga_koontz(&stats, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn fk_closed_form_matches_divergence_and_is_stationary() {
        let mut r = rng(3);
        for _ in 0..5 {
            let stats = ClassStats::new(
                random_spd(10, &mut r),
                random_spd(10, &mut r),
                DVector::zeros(10),
            )
            .unwrap();
            let fk = fukunaga_koontz(&stats, 3).unwrap();
            let cfg = ObjectiveConfig::for_subspace_dim(3);
            let j = jeffreys(&stats, &fk.t_star, &cfg).unwrap();
            assert_relative_eq!(j, fk.j_closed_form, max_relative = 1e-8);

            let g = jeffreys_grad_ambient(&stats, &fk.t_star).unwrap();
            let pg = grassmann::project_tangent(&fk.t_star, &g).unwrap();
            assert!(
                pg.norm() < 1e-6 * (1.0 + j.abs()),
                "projected gradient at the optimum: {}",
                pg.norm()
            );
        }
    }

    #[test]
    fn fk_beats_random_subspaces() {
        let mut r = rng(4);
        let stats = ClassStats::new(
            random_spd(16, &mut r),
            random_spd(16, &mut r),
            DVector::zeros(16),
        )
        .unwrap();
        let fk = fukunaga_koontz(&stats, 2).unwrap();
        let cfg = ObjectiveConfig::for_subspace_dim(2);
        for _ in 0..200 {
            let x = random_point(16, 2, &mut r).unwrap();
            let j = jeffreys(&stats, &x, &cfg).unwrap();
            assert!(j <= fk.j_closed_form * (1.0 + 1e-12), "J = {j} exceeds J* = {}", fk.j_closed_form);
        }
    }

    #[test]
    fn llr_identical_channels_is_zero() {
        let mut r = rng(5);
        let c = random_spd(3, &mut r);
        let ch = ChannelizedStats::new(c.clone(), c, DVector::zeros(3)).unwrap();
        let m = DVector::zeros(3);
        for _ in 0..10 {
            let v = DVector::from_fn(3, |_, _| r.sample(StandardNormal));
            let lam = log_likelihood_ratio(&ch, (&m, &m), &v).unwrap();
            assert!(lam.abs() < 1e-12);
        }
    }

    #[test]
    fn llr_scalar_formula_and_antisymmetry() {
        let (a, b) = (2.0, 0.5);
        let ch = ChannelizedStats::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DVector::zeros(1),
        )
        .unwrap();
        let zero = DVector::zeros(1);
        let v = DVector::from_element(1, 1.3);
        let lam = log_likelihood_ratio(&ch, (&zero, &zero), &v).unwrap();
        assert_relative_eq!(lam, 1.3f64.powi(2) * (1.0 / b - 1.0 / a) + (b / a).ln(), epsilon = 1e-12);

        let swapped = ChannelizedStats::new(
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, a),
            DVector::zeros(1),
        )
        .unwrap();
        let lam_swapped = log_likelihood_ratio(&swapped, (&zero, &zero), &v).unwrap();
        assert_relative_eq!(lam_swapped, -lam, epsilon = 1e-12);
    }

    #[test]
    fn auc_known_cases() {
        assert_relative_eq!(auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap().auc, 1.0);
        assert_relative_eq!(auc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().auc, 0.5);
        assert_relative_eq!(auc(&[3.0, 1.0], &[2.0]).unwrap().auc, 0.5);
        assert!(auc(&[], &[1.0]).is_err());
        assert!(auc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn auc_matches_brute_force_exactly() {
        let mut r = rng(6);
        for _ in 0..100 {
            let n1 = 1 + (r.random::<u32>() % 50) as usize;
            let n2 = 1 + (r.random::<u32>() % 50) as usize;
            // Coarse grid to force plenty of ties.
            let s1: Vec<f64> = (0..n1).map(|_| (r.random::<u32>() % 8) as f64).collect();
            let s2: Vec<f64> = (0..n2).map(|_| (r.random::<u32>() % 8) as f64).collect();
            let fast = auc(&s1, &s2).unwrap().auc;
            let mut doubled = 0u128;
            for &a in &s1 {
                for &b in &s2 {
                    if a > b {
                        doubled += 2;
                    } else if a == b {
                        doubled += 1;
                    }
                }
            }
            let brute = doubled as f64 / (2 * n1 as u128 * n2 as u128) as f64;
            assert_eq!(fast, brute);
        }
    }

    #[test]
    fn auc_invariant_under_increasing_transform() {
        let mut r = rng(7);
        let s1: Vec<f64> = (0..40).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let s2: Vec<f64> = (0..30).map(|_| r.sample::<f64, _>(StandardNormal) + 0.4).collect();
        let base = auc(&s1, &s2).unwrap().auc;
        let t1: Vec<f64> = s1.iter().map(|v| v.atan()).collect();
        let t2: Vec<f64> = s2.iter().map(|v| v.atan()).collect();
        assert_eq!(auc(&t1, &t2).unwrap().auc, base);
    }

    #[test]
    fn rate_fit_power_laws() {
        let inv: Vec<(usize, f64)> = (1..=200).map(|k| (k, 1.0 / k as f64)).collect();
        assert_relative_eq!(rate_fit(&inv, 1, 200).unwrap(), -1.0, epsilon = 1e-9);
        let flat: Vec<(usize, f64)> = (1..=200).map(|k| (k, 3.5)).collect();
        assert_relative_eq!(rate_fit(&flat, 1, 200).unwrap(), 0.0, epsilon = 1e-12);
        let sq: Vec<(usize, f64)> = (1..=200).map(|k| (k, (k as f64).powi(-2))).collect();
        assert_relative_eq!(rate_fit(&sq, 1, 200).unwrap(), -2.0, epsilon = 1e-9);
        assert!(rate_fit(&inv[..5], 1, 200).is_err());
        let bad = vec![(1usize, 1.0), (2, -1.0)];
        assert!(rate_fit(&bad, 1, 200).is_err());
    }

    #[test]
    fn fd_check_rayleigh_gradient() {
        let mut r = rng(8);
        let a = random_spd(8, &mut r);
        let obj = RayleighObjective::new(a).unwrap();
        let x = random_point(8, 2, &mut r).unwrap();
        let err = fd_gradient_check(&obj, &x, 10, 1e-5, &mut r).unwrap();
        assert!(err < 1e-6, "fd error {err}");
    }

    #[test]
    fn fd_check_constant_objective() {
        let mut r = rng(9);
        let k = random_spd(6, &mut r);
        let stats = ClassStats::new(k.clone(), k, DVector::zeros(6)).unwrap();
        let obj = NegJeffreys::new(stats, ObjectiveConfig::for_subspace_dim(2));
        let x = random_point(6, 2, &mut r).unwrap();
        let err = fd_gradient_check(&obj, &x, 5, 1e-5, &mut r).unwrap();
        assert!(err < 1e-9, "fd error {err}");
    }

    #[test]
    fn fd_check_jeffreys_gradient() {
        let mut r = rng(10);
        let stats = ClassStats::new(
            random_spd(16, &mut r),
            random_spd(16, &mut r),
            DVector::from_fn(16, |_, _| r.sample(StandardNormal)),
        )
        .unwrap();
        let obj = NegJeffreys::new(stats, ObjectiveConfig::for_subspace_dim(3));
        let x = random_point(16, 3, &mut r).unwrap();
        let err = fd_gradient_check(&obj, &x, 10, 1e-5, &mut r).unwrap();
        assert!(err < 1e-5, "fd error {err}");
    }

    #[test]
    fn back_projection_shape() {
        let mut r = rng(11);
        let stats = ClassStats::new(
            random_spd(12, &mut r),
            random_spd(12, &mut r),
            DVector::zeros(12),
        )
        .unwrap();
        let x = random_point(12, 4, &mut r).unwrap();
        let bp = back_projection(&stats, &x, 5).unwrap();
        assert_eq!((bp.nrows(), bp.ncols()), (12, 4));
    }
}
