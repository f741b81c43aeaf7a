//! Heteroscedastic Gaussian image simulation.
//!
//! Images live on a `side × side` pixel grid and are flattened in
//! lexicographic order (row-major), so `n = side²`. Each class is a
//! stationary Gaussian random field whose covariance between pixels `a` and
//! `b` is the squared-exponential kernel
//!
//! ```text
//! K[a,b] = exp(−‖r_a − r_b‖² / (2σ²)) + nugget·1[a = b]
//! ```
//!
//! with unit marginal variance and a per-class correlation length `σ` in
//! pixels. The nugget keeps the kernel matrix factorizable: on a grid the
//! squared-exponential spectrum decays fast enough that large-`σ` matrices
//! are numerically rank deficient without it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_nugget() -> f64 {
    1e-8
}

/// Pixel grid and per-class correlation lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Pixels per image edge; images are `side × side`.
    pub side: usize,
    /// Correlation length of class 1, in pixels.
    pub sigma1: f64,
    /// Correlation length of class 2, in pixels.
    pub sigma2: f64,
    /// Diagonal boost added to the kernel.
    #[serde(default = "default_nugget")]
    pub nugget: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 2 {
            return Err(Error::Config(format!("side must be at least 2, got {}", self.side)));
        }
        if !(self.sigma1 > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::Config(format!(
                "correlation lengths must be positive, got sigma1={}, sigma2={}",
                self.sigma1, self.sigma2
            )));
        }
        if !(self.nugget >= 0.0) {
            return Err(Error::Config(format!("nugget must be nonnegative, got {}", self.nugget)));
        }
        Ok(())
    }

    /// Ambient dimension `n = side²`.
    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn sigma_for(&self, class: ClassId) -> f64 {
        match class {
            ClassId::One => self.sigma1,
            ClassId::Two => self.sigma2,
        }
    }
}

/// Which of the two image classes a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    One,
    Two,
}

impl ClassId {
    pub const BOTH: [ClassId; 2] = [ClassId::One, ClassId::Two];

    pub fn label(&self) -> &'static str {
        match self {
            ClassId::One => "class1",
            ClassId::Two => "class2",
        }
    }
}

/// A batch of simulated images, one per row in lexicographic pixel order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: DMatrix<f64>,
    pub class: ClassId,
    pub seed: u64,
}

impl Dataset {
    /// Number of images.
    pub fn count(&self) -> usize {
        self.images.nrows()
    }

    /// Pixels per image.
    pub fn dim(&self) -> usize {
        self.images.ncols()
    }
}

/// Builds the squared-exponential covariance for one class and verifies it is
/// factorizable.
pub fn build_covariance(grid: &GridSpec, class: ClassId) -> Result<DMatrix<f64>> {
    grid.validate()?;
    let side = grid.side;
    let n = grid.dim();
    let sigma = grid.sigma_for(class);
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut k = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        let (ra, ca) = ((a / side) as f64, (a % side) as f64);
        for b in a..n {
            let (rb, cb) = ((b / side) as f64, (b % side) as f64);
            let d_sq = (ra - rb).powi(2) + (ca - cb).powi(2);
            let mut v = (-d_sq * inv_two_sigma_sq).exp();
            if a == b {
                v += grid.nugget;
            }
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    if k.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(format!(
            "squared-exponential kernel at sigma={sigma}, nugget={}",
            grid.nugget
        )));
    }
    Ok(k)
}

/// Draws `count` correlated Gaussian images: each row is
/// `mean + L·z` with `K = LLᵀ` and `z` standard normal.
///
/// Rows use independent counter-based RNG streams derived from `seed`, so the
/// output is identical regardless of how many threads sample it.
pub fn sample_images(
    k: &DMatrix<f64>,
    mean: &DVector<f64>,
    count: usize,
    class: ClassId,
    seed: u64,
) -> Result<Dataset> {
    let n = k.nrows();
    if mean.len() != n {
        return Err(crate::error::dim_err("sample_images", n, mean.len()));
    }
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("covariance passed to sample_images".into()))?;
    let l = chol.l();
    let rows: Vec<DVector<f64>> = (0..count)
        .into_par_iter()
        .map(|row| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            mean + &l * z
        })
        .collect();
    let mut images = DMatrix::<f64>::zeros(count, n);
    for (i, row) in rows.iter().enumerate() {
        images.set_row(i, &row.transpose());
    }
    Ok(Dataset {
        images,
        class,
        seed,
    })
}

/// Unbiased sample covariance `(G − 1μᵀ)ᵀ(G − 1μᵀ)/(N−1)` with `μ` the
/// column-wise sample mean. Symmetric positive semidefinite with rank at most
/// `min(N−1, n)`.
pub fn sample_covariance(data: &Dataset) -> Result<DMatrix<f64>> {
    let count = data.count();
    if count < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: count });
    }
    let n = data.dim();
    let mean = data.images.row_mean();
    let mut centered = data.images.clone();
    for i in 0..count {
        for j in 0..n {
            centered[(i, j)] -= mean[j];
        }
    }
    let k = centered.transpose() * &centered / (count as f64 - 1.0);
    let kt = k.transpose();
    Ok((k + kt) * 0.5)
}

/// Shrinkage toward the identity: `(1−λ)·K̂ + λ·I`. Maps each eigenvalue `μ`
/// to `(1−λ)μ + λ`, so any positive semidefinite input becomes positive
/// definite with eigenvalues at least `λ`.
pub fn shrink(k_hat: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!(
            "shrinkage parameter must lie strictly inside (0,1), got {lambda}"
        )));
    }
    let n = k_hat.nrows();
    if k_hat.ncols() != n {
        return Err(crate::error::dim_err("shrink", "square matrix", format!("{}x{}", n, k_hat.ncols())));
    }
    Ok(k_hat * (1.0 - lambda) + DMatrix::<f64>::identity(n, n) * lambda)
}

/// Writes one image row as an 8-bit binary PGM, min-max normalized.
/// Inspection convenience only; nothing reads these back.
pub fn image_to_pgm(row: &[f64], side: usize) -> Vec<u8> {
    assert_eq!(row.len(), side * side, "row length must equal side^2");
    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(row.iter().map(|&v| (255.0 * (v - lo) / span).round() as u8));
    out
}
