//! Posteriors with known structure for validating the samplers.
//!
//! [`ConjugateLinReg`] has a closed-form Gaussian posterior, so sampler
//! moments can be compared against exact values. [`TwoModeModel`] observes
//! `y ≈ w²·x`, whose posterior over `w` has two mirror-image modes at
//! `±w*`; a sampler that captures multimodality must visit both.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, rng_from};
use crate::samplers::{
    run_csghmc, run_sgd, sghmc_step, steps_per_epoch, CyclicalSchedule, Objective, SghmcConfig, SghmcState,
    TrainConfig,
};

/// Bayesian linear regression `y = X·w + noise`, `w ~ N(0, α⁻¹I)`,
/// noise precision `β_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateLinReg {
    pub dim: usize,
    /// Row-major `n × dim`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub prior_precision: f64,
    pub noise_precision: f64,
}

impl ConjugateLinReg {
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>, prior_precision: f64, noise_precision: f64) -> Result<Self> {
        if dim == 0 || x.len() != y.len() * dim {
            return Err(Error::Dimension(format!(
                "design matrix of {} entries does not match {} targets in {dim} dims",
                x.len(),
                y.len()
            )));
        }
        if !(prior_precision > 0.0 && noise_precision > 0.0) {
            return Err(Error::Validation("precisions must be > 0".into()));
        }
        Ok(Self {
            dim,
            x,
            y,
            prior_precision,
            noise_precision,
        })
    }

    /// Seeded system with standard-normal design rows and a fixed true weight.
    pub fn synthetic(true_w: &[f64], rows: usize, prior_precision: f64, noise_precision: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed);
        let dim = true_w.len();
        let noise = Normal::new(0.0, noise_precision.powf(-0.5))
            .map_err(|e| Error::Validation(format!("noise precision: {e}")))?;
        let mut x = Vec::with_capacity(rows * dim);
        let mut y = Vec::with_capacity(rows);
        for _ in 0..rows {
            let row: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            y.push(row.iter().zip(true_w).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng));
            x.extend(row);
        }
        Self::new(dim, x, y, prior_precision, noise_precision)
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Posterior precision `αI + β_n·XᵀX`, row-major.
    pub fn posterior_precision(&self) -> Vec<f64> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        for i in 0..self.rows() {
            let r = self.row(i);
            for p in 0..d {
                for q in 0..d {
                    a[p * d + q] += self.noise_precision * r[p] * r[q];
                }
            }
        }
        for p in 0..d {
            a[p * d + p] += self.prior_precision;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
}

impl GaussianPosterior {
    pub fn cov_diag(&self) -> Vec<f64> {
        let d = self.mean.len();
        (0..d).map(|i| self.cov[i * d + i]).collect()
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if v <= 0.0 {
                    return Err(Error::Numerical("matrix is not positive definite".into()));
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L·Lᵀ·x = b` in place.
fn cholesky_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * b[k]).sum();
        b[i] = (b[i] - s) / l[i * d + i];
    }
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| l[k * d + i] * b[k]).sum();
        b[i] = (b[i] - s) / l[i * d + i];
    }
}

/// `Σ = (αI + β_n·XᵀX)⁻¹`, `μ = β_n·Σ·Xᵀy`.
pub fn analytic_posterior(reg: &ConjugateLinReg) -> Result<GaussianPosterior> {
    let d = reg.dim;
    let l = cholesky(&reg.posterior_precision(), d)?;
    let mut cov = vec![0.0; d * d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        cholesky_solve(&l, d, &mut e);
        for i in 0..d {
            cov[i * d + j] = e[i];
        }
    }
    // Symmetrise away round-off.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let mut rhs = vec![0.0; d];
    for i in 0..reg.rows() {
        for (p, xp) in reg.row(i).iter().enumerate() {
            rhs[p] += reg.noise_precision * xp * reg.y[i];
        }
    }
    cholesky_solve(&l, d, &mut rhs);
    Ok(GaussianPosterior { mean: rhs, cov })
}

impl Objective for ConjugateLinReg {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_examples(&self) -> usize {
        self.rows()
    }

    fn likelihood_count(&self) -> f64 {
        self.rows() as f64
    }

    fn batch_nll_grad(&self, theta: &[f64], batch: &[usize], _seed: u64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.dim];
        let mut loss = 0.0;
        for &i in batch {
            let r = self.row(i);
            let resid = self.y[i] - r.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            loss += 0.5 * self.noise_precision * resid * resid;
            grad.iter_mut()
                .zip(r)
                .for_each(|(g, xp)| *g -= self.noise_precision * resid * xp);
        }
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }
}

/// Constant-step SGHMC run against the linear-regression oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRunConfig {
    pub lr: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub burn_in_steps: u64,
    pub draws: usize,
    pub thin: u64,
    pub seed: u64,
}

impl MomentRunConfig {
    /// Full-batch run at `η·a_max = 0.25`, `β = 0.2`, 4000 draws thinned by 25.
    pub fn for_oracle(reg: &ConjugateLinReg, seed: u64) -> Result<Self> {
        Ok(Self {
            lr: Self::lr_for_stiffness(reg, 0.25)?,
            beta: 0.2,
            batch_size: reg.rows(),
            burn_in_steps: 2000,
            draws: 4000,
            thin: 25,
            seed,
        })
    }

    /// Step size `ℓ` that puts the stiffest posterior direction at
    /// `η·a_max = stiffness` with `η = ℓ/2`. The noise-free update is stable
    /// for `η·a < 2(1 + β)`.
    pub fn lr_for_stiffness(reg: &ConjugateLinReg, stiffness: f64) -> Result<f64> {
        let a_max = largest_eigenvalue(&reg.posterior_precision(), reg.dim);
        if !(a_max > 0.0) {
            return Err(Error::Numerical("posterior precision has no positive eigenvalue".into()));
        }
        Ok(2.0 * stiffness / a_max)
    }
}

/// The `d = 2` system used for the sampler check.
pub fn default_linreg() -> Result<ConjugateLinReg> {
    ConjugateLinReg::synthetic(&[1.0, -2.0], 40, 1.0, 4.0, 1)
}

fn largest_eigenvalue(a: &[f64], d: usize) -> f64 {
    let mut v = vec![1.0; d];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut w = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                w[i] += a[i * d + j] * v[j];
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MomentOutcome {
    Completed,
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub outcome: MomentOutcome,
    pub analytic_mean: Vec<f64>,
    pub analytic_cov_diag: Vec<f64>,
    pub sample_mean: Vec<f64>,
    pub sample_cov_diag: Vec<f64>,
    /// `|sample mean − μ| / |μ|` per dimension.
    pub mean_rel_err: Vec<f64>,
    /// `|sample var − Σ_ii| / Σ_ii` per dimension.
    pub cov_rel_err: Vec<f64>,
    pub draws: usize,
}

impl MomentReport {
    pub fn passes(&self, mean_tol: f64, cov_tol: f64) -> bool {
        self.outcome == MomentOutcome::Completed
            && self.mean_rel_err.iter().all(|e| *e < mean_tol)
            && self.cov_rel_err.iter().all(|e| *e < cov_tol)
    }
}

/// Runs SGHMC on `reg` and compares the empirical moments with the
/// closed-form posterior.
pub fn sghmc_vs_analytic(reg: &ConjugateLinReg, config: &MomentRunConfig) -> Result<MomentReport> {
    let exact = analytic_posterior(reg)?;
    let d = reg.dim;
    if config.batch_size < 1 || config.batch_size > reg.rows() || config.thin < 1 {
        return Err(Error::Config("batch_size must be in 1..=rows and thin >= 1".into()));
    }
    let n = reg.likelihood_count();
    let lambda_over_n = reg.prior_precision / n;
    let mut state = SghmcState::new(vec![0.0; d], config.beta)?;
    let mut noise = derived_rng(config.seed, "langevin", 0);
    let mut batch_rng = derived_rng(config.seed, "batches", 0);
    let total_steps = config.burn_in_steps + config.draws as u64 * config.thin;

    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut draws = 0usize;
    let mut outcome = MomentOutcome::Completed;
    let all: Vec<usize> = (0..reg.rows()).collect();
    for step in 0..total_steps {
        let probe = state.lookahead();
        let batch: Vec<usize> = if config.batch_size == reg.rows() {
            all.clone()
        } else {
            rand::seq::index::sample(&mut batch_rng, reg.rows(), config.batch_size).into_vec()
        };
        let (_, mut grad) = reg.batch_nll_grad(&probe, &batch, 0)?;
        grad.iter_mut().zip(&probe).for_each(|(g, t)| *g += lambda_over_n * t);
        let diverged = grad.iter().any(|g| !g.is_finite())
            || sghmc_step(&mut state, &grad, config.lr, n, true, &mut noise).is_err()
            || state.theta.iter().any(|t| t.abs() > 1e12);
        if diverged {
            outcome = MomentOutcome::Diverged { step };
            break;
        }
        if step >= config.burn_in_steps && (step - config.burn_in_steps + 1).is_multiple_of(config.thin) {
            for i in 0..d {
                sum[i] += state.theta[i];
                sum_sq[i] += state.theta[i] * state.theta[i];
            }
            draws += 1;
        }
    }

    let (sample_mean, sample_cov_diag) = if draws >= 2 && outcome == MomentOutcome::Completed {
        let m: Vec<f64> = sum.iter().map(|s| s / draws as f64).collect();
        let v = (0..d)
            .map(|i| (sum_sq[i] - draws as f64 * m[i] * m[i]) / (draws as f64 - 1.0))
            .collect();
        (m, v)
    } else {
        (vec![f64::NAN; d], vec![f64::NAN; d])
    };
    let cov_diag = exact.cov_diag();
    let mean_rel_err = (0..d)
        .map(|i| (sample_mean[i] - exact.mean[i]).abs() / exact.mean[i].abs())
        .collect();
    let cov_rel_err = (0..d)
        .map(|i| (sample_cov_diag[i] - cov_diag[i]).abs() / cov_diag[i])
        .collect();
    Ok(MomentReport {
        outcome,
        analytic_mean: exact.mean,
        analytic_cov_diag: cov_diag,
        sample_mean,
        sample_cov_diag,
        mean_rel_err,
        cov_rel_err,
        draws,
    })
}

/// Observations `y_i = w*²·x_i + noise`; the likelihood is invariant under
/// `w → −w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModeModel {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub true_w: f64,
    pub noise_precision: f64,
    pub prior_precision: f64,
}

impl TwoModeModel {
    pub fn synthetic(true_w: f64, rows: usize, noise_precision: f64, prior_precision: f64, seed: u64) -> Result<Self> {
        if rows == 0 || !(noise_precision > 0.0) || !(prior_precision >= 0.0) {
            return Err(Error::Validation("two-mode model needs rows >= 1 and positive precisions".into()));
        }
        let mut rng = rng_from(seed);
        let noise = Normal::new(0.0, noise_precision.powf(-0.5))
            .map_err(|e| Error::Validation(format!("noise precision: {e}")))?;
        let x: Vec<f64> = (0..rows).map(|_| rng.random_range(0.5..1.5)).collect();
        let y = x.iter().map(|xi| true_w * true_w * xi + noise.sample(&mut rng)).collect();
        Ok(Self {
            x,
            y,
            true_w,
            noise_precision,
            prior_precision,
        })
    }

    /// Log-likelihood up to a constant.
    pub fn log_likelihood(&self, w: f64) -> f64 {
        let w2 = w * w;
        -0.5 * self.noise_precision
            * self
                .x
                .iter()
                .zip(&self.y)
                .map(|(x, y)| (y - w2 * x).powi(2))
                .sum::<f64>()
    }

    /// `|w|` at the posterior modes.
    pub fn mode_magnitude(&self) -> f64 {
        // Stationary points of β/2·Σ(y − w²x)² + α/2·w²: w² = (βΣxy − α/2)/(βΣx²).
        let sxy: f64 = self.x.iter().zip(&self.y).map(|(x, y)| x * y).sum();
        let sxx: f64 = self.x.iter().map(|x| x * x).sum();
        let w2 = (self.noise_precision * sxy - 0.5 * self.prior_precision) / (self.noise_precision * sxx);
        w2.max(0.0).sqrt()
    }
}

impl Objective for TwoModeModel {
    fn dim(&self) -> usize {
        1
    }

    fn num_examples(&self) -> usize {
        self.x.len()
    }

    fn likelihood_count(&self) -> f64 {
        self.x.len() as f64
    }

    fn batch_nll_grad(&self, theta: &[f64], batch: &[usize], _seed: u64) -> Result<(f64, Vec<f64>)> {
        let w = theta[0];
        let (mut loss, mut grad) = (0.0, 0.0);
        for &i in batch {
            let resid = self.y[i] - w * w * self.x[i];
            loss += 0.5 * self.noise_precision * resid * resid;
            grad -= self.noise_precision * resid * 2.0 * w * self.x[i];
        }
        let inv = 1.0 / batch.len() as f64;
        Ok((loss * inv, vec![grad * inv]))
    }
}

/// Ten observations with a barrier of about 3 nats between the modes.
pub fn default_two_mode() -> Result<TwoModeModel> {
    TwoModeModel::synthetic(1.0, 10, 1.5, 1.0, 7)
}

/// Number of distinct signs among snapshots with `|w| > 0.5·w*`.
pub fn mode_visit_count(model: &TwoModeModel, snapshots: &[f64]) -> usize {
    let threshold = 0.5 * model.mode_magnitude();
    let pos = snapshots.iter().any(|w| *w > threshold);
    let neg = snapshots.iter().any(|w| *w < -threshold);
    pos as usize + neg as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRunConfig {
    pub lr0: f64,
    pub beta: f64,
    pub cycles: usize,
    pub cycle_length: usize,
    pub burn_in_cycles: usize,
    pub samples: usize,
    pub batch_size: usize,
    pub sgd_lr: f64,
    pub sgd_epochs: usize,
}

impl Default for ModeRunConfig {
    fn default() -> Self {
        Self {
            lr0: 0.03,
            beta: 0.5,
            cycles: 10,
            cycle_length: 30,
            burn_in_cycles: 2,
            samples: 8,
            batch_size: 2,
            sgd_lr: 0.01,
            sgd_epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub seed: u64,
    pub csghmc_snapshots: Vec<f64>,
    pub csghmc_modes: usize,
    pub map_estimate: f64,
    pub map_modes: usize,
}

/// cSGHMC and SGD on the same two-mode model from the same initial point.
pub fn mode_capture_run(model: &TwoModeModel, config: &ModeRunConfig, seed: u64) -> Result<ModeReport> {
    let init = vec![rng_from(derive_seed(seed, "init", 0)).sample::<f64, _>(rand_distr::StandardNormal)];
    let spe = steps_per_epoch(model.num_examples(), config.batch_size);
    let schedule = CyclicalSchedule {
        lr0: config.lr0,
        cycle_length: config.cycle_length,
        steps_per_epoch: spe,
        total_epochs: config.cycles * config.cycle_length,
        burn_in_epochs: config.burn_in_cycles * config.cycle_length,
        noise_start_epoch: 0,
        warmup_steps: 0,
    };
    let sampled = run_csghmc(
        model,
        init.clone(),
        &SghmcConfig {
            schedule,
            batch_size: config.batch_size,
            beta: config.beta,
            weight_decay: model.prior_precision,
            samples: config.samples,
            seed,
        },
    )?;
    let snapshots: Vec<f64> = sampled.snapshots.iter().map(|s| s.theta[0]).collect();
    let map = run_sgd(
        model,
        init,
        &TrainConfig {
            batch_size: config.batch_size,
            epochs: config.sgd_epochs,
            lr: config.sgd_lr,
            momentum: 0.9,
            weight_decay: model.prior_precision / model.num_examples() as f64,
            seed,
        },
    )?;
    let map_estimate = map.theta[0];
    Ok(ModeReport {
        seed,
        csghmc_modes: mode_visit_count(model, &snapshots),
        csghmc_snapshots: snapshots,
        map_modes: mode_visit_count(model, &[map_estimate]),
        map_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gauss-Jordan inverse with partial pivoting.
    fn naive_inverse(a: &[f64], d: usize) -> Vec<f64> {
        let mut m: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut row = a[i * d..(i + 1) * d].to_vec();
                row.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&p, &q| m[p][col].abs().partial_cmp(&m[q][col].abs()).unwrap())
                .unwrap();
            m.swap(col, pivot);
            let div = m[col][col];
            m[col].iter_mut().for_each(|v| *v /= div);
            for r in 0..d {
                if r != col {
                    let f = m[r][col];
                    let pivot_row = m[col].clone();
                    m[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        m.into_iter().flat_map(|row| row[d..].to_vec()).collect()
    }

    #[test]
    fn no_data_gives_prior() {
        let reg = ConjugateLinReg::new(3, vec![], vec![], 2.0, 1.0).unwrap();
        let post = analytic_posterior(&reg).unwrap();
        assert_eq!(post.mean, vec![0.0; 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((post.cov[i * 3 + j] - if i == j { 0.5 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn one_dimensional_hand_case() {
        let reg = ConjugateLinReg::new(1, vec![1.0], vec![2.0], 1.0, 1.0).unwrap();
        let post = analytic_posterior(&reg).unwrap();
        assert!((post.cov[0] - 0.5).abs() < 1e-15);
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_naive_inverse() {
        for seed in 0..20 {
            let reg = ConjugateLinReg::synthetic(&[0.7, -1.3], 15, 0.5 + seed as f64 * 0.1, 3.0, seed).unwrap();
            let post = analytic_posterior(&reg).unwrap();
            let inv = naive_inverse(&reg.posterior_precision(), 2);
            let mut xty = [0.0; 2];
            for i in 0..reg.rows() {
                for p in 0..2 {
                    xty[p] += reg.x[i * 2 + p] * reg.y[i];
                }
            }
            for i in 0..2 {
                let mu: f64 = (0..2).map(|j| reg.noise_precision * inv[i * 2 + j] * xty[j]).sum();
                assert!((mu - post.mean[i]).abs() < 1e-10);
                for j in 0..2 {
                    assert!((inv[i * 2 + j] - post.cov[i * 2 + j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn covariance_is_spd_and_shrinks_with_noise_precision() {
        let reg = ConjugateLinReg::synthetic(&[1.0, 2.0, -0.5], 10, 1.0, 2.0, 9).unwrap();
        let post = analytic_posterior(&reg).unwrap();
        assert!(cholesky(&post.cov, 3).is_ok());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(post.cov[i * 3 + j], post.cov[j * 3 + i]);
            }
        }
        let sharper = ConjugateLinReg {
            noise_precision: 4.0,
            ..reg.clone()
        };
        let tight = analytic_posterior(&sharper).unwrap().cov_diag();
        for (a, b) in tight.iter().zip(post.cov_diag()) {
            assert!(*a < b);
        }
    }

    #[test]
    fn two_mode_likelihood_is_symmetric() {
        let model = TwoModeModel::synthetic(1.0, 10, 1.0, 1.0, 3).unwrap();
        for w in [-2.0, -0.3, 0.0, 0.77, 1.5] {
            assert_eq!(model.log_likelihood(w), model.log_likelihood(-w));
        }
    }

    #[test]
    fn two_mode_gradient_is_odd() {
        let model = default_two_mode().unwrap();
        let batch: Vec<usize> = (0..10).collect();
        for w in [0.3, 0.9, 1.7] {
            let (lp, gp) = model.batch_nll_grad(&[w], &batch, 0).unwrap();
            let (lm, gm) = model.batch_nll_grad(&[-w], &batch, 0).unwrap();
            assert_eq!(lp, lm);
            assert_eq!(gp[0], -gm[0]);
            let h = 1e-6;
            let fd = (model.batch_nll_grad(&[w + h], &batch, 0).unwrap().0
                - model.batch_nll_grad(&[w - h], &batch, 0).unwrap().0)
                / (2.0 * h);
            assert!((fd - gp[0]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn linreg_gradient_matches_finite_differences() {
        let reg = default_linreg().unwrap();
        let batch = [0, 3, 7];
        let theta = [0.4, -1.1];
        let (_, g) = reg.batch_nll_grad(&theta, &batch, 0).unwrap();
        for i in 0..2 {
            let mut up = theta;
            let mut dn = theta;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (reg.batch_nll_grad(&up, &batch, 0).unwrap().0 - reg.batch_nll_grad(&dn, &batch, 0).unwrap().0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn mode_counts() {
        let model = TwoModeModel::synthetic(1.0, 10, 4.0, 1.0, 3).unwrap();
        let w = model.mode_magnitude();
        assert_eq!(mode_visit_count(&model, &[w, 0.9 * w, 1.1 * w]), 1);
        assert_eq!(mode_visit_count(&model, &[w, -w]), 2);
        assert_eq!(mode_visit_count(&model, &[0.1 * w]), 0);
    }

    #[test]
    fn huge_step_diverges() {
        let reg = default_linreg().unwrap();
        let base = MomentRunConfig::for_oracle(&reg, 0).unwrap();
        let report = sghmc_vs_analytic(
            &reg,
            &MomentRunConfig {
                lr: 10.0 * base.lr,
                ..base
            },
        )
        .unwrap();
        assert!(matches!(report.outcome, MomentOutcome::Diverged { .. }));
        assert!(!report.passes(0.05, 0.2));
    }
}
