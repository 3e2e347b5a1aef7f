//! SGD with momentum, SGHMC with a cyclical step size, and the
//! end-of-cycle snapshot collector.
//!
//! SGHMC follows the two-line update
//!
//! ```text
//! θ_k = θ_{k-1} + m_{k-1}
//! m_k = β·m_{k-1} − (ℓ_k/2)·n·∇Ũ(θ_k) + √((1−β)·ℓ_k)·ε_k
//! ```
//!
//! with `∇Ũ(θ) = mean minibatch NLL gradient + (λ/n)·θ`, so that
//! `n·∇Ũ` estimates the gradient of the full negative log posterior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng};

/// A differentiable data term that the drivers below can minimise or sample.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Number of examples minibatches are drawn from.
    fn num_examples(&self) -> usize;

    /// `n` in the gradient estimator: how many likelihood terms the full
    /// data set contributes.
    fn likelihood_count(&self) -> f64;

    /// Mean negative log-likelihood over the examples in `batch` and its
    /// gradient at `theta`. `seed` feeds any randomness (dropout masks).
    fn batch_nll_grad(&self, theta: &[f64], batch: &[usize], seed: u64) -> Result<(f64, Vec<f64>)>;
}

/// Cosine step-size schedule with warm restarts; cycle length in epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclicalSchedule {
    pub lr0: f64,
    pub cycle_length: usize,
    pub steps_per_epoch: usize,
    pub total_epochs: usize,
    pub burn_in_epochs: usize,
    pub noise_start_epoch: usize,
    /// Linear ramp of the step size over the first steps of the chain only;
    /// keeps the first large step from a random init stable. 0 disables it.
    pub warmup_steps: u64,
}

impl CyclicalSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.cycle_length < 1 || self.steps_per_epoch < 1 {
            return Err(Error::Config("cycle_length and steps_per_epoch must be >= 1".into()));
        }
        if self.burn_in_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "burn-in ({}) must be shorter than training ({} epochs)",
                self.burn_in_epochs, self.total_epochs
            )));
        }
        if self.noise_start_epoch > self.total_epochs {
            return Err(Error::Config("noise_start_epoch exceeds total_epochs".into()));
        }
        Ok(())
    }

    /// Steps per cycle, `K_c`.
    pub fn cycle_steps(&self) -> usize {
        self.cycle_length * self.steps_per_epoch
    }

    /// Complete cycles in the run.
    pub fn num_cycles(&self) -> usize {
        self.total_epochs / self.cycle_length
    }

    pub fn cycle_of(&self, epoch: usize) -> usize {
        epoch / self.cycle_length
    }

    /// Complete cycles that start at or after the end of burn-in.
    pub fn post_burn_in_cycles(&self) -> usize {
        (0..self.num_cycles())
            .filter(|c| c * self.cycle_length >= self.burn_in_epochs)
            .count()
    }

    pub fn noise_on(&self, epoch: usize) -> bool {
        epoch >= self.noise_start_epoch
    }

    /// [`cyclic_lr`] scaled by the initial warmup ramp.
    pub fn lr_at(&self, step: u64) -> f64 {
        let lr = cyclic_lr(self, step);
        if step < self.warmup_steps {
            lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            lr
        }
    }
}

/// `ℓ_k = (ℓ₀/2)·(cos(π·(k mod K_c)/K_c) + 1)`.
pub fn cyclic_lr(schedule: &CyclicalSchedule, step: u64) -> f64 {
    let kc = schedule.cycle_steps() as u64;
    let phase = (step % kc) as f64 / kc as f64;
    0.5 * schedule.lr0 * ((std::f64::consts::PI * phase).cos() + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SghmcState {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    pub beta: f64,
    pub step: u64,
}

impl SghmcState {
    pub fn new(theta: Vec<f64>, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Config(format!("momentum beta must be in [0, 1), got {beta}")));
        }
        let momentum = vec![0.0; theta.len()];
        Ok(Self {
            theta,
            momentum,
            beta,
            step: 0,
        })
    }

    /// `θ_{k-1} + m_{k-1}`: the point at which the next gradient is taken.
    pub fn lookahead(&self) -> Vec<f64> {
        self.theta.iter().zip(&self.momentum).map(|(t, m)| t + m).collect()
    }
}

fn check_finite(values: &[f64], step: u64, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training {
            step,
            message: format!("non-finite {what}"),
        })
    }
}

/// One SGHMC update. `grad` is `∇Ũ` evaluated at [`SghmcState::lookahead`]
/// and `n` the likelihood count multiplying it.
pub fn sghmc_step<R: Rng + ?Sized>(
    state: &mut SghmcState,
    grad: &[f64],
    lr: f64,
    n: f64,
    noise_on: bool,
    rng: &mut R,
) -> Result<()> {
    if grad.len() != state.theta.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries, state has {}",
            grad.len(),
            state.theta.len()
        )));
    }
    check_finite(grad, state.step, "gradient")?;
    let drift = 0.5 * lr * n;
    let noise_scale = ((1.0 - state.beta) * lr).sqrt();
    for ((t, m), g) in state.theta.iter_mut().zip(state.momentum.iter_mut()).zip(grad) {
        *t += *m;
        let mut next = state.beta * *m - drift * g;
        if noise_on {
            let eps: f64 = rng.sample(StandardNormal);
            next += noise_scale * eps;
        }
        *m = next;
    }
    state.step += 1;
    check_finite(&state.theta, state.step, "parameters")?;
    check_finite(&state.momentum, state.step, "momentum")
}

/// `v' = μ·v − lr·g`, `θ' = θ + v'`.
pub fn sgd_momentum_step(
    theta: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
    step: u64,
) -> Result<()> {
    if theta.len() != grad.len() || velocity.len() != grad.len() {
        return Err(Error::Dimension("sgd step: length mismatch".into()));
    }
    check_finite(grad, step, "gradient")?;
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *t += *v;
    }
    check_finite(theta, step, "parameters")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collect {
    Skip,
    /// Keep the parameters recorded at this epoch offset within the cycle.
    Snapshot { epoch_in_cycle: usize },
}

/// Decides at the end of `epoch` whether the current cycle yields a sample.
///
/// Fires on the last epoch of a complete cycle that starts after burn-in and
/// is among the final `samples` cycles, picking the epoch with minimal
/// training loss. `cycle_losses` holds the losses of this cycle so far.
pub fn collect_policy(schedule: &CyclicalSchedule, samples: usize, epoch: usize, cycle_losses: &[f64]) -> Collect {
    let cycle = schedule.cycle_of(epoch);
    let last_in_cycle = (epoch + 1).is_multiple_of(schedule.cycle_length);
    let total = schedule.num_cycles();
    let eligible = cycle < total
        && cycle * schedule.cycle_length >= schedule.burn_in_epochs
        && cycle + samples >= total;
    if !last_in_cycle || !eligible || cycle_losses.is_empty() {
        return Collect::Skip;
    }
    let best = cycle_losses
        .iter()
        .enumerate()
        .fold(0, |best, (i, l)| if *l < cycle_losses[best] { i } else { best });
    Collect::Snapshot { epoch_in_cycle: best }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, num_examples: usize) -> Result<()> {
        if self.batch_size < 1 || num_examples < self.batch_size {
            return Err(Error::Config(format!(
                "batch size {} invalid for {num_examples} examples",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr > 0, momentum in [0,1), weight_decay >= 0 required".into()));
        }
        Ok(())
    }
}

pub fn steps_per_epoch(num_examples: usize, batch_size: usize) -> usize {
    num_examples.div_ceil(batch_size)
}

fn epoch_batches(num_examples: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..num_examples).collect();
    idx.shuffle(&mut derived_rng(seed, "shuffle", epoch as u64));
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    /// Mean minibatch data loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minimises `mean NLL + (λ/2)‖θ‖²` with SGD + momentum.
pub fn run_sgd<O: Objective + ?Sized>(objective: &O, init: Vec<f64>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(objective.num_examples())?;
    let mut theta = init;
    let mut velocity = vec![0.0; theta.len()];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(objective.num_examples(), config.batch_size, config.seed, epoch);
        for batch in &batches {
            let seed = derive_seed(config.seed, "sgd-step", step);
            let (loss, mut grad) = objective.batch_nll_grad(&theta, batch, seed)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite loss in epoch {epoch}"),
                });
            }
            grad.iter_mut()
                .zip(&theta)
                .for_each(|(g, t)| *g += config.weight_decay * t);
            sgd_momentum_step(&mut theta, &mut velocity, &grad, config.lr, config.momentum, step)?;
            total += loss;
            step += 1;
        }
        epoch_losses.push(total / batches.len() as f64);
    }
    Ok(TrainOutcome { theta, epoch_losses })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SghmcConfig {
    pub schedule: CyclicalSchedule,
    pub batch_size: usize,
    pub beta: f64,
    /// Prior precision λ.
    pub weight_decay: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub cycle: usize,
    pub epoch: usize,
    pub loss: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsghmcOutcome {
    pub snapshots: Vec<Snapshot>,
    pub epoch_losses: Vec<f64>,
    pub final_theta: Vec<f64>,
}

/// Runs cyclical SGHMC and collects one snapshot per eligible cycle.
pub fn run_csghmc<O: Objective + ?Sized>(objective: &O, init: Vec<f64>, config: &SghmcConfig) -> Result<CsghmcOutcome> {
    let schedule = &config.schedule;
    schedule.validate()?;
    let expected_spe = steps_per_epoch(objective.num_examples(), config.batch_size);
    if config.batch_size < 1 || schedule.steps_per_epoch != expected_spe {
        return Err(Error::Config(format!(
            "schedule assumes {} steps per epoch, data gives {expected_spe}",
            schedule.steps_per_epoch
        )));
    }
    if config.samples < 1 || schedule.post_burn_in_cycles() < config.samples {
        return Err(Error::Config(format!(
            "{} samples requested but only {} complete cycles follow burn-in",
            config.samples,
            schedule.post_burn_in_cycles()
        )));
    }
    let n = objective.likelihood_count();
    let lambda_over_n = config.weight_decay / n;
    let mut state = SghmcState::new(init, config.beta)?;
    let mut noise_rng = derived_rng(config.seed, "langevin", 0);
    let mut epoch_losses = Vec::with_capacity(schedule.total_epochs);
    let mut cycle_losses: Vec<f64> = Vec::new();
    let mut cycle_thetas: Vec<Vec<f64>> = Vec::new();
    let mut snapshots = Vec::new();

    for epoch in 0..schedule.total_epochs {
        if epoch % schedule.cycle_length == 0 {
            cycle_losses.clear();
            cycle_thetas.clear();
        }
        let noise_on = schedule.noise_on(epoch);
        let batches = epoch_batches(objective.num_examples(), config.batch_size, config.seed, epoch);
        let mut total = 0.0;
        for batch in &batches {
            let probe = state.lookahead();
            let seed = derive_seed(config.seed, "sghmc-step", state.step);
            let (loss, mut grad) = objective.batch_nll_grad(&probe, batch, seed)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: state.step,
                    message: format!("non-finite loss in epoch {epoch}"),
                });
            }
            grad.iter_mut()
                .zip(&probe)
                .for_each(|(g, t)| *g += lambda_over_n * t);
            let lr = schedule.lr_at(state.step);
            sghmc_step(&mut state, &grad, lr, n, noise_on, &mut noise_rng)?;
            total += loss;
        }
        let epoch_loss = total / batches.len() as f64;
        epoch_losses.push(epoch_loss);
        cycle_losses.push(epoch_loss);
        cycle_thetas.push(state.theta.clone());
        if let Collect::Snapshot { epoch_in_cycle } = collect_policy(schedule, config.samples, epoch, &cycle_losses) {
            let cycle = schedule.cycle_of(epoch);
            snapshots.push(Snapshot {
                cycle,
                epoch: cycle * schedule.cycle_length + epoch_in_cycle,
                loss: cycle_losses[epoch_in_cycle],
                theta: cycle_thetas[epoch_in_cycle].clone(),
            });
        }
    }
    Ok(CsghmcOutcome {
        snapshots,
        epoch_losses,
        final_theta: state.theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    fn schedule() -> CyclicalSchedule {
        CyclicalSchedule {
            lr0: 0.1,
            cycle_length: 4,
            steps_per_epoch: 25,
            total_epochs: 40,
            burn_in_epochs: 8,
            noise_start_epoch: 2,
            warmup_steps: 0,
        }
    }

    #[test]
    fn lr_at_cycle_start_middle_and_quarter() {
        let s = schedule();
        assert_eq!(cyclic_lr(&s, 0), 0.1);
        assert!((cyclic_lr(&s, 50) - 0.05).abs() < 1e-15);
        let expected = 0.1 / 2.0 * ((std::f64::consts::PI / 4.0).cos() + 1.0);
        assert!((cyclic_lr(&s, 25) - expected).abs() < 1e-15);
        assert!((cyclic_lr(&s, 25) - 0.08536).abs() < 1e-5);
        assert_eq!(cyclic_lr(&s, 100), 0.1);
        assert!(cyclic_lr(&s, 99) < 1e-4);
    }

    #[test]
    fn sghmc_hand_step() {
        let mut st = SghmcState::new(vec![1.0], 0.0).unwrap();
        sghmc_step(&mut st, &[2.0], 0.1, 1.0, false, &mut rng_from(0)).unwrap();
        assert_eq!(st.theta, vec![1.0]);
        assert!((st.momentum[0] + 0.1).abs() < 1e-15);
        // Next position picks up the momentum.
        assert!((st.lookahead()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sghmc_fixed_point_without_gradient_or_noise() {
        let mut st = SghmcState::new(vec![0.3, -0.7], 0.9).unwrap();
        sghmc_step(&mut st, &[0.0, 0.0], 0.1, 10.0, false, &mut rng_from(0)).unwrap();
        assert_eq!(st.theta, vec![0.3, -0.7]);
        assert_eq!(st.momentum, vec![0.0, 0.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn sghmc_noise_is_reproducible() {
        let run = || {
            let mut st = SghmcState::new(vec![0.5; 8], 0.5).unwrap();
            let mut rng = rng_from(17);
            for _ in 0..10 {
                let g = st.lookahead();
                sghmc_step(&mut st, &g, 0.01, 2.0, true, &mut rng).unwrap();
            }
            st
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sghmc_rejects_non_finite_gradient() {
        let mut st = SghmcState::new(vec![0.0], 0.5).unwrap();
        st.step = 41;
        let err = sghmc_step(&mut st, &[f64::NAN], 0.1, 1.0, false, &mut rng_from(0));
        assert!(matches!(err, Err(Error::Training { step: 41, .. })));
    }

    #[test]
    fn sghmc_noise_variance_matches_scale() {
        let (beta, lr) = (0.7, 0.02);
        let draws = 200_000;
        let mut st = SghmcState::new(vec![0.0; draws], beta).unwrap();
        sghmc_step(&mut st, &vec![0.0; draws], lr, 1.0, true, &mut rng_from(5)).unwrap();
        let var = st.momentum.iter().map(|m| m * m).sum::<f64>() / draws as f64;
        let expected = (1.0 - beta) * lr;
        assert!((var / expected - 1.0).abs() < 0.02, "var {var} vs {expected}");
    }

    #[test]
    fn sghmc_without_noise_descends_quadratic() {
        // U = ½ Σ a_i θ_i²
        let a = [1.0, 4.0];
        let mut st = SghmcState::new(vec![2.0, -1.5], 0.5).unwrap();
        let energy = |t: &[f64]| 0.5 * a.iter().zip(t).map(|(ai, ti)| ai * ti * ti).sum::<f64>();
        let mut prev = f64::INFINITY;
        for k in 0..400 {
            let probe = st.lookahead();
            let g: Vec<f64> = a.iter().zip(&probe).map(|(ai, ti)| ai * ti).collect();
            sghmc_step(&mut st, &g, 0.05, 1.0, false, &mut rng_from(0)).unwrap();
            let e = energy(&st.theta);
            if k > 50 {
                assert!(e <= prev + 1e-15, "energy rose at {k}");
            }
            prev = e;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn sgd_steps() {
        let mut th = vec![1.0];
        let mut v = vec![0.0];
        sgd_momentum_step(&mut th, &mut v, &[2.0], 0.1, 0.0, 0).unwrap();
        assert!((th[0] - 0.8).abs() < 1e-15);

        let mut th = vec![0.4, 2.0];
        let mut v = vec![0.0, 0.0];
        sgd_momentum_step(&mut th, &mut v, &[0.0, 0.0], 0.1, 0.99, 0).unwrap();
        assert_eq!(th, vec![0.4, 2.0]);

        // ½θ² bowl. With μ = 0.99 the iteration's spectral radius is √0.99,
        // too slow for 200 steps, so the convergence check uses μ = 0.9.
        let mut th = vec![1.0];
        let mut v = vec![0.0];
        for k in 0..200 {
            let g = th.clone();
            sgd_momentum_step(&mut th, &mut v, &g, 0.01, 0.9, k).unwrap();
        }
        assert!(th[0].abs() < 1e-3, "{}", th[0]);
    }

    #[test]
    fn warmup_ramps_only_the_start() {
        let s = CyclicalSchedule {
            warmup_steps: 10,
            ..schedule()
        };
        assert!((s.lr_at(0) - 0.1 * cyclic_lr(&s, 0)).abs() < 1e-15);
        assert!((s.lr_at(4) - 0.5 * cyclic_lr(&s, 4)).abs() < 1e-15);
        assert_eq!(s.lr_at(10), cyclic_lr(&s, 10));
        // The second cycle restarts at full lr0.
        assert_eq!(s.lr_at(100), 0.1);
        assert_eq!(schedule().lr_at(0), 0.1);
    }

    #[test]
    fn collector_skips_burn_in_and_picks_argmin() {
        let s = schedule();
        // Cycle 1 (epochs 4..8) lies within burn-in.
        assert_eq!(collect_policy(&s, 8, 7, &[0.1, 0.2, 0.3, 0.4]), Collect::Skip);
        assert_eq!(
            collect_policy(&s, 8, 11, &[0.5, 0.3, 0.4, 0.35]),
            Collect::Snapshot { epoch_in_cycle: 1 }
        );
        // Not the end of the cycle.
        assert_eq!(collect_policy(&s, 8, 10, &[0.5, 0.3, 0.4]), Collect::Skip);
        // Only the final two cycles when two samples are requested.
        assert_eq!(collect_policy(&s, 2, 31, &[0.5; 4]), Collect::Skip);
        assert!(matches!(collect_policy(&s, 2, 35, &[0.5; 4]), Collect::Snapshot { .. }));
    }

    #[test]
    fn every_cycle_collects_when_samples_equal_cycles() {
        let s = CyclicalSchedule {
            burn_in_epochs: 0,
            ..schedule()
        };
        let count = (0..s.total_epochs)
            .filter(|&e| collect_policy(&s, s.num_cycles(), e, &[1.0]) != Collect::Skip)
            .count();
        assert_eq!(count, s.num_cycles());
    }

    #[test]
    fn schedule_validation() {
        assert!(CyclicalSchedule {
            burn_in_epochs: 40,
            ..schedule()
        }
        .validate()
        .is_err());
        assert!(CyclicalSchedule { lr0: 0.0, ..schedule() }.validate().is_err());
        assert!(schedule().validate().is_ok());
    }

    proptest! {
        #[test]
        fn lr_is_periodic_and_bounded(k in 0u64..100_000) {
            let s = schedule();
            let kc = s.cycle_steps() as u64;
            let a = cyclic_lr(&s, k);
            prop_assert_eq!(a, cyclic_lr(&s, k + kc));
            prop_assert!(a > 0.0 && a <= s.lr0);
        }
    }
}
