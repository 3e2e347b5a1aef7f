//! The four posterior approximations and predictive marginalisation.
//!
//! Each method implements [`UqMethod`] and turns a training [`Problem`]
//! into a [`PosteriorEnsemble`]. Methods are looked up by name in a
//! [`MethodRegistry`], so the CLI can pick one from a config file.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ConfigMap;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::models::{ForwardMode, ModelConfig, ParamVector, SegNet};
use crate::rng::{derive_seed, rng_from};
use crate::samplers::{run_csghmc, run_sgd, steps_per_epoch, CyclicalSchedule, Objective, SghmcConfig, TrainConfig};
use crate::tensor::{LabelField, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Csghmc,
    Mcd,
    De,
    Map,
}

impl MethodTag {
    pub const ALL: [MethodTag; 4] = [MethodTag::Csghmc, MethodTag::Mcd, MethodTag::De, MethodTag::Map];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Csghmc => "csghmc",
            MethodTag::Mcd => "mcd",
            MethodTag::De => "de",
            MethodTag::Map => "map",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Members {
    /// Independent parameter vectors, each predicting deterministically.
    Params { params: Vec<ParamVector> },
    /// One parameter vector and a dropout-mask seed per member.
    Dropout {
        params: ParamVector,
        seeds: Vec<u64>,
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub method: MethodTag,
    pub members: Members,
}

impl PosteriorEnsemble {
    pub fn new(method: MethodTag, members: Members) -> Result<Self> {
        let ens = Self { method, members };
        ens.validate()?;
        Ok(ens)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.members {
            Members::Params { params } => {
                let Some(first) = params.first() else {
                    return Err(Error::Usage("ensemble has no members".into()));
                };
                if params.iter().any(|p| p.len() != first.len()) {
                    return Err(Error::Dimension("ensemble members differ in parameter count".into()));
                }
            }
            Members::Dropout { seeds, rate, .. } => {
                if seeds.is_empty() {
                    return Err(Error::Usage("ensemble has no members".into()));
                }
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::Validation(format!("dropout rate {rate} outside [0, 1)")));
                }
            }
        }
        if self.method == MethodTag::Map && self.size() != 1 {
            return Err(Error::Validation("a MAP ensemble has exactly one member".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        match &self.members {
            Members::Params { params } => params.len(),
            Members::Dropout { seeds, .. } => seeds.len(),
        }
    }

    pub fn num_params(&self) -> usize {
        match &self.members {
            Members::Params { params } => params.first().map_or(0, ParamVector::len),
            Members::Dropout { params, .. } => params.len(),
        }
    }

    /// The ensemble restricted to the listed member indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.size()) {
            return Err(Error::Usage(format!("member {bad} out of range for {} members", self.size())));
        }
        let members = match &self.members {
            Members::Params { params } => Members::Params {
                params: indices.iter().map(|&i| params[i].clone()).collect(),
            },
            Members::Dropout { params, seeds, rate } => Members::Dropout {
                params: params.clone(),
                seeds: indices.iter().map(|&i| seeds[i]).collect(),
                rate: *rate,
            },
        };
        Ok(Self {
            method: self.method,
            members,
        })
    }
}

/// Per-pixel class probabilities `[C×H×W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField(Tensor);

impl ProbField {
    pub fn new(probs: Tensor) -> Result<Self> {
        let (c, h, w) = probs.chw()?;
        let plane = h * w;
        let d = probs.data();
        if d.iter().any(|p| !(-1e-12..=1.0 + 1e-12).contains(p)) {
            return Err(Error::Validation("probabilities must lie in [0, 1]".into()));
        }
        for px in 0..plane {
            let s: f64 = (0..c).map(|k| d[k * plane + px]).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("pixel {px} probabilities sum to {s}")));
            }
        }
        Ok(Self(probs))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn num_pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn prob(&self, class: usize, pixel: usize) -> f64 {
        self.0.data()[class * self.num_pixels() + pixel]
    }

    /// Most probable class per pixel; ties go to the lower index.
    pub fn argmax(&self) -> LabelField {
        let (c, plane) = (self.num_classes(), self.num_pixels());
        let labels = (0..plane)
            .map(|px| {
                let mut best = 0;
                for k in 1..c {
                    if self.prob(k, px) > self.prob(best, px) {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelField::new(self.height(), self.width(), labels).expect("label count matches field")
    }

    /// Largest class probability per pixel.
    pub fn confidence(&self, pixel: usize) -> f64 {
        (0..self.num_classes())
            .map(|k| self.prob(k, pixel))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Arithmetic mean of member probability fields, accumulated in member
/// order as `m += (p − m)/(k+1)` so identical members reproduce `p` exactly.
pub fn mean_probs(members: &[Tensor]) -> Result<ProbField> {
    let Some(first) = members.first() else {
        return Err(Error::Usage("cannot marginalise over an empty ensemble".into()));
    };
    let mut mean = first.clone();
    for (k, p) in members.iter().enumerate().skip(1) {
        if p.shape() != mean.shape() {
            return Err(Error::Dimension("member outputs differ in shape".into()));
        }
        let inv = 1.0 / (k + 1) as f64;
        mean.data_mut()
            .iter_mut()
            .zip(p.data())
            .for_each(|(m, v)| *m += (v - *m) * inv);
    }
    ProbField::new(mean)
}

/// Natural-log entropy per pixel, `[H×W]`, with `0·ln 0 = 0`.
pub fn predictive_entropy(field: &ProbField) -> Tensor {
    let (c, plane) = (field.num_classes(), field.num_pixels());
    let h = (0..plane)
        .map(|px| {
            let e = -(0..c)
                .map(|k| field.prob(k, px))
                .filter(|p| *p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>();
            e.clamp(0.0, (c as f64).ln())
        })
        .collect();
    Tensor::new(vec![field.height(), field.width()], h).expect("entropy shape")
}

enum Draw {
    Deterministic,
    Mask(u64),
}

/// Networks for every member of an ensemble, ready to predict.
pub struct Predictor {
    members: Vec<(SegNet, Draw)>,
}

impl Predictor {
    pub fn new(model: &ModelConfig, ensemble: &PosteriorEnsemble) -> Result<Self> {
        ensemble.validate()?;
        let members = match &ensemble.members {
            Members::Params { params } => params
                .iter()
                .map(|p| Ok((SegNet::from_params(model, p)?, Draw::Deterministic)))
                .collect::<Result<_>>()?,
            Members::Dropout { params, seeds, rate } => {
                let eval_model = ModelConfig {
                    dropout_rate: *rate,
                    ..model.clone()
                };
                let net = SegNet::from_params(&eval_model, params)?;
                seeds.iter().map(|s| (net.clone(), Draw::Mask(*s))).collect()
            }
        };
        Ok(Self { members })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Softmax output of every member, in member order. An MC-dropout member
    /// reseeds its mask stream per image, so it applies the same masks to
    /// every image of a given size.
    pub fn member_probs(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.members
            .par_iter()
            .map(|(net, draw)| match draw {
                Draw::Deterministic => net.predict_probs(image, ForwardMode::EvalDeterministic, &mut rng_from(0)),
                Draw::Mask(seed) => net.predict_probs(image, ForwardMode::EvalStochastic, &mut rng_from(*seed)),
            })
            .collect()
    }

    pub fn predict(&self, image: &Tensor) -> Result<ProbField> {
        mean_probs(&self.member_probs(image)?)
    }
}

pub fn predictive_distribution(model: &ModelConfig, ensemble: &PosteriorEnsemble, image: &Tensor) -> Result<ProbField> {
    Predictor::new(model, ensemble)?.predict(image)
}

/// What a method needs to know about the thing it is fitting.
pub trait Problem: Sync {
    fn dim(&self) -> usize;

    /// Fresh initial parameters for `seed`.
    fn init(&self, seed: u64) -> Result<Vec<f64>>;

    /// Weight decay on the mean-loss scale.
    fn weight_decay(&self) -> f64;

    /// Data term; `stochastic` enables training-time dropout.
    fn objective(&self, stochastic: bool) -> Result<Box<dyn Objective + '_>>;
}

/// Pixel-wise cross-entropy of the segmentation network over a training set.
pub struct SegObjective<'a> {
    net: SegNet,
    examples: &'a [Example],
    mode: ForwardMode,
    pixels: usize,
}

impl<'a> SegObjective<'a> {
    pub fn new(model: &ModelConfig, examples: &'a [Example], mode: ForwardMode) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        Ok(Self {
            net: SegNet::init(model)?,
            examples,
            mode,
            pixels: examples.iter().map(|e| e.labels.len()).sum(),
        })
    }
}

impl Objective for SegObjective<'_> {
    fn dim(&self) -> usize {
        self.net.num_params()
    }

    fn num_examples(&self) -> usize {
        self.examples.len()
    }

    /// Every labelled pixel is one likelihood term.
    fn likelihood_count(&self) -> f64 {
        self.pixels as f64
    }

    fn batch_nll_grad(&self, theta: &[f64], batch: &[usize], seed: u64) -> Result<(f64, Vec<f64>)> {
        let net = self.net.unflatten(&ParamVector(theta.to_vec()))?;
        let refs: Vec<&Example> = batch.iter().map(|&i| &self.examples[i]).collect();
        net.batch_loss_grad(&refs, self.mode, seed)
    }
}

pub struct SegProblem {
    pub model: ModelConfig,
    pub train: Vec<Example>,
}

impl Problem for SegProblem {
    fn dim(&self) -> usize {
        SegNet::init(&self.model).map_or(0, |n| n.num_params())
    }

    fn init(&self, seed: u64) -> Result<Vec<f64>> {
        Ok(SegNet::init(&ModelConfig {
            seed,
            ..self.model.clone()
        })?
        .flatten()
        .0)
    }

    fn weight_decay(&self) -> f64 {
        self.model.weight_decay
    }

    fn objective(&self, stochastic: bool) -> Result<Box<dyn Objective + '_>> {
        let mode = if stochastic {
            ForwardMode::Train
        } else {
            ForwardMode::EvalDeterministic
        };
        Ok(Box::new(SegObjective::new(&self.model, &self.train, mode)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub member: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub ensemble: PosteriorEnsemble,
    pub members: Vec<MemberInfo>,
    pub losses: Vec<LossRecord>,
}

pub trait UqMethod: Send + Sync {
    fn tag(&self) -> MethodTag;

    fn fit(&self, problem: &dyn Problem) -> Result<FitOutcome>;
}

/// Shared settings of the three SGD-trained methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdSettings {
    fn default() -> Self {
        Self {
            batch_size: 2,
            epochs: 60,
            lr: 0.05,
            momentum: 0.99,
        }
    }
}

impl SgdSettings {
    fn from_config(cfg: &ConfigMap) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            batch_size: cfg.get_or("train.batch_size", d.batch_size)?,
            epochs: cfg.get_or("train.epochs", d.epochs)?,
            lr: cfg.get_or("train.lr", d.lr)?,
            momentum: cfg.get_or("train.momentum", d.momentum)?,
        })
    }

    fn train(&self, problem: &dyn Problem, seed: u64, member: usize) -> Result<(Vec<f64>, Vec<LossRecord>)> {
        let objective = problem.objective(true)?;
        let config = TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: problem.weight_decay(),
            seed,
        };
        let out = run_sgd(objective.as_ref(), problem.init(seed)?, &config)?;
        let losses = out
            .epoch_losses
            .iter()
            .enumerate()
            .map(|(epoch, &loss)| LossRecord { member, epoch, loss })
            .collect();
        Ok((out.theta, losses))
    }
}

pub struct MapMethod {
    pub sgd: SgdSettings,
    pub seed: u64,
}

impl UqMethod for MapMethod {
    fn tag(&self) -> MethodTag {
        MethodTag::Map
    }

    fn fit(&self, problem: &dyn Problem) -> Result<FitOutcome> {
        let (theta, losses) = self.sgd.train(problem, self.seed, 0)?;
        Ok(FitOutcome {
            ensemble: PosteriorEnsemble::new(
                MethodTag::Map,
                Members::Params {
                    params: vec![ParamVector(theta)],
                },
            )?,
            members: vec![MemberInfo {
                seed: self.seed,
                cycle: None,
                epoch: None,
                loss: None,
            }],
            losses,
        })
    }
}

/// MAP training followed by `samples` dropout-mask seeds. The prediction
/// dropout rate is independent of the training rate.
pub struct McdMethod {
    pub sgd: SgdSettings,
    pub seed: u64,
    pub samples: usize,
    pub eval_dropout_rate: f64,
}

impl McdMethod {
    pub fn member_seeds(seed: u64, samples: usize) -> Vec<u64> {
        (0..samples as u64).map(|s| derive_seed(seed, "mcd-member", s)).collect()
    }

    /// Dropout ensemble around already-trained parameters.
    pub fn sample(params: ParamVector, samples: usize, rate: f64, seed: u64) -> Result<PosteriorEnsemble> {
        if rate == 0.0 {
            log::warn!("MC dropout with rate 0: all {samples} members are identical");
        }
        PosteriorEnsemble::new(
            MethodTag::Mcd,
            Members::Dropout {
                params,
                seeds: Self::member_seeds(seed, samples),
                rate,
            },
        )
    }
}

impl UqMethod for McdMethod {
    fn tag(&self) -> MethodTag {
        MethodTag::Mcd
    }

    fn fit(&self, problem: &dyn Problem) -> Result<FitOutcome> {
        let (theta, losses) = self.sgd.train(problem, self.seed, 0)?;
        let ensemble = Self::sample(ParamVector(theta), self.samples, self.eval_dropout_rate, self.seed)?;
        let members = Self::member_seeds(self.seed, self.samples)
            .into_iter()
            .map(|seed| MemberInfo {
                seed,
                cycle: None,
                epoch: None,
                loss: None,
            })
            .collect();
        Ok(FitOutcome {
            ensemble,
            members,
            losses,
        })
    }
}

pub struct DeepEnsembleMethod {
    pub sgd: SgdSettings,
    pub seeds: Vec<u64>,
}

impl DeepEnsembleMethod {
    pub fn derived_seeds(seed: u64, members: usize) -> Vec<u64> {
        (0..members as u64).map(|s| derive_seed(seed, "de-member", s)).collect()
    }

    /// Trains one member per seed without checking the seeds.
    pub fn fit_members(&self, problem: &dyn Problem, seeds: &[u64]) -> Result<FitOutcome> {
        let trained: Vec<(Vec<f64>, Vec<LossRecord>)> = seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| self.sgd.train(problem, seed, i))
            .collect::<Result<_>>()?;
        let mut params = Vec::with_capacity(seeds.len());
        let mut losses = Vec::new();
        for (theta, log) in trained {
            params.push(ParamVector(theta));
            losses.extend(log);
        }
        Ok(FitOutcome {
            ensemble: PosteriorEnsemble::new(MethodTag::De, Members::Params { params })?,
            members: seeds
                .iter()
                .map(|&seed| MemberInfo {
                    seed,
                    cycle: None,
                    epoch: None,
                    loss: None,
                })
                .collect(),
            losses,
        })
    }
}

impl UqMethod for DeepEnsembleMethod {
    fn tag(&self) -> MethodTag {
        MethodTag::De
    }

    fn fit(&self, problem: &dyn Problem) -> Result<FitOutcome> {
        if self.seeds.len() < 2 {
            return Err(Error::Validation("a deep ensemble needs at least 2 members".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("deep-ensemble seeds must be pairwise distinct".into()));
        }
        self.fit_members(problem, &self.seeds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsghmcSettings {
    pub lr0: f64,
    pub cycle_length: usize,
    pub epochs: usize,
    pub burn_in_epochs: usize,
    pub noise_start_epoch: usize,
    /// Epochs over which the very first cycle ramps up to `lr0`.
    pub warmup_epochs: usize,
    pub beta: f64,
    pub batch_size: usize,
    pub samples: usize,
}

impl Default for CsghmcSettings {
    fn default() -> Self {
        Self {
            lr0: 1e-5,
            cycle_length: 10,
            epochs: 120,
            burn_in_epochs: 20,
            noise_start_epoch: 2,
            warmup_epochs: 1,
            beta: 0.9,
            batch_size: 2,
            samples: 20,
        }
    }
}

pub struct CsghmcMethod {
    pub settings: CsghmcSettings,
    pub seed: u64,
}

impl UqMethod for CsghmcMethod {
    fn tag(&self) -> MethodTag {
        MethodTag::Csghmc
    }

    /// Samples without dropout. Weight decay `wd` on the mean loss is the
    /// Gaussian prior with precision `wd·n`.
    fn fit(&self, problem: &dyn Problem) -> Result<FitOutcome> {
        let s = &self.settings;
        let objective = problem.objective(false)?;
        let n = objective.likelihood_count();
        let config = SghmcConfig {
            schedule: CyclicalSchedule {
                lr0: s.lr0,
                cycle_length: s.cycle_length,
                steps_per_epoch: steps_per_epoch(objective.num_examples(), s.batch_size),
                total_epochs: s.epochs,
                burn_in_epochs: s.burn_in_epochs,
                noise_start_epoch: s.noise_start_epoch,
                warmup_steps: (s.warmup_epochs * steps_per_epoch(objective.num_examples(), s.batch_size)) as u64,
            },
            batch_size: s.batch_size,
            beta: s.beta,
            weight_decay: problem.weight_decay() * n,
            samples: s.samples,
            seed: self.seed,
        };
        let out = run_csghmc(objective.as_ref(), problem.init(self.seed)?, &config)?;
        let members = out
            .snapshots
            .iter()
            .map(|snap| MemberInfo {
                seed: self.seed,
                cycle: Some(snap.cycle),
                epoch: Some(snap.epoch),
                loss: Some(snap.loss),
            })
            .collect();
        let params = out.snapshots.into_iter().map(|snap| ParamVector(snap.theta)).collect();
        Ok(FitOutcome {
            ensemble: PosteriorEnsemble::new(MethodTag::Csghmc, Members::Params { params })?,
            members,
            losses: out
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(epoch, &loss)| LossRecord { member: 0, epoch, loss })
                .collect(),
        })
    }
}

pub type MethodFactory = fn(&ConfigMap, u64) -> Result<Box<dyn UqMethod>>;

struct Registration {
    keys: &'static [&'static str],
    factory: MethodFactory,
}

/// Name → constructor table for the UQ methods.
#[derive(Default)]
pub struct MethodRegistry {
    entries: BTreeMap<&'static str, Registration>,
}

const SGD_KEYS: &[&str] = &["train.batch_size", "train.epochs", "train.lr", "train.momentum"];

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `keys` lists the config keys the factory reads.
    pub fn register(&mut self, name: &'static str, keys: &'static [&'static str], factory: MethodFactory) {
        self.entries.insert(name, Registration { keys, factory });
    }

    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register("map", SGD_KEYS, |cfg, seed| {
            Ok(Box::new(MapMethod {
                sgd: SgdSettings::from_config(cfg)?,
                seed,
            }))
        });
        r.register("mcd", &["mcd.samples", "mcd.eval_dropout_rate"], |cfg, seed| {
            let train_rate = cfg.get_or("model.dropout_rate", ModelConfig::default().dropout_rate)?;
            Ok(Box::new(McdMethod {
                sgd: SgdSettings::from_config(cfg)?,
                seed,
                samples: cfg.get_or("mcd.samples", 20)?,
                eval_dropout_rate: cfg.get_or("mcd.eval_dropout_rate", train_rate)?,
            }))
        });
        r.register("de", &["de.members", "de.seeds"], |cfg, seed| {
            let seeds = match cfg.list::<u64>("de.seeds")? {
                Some(seeds) => seeds,
                None => DeepEnsembleMethod::derived_seeds(seed, cfg.get_or("de.members", 20)?),
            };
            Ok(Box::new(DeepEnsembleMethod {
                sgd: SgdSettings::from_config(cfg)?,
                seeds,
            }))
        });
        r.register(
            "csghmc",
            &[
                "csghmc.lr0",
                "csghmc.cycle_length",
                "csghmc.epochs",
                "csghmc.burn_in_epochs",
                "csghmc.noise_start_epoch",
                "csghmc.warmup_epochs",
                "csghmc.beta",
                "csghmc.batch_size",
                "csghmc.samples",
            ],
            |cfg, seed| {
                let d = CsghmcSettings::default();
                let settings = CsghmcSettings {
                    lr0: cfg.get_or("csghmc.lr0", d.lr0)?,
                    cycle_length: cfg.get_or("csghmc.cycle_length", d.cycle_length)?,
                    epochs: cfg.get_or("csghmc.epochs", d.epochs)?,
                    burn_in_epochs: cfg.get_or("csghmc.burn_in_epochs", d.burn_in_epochs)?,
                    noise_start_epoch: cfg.get_or("csghmc.noise_start_epoch", d.noise_start_epoch)?,
                    warmup_epochs: cfg.get_or("csghmc.warmup_epochs", d.warmup_epochs)?,
                    beta: cfg.get_or("csghmc.beta", d.beta)?,
                    batch_size: cfg.get_or("csghmc.batch_size", cfg.get_or("train.batch_size", d.batch_size)?)?,
                    samples: cfg.get_or("csghmc.samples", d.samples)?,
                };
                Ok(Box::new(CsghmcMethod { settings, seed }))
            },
        );
        r
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    /// Every config key some registered method reads.
    pub fn known_keys(&self) -> Vec<&'static str> {
        let mut keys: Vec<&'static str> = SGD_KEYS.to_vec();
        for reg in self.entries.values() {
            keys.extend(reg.keys);
        }
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    pub fn build(&self, name: &str, cfg: &ConfigMap, seed: u64) -> Result<Box<dyn UqMethod>> {
        let reg = self.entries.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown method `{name}`; available: {}",
                self.entries.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })?;
        (reg.factory)(cfg, seed)
    }
}
