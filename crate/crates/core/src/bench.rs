//! Config-driven pipeline behind the `uqshift` command: data generation,
//! training, shift sweeps, ensemble diversity and the sampler oracles.
//!
//! Layout under the output directory:
//!
//! ```text
//! data/                        generated dataset (unless dataset.root is set)
//! runs/<method>/               sample_<k>.bin, ensemble.json, run_manifest.json, loss.csv
//! reports/<method>/            metrics.csv, report.json, reliability.json, aggregates.csv,
//!                              histogram_<shift>.csv, kde_<shift>.csv,
//!                              entropy/<shift>/img_<i>.bin, diversity.csv, diversity.json
//! reports/oracle.json
//! timing/<command>_<method>.json
//! ```
//!
//! Wall-clock times live under `timing/` so that everything under
//! `reports/` is byte-identical across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    aggregate_uncertainty, aggregates_csv, diversity_matrix, entropy_histogram, select_members, AggregateRow,
    CorrMatrix, UncMap,
};
use crate::config::ConfigMap;
use crate::data::{
    generate, hex, load_split, load_tensor, save_tensor, split, standardize, write_dataset, write_json, Example,
    SplitName, SynthConfig, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::metrics::{image_metrics, metrics_csv, ImageMetrics, MetricRow, ReliabilityBins, DEFAULT_ECE_BINS};
use crate::models::{ModelConfig, ParamVector};
use crate::oracle::{
    default_linreg, default_two_mode, mode_capture_run, sghmc_vs_analytic, ModeReport, ModeRunConfig,
    MomentReport, MomentRunConfig,
};
use crate::rng::derive_seed;
use crate::shifts::{kde_auto, KdeCurve, ShiftRegistry, ShiftSpec};
use crate::tensor::Tensor;
use crate::uq_methods::{
    predictive_entropy, LossRecord, MemberInfo, Members, MethodRegistry, MethodTag, PosteriorEnsemble, Predictor,
    SegProblem,
};

/// Keys read by the pipeline itself; method keys come from the registry.
pub const RUN_KEYS: &[&str] = &[
    "run.seed",
    "dataset.root",
    "dataset.image_size",
    "dataset.num_images",
    "dataset.shape_scale",
    "dataset.noise_level",
    "dataset.split",
    "model.base_channels",
    "model.depth",
    "model.dropout_rate",
    "model.weight_decay",
    "method.name",
    "preprocess.standardize",
    "shift.kind",
    "shift.levels",
    "shift.seed",
    "shift.sweep",
    "eval.split",
    "eval.ece_bins",
    "eval.hist_bins",
    "diversity.members",
    "oracle.step_scale",
    "oracle.mode_runs",
    "oracle.mean_tol",
    "oracle.cov_tol",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    /// Multiplies the linear-regression step size; values well above 1
    /// make the chain diverge.
    pub step_scale: f64,
    pub mode_runs: usize,
    pub mean_tol: f64,
    pub cov_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// The parsed file with command-line overrides applied.
    pub raw: ConfigMap,
    pub seed: u64,
    pub data_root: Option<PathBuf>,
    pub synth: SynthConfig,
    pub split_fractions: (f64, f64, f64),
    pub model: ModelConfig,
    pub method: String,
    pub standardize: bool,
    pub sweep: Vec<ShiftSpec>,
    pub eval_split: SplitName,
    pub ece_bins: usize,
    pub hist_bins: usize,
    pub diversity_members: usize,
    pub oracle: OracleSettings,
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>, method: Option<&str>) -> Result<Self> {
        Self::from_map(ConfigMap::load(path)?, seed, method)
    }

    pub fn from_map(mut raw: ConfigMap, seed: Option<u64>, method: Option<&str>) -> Result<Self> {
        if let Some(s) = seed {
            raw.set("run.seed", s);
        }
        if let Some(m) = method {
            raw.set("method.name", m);
        }
        let methods = MethodRegistry::builtin();
        let mut known: Vec<&str> = RUN_KEYS.to_vec();
        known.extend(methods.known_keys());
        raw.ensure_known(known)?;

        let seed = raw.get_or("run.seed", 0u64)?;
        let sd = SynthConfig::default();
        let shape_scale = match raw.list::<f64>("dataset.shape_scale")? {
            None => sd.shape_scale,
            Some(v) if v.len() == 2 => (v[0], v[1]),
            Some(_) => return Err(Error::Config("dataset.shape_scale takes two values `lo, hi`".into())),
        };
        let synth = SynthConfig {
            image_size: raw.get_or("dataset.image_size", sd.image_size)?,
            num_images: raw.get_or("dataset.num_images", sd.num_images)?,
            shape_scale,
            noise_level: raw.get_or("dataset.noise_level", sd.noise_level)?,
            seed,
        };
        synth.validate()?;
        let split_fractions = match raw.list::<f64>("dataset.split")? {
            None => (64.0 / 96.0, 16.0 / 96.0, 16.0 / 96.0),
            Some(v) if v.len() == 3 => {
                let total: f64 = v.iter().sum();
                (v[0] / total, v[1] / total, v[2] / total)
            }
            Some(_) => return Err(Error::Config("dataset.split takes three weights `train, val, test`".into())),
        };

        let md = ModelConfig::default();
        let model = ModelConfig {
            base_channels: raw.get_or("model.base_channels", md.base_channels)?,
            depth: raw.get_or("model.depth", md.depth)?,
            dropout_rate: raw.get_or("model.dropout_rate", md.dropout_rate)?,
            weight_decay: raw.get_or("model.weight_decay", md.weight_decay)?,
            seed,
            ..md
        };
        model.validate()?;

        let method: String = raw.get_or("method.name", "csghmc".to_string())?;
        methods.build(&method, &raw, seed)?;

        let shifts = ShiftRegistry::builtin();
        let shift_seed = raw.get_or("shift.seed", seed)?;
        let sweep = match raw.raw("shift.sweep") {
            Some(_) => raw
                .list::<String>("shift.sweep")?
                .unwrap_or_default()
                .iter()
                .map(|item| {
                    let (kind, level) = item
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("shift.sweep item `{item}` is not `kind:level`")))?;
                    let level = level
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("shift.sweep item `{item}`: {e}")))?;
                    Ok(ShiftSpec {
                        kind: kind.trim().to_string(),
                        level,
                        seed: shift_seed,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => {
                let kind: String = raw.get_or("shift.kind", "blur".to_string())?;
                let levels = raw
                    .list::<f64>("shift.levels")?
                    .unwrap_or_else(|| vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]);
                levels
                    .into_iter()
                    .map(|level| ShiftSpec {
                        kind: kind.clone(),
                        level,
                        seed: shift_seed,
                    })
                    .collect()
            }
        };
        for spec in &sweep {
            spec.validate()?;
            shifts.get(&spec.kind)?;
        }

        let oracle = OracleSettings {
            step_scale: raw.get_or("oracle.step_scale", 1.0)?,
            mode_runs: raw.get_or("oracle.mode_runs", 10)?,
            mean_tol: raw.get_or("oracle.mean_tol", 0.05)?,
            cov_tol: raw.get_or("oracle.cov_tol", 0.2)?,
        };
        if !(oracle.step_scale > 0.0) || oracle.mode_runs == 0 {
            return Err(Error::Config("oracle.step_scale must be > 0 and oracle.mode_runs >= 1".into()));
        }

        Ok(Self {
            seed,
            data_root: raw.get::<String>("dataset.root")?.map(PathBuf::from),
            synth,
            split_fractions,
            model,
            method,
            standardize: raw.get_or("preprocess.standardize", true)?,
            sweep,
            eval_split: raw.get_or("eval.split", SplitName::Test)?,
            ece_bins: raw.get_or("eval.ece_bins", DEFAULT_ECE_BINS)?,
            hist_bins: raw.get_or("eval.hist_bins", 20)?,
            diversity_members: raw.get_or("diversity.members", 6)?,
            oracle,
            raw,
        })
    }

    /// Hex SHA-256 of the canonical config text, overrides included.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.raw.to_text().as_bytes()))
    }

    pub fn data_root(&self, out: &Path) -> PathBuf {
        self.data_root.clone().unwrap_or_else(|| out.join("data"))
    }

    pub fn run_dir(&self, out: &Path) -> PathBuf {
        out.join("runs").join(&self.method)
    }

    pub fn report_dir(&self, out: &Path) -> PathBuf {
        out.join("reports").join(&self.method)
    }

    /// The network input for a raw image.
    pub fn preprocess(&self, image: &Tensor) -> Tensor {
        if self.standardize {
            standardize(image)
        } else {
            image.clone()
        }
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance {
            command: command.to_string(),
            method: self.method.clone(),
            config_hash: self.hash(),
            run_seed: self.seed,
            data_hash: self.synth.hash(),
            config: self.raw.to_text(),
        }
    }
}

/// Enough to rerun the command that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub method: String,
    pub config_hash: String,
    pub run_seed: u64,
    pub data_hash: String,
    pub config: String,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_timing(out: &Path, command: &str, method: &str, started: Instant) -> Result<()> {
    #[derive(Serialize)]
    struct Timing<'a> {
        command: &'a str,
        method: &'a str,
        wall_seconds: f64,
    }
    write_json(
        &out.join("timing").join(format!("{command}_{method}.json")),
        &Timing {
            command,
            method,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    )
}

/// Writes the synthetic dataset and its split manifests; returns the root.
pub fn cmd_generate_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let root = cfg.data_root(out);
    let examples = generate(&cfg.synth)?;
    let splits = split(examples.len(), cfg.split_fractions, cfg.seed)?;
    write_dataset(&root, &cfg.synth, &examples, &splits)?;
    log::info!(
        "wrote {} images ({} train / {} val / {} test) to {}",
        examples.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        root.display()
    );
    Ok(root)
}

/// Checkpoints of a trained ensemble, relative to its run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub method: MethodTag,
    pub model: ModelConfig,
    pub checkpoints: Vec<String>,
    /// Present for dropout ensembles: one mask seed per member.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dropout_seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dropout_rate: Option<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub provenance: Provenance,
    pub num_params: usize,
    pub members: Vec<MemberInfo>,
    pub train_images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub members: usize,
    pub losses: Vec<LossRecord>,
}

fn loss_csv(losses: &[LossRecord]) -> String {
    let mut out = String::from("member,epoch,loss\n");
    for l in losses {
        let _ = writeln!(out, "{},{},{:.9}", l.member, l.epoch, l.loss);
    }
    out
}

fn load_prepared(cfg: &RunConfig, out: &Path, split: SplitName) -> Result<Vec<Example>> {
    let examples = load_split(&cfg.data_root(out), split)?;
    if examples.is_empty() {
        return Err(Error::EmptyResult(format!("split `{}` has no images", split.as_str())));
    }
    Ok(examples)
}

/// Fits the configured method on the train split and persists the ensemble.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let started = Instant::now();
    let train: Vec<Example> = load_prepared(cfg, out, SplitName::Train)?
        .into_iter()
        .map(|ex| Example {
            image: cfg.preprocess(&ex.image),
            labels: ex.labels,
        })
        .collect();
    let train_images = train.len();
    let problem = SegProblem {
        model: cfg.model.clone(),
        train,
    };
    let method = MethodRegistry::builtin().build(&cfg.method, &cfg.raw, cfg.seed)?;
    log::info!("training {} on {train_images} images", cfg.method);
    let fit = method.fit(&problem)?;

    let dir = cfg.run_dir(out);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let save = |name: String, theta: &ParamVector| -> Result<String> {
        save_tensor(&dir.join(&name), &Tensor::new(vec![theta.len()], theta.0.clone())?)?;
        Ok(name)
    };
    let (checkpoints, dropout_seeds, dropout_rate) = match &fit.ensemble.members {
        Members::Params { params } => {
            let names = params
                .iter()
                .zip(&fit.members)
                .enumerate()
                .map(|(i, (theta, info))| save(format!("sample_{}.bin", info.cycle.unwrap_or(i)), theta))
                .collect::<Result<Vec<_>>>()?;
            (names, None, None)
        }
        Members::Dropout { params, seeds, rate } => {
            (vec![save("sample_0.bin".into(), params)?], Some(seeds.clone()), Some(*rate))
        }
    };
    let manifest = EnsembleManifest {
        method: fit.ensemble.method,
        model: cfg.model.clone(),
        checkpoints,
        dropout_seeds,
        dropout_rate,
        config_hash: cfg.hash(),
    };
    write_json(&dir.join("ensemble.json"), &manifest)?;
    write_json(
        &dir.join("run_manifest.json"),
        &RunManifest {
            provenance: cfg.provenance("train"),
            num_params: fit.ensemble.num_params(),
            members: fit.members.clone(),
            train_images,
        },
    )?;
    write_text(&dir.join("loss.csv"), &loss_csv(&fit.losses))?;
    write_timing(out, "train", &cfg.method, started)?;
    Ok(TrainSummary {
        run_dir: dir,
        members: fit.ensemble.size(),
        losses: fit.losses,
    })
}

/// Reads a persisted ensemble back. Checkpoints hold f32 values.
pub fn load_ensemble(run_dir: &Path) -> Result<(EnsembleManifest, PosteriorEnsemble)> {
    let manifest: EnsembleManifest = crate::data::read_json(&run_dir.join("ensemble.json"))?;
    let mut params = manifest
        .checkpoints
        .iter()
        .map(|name| Ok(ParamVector(load_tensor(&run_dir.join(name))?.into_data())))
        .collect::<Result<Vec<_>>>()?;
    let members = match (&manifest.dropout_seeds, manifest.dropout_rate) {
        (Some(seeds), Some(rate)) => {
            if params.len() != 1 {
                return Err(Error::Validation("a dropout ensemble has exactly one checkpoint".into()));
            }
            Members::Dropout {
                params: params.remove(0),
                seeds: seeds.clone(),
                rate,
            }
        }
        (None, None) => Members::Params { params },
        _ => return Err(Error::Validation("dropout seeds and rate must be given together".into())),
    };
    let ensemble = PosteriorEnsemble::new(manifest.method, members)?;
    Ok((manifest, ensemble))
}

/// Summary of one shift setting in the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub shift: ShiftSpec,
    pub tag: String,
    pub mean_aggregate_entropy: Option<f64>,
    pub absent_aggregates: usize,
    pub min_entropy: f64,
    pub max_entropy: f64,
    /// ECE of the reliability bins pooled over all test pixels.
    pub pooled_ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub ensemble_size: usize,
    pub images: usize,
    pub rows: Vec<MetricRow>,
    pub shifts: Vec<ShiftSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityEntry {
    pub tag: String,
    pub bins: ReliabilityBins,
    pub mean_confidence: Vec<Option<f64>>,
    pub accuracy: Vec<Option<f64>>,
}

/// File-name tag of a shift setting, e.g. `blur_4`.
pub fn shift_tag(spec: &ShiftSpec) -> String {
    format!("{}_{}", spec.kind, spec.level)
}

struct ImageEval {
    metrics: ImageMetrics,
    entropy: Tensor,
    aggregate: Option<f64>,
    pixels: Vec<f64>,
}

/// Clean data plus every configured shift: metrics, entropy maps,
/// aggregates, histograms, intensity KDEs and reliability bins.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let started = Instant::now();
    let (manifest, ensemble) = load_ensemble(&cfg.run_dir(out))?;
    let predictor = Predictor::new(&manifest.model, &ensemble)?;
    let test = load_prepared(cfg, out, cfg.eval_split)?;
    let shifts = ShiftRegistry::builtin();
    let dir = cfg.report_dir(out);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut specs = vec![ShiftSpec::none()];
    specs.extend(cfg.sweep.iter().cloned());
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut reliability = Vec::new();
    let mut aggregate_rows = Vec::new();
    for spec in &specs {
        let tag = shift_tag(spec);
        let evals = test
            .par_iter()
            .enumerate()
            .map(|(i, ex)| -> Result<ImageEval> {
                let shifted = shifts.apply(spec, &ex.image, i as u64)?;
                let probs = predictor.predict(&cfg.preprocess(&shifted.image))?;
                let entropy = predictive_entropy(&probs);
                let map = UncMap::new(entropy.clone(), probs.argmax(), ex.labels.clone())?;
                Ok(ImageEval {
                    metrics: image_metrics(&probs, &ex.labels, cfg.ece_bins)?,
                    aggregate: aggregate_uncertainty(&map),
                    entropy,
                    pixels: shifted.image.into_data(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let metrics: Vec<ImageMetrics> = evals.iter().map(|e| e.metrics.clone()).collect();
        rows.push(MetricRow::average(&cfg.method, &spec.kind, spec.level, &metrics)?);

        let mut pooled = ReliabilityBins::new(cfg.ece_bins)?;
        for m in &metrics {
            pooled.merge(&m.bins)?;
        }
        let aggregates: Vec<Option<f64>> = evals.iter().map(|e| e.aggregate).collect();
        let present: Vec<f64> = aggregates.iter().flatten().copied().collect();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let ent_dir = dir.join("entropy").join(&tag);
        fs::create_dir_all(&ent_dir).map_err(|e| Error::io(&ent_dir, e))?;
        for (i, e) in evals.iter().enumerate() {
            for &h in e.entropy.data() {
                lo = lo.min(h);
                hi = hi.max(h);
            }
            save_tensor(&ent_dir.join(format!("img_{i:04}.bin")), &e.entropy)?;
            aggregate_rows.push(AggregateRow {
                image_id: i,
                method: cfg.method.clone(),
                shift: tag.clone(),
                entropy: e.aggregate,
            });
        }
        match entropy_histogram(&aggregates, cfg.hist_bins, NUM_CLASSES) {
            Ok(h) => write_text(&dir.join(format!("histogram_{tag}.csv")), &h.to_csv())?,
            Err(Error::EmptyResult(msg)) => log::warn!("{tag}: no histogram, {msg}"),
            Err(e) => return Err(e),
        }
        let pixels: Vec<f64> = evals.iter().flat_map(|e| e.pixels.iter().copied()).collect();
        let curve: KdeCurve = kde_auto(&pixels)?;
        write_text(&dir.join(format!("kde_{tag}.csv")), &curve.to_csv())?;

        summaries.push(ShiftSummary {
            shift: spec.clone(),
            tag: tag.clone(),
            mean_aggregate_entropy: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
            absent_aggregates: aggregates.len() - present.len(),
            min_entropy: lo,
            max_entropy: hi,
            pooled_ece: pooled.ece(),
        });
        reliability.push(ReliabilityEntry {
            tag,
            mean_confidence: pooled.mean_confidence(),
            accuracy: pooled.accuracy(),
            bins: pooled,
        });
        log::info!("{}: evaluated {}", cfg.method, summaries.last().map_or("", |s| s.tag.as_str()));
    }

    let report = EvalReport {
        provenance: cfg.provenance("evaluate"),
        ensemble_size: ensemble.size(),
        images: test.len(),
        rows,
        shifts: summaries,
    };
    write_text(&dir.join("metrics.csv"), &metrics_csv(&report.rows))?;
    write_text(&dir.join("aggregates.csv"), &aggregates_csv(&aggregate_rows))?;
    write_json(&dir.join("reliability.json"), &reliability)?;
    write_json(&dir.join("report.json"), &report)?;
    write_timing(out, "evaluate", &cfg.method, started)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub provenance: Provenance,
    pub matrix: CorrMatrix,
    pub mean_off_diagonal: Option<f64>,
}

/// Pairwise correlation of member softmax outputs on the clean eval split.
pub fn cmd_diversity(cfg: &RunConfig, out: &Path) -> Result<DiversityReport> {
    let started = Instant::now();
    let (manifest, ensemble) = load_ensemble(&cfg.run_dir(out))?;
    let members = select_members(&ensemble, cfg.diversity_members, cfg.seed)?;
    let predictor = Predictor::new(&manifest.model, &ensemble)?;
    let images: Vec<Tensor> = load_prepared(cfg, out, cfg.eval_split)?
        .iter()
        .map(|ex| cfg.preprocess(&ex.image))
        .collect();
    let refs: Vec<&Tensor> = images.iter().collect();
    let matrix = diversity_matrix(&predictor, &members, &refs)?;
    if !matrix.degenerate_pairs.is_empty() {
        log::warn!("{} member pairs had a constant output", matrix.degenerate_pairs.len());
    }
    let report = DiversityReport {
        provenance: cfg.provenance("diversity"),
        mean_off_diagonal: matrix.mean_off_diagonal(),
        matrix,
    };
    let dir = cfg.report_dir(out);
    write_text(&dir.join("diversity.csv"), &report.matrix.to_csv())?;
    write_json(&dir.join("diversity.json"), &report)?;
    write_timing(out, "diversity", &cfg.method, started)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub provenance: Provenance,
    pub settings: OracleSettings,
    pub moment_run: MomentRunConfig,
    pub moments: MomentReport,
    pub moments_pass: bool,
    pub mode_runs: Vec<ModeReport>,
    pub csghmc_two_mode_runs: usize,
    pub map_single_mode_runs: usize,
    pub modes_pass: bool,
    pub pass: bool,
}

/// Linear-regression moment check plus the two-mode capture runs. The
/// report is written before a tolerance failure is returned.
pub fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<OracleReport> {
    let started = Instant::now();
    let s = &cfg.oracle;
    let reg = default_linreg()?;
    let mut moment_run = MomentRunConfig::for_oracle(&reg, derive_seed(cfg.seed, "oracle-linreg", 0))?;
    moment_run.lr *= s.step_scale;
    let moments = sghmc_vs_analytic(&reg, &moment_run)?;
    let moments_pass = moments.passes(s.mean_tol, s.cov_tol);

    let model = default_two_mode()?;
    let mode_cfg = ModeRunConfig::default();
    let mode_runs = (0..s.mode_runs)
        .into_par_iter()
        .map(|r| mode_capture_run(&model, &mode_cfg, derive_seed(cfg.seed, "oracle-modes", r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let csghmc_two_mode_runs = mode_runs.iter().filter(|r| r.csghmc_modes == 2).count();
    let map_single_mode_runs = mode_runs.iter().filter(|r| r.map_modes == 1).count();
    let modes_pass = 10 * csghmc_two_mode_runs >= 9 * s.mode_runs && map_single_mode_runs == s.mode_runs;

    let report = OracleReport {
        provenance: cfg.provenance("oracle"),
        settings: s.clone(),
        moment_run,
        moments,
        moments_pass,
        mode_runs,
        csghmc_two_mode_runs,
        map_single_mode_runs,
        modes_pass,
        pass: moments_pass && modes_pass,
    };
    write_json(&out.join("reports").join("oracle.json"), &report)?;
    write_timing(out, "oracle", "oracle", started)?;
    if !report.pass {
        return Err(Error::Numerical(format!(
            "oracle check failed: moments {}, modes {} ({}/{} cSGHMC runs saw both modes, {}/{} MAP runs saw one)",
            if moments_pass { "ok" } else { "outside tolerance" },
            if modes_pass { "ok" } else { "failed" },
            csghmc_two_mode_runs,
            s.mode_runs,
            map_single_mode_runs,
            s.mode_runs
        )));
    }
    Ok(report)
}
