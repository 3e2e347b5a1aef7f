//! Segmentation and calibration metrics over a [`ProbField`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LabelField;
use crate::uq_methods::ProbField;

pub const DEFAULT_ECE_BINS: usize = 15;

fn check_shapes(field: &ProbField, gt: &LabelField) -> Result<()> {
    if field.height() != gt.height || field.width() != gt.width {
        return Err(Error::Validation(format!(
            "probability field is {}x{}, labels are {}x{}",
            field.height(),
            field.width(),
            gt.height,
            gt.width
        )));
    }
    gt.check_classes(field.num_classes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    /// One entry per class, background included.
    pub per_class: Vec<f64>,
    /// Mean over classes 1..C.
    pub mean: f64,
}

/// `2|P∩G| / (|P|+|G|)` per class; a class absent from both scores 1.
pub fn dice(pred: &LabelField, gt: &LabelField, num_classes: usize) -> Result<DiceScores> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::Validation("prediction and ground truth differ in shape".into()));
    }
    if num_classes < 2 {
        return Err(Error::Validation("dice needs at least 2 classes".into()));
    }
    pred.check_classes(num_classes)?;
    gt.check_classes(num_classes)?;
    let mut inter = vec![0usize; num_classes];
    let mut p_count = vec![0usize; num_classes];
    let mut g_count = vec![0usize; num_classes];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        p_count[p as usize] += 1;
        g_count[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            let denom = p_count[c] + g_count[c];
            if denom == 0 {
                1.0
            } else {
                2.0 * inter[c] as f64 / denom as f64
            }
        })
        .collect();
    let mean = per_class[1..].iter().sum::<f64>() / (num_classes - 1) as f64;
    Ok(DiceScores { per_class, mean })
}

/// Mean `−ln p[gt]` with probabilities clamped to `1e-12`.
pub fn nll(field: &ProbField, gt: &LabelField) -> Result<f64> {
    check_shapes(field, gt)?;
    let total: f64 = gt
        .labels
        .iter()
        .enumerate()
        .map(|(px, &g)| -field.prob(g as usize, px).max(1e-12).ln())
        .sum();
    Ok(total / gt.len() as f64)
}

/// Mean over pixels of `Σ_c (p_c − 1[c = gt])²`; lies in `[0, 2]`.
pub fn brier(field: &ProbField, gt: &LabelField) -> Result<f64> {
    check_shapes(field, gt)?;
    let c = field.num_classes();
    let total: f64 = gt
        .labels
        .iter()
        .enumerate()
        .map(|(px, &g)| {
            (0..c)
                .map(|k| {
                    let target = if k == g as usize { 1.0 } else { 0.0 };
                    (field.prob(k, px) - target).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / gt.len() as f64)
}

/// Equal-width confidence bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Sums rather than means so bins from several images can be merged.
    pub confidence_sum: Vec<f64>,
    pub correct: Vec<usize>,
}

impl ReliabilityBins {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::Validation("ECE needs at least one bin".into()));
        }
        Ok(Self {
            edges: (0..=num_bins).map(|i| i as f64 / num_bins as f64).collect(),
            counts: vec![0; num_bins],
            confidence_sum: vec![0.0; num_bins],
            correct: vec![0; num_bins],
        })
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin `b` holds confidences in `[b/B, (b+1)/B)`; 1.0 goes in the last bin.
    pub fn bin_of(&self, confidence: f64) -> usize {
        let b = self.num_bins();
        ((confidence * b as f64).floor() as usize).min(b - 1)
    }

    pub fn add(&mut self, confidence: f64, is_correct: bool) {
        let b = self.bin_of(confidence);
        self.counts[b] += 1;
        self.confidence_sum[b] += confidence;
        self.correct[b] += is_correct as usize;
    }

    pub fn merge(&mut self, other: &ReliabilityBins) -> Result<()> {
        if other.num_bins() != self.num_bins() {
            return Err(Error::Validation("cannot merge bins of different widths".into()));
        }
        for b in 0..self.num_bins() {
            self.counts[b] += other.counts[b];
            self.confidence_sum[b] += other.confidence_sum[b];
            self.correct[b] += other.correct[b];
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn mean_confidence(&self) -> Vec<Option<f64>> {
        (0..self.num_bins())
            .map(|b| (self.counts[b] > 0).then(|| self.confidence_sum[b] / self.counts[b] as f64))
            .collect()
    }

    pub fn accuracy(&self) -> Vec<Option<f64>> {
        (0..self.num_bins())
            .map(|b| (self.counts[b] > 0).then(|| self.correct[b] as f64 / self.counts[b] as f64))
            .collect()
    }

    /// `Σ_b (n_b/N)·|acc_b − conf_b|`, empty bins contributing 0.
    pub fn ece(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.num_bins())
            .filter(|&b| self.counts[b] > 0)
            .map(|b| (self.correct[b] as f64 - self.confidence_sum[b]).abs() / total as f64)
            .sum()
    }
}

pub fn reliability(field: &ProbField, gt: &LabelField, num_bins: usize) -> Result<ReliabilityBins> {
    check_shapes(field, gt)?;
    let mut bins = ReliabilityBins::new(num_bins)?;
    let pred = field.argmax();
    for (px, &g) in gt.labels.iter().enumerate() {
        bins.add(field.confidence(px), pred.labels[px] == g);
    }
    Ok(bins)
}

pub fn ece(field: &ProbField, gt: &LabelField, num_bins: usize) -> Result<(f64, ReliabilityBins)> {
    let bins = reliability(field, gt, num_bins)?;
    Ok((bins.ece(), bins))
}

/// Every metric for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub dice: DiceScores,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub bins: ReliabilityBins,
}

pub fn image_metrics(field: &ProbField, gt: &LabelField, num_bins: usize) -> Result<ImageMetrics> {
    let (ece, bins) = ece(field, gt, num_bins)?;
    Ok(ImageMetrics {
        dice: dice(&field.argmax(), gt, field.num_classes())?,
        nll: nll(field, gt)?,
        brier: brier(field, gt)?,
        ece,
        bins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub shift_kind: String,
    pub shift_level: f64,
    pub dice_mean: f64,
    /// Foreground classes 1..C.
    pub dice_classes: Vec<f64>,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
}

impl MetricRow {
    /// Per-image metrics averaged over the set.
    pub fn average(method: &str, shift_kind: &str, shift_level: f64, images: &[ImageMetrics]) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::EmptyResult("no images to average".into()));
        };
        let n = images.len() as f64;
        let classes = first.dice.per_class.len();
        let mean = |f: &dyn Fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            method: method.to_string(),
            shift_kind: shift_kind.to_string(),
            shift_level,
            dice_mean: mean(&|m| m.dice.mean),
            dice_classes: (1..classes).map(|c| mean(&|m| m.dice.per_class[c])).collect(),
            nll: mean(&|m| m.nll),
            brier: mean(&|m| m.brier),
            ece: mean(&|m| m.ece),
        })
    }
}

/// `method,shift_kind,shift_level,dice_mean,dice_c1,...,nll,brier,ece`
/// with six decimals.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let classes = rows.first().map_or(2, |r| r.dice_classes.len());
    let mut out = String::from("method,shift_kind,shift_level,dice_mean");
    for c in 1..=classes {
        let _ = write!(out, ",dice_c{c}");
    }
    out.push_str(",nll,brier,ece\n");
    for r in rows {
        let _ = write!(out, "{},{},{:.6},{:.6}", r.method, r.shift_kind, r.shift_level, r.dice_mean);
        for d in &r.dice_classes {
            let _ = write!(out, ",{d:.6}");
        }
        let _ = writeln!(out, ",{:.6},{:.6},{:.6}", r.nll, r.brier, r.ece);
    }
    out
}
