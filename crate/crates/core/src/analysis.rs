//! Uncertainty maps, their per-image aggregates and histograms, and the
//! ensemble-diversity correlation matrix.

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::tensor::{LabelField, Tensor};
use crate::uq_methods::{MethodTag, PosteriorEnsemble, Predictor};

/// Per-pixel entropy with the prediction and ground truth it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct UncMap {
    pub entropy: Tensor,
    pub pred: LabelField,
    pub gt: LabelField,
}

impl UncMap {
    pub fn new(entropy: Tensor, pred: LabelField, gt: LabelField) -> Result<Self> {
        let (h, w) = entropy.hw()?;
        if (pred.height, pred.width) != (h, w) || (gt.height, gt.width) != (h, w) {
            return Err(Error::Validation("entropy map and label fields differ in shape".into()));
        }
        Ok(Self { entropy, pred, gt })
    }
}

/// Mean entropy over pixels where prediction or ground truth is foreground
/// (true positives, false positives and false negatives). `None` when
/// there are no such pixels.
pub fn aggregate_uncertainty(map: &UncMap) -> Option<f64> {
    let (sum, count) = map
        .entropy
        .data()
        .iter()
        .zip(map.pred.labels.iter().zip(&map.gt.labels))
        .filter(|(_, (p, g))| **p != 0 || **g != 0)
        .fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bin_left_edge,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left_edge,count\n");
        for (e, c) in self.edges.iter().zip(&self.counts) {
            let _ = writeln!(out, "{e:.6},{c}");
        }
        out
    }
}

/// Equal-width bins over `[0, ln C]` of the aggregates that are present.
/// The top edge belongs to the last bin.
pub fn entropy_histogram(aggregates: &[Option<f64>], num_bins: usize, num_classes: usize) -> Result<Histogram> {
    if num_bins == 0 || num_classes < 2 {
        return Err(Error::Validation("histogram needs >= 1 bin and >= 2 classes".into()));
    }
    let values: Vec<f64> = aggregates.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::EmptyResult("every aggregate is absent".into()));
    }
    let top = (num_classes as f64).ln();
    let width = top / num_bins as f64;
    let mut counts = vec![0; num_bins];
    for v in values {
        let b = ((v / width).floor().max(0.0) as usize).min(num_bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram {
        edges: (0..=num_bins).map(|i| i as f64 * width).collect(),
        counts,
    })
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrMatrix {
    /// Indices of the members in the original ensemble.
    pub members: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    /// Pairs where a member output had zero variance.
    pub degenerate_pairs: Vec<(usize, usize)>,
}

impl CorrMatrix {
    /// Square CSV with a header row of member indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("member");
        for m in &self.members {
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
        for (m, row) in self.members.iter().zip(&self.values) {
            let _ = write!(out, "{m}");
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let k = self.values.len();
        if k < 2 {
            return None;
        }
        let s: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .sum();
        Some(s / (k * (k - 1)) as f64)
    }
}

/// Pairwise Pearson correlation of flattened member outputs. A pair with a
/// constant member scores 1 if both outputs are equal, 0 otherwise, and is
/// listed in `degenerate_pairs`.
pub fn correlation_matrix(members: &[usize], outputs: &[Vec<f64>]) -> Result<CorrMatrix> {
    if members.len() != outputs.len() || outputs.is_empty() {
        return Err(Error::Usage("need one output vector per member".into()));
    }
    let len = outputs[0].len();
    if len < 2 || outputs.iter().any(|o| o.len() != len) {
        return Err(Error::Dimension("member outputs must share a length >= 2".into()));
    }
    let k = outputs.len();
    let mut values = vec![vec![0.0; k]; k];
    let mut degenerate_pairs = Vec::new();
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let r = match pearson(&outputs[i], &outputs[j]) {
                Some(r) => r,
                None => {
                    degenerate_pairs.push((members[i], members[j]));
                    if outputs[i] == outputs[j] {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrMatrix {
        members: members.to_vec(),
        values,
        degenerate_pairs,
    })
}

/// Members compared for diversity: the last `k` snapshots for cSGHMC
/// (the final cycles), a seeded random choice of `k` otherwise.
pub fn select_members(ensemble: &PosteriorEnsemble, k: usize, seed: u64) -> Result<Vec<usize>> {
    let s = ensemble.size();
    if k == 0 || k > s {
        return Err(Error::Usage(format!("cannot pick {k} of {s} members")));
    }
    Ok(match ensemble.method {
        MethodTag::Csghmc => (s - k..s).collect(),
        _ => {
            let mut picked = sample(&mut derived_rng(seed, "diversity", 0), s, k).into_vec();
            picked.sort_unstable();
            picked
        }
    })
}

/// Correlation of the chosen members' softmax outputs concatenated over
/// `images`.
pub fn diversity_matrix(predictor: &Predictor, members: &[usize], images: &[&Tensor]) -> Result<CorrMatrix> {
    if members.iter().any(|&m| m >= predictor.size()) {
        return Err(Error::Usage("member index out of range".into()));
    }
    let mut outputs = vec![Vec::new(); members.len()];
    for image in images {
        let probs = predictor.member_probs(image)?;
        for (out, &m) in outputs.iter_mut().zip(members) {
            out.extend_from_slice(probs[m].data());
        }
    }
    correlation_matrix(members, &outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub image_id: usize,
    pub method: String,
    pub shift: String,
    pub entropy: Option<f64>,
}

/// `image_id,method,shift,entropy`; an absent aggregate is an empty field.
pub fn aggregates_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("image_id,method,shift,entropy\n");
    for r in rows {
        let e = r.entropy.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{e}", r.image_id, r.method, r.shift);
    }
    out
}
