//! Accuracy metrics and embedding similarity analysis.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldl::LabelSupport;
use crate::staging::{stage_of, StagePartition};

fn check_pairs(preds: &[f64], labels: &[i64]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Shape {
            expected: preds.len(),
            got: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    Ok(())
}

pub fn mae(preds: &[f64], labels: &[i64]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - *y as f64).abs())
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Percentage of samples with `|pred − label| ≤ threshold`.
pub fn cumulative_score(preds: &[f64], labels: &[i64], threshold: f64) -> Result<f64> {
    check_pairs(preds, labels)?;
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::param(format!("threshold {threshold} must be non-negative")));
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| (*p - **y as f64).abs() <= threshold)
        .count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// MAE restricted to each stage; `None` where a stage has no samples.
pub fn per_stage_mae(
    preds: &[f64],
    labels: &[i64],
    partition: &StagePartition,
) -> Result<Vec<Option<f64>>> {
    let (sums, counts) = stage_sums(preds, labels, partition)?;
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| (*c > 0).then(|| s / *c as f64))
        .collect())
}

fn stage_sums(
    preds: &[f64],
    labels: &[i64],
    partition: &StagePartition,
) -> Result<(Vec<f64>, Vec<usize>)> {
    check_pairs(preds, labels)?;
    let k = partition.num_stages();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0; k];
    for (p, y) in preds.iter().zip(labels) {
        let s = stage_of(partition, *y)?;
        sums[s] += (p - *y as f64).abs();
        counts[s] += 1;
    }
    Ok((sums, counts))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsPoint {
    pub threshold: f64,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mae: f64,
    pub cs: Vec<CsPoint>,
    pub per_stage_mae: Vec<Option<f64>>,
    pub per_stage_count: Vec<usize>,
}

impl MetricsReport {
    pub fn compute(
        preds: &[f64],
        labels: &[i64],
        thresholds: &[f64],
        partition: &StagePartition,
    ) -> Result<Self> {
        let mut thresholds = thresholds.to_vec();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let cs = thresholds
            .iter()
            .map(|t| {
                Ok(CsPoint {
                    threshold: *t,
                    percent: cumulative_score(preds, labels, *t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, per_stage_count) = stage_sums(preds, labels, partition)?;
        Ok(MetricsReport {
            n: preds.len(),
            mae: mae(preds, labels)?,
            cs,
            per_stage_mae: per_stage_mae(preds, labels, partition)?,
            per_stage_count,
        })
    }

    pub fn cs_at(&self, threshold: f64) -> Option<f64> {
        self.cs
            .iter()
            .find(|p| p.threshold == threshold)
            .map(|p| p.percent)
    }

    /// `metric,value` rows; absent stages have an empty value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        writeln!(out, "n,{}", self.n).unwrap();
        writeln!(out, "mae,{}", self.mae).unwrap();
        for p in &self.cs {
            writeln!(out, "cs@{},{}", p.threshold, p.percent).unwrap();
        }
        for (s, v) in self.per_stage_mae.iter().enumerate() {
            match v {
                Some(v) => writeln!(out, "stage{s}_mae,{v}").unwrap(),
                None => writeln!(out, "stage{s}_mae,").unwrap(),
            }
        }
        out
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// How per-label similarities are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean cosine over all (anchor sample, label sample) pairs.
    #[default]
    PairMean,
    /// Cosine between the mean anchor embedding and the mean label embedding.
    MeanEmbedding,
}

/// Similarity of every support label to an anchor label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCurve {
    pub anchor: i64,
    pub support: LabelSupport,
    /// One entry per support label; `None` where the label has no samples.
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl SimilarityCurve {
    pub fn value_at(&self, label: i64) -> Option<f64> {
        self.support
            .index_of(label)
            .ok()
            .and_then(|i| self.values[i])
    }

    /// `label,mean_cos,count`; absent labels have an empty `mean_cos`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,mean_cos,count\n");
        for (i, (v, c)) in self.values.iter().zip(&self.counts).enumerate() {
            let label = self.support.label_at(i);
            match v {
                Some(v) => writeln!(out, "{label},{v},{c}").unwrap(),
                None => writeln!(out, "{label},,{c}").unwrap(),
            }
        }
        out
    }
}

pub fn anchor_similarity_curve(
    embeddings: &[Vec<f64>],
    labels: &[i64],
    anchor: i64,
    support: LabelSupport,
) -> Result<SimilarityCurve> {
    anchor_similarity_curve_with(embeddings, labels, anchor, support, Aggregation::PairMean)
}

/// Anchor similarity curve with an explicit aggregation.
///
/// Pair means use `Σ_a Σ_b û_a·û_b = S_A·S_ℓ` over unit vectors, where `S`
/// is the per-label sum. For the anchor itself self-pairs are removed when
/// it has more than one sample: `(|S_A|² − n_A) / (n_A(n_A − 1))`.
pub fn anchor_similarity_curve_with(
    embeddings: &[Vec<f64>],
    labels: &[i64],
    anchor: i64,
    support: LabelSupport,
    aggregation: Aggregation,
) -> Result<SimilarityCurve> {
    if embeddings.len() != labels.len() {
        return Err(Error::Shape {
            expected: embeddings.len(),
            got: labels.len(),
        });
    }
    let anchor_idx = support.index_of(anchor)?;
    let dim = embeddings.first().map_or(0, Vec::len);
    let k = support.size();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, (e, y)) in embeddings.iter().zip(labels).enumerate() {
        if e.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: e.len(),
            });
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding { index: i });
        }
        let li = support.index_of(*y)?;
        let scale = match aggregation {
            Aggregation::PairMean => 1.0 / norm,
            Aggregation::MeanEmbedding => 1.0,
        };
        for (s, x) in sums[li].iter_mut().zip(e) {
            *s += x * scale;
        }
        counts[li] += 1;
    }
    let na = counts[anchor_idx];
    if na == 0 {
        return Err(Error::InvalidLabel {
            label: anchor,
            reason: "anchor label has no samples".into(),
        });
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sa = &sums[anchor_idx];
    let values = (0..k)
        .map(|li| {
            let nl = counts[li];
            if nl == 0 {
                return None;
            }
            let v = match aggregation {
                Aggregation::PairMean if li == anchor_idx && na > 1 => {
                    (dot(sa, sa) - na as f64) / (na * (na - 1)) as f64
                }
                Aggregation::PairMean => dot(sa, &sums[li]) / (na * nl) as f64,
                Aggregation::MeanEmbedding => cosine(sa, &sums[li]),
            };
            Some(v.clamp(-1.0, 1.0))
        })
        .collect();
    Ok(SimilarityCurve {
        anchor,
        support,
        values,
        counts,
    })
}
