//! Datasets: CSV I/O, stratified splitting, and a synthetic generator with
//! planted per-stage label ambiguity.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldl::LabelSupport;
use crate::staging::{stage_of, StagePartition};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: i64,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_dim: usize,
    support: LabelSupport,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, feature_dim: usize, support: LabelSupport) -> Result<Self> {
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::Shape {
                    expected: feature_dim,
                    got: s.features.len(),
                });
            }
            support.index_of(s.label)?;
            if s.features.iter().any(|f| !f.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "sample {} has a non-finite feature",
                    s.id
                )));
            }
        }
        Ok(Dataset {
            samples,
            feature_dim,
            support,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn support(&self) -> LabelSupport {
        self.support
    }

    pub fn labels(&self) -> Vec<i64> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub(crate) fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|i| self.samples[*i].clone()).collect(),
            feature_dim: self.feature_dim,
            support: self.support,
        }
    }
}

/// Planted ambiguity: per-stage levels controlling how far apart the
/// prototypes of adjacent labels sit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityProfile {
    #[serde(default)]
    pub support: LabelSupport,
    /// Stage start labels; the first must be the support minimum.
    pub boundaries: Vec<i64>,
    /// One level per stage; larger means adjacent labels look more alike.
    pub levels: Vec<f64>,
    /// Feature dimension; must be even and at least 2.
    pub dim: usize,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
}

impl AmbiguityProfile {
    pub fn partition(&self) -> Result<StagePartition> {
        StagePartition::manual(self.boundaries.clone(), self.support)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.partition()?;
        if self.levels.len() != p.num_stages() {
            return Err(Error::param(format!(
                "{} ambiguity levels for {} stages",
                self.levels.len(),
                p.num_stages()
            )));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::param(format!("ambiguity level {l} must be positive")));
        }
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return Err(Error::param(format!("dim {} must be even and >= 2", self.dim)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise must be non-negative"));
        }
        Ok(())
    }
}

/// Unit-norm prototype of every support label.
///
/// Labels are placed on a line with the step from `ℓ` to `ℓ + 1` equal to
/// `1 / level(stage(ℓ))`, the positions are rescaled to a phase in `[0, π]`,
/// and each phase is encoded as `(cos iθ, sin iθ)_{i=1..dim/2} / √(dim/2)`.
/// Cosine similarity between two prototypes then depends only on their
/// phase gap and falls off from 1 as the gap grows.
pub fn prototypes(profile: &AmbiguityProfile) -> Result<Vec<Vec<f64>>> {
    profile.validate()?;
    let partition = profile.partition()?;
    let support = profile.support;
    let mut pos = Vec::with_capacity(support.size());
    let mut t = 0.0;
    for label in support.labels() {
        pos.push(t);
        t += 1.0 / profile.levels[stage_of(&partition, label)?];
    }
    let total = *pos.last().unwrap();
    let m = profile.dim / 2;
    let norm = 1.0 / (m as f64).sqrt();
    Ok(pos
        .iter()
        .map(|p| {
            let theta = std::f64::consts::PI * p / total;
            (1..=m)
                .flat_map(|i| {
                    let a = i as f64 * theta;
                    [a.cos() * norm, a.sin() * norm]
                })
                .collect()
        })
        .collect())
}

/// `n_per_label` noisy copies of every label's prototype.
pub fn generate_synthetic(profile: &AmbiguityProfile, n_per_label: usize, seed: u64) -> Result<Dataset> {
    if n_per_label == 0 {
        return Err(Error::param("n_per_label must be at least 1"));
    }
    let protos = prototypes(profile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, profile.noise).map_err(|e| Error::param(e.to_string()))?;
    let mut samples = Vec::with_capacity(protos.len() * n_per_label);
    for (label, proto) in profile.support.labels().zip(&protos) {
        for j in 0..n_per_label {
            let features = proto.iter().map(|p| p + normal.sample(&mut rng)).collect();
            samples.push(Sample {
                id: format!("{label}-{j}"),
                label,
                features,
            });
        }
    }
    Dataset::new(samples, profile.dim, profile.support)
}

/// Reads `id,age,f0,…` rows. Labels outside `support` are rejected with the
/// offending line number.
pub fn load_csv(path: &Path, support: LabelSupport) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, support)
}

pub fn read_csv<R: std::io::Read>(reader: R, support: LabelSupport) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "age" {
        return Err(Error::Parse {
            line: 1,
            message: "header must be id,age,f0,...".into(),
        });
    }
    for (i, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column f{i}, found {h}"),
            });
        }
    }
    let dim = headers.len() - 2;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        let label: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("age {:?} is not an integer", &rec[1])))?;
        if !support.contains(label) {
            return Err(Error::InvalidLabel {
                label,
                reason: format!(
                    "line {line}: outside support {}..={}",
                    support.min_label(),
                    support.max_label()
                ),
            });
        }
        let mut features = Vec::with_capacity(dim);
        for (i, cell) in rec.iter().skip(2).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("feature f{i} {cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("feature f{i} is not finite")));
            }
            features.push(v);
        }
        samples.push(Sample {
            id: rec[0].to_string(),
            label,
            features,
        });
    }
    Dataset::new(samples, dim, support)
}

pub fn write_csv<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    let mut header = vec!["id".to_string(), "age".to_string()];
    header.extend((0..dataset.feature_dim).map(|i| format!("f{i}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for s in &dataset.samples {
        let mut row = vec![s.id.clone(), s.label.to_string()];
        // Display for f64 prints the shortest string that parses back exactly
        row.extend(s.features.iter().map(|f| f.to_string()));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()
        .map_err(|e| Error::InvalidInput(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

/// Label-stratified shuffle split into train/validation/test.
///
/// Split sizes are `round(f·n)` for train and validation, the rest is test.
/// Within each label the samples are shuffled and spread evenly over
/// `[0, 1)` with a random per-label offset; the globally smallest positions
/// go to train, the next to validation. Output keeps the input order.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::param("split fractions must all be positive"));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param("split fractions must sum to 1"));
    }
    let n = dataset.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Stratification(format!(
            "{n} samples cannot fill three non-empty splits with fractions {fractions:?}"
        )));
    }

    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        groups.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        let offset: f64 = rng.random();
        let m = idx.len() as f64;
        keyed.extend(idx.iter().enumerate().map(|(j, i)| ((j as f64 + offset) / m, *i)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut train: Vec<usize> = keyed[..n_train].iter().map(|k| k.1).collect();
    let mut val: Vec<usize> = keyed[n_train..n_train + n_val].iter().map(|k| k.1).collect();
    let mut test: Vec<usize> = keyed[n_train + n_val..].iter().map(|k| k.1).collect();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let in_train: HashSet<i64> = train.iter().map(|i| dataset.samples[*i].label).collect();
    if let Some((label, _)) = groups.iter().find(|(l, idx)| idx.len() >= 3 && !in_train.contains(*l)) {
        return Err(Error::Stratification(format!(
            "label {label} has at least 3 samples but none landed in train"
        )));
    }
    Ok((dataset.subset(&train), dataset.subset(&val), dataset.subset(&test)))
}
