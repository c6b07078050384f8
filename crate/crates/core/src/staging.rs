//! Partitioning the label support into contiguous stages.
//!
//! The data-driven partition comes from exact 1-D k-means over the label
//! multiset: optimal clusters of sorted scalars are contiguous, so a dynamic
//! program over split points finds the global optimum without any random
//! initialisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldl::LabelSupport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Kmeans,
    Decade,
    Manual,
}

/// Contiguous, exhaustive grouping of the support into stages.
///
/// Stage `s` covers `boundaries[s]..boundaries[s + 1]` (half-open), the last
/// stage runs to the support maximum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StagePartition {
    boundaries: Vec<i64>,
    k: usize,
    provenance: Provenance,
    support: LabelSupport,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionRepr {
    boundaries: Vec<i64>,
    k: usize,
    provenance: Provenance,
    support: LabelSupport,
}

impl<'de> Deserialize<'de> for StagePartition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PartitionRepr::deserialize(d)?;
        if r.k != r.boundaries.len() {
            return Err(serde::de::Error::custom(format!(
                "k = {} but {} boundaries given",
                r.k,
                r.boundaries.len()
            )));
        }
        StagePartition::from_boundaries(r.boundaries, r.provenance, r.support)
            .map_err(serde::de::Error::custom)
    }
}

impl StagePartition {
    /// User-supplied stage starts. The first start must be the support
    /// minimum and starts must strictly increase within the support.
    pub fn manual(boundaries: Vec<i64>, support: LabelSupport) -> Result<Self> {
        Self::from_boundaries(boundaries, Provenance::Manual, support)
    }

    fn from_boundaries(
        boundaries: Vec<i64>,
        provenance: Provenance,
        support: LabelSupport,
    ) -> Result<Self> {
        match boundaries.first() {
            None => return Err(Error::param("a partition needs at least one stage")),
            Some(&b) if b != support.min_label() => {
                return Err(Error::param(format!(
                    "first stage must start at {}, got {b}",
                    support.min_label()
                )))
            }
            _ => {}
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("stage boundaries must strictly increase"));
        }
        if let Some(&b) = boundaries.iter().find(|b| !support.contains(**b)) {
            return Err(Error::InvalidLabel {
                label: b,
                reason: "stage boundary outside support".into(),
            });
        }
        Ok(StagePartition {
            k: boundaries.len(),
            boundaries,
            provenance,
            support,
        })
    }

    pub fn boundaries(&self) -> &[i64] {
        &self.boundaries
    }

    pub fn num_stages(&self) -> usize {
        self.k
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn support(&self) -> LabelSupport {
        self.support
    }

    /// Inclusive label range of stage `s`.
    pub fn stage_range(&self, s: usize) -> (i64, i64) {
        let lo = self.boundaries[s];
        let hi = self
            .boundaries
            .get(s + 1)
            .map_or(self.support.max_label(), |b| b - 1);
        (lo, hi)
    }

    /// Stage index for every support label, in support order.
    pub fn stage_table(&self) -> Vec<usize> {
        let mut table = Vec::with_capacity(self.support.size());
        for s in 0..self.k {
            let (lo, hi) = self.stage_range(s);
            table.extend(std::iter::repeat_n(s, (hi - lo + 1) as usize));
        }
        table
    }
}

/// Index of the stage containing `label`.
pub fn stage_of(partition: &StagePartition, label: i64) -> Result<usize> {
    partition.support.index_of(label)?;
    Ok(partition.boundaries.partition_point(|b| *b <= label) - 1)
}

/// Ten-label stages starting at the support minimum. A trailing remainder
/// shorter than ten labels is merged into the preceding stage.
pub fn decade_partition(support: LabelSupport) -> StagePartition {
    let full = (support.size() / 10).max(1);
    let boundaries = (0..full)
        .map(|i| support.min_label() + 10 * i as i64)
        .collect();
    StagePartition {
        k: full,
        boundaries,
        provenance: Provenance::Decade,
        support,
    }
}

/// One optimal k-means cluster over distinct label values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelCluster {
    pub lo: i64,
    pub hi: i64,
    pub count: usize,
    pub sse: f64,
}

// Weighted prefix sums over the distinct values.
struct Prefix {
    w: Vec<f64>,
    wx: Vec<f64>,
    wxx: Vec<f64>,
}

impl Prefix {
    fn new(values: &[(i64, usize)]) -> Self {
        let mut p = Prefix {
            w: vec![0.0],
            wx: vec![0.0],
            wxx: vec![0.0],
        };
        for &(v, c) in values {
            let (v, c) = (v as f64, c as f64);
            p.w.push(p.w.last().unwrap() + c);
            p.wx.push(p.wx.last().unwrap() + c * v);
            p.wxx.push(p.wxx.last().unwrap() + c * v * v);
        }
        p
    }

    /// Within-cluster sum of squares of distinct values `i..=j`.
    fn cost(&self, i: usize, j: usize) -> f64 {
        let w = self.w[j + 1] - self.w[i];
        let wx = self.wx[j + 1] - self.wx[i];
        let wxx = self.wxx[j + 1] - self.wxx[i];
        (wxx - wx * wx / w).max(0.0)
    }
}

fn distinct_counts(labels: &[i64]) -> Vec<(i64, usize)> {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(i64, usize)> = Vec::new();
    for v in sorted {
        match out.last_mut() {
            Some((last, c)) if *last == v => *c += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

/// Globally optimal 1-D k-means over the label multiset.
///
/// `cost[c][j]` is the least sum of squares for the first `j + 1` distinct
/// values in `c + 1` clusters. Ties between split points go to the earliest
/// split.
pub fn kmeans_1d_clusters(labels: &[i64], k: usize) -> Result<Vec<LabelCluster>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labels to cluster".into()));
    }
    let values = distinct_counts(labels);
    let n = values.len();
    if k == 0 || k > n {
        return Err(Error::param(format!(
            "k = {k} must be between 1 and the number of distinct labels ({n})"
        )));
    }
    let prefix = Prefix::new(&values);

    let mut cost = vec![vec![f64::INFINITY; n]; k];
    let mut split = vec![vec![0usize; n]; k];
    for (j, c) in cost[0].iter_mut().enumerate() {
        *c = prefix.cost(0, j);
    }
    for c in 1..k {
        for j in c..n {
            // last cluster is values m..=j
            for m in c..=j {
                let v = cost[c - 1][m - 1] + prefix.cost(m, j);
                if v < cost[c][j] {
                    cost[c][j] = v;
                    split[c][j] = m;
                }
            }
        }
    }

    let mut clusters = Vec::with_capacity(k);
    let mut j = n - 1;
    for c in (0..k).rev() {
        let m = if c == 0 { 0 } else { split[c][j] };
        clusters.push(LabelCluster {
            lo: values[m].0,
            hi: values[j].0,
            count: values[m..=j].iter().map(|v| v.1).sum(),
            sse: prefix.cost(m, j),
        });
        if c > 0 {
            j = m - 1;
        }
    }
    clusters.reverse();
    Ok(clusters)
}

/// Stage partition from optimal 1-D k-means on `labels`.
///
/// Support labels that fall between two clusters join the nearer one,
/// ties to the lower stage; labels outside the data range join the first
/// or last stage.
pub fn kmeans_1d(labels: &[i64], k: usize, support: LabelSupport) -> Result<StagePartition> {
    if let Some(&bad) = labels.iter().find(|l| !support.contains(**l)) {
        return Err(Error::InvalidLabel {
            label: bad,
            reason: "label outside support".into(),
        });
    }
    let clusters = kmeans_1d_clusters(labels, k)?;
    let mut boundaries = vec![support.min_label()];
    for pair in clusters.windows(2) {
        // smallest ℓ with ℓ − hi > lo' − ℓ
        boundaries.push((pair[0].hi + pair[1].lo).div_euclid(2) + 1);
    }
    Ok(StagePartition {
        k,
        boundaries,
        provenance: Provenance::Kmeans,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sup() -> LabelSupport {
        LabelSupport::default()
    }

    // Exhaustive search over contiguous splits of the sorted distinct values.
    fn brute_force_cost(labels: &[i64], k: usize) -> f64 {
        let values = distinct_counts(labels);
        let n = values.len();
        let sse = |a: usize, b: usize| {
            let pts: Vec<f64> = values[a..b]
                .iter()
                .flat_map(|(v, c)| std::iter::repeat_n(*v as f64, *c))
                .collect();
            let mean = pts.iter().sum::<f64>() / pts.len() as f64;
            pts.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
        };
        fn rec(start: usize, left: usize, n: usize, sse: &dyn Fn(usize, usize) -> f64) -> f64 {
            if left == 1 {
                return sse(start, n);
            }
            (start + 1..=n - left + 1)
                .map(|cut| sse(start, cut) + rec(cut, left - 1, n, sse))
                .fold(f64::INFINITY, f64::min)
        }
        rec(0, k, n, &sse)
    }

    #[test]
    fn two_clear_clusters() {
        let labels = [1, 2, 9, 10];
        let clusters = kmeans_1d_clusters(&labels, 2).unwrap();
        assert_eq!((clusters[0].lo, clusters[0].hi), (1, 2));
        assert_eq!((clusters[1].lo, clusters[1].hi), (9, 10));
        assert!((brute_force_cost(&labels, 2) - 1.0).abs() < 1e-12);
        let p = kmeans_1d(&labels, 2, sup()).unwrap();
        assert_eq!(p.boundaries(), &[0, 6]);
        assert_eq!(stage_of(&p, 5).unwrap(), 0);
        assert_eq!(stage_of(&p, 6).unwrap(), 1);
        assert_eq!(p.provenance(), Provenance::Kmeans);
    }

    #[test]
    fn gap_tie_goes_to_lower_stage() {
        // gap label 5 is 3 away from both 2 and 8
        let p = kmeans_1d(&[1, 2, 8, 9], 2, sup()).unwrap();
        assert_eq!(stage_of(&p, 5).unwrap(), 0);
        assert_eq!(stage_of(&p, 6).unwrap(), 1);
    }

    #[test]
    fn k_equals_distinct_gives_zero_cost() {
        let labels = [3, 3, 7, 20, 20, 20, 55];
        let clusters = kmeans_1d_clusters(&labels, 4).unwrap();
        assert!(clusters.iter().all(|c| c.sse == 0.0 && c.lo == c.hi));
        assert_eq!(clusters.iter().map(|c| c.lo).collect::<Vec<_>>(), vec![3, 7, 20, 55]);
    }

    #[test]
    fn uniform_labels_split_into_decades() {
        let labels: Vec<i64> = (0..100).collect();
        let clusters = kmeans_1d_clusters(&labels, 10).unwrap();
        for (i, c) in clusters.iter().enumerate() {
            assert_eq!((c.lo, c.hi), (10 * i as i64, 10 * i as i64 + 9));
        }
        let total: f64 = clusters.iter().map(|c| c.sse).sum();
        // each decade holds 10 consecutive integers: SSE = 82.5
        assert!((total - 825.0).abs() < 1e-9);
        let p = kmeans_1d(&labels, 10, sup()).unwrap();
        assert_eq!(p.boundaries(), &[0, 10, 20, 30, 40, 50, 60, 70, 80, 90]);
        assert_eq!(stage_of(&p, 100).unwrap(), 9);
    }

    #[test]
    fn kmeans_errors() {
        assert!(matches!(kmeans_1d(&[], 2, sup()), Err(Error::EmptyInput(_))));
        assert!(matches!(kmeans_1d(&[1, 1, 2], 3, sup()), Err(Error::InvalidParameter(_))));
        assert!(matches!(kmeans_1d(&[1, 2], 0, sup()), Err(Error::InvalidParameter(_))));
        assert!(matches!(kmeans_1d(&[1, 200], 1, sup()), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn decade_cases() {
        let p = decade_partition(sup());
        assert_eq!(p.num_stages(), 10);
        assert_eq!(p.stage_range(9), (90, 100));
        assert_eq!(stage_of(&p, 100).unwrap(), 9);
        let small = decade_partition(LabelSupport::new(0, 19).unwrap());
        assert_eq!(small.num_stages(), 2);
        assert_eq!(stage_of(&small, 15).unwrap(), 1);
        let tiny = decade_partition(LabelSupport::new(0, 4).unwrap());
        assert_eq!(tiny.num_stages(), 1);
        assert_eq!(tiny.stage_range(0), (0, 4));
    }

    #[test]
    fn stage_of_cases() {
        let p = StagePartition::manual(vec![0, 12, 22], sup()).unwrap();
        assert_eq!(stage_of(&p, 11).unwrap(), 0);
        assert_eq!(stage_of(&p, 12).unwrap(), 1);
        assert_eq!(stage_of(&p, 22).unwrap(), 2);
        assert_eq!(stage_of(&p, 100).unwrap(), 2);
        assert!(matches!(stage_of(&p, 101), Err(Error::InvalidLabel { .. })));
        assert!(matches!(stage_of(&p, -1), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn manual_validation() {
        assert!(StagePartition::manual(vec![], sup()).is_err());
        assert!(StagePartition::manual(vec![1, 10], sup()).is_err());
        assert!(StagePartition::manual(vec![0, 10, 10], sup()).is_err());
        assert!(StagePartition::manual(vec![0, 101], sup()).is_err());
    }

    #[test]
    fn json_shape() {
        let p = decade_partition(LabelSupport::new(0, 19).unwrap());
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["boundaries"], serde_json::json!([0, 10]));
        assert_eq!(v["k"], 2);
        assert_eq!(v["provenance"], "decade");
        let back: StagePartition = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, p);
        let mut bad = v;
        bad["k"] = serde_json::json!(3);
        assert!(serde_json::from_value::<StagePartition>(bad).is_err());
    }

    fn check_cover(p: &StagePartition) {
        let table = p.stage_table();
        assert_eq!(table.len(), p.support().size());
        for (i, label) in p.support().labels().enumerate() {
            assert_eq!(stage_of(p, label).unwrap(), table[i]);
        }
        for s in 0..p.num_stages() {
            let (lo, hi) = p.stage_range(s);
            assert!(lo <= hi);
            assert_eq!(stage_of(p, p.boundaries()[s]).unwrap(), s);
        }
        assert!(table.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(
            labels in prop::collection::vec(0i64..40, 1..30),
            k in 1usize..=4,
        ) {
            let distinct = distinct_counts(&labels).len();
            prop_assume!(distinct <= 12 && k <= distinct);
            let clusters = kmeans_1d_clusters(&labels, k).unwrap();
            let dp: f64 = clusters.iter().map(|c| c.sse).sum();
            let bf = brute_force_cost(&labels, k);
            prop_assert!((dp - bf).abs() <= 1e-9 * bf.max(1.0));
            let p = kmeans_1d(&labels, k, sup()).unwrap();
            check_cover(&p);
            prop_assert_eq!(p, kmeans_1d(&labels, k, sup()).unwrap());
        }

        #[test]
        fn decade_covers(lo in -20i64..20, width in 1i64..150) {
            let s = LabelSupport::new(lo, lo + width).unwrap();
            check_cover(&decade_partition(s));
        }
    }
}
