//! Discrete label distributions and the loss terms used for training.
//!
//! Every loss here is paired with a hand-derived gradient. The logit
//! gradients rely on the softmax Jacobian `∂p_k/∂z_j = p_k(δ_kj − p_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Smallest standard deviation a label distribution is built with during
/// training. Stage parameters never go below it.
pub const SIGMA_MIN: f64 = 0.25;

/// Fixed weight of the regression term in the composite loss.
pub const MSE_WEIGHT: f64 = 0.01;

/// Consecutive integer labels `min_label..=max_label`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SupportRepr", into = "SupportRepr")]
pub struct LabelSupport {
    min_label: i64,
    max_label: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportRepr {
    min_label: i64,
    max_label: i64,
}

impl TryFrom<SupportRepr> for LabelSupport {
    type Error = Error;
    fn try_from(r: SupportRepr) -> Result<Self> {
        LabelSupport::new(r.min_label, r.max_label)
    }
}

impl From<LabelSupport> for SupportRepr {
    fn from(s: LabelSupport) -> Self {
        SupportRepr {
            min_label: s.min_label,
            max_label: s.max_label,
        }
    }
}

impl Default for LabelSupport {
    fn default() -> Self {
        LabelSupport {
            min_label: 0,
            max_label: 100,
        }
    }
}

impl LabelSupport {
    pub fn new(min_label: i64, max_label: i64) -> Result<Self> {
        if max_label <= min_label {
            return Err(Error::param(format!(
                "label support {min_label}..={max_label} must contain at least two labels"
            )));
        }
        Ok(LabelSupport {
            min_label,
            max_label,
        })
    }

    pub fn min_label(&self) -> i64 {
        self.min_label
    }

    pub fn max_label(&self) -> i64 {
        self.max_label
    }

    pub fn size(&self) -> usize {
        (self.max_label - self.min_label + 1) as usize
    }

    pub fn contains(&self, label: i64) -> bool {
        (self.min_label..=self.max_label).contains(&label)
    }

    pub fn index_of(&self, label: i64) -> Result<usize> {
        if self.contains(label) {
            Ok((label - self.min_label) as usize)
        } else {
            Err(Error::InvalidLabel {
                label,
                reason: format!(
                    "outside support {}..={}",
                    self.min_label, self.max_label
                ),
            })
        }
    }

    pub fn label_at(&self, index: usize) -> i64 {
        self.min_label + index as i64
    }

    pub fn labels(&self) -> impl Iterator<Item = i64> {
        self.min_label..=self.max_label
    }
}

/// A probability vector over a [`LabelSupport`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution {
    support: LabelSupport,
    probs: Vec<f64>,
}

impl LabelDistribution {
    /// Wraps an existing probability vector, checking non-negativity and
    /// that it sums to one within `1e-9`.
    pub fn from_probs(support: LabelSupport, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != support.size() {
            return Err(Error::Shape {
                expected: support.size(),
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(LabelDistribution { support, probs })
    }

    pub fn one_hot(support: LabelSupport, label: i64) -> Result<Self> {
        let idx = support.index_of(label)?;
        let mut probs = vec![0.0; support.size()];
        probs[idx] = 1.0;
        Ok(LabelDistribution { support, probs })
    }

    pub fn uniform(support: LabelSupport) -> Self {
        let n = support.size();
        LabelDistribution {
            support,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn support(&self) -> LabelSupport {
        self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, label: i64) -> Result<f64> {
        Ok(self.probs[self.support.index_of(label)?])
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// Raw classifier scores over the support.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    values: Vec<f64>,
}

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("logit {i} is not finite")));
        }
        Ok(Logits { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Components of the composite loss for one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl: f64,
    pub ce: f64,
    pub mse: f64,
    pub total: f64,
    pub alpha_used: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Gaussian centred on `y` evaluated at every support label and
/// renormalised by the discrete sum, so truncated tails stay a valid
/// distribution.
pub fn gaussian_label_distribution(
    y: i64,
    sigma: f64,
    support: LabelSupport,
) -> Result<LabelDistribution> {
    check_sigma(sigma)?;
    support.index_of(y)?;
    let probs = gaussian_probs(y, sigma, support);
    Ok(LabelDistribution { support, probs })
}

// Unchecked core; `y` is an integer on the support so the peak term is
// exp(0) = 1 and the normaliser never underflows.
pub(crate) fn gaussian_probs(y: i64, sigma: f64, support: LabelSupport) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut probs: Vec<f64> = support
        .labels()
        .map(|k| {
            let d = (k - y) as f64;
            (-d * d * inv).exp()
        })
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Max-shifted `ln Σ exp(z)`.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn softmax(z: &Logits, support: LabelSupport) -> Result<LabelDistribution> {
    if z.len() != support.size() {
        return Err(Error::Shape {
            expected: support.size(),
            got: z.len(),
        });
    }
    Ok(LabelDistribution {
        support,
        probs: softmax_slice(z.values()),
    })
}

/// `Σ p_k ln(p_k / q_k)` with `0 ln 0 = 0` and `q` floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.support != q.support {
        return Err(Error::Shape {
            expected: p.support.size(),
            got: q.support.size(),
        });
    }
    let kl = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| pk * (pk.ln() - qk.max(PROB_FLOOR).ln()))
        .sum::<f64>();
    // rounding can leave a -1e-17 residue when p == q
    Ok(kl.max(0.0))
}

pub fn cross_entropy(pred: &LabelDistribution, y: i64) -> Result<f64> {
    let p = pred.prob_of(y)?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean cross-entropy over a batch.
pub fn cross_entropy_batch(preds: &[LabelDistribution], labels: &[i64]) -> Result<f64> {
    batch_mean(preds, labels, |p, y| cross_entropy(p, *y))
}

pub fn mse_loss(pred_age: f64, y: i64) -> f64 {
    let e = pred_age - y as f64;
    e * e
}

/// Mean squared error over a batch.
pub fn mse_batch(pred_ages: &[f64], labels: &[i64]) -> Result<f64> {
    batch_mean(pred_ages, labels, |p, y| Ok(mse_loss(*p, *y)))
}

fn batch_mean<P, L>(
    preds: &[P],
    labels: &[L],
    f: impl Fn(&P, &L) -> Result<f64>,
) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Shape {
            expected: preds.len(),
            got: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("batch is empty".into()));
    }
    let mut sum = 0.0;
    for (p, y) in preds.iter().zip(labels) {
        sum += f(p, y)?;
    }
    Ok(sum / preds.len() as f64)
}

/// Expectation read-out `Σ k p_k`.
pub fn expected_age(dist: &LabelDistribution) -> f64 {
    expected_label(&dist.probs, dist.support)
}

pub(crate) fn expected_label(probs: &[f64], support: LabelSupport) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| support.label_at(i) as f64 * p)
        .sum()
}

/// Mode of the distribution; ties go to the lowest label.
pub fn argmax_age(dist: &LabelDistribution) -> i64 {
    argmax_label(&dist.probs, dist.support)
}

pub(crate) fn argmax_label(probs: &[f64], support: LabelSupport) -> i64 {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    support.label_at(best)
}

/// Per-term weights of a composite loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kl: f64,
    pub ce: f64,
    pub mse: f64,
}

impl LossWeights {
    /// `α·KL + (1−α)·CE + 0.01·MSE`.
    pub fn saw(alpha: f64) -> Self {
        LossWeights {
            kl: alpha,
            ce: 1.0 - alpha,
            mse: MSE_WEIGHT,
        }
    }

    pub fn kl_only() -> Self {
        LossWeights {
            kl: 1.0,
            ce: 0.0,
            mse: 0.0,
        }
    }

    pub fn ce_only() -> Self {
        LossWeights {
            kl: 0.0,
            ce: 1.0,
            mse: 0.0,
        }
    }

    pub fn kl_plus_ce() -> Self {
        LossWeights {
            kl: 1.0,
            ce: 1.0,
            mse: 0.0,
        }
    }
}

/// Loss terms for one sample, with the predicted distribution they came from.
#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub kl: f64,
    pub ce: f64,
    pub mse: f64,
    pub total: f64,
    pub pred: Vec<f64>,
    pub pred_age: f64,
}

/// Evaluates the weighted loss of one sample against a prebuilt target and,
/// when `grad` is given, writes `∂total/∂z` into it.
///
/// `target` must be a distribution over the same support as `logits`.
pub(crate) fn weighted_loss(
    logits: &[f64],
    target: &[f64],
    y: i64,
    support: LabelSupport,
    weights: LossWeights,
    grad: Option<&mut [f64]>,
) -> SampleLoss {
    let lse = log_sum_exp(logits);
    let floor_ln = PROB_FLOOR.ln();
    let log_pred: Vec<f64> = logits.iter().map(|z| (z - lse).max(floor_ln)).collect();
    let pred: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    let yi = (y - support.min_label()) as usize;

    let mut kl = 0.0;
    for (t, lp) in target.iter().zip(&log_pred) {
        if *t > 0.0 {
            kl += t * (t.ln() - lp);
        }
    }
    let kl = kl.max(0.0);
    let ce = -log_pred[yi];
    let pred_age = expected_label(&pred, support);
    let resid = pred_age - y as f64;
    let mse = resid * resid;
    let total = weights.kl * kl + weights.ce * ce + weights.mse * mse;

    if let Some(g) = grad {
        let mse_scale = weights.mse * 2.0 * resid;
        for (j, gj) in g.iter_mut().enumerate() {
            let onehot = if j == yi { 1.0 } else { 0.0 };
            let k = support.label_at(j) as f64;
            *gj = weights.kl * (pred[j] - target[j])
                + weights.ce * (pred[j] - onehot)
                + mse_scale * pred[j] * (k - pred_age);
        }
    }

    SampleLoss {
        kl,
        ce,
        mse,
        total,
        pred,
        pred_age,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_logits(pred: &Logits, support: LabelSupport) -> Result<()> {
    if pred.len() != support.size() {
        return Err(Error::Shape {
            expected: support.size(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Composite stage-weighted loss `α·KL + (1−α)·CE + 0.01·MSE` for one sample.
///
/// The regression term uses the expectation read-out of the predicted
/// distribution.
pub fn saw_loss(
    pred: &Logits,
    y: i64,
    sigma: f64,
    alpha: f64,
    support: LabelSupport,
) -> Result<LossBreakdown> {
    check_alpha(alpha)?;
    check_logits(pred, support)?;
    let target = gaussian_label_distribution(y, sigma, support)?;
    let s = weighted_loss(
        pred.values(),
        target.probs(),
        y,
        support,
        LossWeights::saw(alpha),
        None,
    );
    Ok(LossBreakdown {
        kl: s.kl,
        ce: s.ce,
        mse: s.mse,
        total: s.total,
        alpha_used: alpha,
    })
}

/// Analytic gradient of [`saw_loss`] with respect to each logit.
pub fn saw_gradient_logits(
    pred: &Logits,
    y: i64,
    sigma: f64,
    alpha: f64,
    support: LabelSupport,
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    check_logits(pred, support)?;
    let target = gaussian_label_distribution(y, sigma, support)?;
    let mut grad = vec![0.0; support.size()];
    weighted_loss(
        pred.values(),
        target.probs(),
        y,
        support,
        LossWeights::saw(alpha),
        Some(&mut grad),
    );
    Ok(grad)
}

/// Derivative of `KL(d(y, σ) ‖ pred)` with respect to `σ`, taken through the
/// renormalised target. Values of `σ` below [`SIGMA_MIN`] are clamped.
///
/// With `u_k = (k − y)²/σ³` and `ū = Σ d_k u_k` the target moves as
/// `∂d_k/∂σ = d_k (u_k − ū)`, and since `Σ ∂d_k/∂σ = 0` the derivative is
/// `Σ d_k (u_k − ū)(ln d_k − ln q_k)`.
pub fn kl_gradient_sigma(
    y: i64,
    sigma: f64,
    pred: &LabelDistribution,
    support: LabelSupport,
) -> Result<f64> {
    check_sigma(sigma)?;
    support.index_of(y)?;
    if pred.support != support {
        return Err(Error::Shape {
            expected: support.size(),
            got: pred.support.size(),
        });
    }
    Ok(kl_sigma_derivative(y, sigma.max(SIGMA_MIN), &pred.probs, support))
}

pub(crate) fn kl_sigma_derivative(y: i64, sigma: f64, pred: &[f64], support: LabelSupport) -> f64 {
    let s2 = sigma * sigma;
    let s3 = s2 * sigma;
    let sq: Vec<f64> = support
        .labels()
        .map(|k| {
            let d = (k - y) as f64;
            d * d
        })
        .collect();
    let log_g: Vec<f64> = sq.iter().map(|q| -q / (2.0 * s2)).collect();
    let log_norm = log_g.iter().map(|l| l.exp()).sum::<f64>().ln();
    let d: Vec<f64> = log_g.iter().map(|l| (l - log_norm).exp()).collect();
    let u_bar: f64 = d.iter().zip(&sq).map(|(dk, q)| dk * q / s3).sum();
    d.iter()
        .zip(&sq)
        .zip(log_g.iter().zip(pred))
        .filter(|((dk, _), _)| **dk > 0.0)
        .map(|((dk, q), (lg, qk))| {
            let ln_d = lg - log_norm;
            dk * (q / s3 - u_bar) * (ln_d - qk.max(PROB_FLOOR).ln())
        })
        .sum()
}
