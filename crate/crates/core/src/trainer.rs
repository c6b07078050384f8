//! Validation-gated training of the model together with per-stage label
//! distribution widths (σ) and loss weights (α).
//!
//! Each epoch trains on the current stage parameters, measures the mean
//! absolute error on the validation split, and snapshots model and stage
//! parameters whenever that error reaches a new minimum. The last snapshot is
//! what training returns.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::ldl::{
    argmax_label, expected_label, gaussian_probs, kl_sigma_derivative, softmax_slice,
    LabelSupport, LossWeights, SIGMA_MIN,
};
use crate::model::{batch_gradient, forward, BatchLoss, Model, Sgd, StageAccum};
use crate::staging::StagePartition;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Per-stage σ and α held in unconstrained form:
/// `σ = SIGMA_MIN + softplus(raw_sigma)` and `α = logistic(raw_alpha)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    raw_sigma: Vec<f64>,
    raw_alpha: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageParamsRepr {
    raw_sigma: Vec<f64>,
    raw_alpha: Vec<f64>,
    #[serde(default)]
    sigmas: Vec<f64>,
    #[serde(default)]
    alphas: Vec<f64>,
}

impl Serialize for StageParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StageParamsRepr {
            raw_sigma: self.raw_sigma.clone(),
            raw_alpha: self.raw_alpha.clone(),
            sigmas: self.sigmas(),
            alphas: self.alphas(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StageParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = StageParamsRepr::deserialize(d)?;
        if r.raw_sigma.len() != r.raw_alpha.len() || r.raw_sigma.is_empty() {
            return Err(serde::de::Error::custom("stage parameter vectors must be equal, non-empty"));
        }
        if r.raw_sigma.iter().chain(&r.raw_alpha).any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("stage parameters must be finite"));
        }
        Ok(StageParams {
            raw_sigma: r.raw_sigma,
            raw_alpha: r.raw_alpha,
        })
    }
}

impl StageParams {
    /// Raw parameters at zero: σ = 0.25 + ln 2 ≈ 0.943 and α = 0.5.
    pub fn initial(k: usize) -> Self {
        StageParams {
            raw_sigma: vec![0.0; k],
            raw_alpha: vec![0.0; k],
        }
    }

    /// Same σ and α in every stage.
    pub fn uniform(k: usize, sigma: f64, alpha: f64) -> Result<Self> {
        let mut p = Self::initial(k);
        for s in 0..k {
            p.set_sigma(s, sigma)?;
            p.set_alpha(s, alpha)?;
        }
        Ok(p)
    }

    pub fn num_stages(&self) -> usize {
        self.raw_sigma.len()
    }

    pub fn sigma(&self, s: usize) -> f64 {
        SIGMA_MIN + softplus(self.raw_sigma[s])
    }

    pub fn alpha(&self, s: usize) -> f64 {
        logistic(self.raw_alpha[s])
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.num_stages()).map(|s| self.sigma(s)).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.num_stages()).map(|s| self.alpha(s)).collect()
    }

    pub fn raw_sigma(&self) -> &[f64] {
        &self.raw_sigma
    }

    pub fn raw_alpha(&self) -> &[f64] {
        &self.raw_alpha
    }

    pub fn set_sigma(&mut self, s: usize, sigma: f64) -> Result<()> {
        if !(sigma > SIGMA_MIN && sigma.is_finite()) {
            return Err(Error::param(format!(
                "sigma {sigma} must exceed the floor {SIGMA_MIN}"
            )));
        }
        self.raw_sigma[s] = softplus_inv(sigma - SIGMA_MIN);
        Ok(())
    }

    pub fn set_alpha(&mut self, s: usize, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::param(format!("alpha {alpha} must lie in (0, 1)")));
        }
        self.raw_alpha[s] = logit(alpha);
        Ok(())
    }
}

/// Which terms make up the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// KL divergence to the Gaussian target only.
    Kl,
    /// Cross-entropy to the hard label only.
    Ce,
    /// Unweighted sum of KL and cross-entropy.
    KlCe,
    /// `α_s·KL + (1−α_s)·CE + 0.01·MSE` with α from the sample's stage.
    Saw,
}

impl LossMode {
    fn weights(self, alpha: f64) -> LossWeights {
        match self {
            LossMode::Kl => LossWeights::kl_only(),
            LossMode::Ce => LossWeights::ce_only(),
            LossMode::KlCe => LossWeights::kl_plus_ce(),
            LossMode::Saw => LossWeights::saw(alpha),
        }
    }
}

/// Targets and loss weights for every support label under one set of stage
/// parameters.
#[derive(Clone, Debug)]
pub struct TargetTable {
    support: LabelSupport,
    stage: Vec<usize>,
    sigma: Vec<f64>,
    targets: Vec<Vec<f64>>,
    weights: Vec<LossWeights>,
    num_stages: usize,
    sigma_gradient: bool,
}

impl TargetTable {
    pub fn new(
        partition: &StagePartition,
        params: &StageParams,
        mode: LossMode,
        sigma_gradient: bool,
    ) -> Result<Self> {
        if params.num_stages() != partition.num_stages() {
            return Err(Error::Shape {
                expected: partition.num_stages(),
                got: params.num_stages(),
            });
        }
        let support = partition.support();
        let stage = partition.stage_table();
        let sigmas = params.sigmas();
        let alphas = params.alphas();
        let per_stage: Vec<LossWeights> = alphas.iter().map(|a| mode.weights(*a)).collect();
        let mut targets = Vec::with_capacity(support.size());
        let mut weights = Vec::with_capacity(support.size());
        let mut sigma = Vec::with_capacity(support.size());
        for (label, st) in support.labels().zip(&stage) {
            targets.push(gaussian_probs(label, sigmas[*st], support));
            weights.push(per_stage[*st]);
            sigma.push(sigmas[*st]);
        }
        Ok(TargetTable {
            support,
            stage,
            sigma,
            targets,
            weights,
            num_stages: partition.num_stages(),
            sigma_gradient,
        })
    }

    pub fn support(&self) -> LabelSupport {
        self.support
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn target(&self, index: usize) -> &[f64] {
        &self.targets[index]
    }

    pub fn weights(&self, index: usize) -> LossWeights {
        self.weights[index]
    }

    pub fn stage(&self, index: usize) -> usize {
        self.stage[index]
    }

    pub fn wants_sigma_gradient(&self) -> bool {
        self.sigma_gradient
    }

    /// `∂loss/∂σ` of the label at `index` given the predicted distribution.
    pub fn sigma_derivative(&self, index: usize, pred: &[f64]) -> f64 {
        let w = self.weights[index].kl;
        if w == 0.0 {
            return 0.0;
        }
        w * kl_sigma_derivative(
            self.support.label_at(index),
            self.sigma[index],
            pred,
            self.support,
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptationMode {
    Gradient,
    #[default]
    Grid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionRule {
    #[default]
    Expectation,
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Step size for gradient-mode stage parameter updates.
    pub stage_lr: f64,
    pub adaptation_mode: AdaptationMode,
    pub sigma_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub adapt_sigma: bool,
    pub adapt_alpha: bool,
    /// In gradient mode, move α by `∂loss/∂α = KL − CE` instead of grid moves.
    pub alpha_by_gradient: bool,
    /// Epochs trained on the initial stage parameters before any proposal.
    pub warmup_epochs: usize,
    pub loss: LossMode,
    pub seed: u64,
    pub prediction_rule: PredictionRule,
    pub cs_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.0,
            stage_lr: 0.1,
            adaptation_mode: AdaptationMode::Grid,
            sigma_grid: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            alpha_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            adapt_sigma: true,
            adapt_alpha: true,
            alpha_by_gradient: false,
            warmup_epochs: 1,
            loss: LossMode::Saw,
            seed: 0,
            prediction_rule: PredictionRule::Expectation,
            cs_threshold: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum must lie in [0, 1)"));
        }
        if !(self.stage_lr >= 0.0 && self.stage_lr.is_finite()) {
            return Err(Error::param("stage_lr must be non-negative"));
        }
        if self.sigma_grid.is_empty() || self.alpha_grid.is_empty() {
            return Err(Error::param("grids must not be empty"));
        }
        if let Some(s) = self.sigma_grid.iter().find(|s| !(**s > SIGMA_MIN && s.is_finite())) {
            return Err(Error::param(format!("sigma grid value {s} must exceed {SIGMA_MIN}")));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::param(format!("alpha grid value {a} must lie in (0, 1)")));
        }
        if self.cs_threshold.is_nan() || self.cs_threshold < 0.0 {
            return Err(Error::param("cs_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// One coordinate of the grid search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coordinate {
    Sigma(usize),
    Alpha(usize),
}

/// Coordinate search over the σ and α grids.
///
/// Coordinates are visited round-robin in the order `σ_0 … σ_{K−1}`,
/// `α_0 … α_{K−1}` (disabled families are left out). Each coordinate keeps a
/// cursor that walks its grid cyclically from the first candidate, so every
/// (coordinate, candidate) pair comes up in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    coords: Vec<Coordinate>,
    cursors: Vec<usize>,
    step: usize,
    sigma_grid: Vec<f64>,
    alpha_grid: Vec<f64>,
}

impl GridState {
    pub fn new(k: usize, sigma: bool, alpha: bool, sigma_grid: &[f64], alpha_grid: &[f64]) -> Self {
        let mut coords = Vec::new();
        if sigma {
            coords.extend((0..k).map(Coordinate::Sigma));
        }
        if alpha {
            coords.extend((0..k).map(Coordinate::Alpha));
        }
        GridState {
            cursors: vec![0; coords.len()],
            coords,
            step: 0,
            sigma_grid: sigma_grid.to_vec(),
            alpha_grid: alpha_grid.to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Next (coordinate, candidate) pair; advances the state.
    pub fn next_move(&mut self) -> Option<(Coordinate, f64)> {
        if self.coords.is_empty() {
            return None;
        }
        let i = self.step % self.coords.len();
        self.step += 1;
        let coord = self.coords[i];
        let grid = match coord {
            Coordinate::Sigma(_) => &self.sigma_grid,
            Coordinate::Alpha(_) => &self.alpha_grid,
        };
        let value = grid[self.cursors[i]];
        self.cursors[i] = (self.cursors[i] + 1) % grid.len();
        Some((coord, value))
    }
}

/// Input to one stage-parameter proposal.
pub enum Proposal<'a> {
    /// Descent step on the raw parameters from mean per-stage loss
    /// derivatives `∂L/∂σ_s` and optionally `∂L/∂α_s`.
    Gradient {
        sigma_grad: Option<&'a [f64]>,
        alpha_grad: Option<&'a [f64]>,
        stage_lr: f64,
    },
    Grid(&'a mut GridState),
}

pub fn propose_stage_update(params: &StageParams, proposal: Proposal<'_>) -> StageParams {
    let mut next = params.clone();
    match proposal {
        Proposal::Gradient {
            sigma_grad,
            alpha_grad,
            stage_lr,
        } => {
            if let Some(g) = sigma_grad {
                for (s, gs) in g.iter().enumerate() {
                    // dσ/draw = logistic(raw)
                    next.raw_sigma[s] -= stage_lr * gs * logistic(params.raw_sigma[s]);
                }
            }
            if let Some(g) = alpha_grad {
                for (s, gs) in g.iter().enumerate() {
                    let a = params.alpha(s);
                    next.raw_alpha[s] -= stage_lr * gs * a * (1.0 - a);
                }
            }
        }
        Proposal::Grid(state) => {
            if let Some((coord, value)) = state.next_move() {
                // grid values are validated against the same bounds
                match coord {
                    Coordinate::Sigma(s) => next.set_sigma(s, value).expect("validated sigma grid"),
                    Coordinate::Alpha(s) => next.set_alpha(s, value).expect("validated alpha grid"),
                }
            }
        }
    }
    next
}

/// Point prediction from a predicted distribution.
pub fn read_out(probs: &[f64], support: LabelSupport, rule: PredictionRule) -> f64 {
    match rule {
        PredictionRule::Expectation => expected_label(probs, support),
        PredictionRule::Argmax => argmax_label(probs, support) as f64,
    }
}

/// Point predictions for every sample of `data`.
pub fn predict(model: &Model, data: &Dataset, rule: PredictionRule) -> Result<Vec<f64>> {
    let support = data.support();
    if model.output_dim() != support.size() {
        return Err(Error::Shape {
            expected: support.size(),
            got: model.output_dim(),
        });
    }
    data.samples()
        .iter()
        .map(|s| {
            let t = forward(model, &s.features)?;
            Ok(read_out(&softmax_slice(t.logits.values()), support, rule))
        })
        .collect()
}

/// Mean `|ŷ − y|` over `data`.
pub fn evaluate_l1(model: &Model, data: &Dataset, rule: PredictionRule) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let preds = predict(model, data, rule)?;
    let sum: f64 = preds
        .iter()
        .zip(data.samples())
        .map(|(p, s)| (p - s.label as f64).abs())
        .sum();
    Ok(sum / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: BatchLoss,
    /// Mean absolute error on the validation split (the acceptance metric).
    pub val_l1: f64,
    /// Mean KL to the stage targets on the validation split.
    pub val_kl: f64,
    pub snapshot: bool,
    /// Stage parameters used during this epoch.
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Validation errors at snapshot epochs, in order.
    pub fn accepted_l1(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.snapshot)
            .map(|r| r.val_l1)
            .collect()
    }

    pub fn best_val_l1(&self) -> Option<f64> {
        self.accepted_l1().last().copied()
    }

    pub fn last_snapshot(&self) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.snapshot)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_kl,train_ce,train_mse,train_total,val_l1,val_kl,snapshot,sigmas,alphas\n",
        );
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.train.kl,
                r.train.ce,
                r.train.mse,
                r.train.total,
                r.val_l1,
                r.val_kl,
                r.snapshot as u8,
                join(&r.sigmas),
                join(&r.alphas)
            )
            .unwrap();
        }
        out
    }
}

/// Best model and stage parameters with the full history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub params: StageParams,
    pub history: TrainHistory,
}

fn val_kl(model: &Model, val: &Dataset, table: &TargetTable) -> Result<f64> {
    let support = val.support();
    let mut sum = 0.0;
    for s in val.samples() {
        let idx = support.index_of(s.label)?;
        let t = forward(model, &s.features)?;
        let r = crate::ldl::weighted_loss(
            t.logits.values(),
            table.target(idx),
            s.label,
            support,
            LossWeights::kl_only(),
            None,
        );
        sum += r.kl;
    }
    Ok(sum / val.len() as f64)
}

fn check_inputs(
    train: &Dataset,
    val: &Dataset,
    partition: &StagePartition,
    model: &Model,
    params: &StageParams,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("validation split is empty".into()));
    }
    let support = partition.support();
    if train.support() != support || val.support() != support {
        return Err(Error::param("datasets and partition use different supports"));
    }
    if params.num_stages() != partition.num_stages() {
        return Err(Error::Shape {
            expected: partition.num_stages(),
            got: params.num_stages(),
        });
    }
    for d in [train, val] {
        if d.feature_dim() != model.input_dim() {
            return Err(Error::Shape {
                expected: model.input_dim(),
                got: d.feature_dim(),
            });
        }
    }
    if model.output_dim() != support.size() {
        return Err(Error::Shape {
            expected: support.size(),
            got: model.output_dim(),
        });
    }
    let ids: HashSet<&str> = train.samples().iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = val.samples().iter().find(|s| ids.contains(s.id.as_str())) {
        return Err(Error::InvalidInput(format!(
            "sample {} appears in both train and validation splits",
            s.id
        )));
    }
    Ok(())
}

/// Runs the validation-gated outer loop.
///
/// Grid mode tries one coordinate move per epoch (after the warm-up) and
/// keeps it only if it produced a new best validation error; otherwise the
/// stage parameters fall back to the last accepted values while the model
/// keeps training. Gradient mode moves σ by the epoch-mean `∂L/∂σ_s` after
/// every epoch, with α either following grid moves or its own gradient.
pub fn train_sav(
    train: &Dataset,
    val: &Dataset,
    partition: &StagePartition,
    model0: &Model,
    params0: &StageParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_inputs(train, val, partition, model0, params0)?;

    let mut history = TrainHistory::default();
    let mut best_model = model0.clone();
    let mut best_params = params0.clone();
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model: best_model,
            params: best_params,
            history,
        });
    }

    let k = partition.num_stages();
    let gradient_mode = config.adaptation_mode == AdaptationMode::Gradient;
    let sigma_by_grid = config.adapt_sigma && !gradient_mode;
    let alpha_by_grid = config.adapt_alpha && !(gradient_mode && config.alpha_by_gradient);
    let sigma_by_grad = config.adapt_sigma && gradient_mode;
    let alpha_by_grad = config.adapt_alpha && gradient_mode && config.alpha_by_gradient;
    let mut grid = GridState::new(
        k,
        sigma_by_grid,
        alpha_by_grid,
        &config.sigma_grid,
        &config.alpha_grid,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let mut model = model0.clone();
    let mut current = params0.clone();
    let mut best_l1 = f64::INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        let adapting = epoch >= config.warmup_epochs;
        let trial = if adapting && !grid.is_empty() {
            propose_stage_update(&current, Proposal::Grid(&mut grid))
        } else {
            current.clone()
        };
        let table = TargetTable::new(partition, &trial, config.loss, sigma_by_grad)?;

        order.shuffle(&mut rng);
        let mut epoch_loss = BatchLoss::default();
        let mut acc = StageAccum::new(k);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|i| &train.samples()[*i]).collect();
            let (grads, loss, a) = match batch_gradient(&model, &batch, &table) {
                Ok(v) => v,
                // labels and shapes were checked up front, so this can only be
                // a non-finite logit from a blown-up model
                Err(Error::InvalidInput(_)) => {
                    return Err(Error::TrainingDiverged {
                        epoch,
                        history: Box::new(history),
                    })
                }
                Err(e) => return Err(e),
            };
            opt.step(&mut model, &grads);
            let w = chunk.len() as f64;
            epoch_loss.kl += loss.kl * w;
            epoch_loss.ce += loss.ce * w;
            epoch_loss.mse += loss.mse * w;
            epoch_loss.total += loss.total * w;
            acc.merge(&a);
        }
        let n = train.len() as f64;
        epoch_loss.kl /= n;
        epoch_loss.ce /= n;
        epoch_loss.mse /= n;
        epoch_loss.total /= n;

        let mut record = EpochRecord {
            epoch,
            train: epoch_loss,
            val_l1: f64::NAN,
            val_kl: f64::NAN,
            snapshot: false,
            sigmas: trial.sigmas(),
            alphas: trial.alphas(),
        };
        if !epoch_loss.total.is_finite() || !model.all_finite() {
            history.records.push(record);
            return Err(Error::TrainingDiverged {
                epoch,
                history: Box::new(history),
            });
        }

        let l1 = evaluate_l1(&model, val, config.prediction_rule)?;
        record.val_l1 = l1;
        record.val_kl = val_kl(&model, val, &table)?;
        if l1 < best_l1 {
            best_l1 = l1;
            best_model = model.clone();
            best_params = trial.clone();
            current = trial;
            record.snapshot = true;
        }
        // a rejected grid move is dropped; `current` still holds the old value
        history.records.push(record);

        if adapting && (sigma_by_grad || alpha_by_grad) {
            let mean = |sums: &[f64]| -> Vec<f64> {
                sums.iter()
                    .zip(&acc.count)
                    .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
                    .collect()
            };
            let sigma_grad = mean(&acc.dkl_dsigma);
            let alpha_grad: Vec<f64> = mean(&acc.kl)
                .iter()
                .zip(mean(&acc.ce))
                .map(|(kl, ce)| kl - ce)
                .collect();
            current = propose_stage_update(
                &current,
                Proposal::Gradient {
                    sigma_grad: sigma_by_grad.then_some(&sigma_grad[..]),
                    alpha_grad: alpha_by_grad.then_some(&alpha_grad[..]),
                    stage_lr: config.stage_lr,
                },
            );
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        params: best_params,
        history,
    })
}
