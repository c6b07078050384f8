//! Feed-forward classifier producing logits over the label support.
//!
//! Dense layers are stored row-major (`out × in`). Hidden layers apply the
//! activation; the final layer is linear and its input is the embedding.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::ldl::{weighted_loss, Logits};
use crate::staging::StagePartition;
use crate::trainer::{LossMode, StageParams, TargetTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) biases: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.biases) {
            out.push(b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>());
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    layer_dims: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense>,
}

/// Output of one forward pass, with what backprop needs.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits: Logits,
    /// Input of the final linear layer.
    pub embedding: Vec<f64>,
    // inputs[l] feeds layer l; pre[l] is layer l's pre-activation (hidden only)
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::param("a model needs an input and an output width"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::param("layer widths must be positive"));
    }
    Ok(())
}

impl Model {
    /// Model with every weight and bias zero.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Model {
            layer_dims: layer_dims.to_vec(),
            activation,
            layers: layer_dims
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameters in layer order, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Dense {
        &mut self.layers[index]
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// Seeded fan-in-scaled uniform weights and zero biases.
///
/// Hidden layers use `U(±√(6/fan_in))` for ReLU and `U(±√(3/fan_in))` for
/// tanh; the output layer uses `U(±√(1/fan_in))`.
pub fn init_model(
    layer_dims: &[usize],
    activation: Activation,
    output_width: usize,
    seed: u64,
) -> Result<Model> {
    check_dims(layer_dims)?;
    if *layer_dims.last().unwrap() != output_width {
        return Err(Error::param(format!(
            "final layer width {} must equal the support size {output_width}",
            layer_dims.last().unwrap()
        )));
    }
    let mut model = Model::zeros(layer_dims, activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = model.layers.len() - 1;
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let gain = if i == last {
            1.0
        } else {
            match activation {
                Activation::Relu => 6.0,
                Activation::Tanh => 3.0,
            }
        };
        let limit = (gain / layer.in_dim as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..limit);
        }
    }
    Ok(model)
}

pub fn forward(model: &Model, features: &[f64]) -> Result<ForwardTrace> {
    if features.len() != model.input_dim() {
        return Err(Error::Shape {
            expected: model.input_dim(),
            got: features.len(),
        });
    }
    let n = model.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n - 1);
    let mut current = features.to_vec();
    let mut buf = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        layer.forward(&current, &mut buf);
        inputs.push(std::mem::take(&mut current));
        if i + 1 < n {
            current = buf.iter().map(|x| model.activation.apply(*x)).collect();
            pre.push(buf.clone());
        } else {
            current = buf.clone();
        }
    }
    let embedding = inputs[n - 1].clone();
    Ok(ForwardTrace {
        logits: Logits::new(current)?,
        embedding,
        inputs,
        pre,
    })
}

/// Parameter gradients with the same layout as [`Model::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|v| *v *= s);
        }
    }
}

/// Accumulates `∂loss/∂θ` for one sample given `∂loss/∂logits`.
pub fn backprop(model: &Model, trace: &ForwardTrace, grad_logits: &[f64], grads: &mut Gradients) {
    let mut delta = grad_logits.to_vec();
    for i in (0..model.layers.len()).rev() {
        let layer = &model.layers[i];
        let input = &trace.inputs[i];
        let g = &mut grads.layers[i];
        for (o, d) in delta.iter().enumerate() {
            g.biases[o] += d;
            let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (w, x) in row.iter_mut().zip(input) {
                *w += d * x;
            }
        }
        if i == 0 {
            break;
        }
        let mut next = vec![0.0; layer.in_dim];
        for (o, d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (n, w) in next.iter_mut().zip(row) {
                *n += d * w;
            }
        }
        let pre = &trace.pre[i - 1];
        for ((n, x), y) in next.iter_mut().zip(pre).zip(input) {
            *n *= model.activation.derivative(*x, *y);
        }
        delta = next;
    }
}

/// Batch means of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub kl: f64,
    pub ce: f64,
    pub mse: f64,
    pub total: f64,
}

/// Per-stage sums gathered while computing batch gradients; they drive the
/// stage-parameter proposals.
#[derive(Clone, Debug, PartialEq)]
pub struct StageAccum {
    pub count: Vec<usize>,
    /// Σ ∂KL/∂σ over the stage's samples.
    pub dkl_dsigma: Vec<f64>,
    pub kl: Vec<f64>,
    pub ce: Vec<f64>,
}

impl StageAccum {
    pub fn new(k: usize) -> Self {
        StageAccum {
            count: vec![0; k],
            dkl_dsigma: vec![0.0; k],
            kl: vec![0.0; k],
            ce: vec![0.0; k],
        }
    }

    pub fn merge(&mut self, other: &StageAccum) {
        for s in 0..self.count.len() {
            self.count[s] += other.count[s];
            self.dkl_dsigma[s] += other.dkl_dsigma[s];
            self.kl[s] += other.kl[s];
            self.ce[s] += other.ce[s];
        }
    }
}

/// Mean loss and its parameter gradient over `batch`, each sample using the
/// target and weights of its label's stage.
pub fn batch_gradient(
    model: &Model,
    batch: &[&Sample],
    table: &TargetTable,
) -> Result<(Gradients, BatchLoss, StageAccum)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch is empty".into()));
    }
    let support = table.support();
    if model.output_dim() != support.size() {
        return Err(Error::Shape {
            expected: support.size(),
            got: model.output_dim(),
        });
    }
    let mut grads = Gradients::zeros_like(model);
    let mut loss = BatchLoss::default();
    let mut acc = StageAccum::new(table.num_stages());
    let mut g = vec![0.0; support.size()];
    for sample in batch {
        let idx = support.index_of(sample.label)?;
        let trace = forward(model, &sample.features)?;
        let s = weighted_loss(
            trace.logits.values(),
            table.target(idx),
            sample.label,
            support,
            table.weights(idx),
            Some(&mut g),
        );
        backprop(model, &trace, &g, &mut grads);
        loss.kl += s.kl;
        loss.ce += s.ce;
        loss.mse += s.mse;
        loss.total += s.total;
        let st = table.stage(idx);
        acc.count[st] += 1;
        acc.kl[st] += s.kl;
        acc.ce[st] += s.ce;
        if table.wants_sigma_gradient() {
            acc.dkl_dsigma[st] += table.sigma_derivative(idx, &s.pred);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    loss.kl *= inv;
    loss.ce *= inv;
    loss.mse *= inv;
    loss.total *= inv;
    Ok((grads, loss, acc))
}

/// Plain SGD with optional momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        let lr = self.learning_rate;
        if self.momentum == 0.0 {
            for (l, g) in model.layers.iter_mut().zip(&grads.layers) {
                for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                    *w -= lr * d;
                }
                for (b, d) in l.biases.iter_mut().zip(&g.biases) {
                    *b -= lr * d;
                }
            }
            return;
        }
        let flat = grads.flat();
        let v = self.velocity.get_or_insert_with(|| vec![0.0; flat.len()]);
        for (vi, gi) in v.iter_mut().zip(&flat) {
            *vi = self.momentum * *vi + gi;
        }
        let mut params = model.params();
        for (p, vi) in params.iter_mut().zip(v.iter()) {
            *p -= lr * vi;
        }
        model.set_params(&params).expect("velocity has the model's layout");
    }
}

/// One SGD step on the batch-mean composite loss with per-stage σ and α.
///
/// Returns the updated model and the loss measured before the step.
pub fn backward_step(
    model: &Model,
    batch: &[&Sample],
    stage_params: &StageParams,
    partition: &StagePartition,
    learning_rate: f64,
) -> Result<(Model, BatchLoss)> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::param(format!(
            "learning rate must be non-negative, got {learning_rate}"
        )));
    }
    let table = TargetTable::new(partition, stage_params, LossMode::Saw, false)?;
    let (grads, loss, _) = batch_gradient(model, batch, &table)?;
    let mut next = model.clone();
    if learning_rate > 0.0 {
        Sgd::new(learning_rate, 0.0).step(&mut next, &grads);
    }
    Ok((next, loss))
}

/// Versioned JSON checkpoint of a model. Parameters are base64 of
/// little-endian `f64` bytes, so a reload is bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<LayerBlob>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerBlob {
    pub weights: String,
    pub biases: String,
}

pub const MODEL_FORMAT: &str = "sa-ldl-model";
pub const MODEL_VERSION: u32 = 1;

pub(crate) fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub(crate) fn decode_f64s(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl ModelCheckpoint {
    pub fn from_model(model: &Model) -> Self {
        ModelCheckpoint {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layer_dims: model.layer_dims.clone(),
            activation: model.activation,
            layers: model
                .layers
                .iter()
                .map(|l| LayerBlob {
                    weights: encode_f64s(&l.weights),
                    biases: encode_f64s(&l.biases),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        let mut model = Model::zeros(&self.layer_dims, self.activation)?;
        if self.layers.len() != model.layers.len() {
            return Err(Error::Checkpoint("layer count does not match dims".into()));
        }
        for (l, blob) in model.layers.iter_mut().zip(&self.layers) {
            l.weights = decode_f64s(&blob.weights, l.weights.len())?;
            l.biases = decode_f64s(&blob.biases, l.biases.len())?;
        }
        if !model.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldl::LabelSupport;
    use crate::staging::decade_partition;

    fn sample(label: i64, features: Vec<f64>) -> Sample {
        Sample {
            id: format!("s{label}"),
            label,
            features,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&[4, 8, 6, 101], Activation::Relu, 101, 9).unwrap();
        let b = init_model(&[4, 8, 6, 101], Activation::Relu, 101, 9).unwrap();
        assert_eq!(a.params(), b.params());
        let c = init_model(&[4, 8, 6, 101], Activation::Relu, 101, 10).unwrap();
        assert_ne!(a.params(), c.params());
        assert!(a.layers().iter().all(|l| l.biases.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn init_validation() {
        assert!(init_model(&[3, 101], Activation::Tanh, 101, 0).is_ok());
        assert!(matches!(
            init_model(&[3, 50], Activation::Tanh, 101, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(init_model(&[101], Activation::Tanh, 101, 0).is_err());
        assert!(init_model(&[3, 0, 101], Activation::Tanh, 101, 0).is_err());
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = Model::zeros(&[3, 5, 101], Activation::Relu).unwrap();
        let t = forward(&m, &[1.0, -2.0, 0.5]).unwrap();
        assert!(t.logits.values().iter().all(|v| *v == 0.0));
        assert!(matches!(forward(&m, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn linear_model_hand_computed() {
        let mut m = Model::zeros(&[2, 3], Activation::Relu).unwrap();
        let l = m.layer_mut(0);
        // rows: [1, 0], [0, 1], [1, 1]
        l.weights.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        l.biases.copy_from_slice(&[0.5, -0.5, 0.0]);
        let t = forward(&m, &[2.0, 3.0]).unwrap();
        assert_eq!(t.logits.values(), &[2.5, 2.5, 5.0]);
        assert_eq!(t.embedding, vec![2.0, 3.0]);
    }

    #[test]
    fn embedding_reconstructs_logits() {
        let m = init_model(&[4, 16, 8, 101], Activation::Tanh, 101, 1).unwrap();
        let x = [0.3, -0.1, 0.9, 0.2];
        let t = forward(&m, &x).unwrap();
        assert_eq!(t.embedding.len(), 8);
        let last = &m.layers()[2];
        for o in 0..101 {
            let z: f64 = last.biases[o]
                + last.weights[o * 8..(o + 1) * 8]
                    .iter()
                    .zip(&t.embedding)
                    .map(|(w, e)| w * e)
                    .sum::<f64>();
            assert_eq!(z, t.logits.values()[o]);
        }
        let again = forward(&m, &x).unwrap();
        assert_eq!(again.logits, t.logits);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let support = LabelSupport::default();
        let p = decade_partition(support);
        let sp = StageParams::initial(p.num_stages());
        let m = init_model(&[3, 8, 101], Activation::Relu, 101, 2).unwrap();
        let s = sample(33, vec![0.1, 0.2, 0.3]);
        let (next, loss) = backward_step(&m, &[&s], &sp, &p, 0.0).unwrap();
        assert_eq!(next, m);
        assert!(loss.total > 0.0);
        assert!(backward_step(&m, &[], &sp, &p, 0.1).is_err());
        assert!(backward_step(&m, &[&s], &sp, &p, -0.1).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = init_model(&[5, 7, 101], Activation::Tanh, 101, 77).unwrap();
        let text = serde_json::to_string(&ModelCheckpoint::from_model(&m)).unwrap();
        let back: ModelCheckpoint = serde_json::from_str(&text).unwrap();
        let m2 = back.to_model().unwrap();
        assert_eq!(
            m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m2.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let mut bad = back.clone();
        bad.version = 99;
        assert!(bad.to_model().is_err());
        let mut short = back;
        short.layers[0].biases = encode_f64s(&[1.0]);
        assert!(short.to_model().is_err());
    }

    #[test]
    fn momentum_accumulates() {
        let mut m = Model::zeros(&[1, 2], Activation::Relu).unwrap();
        let mut g = Gradients::zeros_like(&m);
        g.layers[0].biases[0] = 1.0;
        let mut opt = Sgd::new(0.1, 0.9);
        opt.step(&mut m, &g);
        opt.step(&mut m, &g);
        // v1 = 1, v2 = 1.9
        assert!((m.layers()[0].biases[0] + 0.29).abs() < 1e-12);
    }

    fn batch_loss(model: &Model, batch: &[&Sample], table: &TargetTable) -> f64 {
        batch_gradient(model, batch, table).unwrap().1.total
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let support = LabelSupport::new(0, 19).unwrap();
        let p = StagePartition::manual(vec![0, 8], support).unwrap();
        let mut sp = StageParams::uniform(2, 1.5, 0.3).unwrap();
        sp.set_sigma(1, 2.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Relu, Activation::Tanh] {
            let m = init_model(&[3, 6, 5, 20], act, 20, 11).unwrap();
            let samples: Vec<Sample> = (0..4)
                .map(|i| sample(i * 5 + 1, (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            let batch: Vec<&Sample> = samples.iter().collect();
            let table = TargetTable::new(&p, &sp, LossMode::Saw, false).unwrap();
            let analytic = batch_gradient(&m, &batch, &table).unwrap().0.flat();
            let base = m.params();
            for _ in 0..20 {
                let i = rng.random_range(0..base.len());
                let h = 1e-6;
                let mut plus = m.clone();
                let mut q = base.clone();
                q[i] += h;
                plus.set_params(&q).unwrap();
                let mut minus = m.clone();
                q[i] -= 2.0 * h;
                minus.set_params(&q).unwrap();
                let fd = (batch_loss(&plus, &batch, &table) - batch_loss(&minus, &batch, &table)) / (2.0 * h);
                let err = (fd - analytic[i]).abs();
                assert!(
                    err <= 1e-4 * fd.abs().max(analytic[i].abs()).max(1e-2),
                    "param {i}: fd {fd} analytic {}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn sgd_reduces_loss() {
        let support = LabelSupport::default();
        let p = decade_partition(support);
        let sp = StageParams::initial(p.num_stages());
        let m0 = init_model(&[2, 16, 101], Activation::Tanh, 101, 4).unwrap();
        let samples = [sample(20, vec![1.0, 0.0]), sample(70, vec![0.0, 1.0])];
        let batch: Vec<&Sample> = samples.iter().collect();
        let (mut m, first) = backward_step(&m0, &batch, &sp, &p, 1e-2).unwrap();
        for _ in 1..50 {
            m = backward_step(&m, &batch, &sp, &p, 1e-2).unwrap().0;
        }
        let last = backward_step(&m, &batch, &sp, &p, 0.0).unwrap().1;
        assert!(last.total < first.total, "{} !< {}", last.total, first.total);
    }
}
