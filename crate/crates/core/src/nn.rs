//! Two-hidden-layer predicate classifier over `[w_h; w_o; f_g; f_h]`, trained
//! with a per-triplet weighted multi-label binary cross-entropy.
//!
//! Forward and backward passes are written out by hand; parameters are `f64`
//! so that finite-difference checks are meaningful.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{BoundingBox, Dataset, EmbeddingTable, ImageInfo, InteractionTriplet};
use crate::error::{HoiError, Result};
use crate::geometry::{geometric_feature, GEOMETRIC_FEATURE_LEN};
use crate::jsonl;
use crate::provenance::Provenance;

pub const PROB_EPS: f64 = 1e-7;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fully connected layer, weights stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Uniform(-a, a) weights with `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Layer::zeros(inputs, outputs);
        for w in layer.weights.iter_mut() {
            *w = rng.gen_range(-a..a);
        }
        layer
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embedding_dim: usize,
    pub feature_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub predicates: usize,
}

impl ModelDims {
    pub fn input_dim(&self) -> usize {
        2 * self.embedding_dim + GEOMETRIC_FEATURE_LEN + self.feature_dim
    }
}

/// Input slices replaced by zeros, for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputAblation {
    pub word_vectors: bool,
    pub geometry: bool,
    pub human_feature: bool,
}

impl InputAblation {
    pub fn apply(&self, x: &mut [f64], embedding_dim: usize) {
        let geo_start = 2 * embedding_dim;
        let feat_start = geo_start + GEOMETRIC_FEATURE_LEN;
        if self.word_vectors {
            x[..geo_start].fill(0.0);
        }
        if self.geometry {
            x[geo_start..feat_start].fill(0.0);
        }
        if self.human_feature {
            x[feat_start..].fill(0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateModel {
    pub dims: ModelDims,
    /// Output order of the classifier.
    pub predicates: Vec<String>,
    pub human_token: String,
    #[serde(default)]
    pub ablation: InputAblation,
    pub layer1: Layer,
    pub layer2: Layer,
    pub output: Layer,
}

impl PredicateModel {
    pub fn zeros(dims: ModelDims, predicates: Vec<String>, human_token: &str) -> Self {
        PredicateModel {
            layer1: Layer::zeros(dims.input_dim(), dims.hidden1),
            layer2: Layer::zeros(dims.hidden1, dims.hidden2),
            output: Layer::zeros(dims.hidden2, dims.predicates),
            dims,
            predicates,
            human_token: human_token.to_string(),
            ablation: InputAblation::default(),
        }
    }

    pub fn init(dims: ModelDims, predicates: Vec<String>, human_token: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(dims, predicates, human_token, &mut rng)
    }

    fn init_with<R: Rng>(dims: ModelDims, predicates: Vec<String>, human_token: &str, rng: &mut R) -> Self {
        PredicateModel {
            layer1: Layer::glorot(dims.input_dim(), dims.hidden1, rng),
            layer2: Layer::glorot(dims.hidden1, dims.hidden2, rng),
            output: Layer::glorot(dims.hidden2, dims.predicates, rng),
            dims,
            predicates,
            human_token: human_token.to_string(),
            ablation: InputAblation::default(),
        }
    }

    pub fn layers(&self) -> [&Layer; 3] {
        [&self.layer1, &self.layer2, &self.output]
    }

    pub fn layers_mut(&mut self) -> [&mut Layer; 3] {
        [&mut self.layer1, &mut self.layer2, &mut self.output]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Checks that layer shapes agree with `dims` and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let expect = [(d.input_dim(), d.hidden1), (d.hidden1, d.hidden2), (d.hidden2, d.predicates)];
        for (layer, (i, o)) in self.layers().iter().zip(expect) {
            if layer.inputs != i || layer.outputs != o || layer.weights.len() != i * o || layer.bias.len() != o {
                return Err(HoiError::invalid("model", "layer shapes disagree with dims"));
            }
            if !layer.is_finite() {
                return Err(HoiError::invalid("model", "non-finite parameter"));
            }
        }
        if self.predicates.len() != d.predicates {
            return Err(HoiError::Dimension {
                what: "predicate vocabulary".into(),
                expected: d.predicates,
                got: self.predicates.len(),
            });
        }
        Ok(())
    }

    pub fn predicate_index(&self) -> HashMap<&str, usize> {
        self.predicates.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub hidden1: Vec<f64>,
    pub hidden2: Vec<f64>,
    pub probabilities: Vec<f64>,
}

fn check_input(m: &PredicateModel, x: &[f64]) -> Result<()> {
    if x.len() != m.dims.input_dim() {
        return Err(HoiError::Dimension { what: "model input".into(), expected: m.dims.input_dim(), got: x.len() });
    }
    Ok(())
}

fn forward_cached(m: &PredicateModel, x: &[f64], cache: &mut ForwardCache) {
    m.layer1.apply(x, &mut cache.hidden1);
    cache.hidden1.iter_mut().for_each(|v| *v = v.max(0.0));
    m.layer2.apply(&cache.hidden1, &mut cache.hidden2);
    cache.hidden2.iter_mut().for_each(|v| *v = v.max(0.0));
    m.output.apply(&cache.hidden2, &mut cache.probabilities);
    cache.probabilities.iter_mut().for_each(|v| *v = sigmoid(*v));
}

/// Independent per-predicate probabilities for an assembled input vector.
pub fn forward(m: &PredicateModel, x: &[f64]) -> Result<Vec<f64>> {
    check_input(m, x)?;
    let mut cache = ForwardCache::default();
    forward_cached(m, x, &mut cache);
    Ok(cache.probabilities)
}

/// Loss weights applied to one training triplet's predicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeightScheme {
    /// The triplet's own labels.
    pub positive: f64,
    /// Predicates labelled on other pairs of the same image.
    pub other_in_image: f64,
    pub rest: f64,
}

impl Default for LossWeightScheme {
    fn default() -> Self {
        LossWeightScheme { positive: 10.0, other_in_image: 0.0, rest: 1.0 }
    }
}

pub fn class_weights<'a>(
    triplet_predicates: impl IntoIterator<Item = &'a str>,
    image_predicates: impl IntoIterator<Item = &'a str>,
    vocabulary: &[String],
    scheme: &LossWeightScheme,
) -> Result<Vec<f64>> {
    let index: HashMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let lookup = |p: &str| {
        index.get(p).copied().ok_or_else(|| HoiError::Missing { key: p.to_string(), table: "predicate vocabulary" })
    };
    let mut weights = vec![scheme.rest; vocabulary.len()];
    for p in image_predicates {
        weights[lookup(p)?] = scheme.other_in_image;
    }
    for p in triplet_predicates {
        weights[lookup(p)?] = scheme.positive;
    }
    Ok(weights)
}

/// `-sum_j w_j [y_j ln p_j + (1 - y_j) ln(1 - p_j)] / P` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn weighted_bce(probabilities: &[f64], targets: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(probabilities.len(), targets.len());
    debug_assert_eq!(probabilities.len(), weights.len());
    if probabilities.is_empty() {
        return 0.0;
    }
    let sum =
        probabilities.iter().zip(targets).zip(weights).filter(|(_, &w)| w != 0.0).fold(0.0, |acc, ((&p, &y), &w)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            acc - w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        });
    sum / probabilities.len() as f64
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layer1: Layer,
    pub layer2: Layer,
    pub output: Layer,
}

impl Gradients {
    pub fn zeros_like(m: &PredicateModel) -> Self {
        Gradients {
            layer1: Layer::zeros(m.layer1.inputs, m.layer1.outputs),
            layer2: Layer::zeros(m.layer2.inputs, m.layer2.outputs),
            output: Layer::zeros(m.output.inputs, m.output.outputs),
        }
    }

    pub fn layers(&self) -> [&Layer; 3] {
        [&self.layer1, &self.layer2, &self.output]
    }

    fn layers_mut(&mut self) -> [&mut Layer; 3] {
        [&mut self.layer1, &mut self.layer2, &mut self.output]
    }

    fn scale(&mut self, s: f64) {
        for l in self.layers_mut() {
            l.params_mut().for_each(|v| *v *= s);
        }
    }
}

/// Accumulates `d loss / d params` for one example into `grads` and returns
/// the example's loss.
///
/// The output-layer error term is `w_j (p_j - y_j) / P`, the derivative of
/// the unclamped loss; it matches the clamped loss wherever
/// `p_j` lies inside the clamp interval.
fn accumulate_gradients(
    m: &PredicateModel,
    x: &[f64],
    targets: &[f64],
    weights: &[f64],
    cache: &mut ForwardCache,
    grads: &mut Gradients,
) -> f64 {
    forward_cached(m, x, cache);
    let p_count = m.dims.predicates as f64;
    let loss = weighted_bce(&cache.probabilities, targets, weights);

    let delta3: Vec<f64> =
        cache.probabilities.iter().zip(targets).zip(weights).map(|((p, y), w)| w * (p - y) / p_count).collect();
    let delta2 = backprop_layer(&m.output, &mut grads.output, &delta3, &cache.hidden2);
    let delta2: Vec<f64> =
        delta2.into_iter().zip(&cache.hidden2).map(|(d, a)| if *a > 0.0 { d } else { 0.0 }).collect();
    let delta1 = backprop_layer(&m.layer2, &mut grads.layer2, &delta2, &cache.hidden1);
    let delta1: Vec<f64> =
        delta1.into_iter().zip(&cache.hidden1).map(|(d, a)| if *a > 0.0 { d } else { 0.0 }).collect();
    accumulate_layer(&mut grads.layer1, &delta1, x);
    loss
}

fn accumulate_layer(grad: &mut Layer, delta: &[f64], input: &[f64]) {
    for ((row, b), &d) in grad.weights.chunks_exact_mut(grad.inputs).zip(grad.bias.iter_mut()).zip(delta) {
        if d == 0.0 {
            continue;
        }
        *b += d;
        for (g, a) in row.iter_mut().zip(input) {
            *g += d * a;
        }
    }
}

/// Adds this layer's gradient and returns the error w.r.t. its input.
fn backprop_layer(layer: &Layer, grad: &mut Layer, delta: &[f64], input: &[f64]) -> Vec<f64> {
    accumulate_layer(grad, delta, input);
    let mut back = vec![0.0; layer.inputs];
    for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(delta) {
        if d == 0.0 {
            continue;
        }
        for (b, w) in back.iter_mut().zip(row) {
            *b += d * w;
        }
    }
    back
}

/// Exact gradient of `weighted_bce(forward(m, x), targets, weights)`.
pub fn backward(m: &PredicateModel, x: &[f64], targets: &[f64], weights: &[f64]) -> Result<(f64, Gradients)> {
    check_input(m, x)?;
    for (what, v) in [("targets", targets), ("weights", weights)] {
        if v.len() != m.dims.predicates {
            return Err(HoiError::Dimension { what: what.into(), expected: m.dims.predicates, got: v.len() });
        }
    }
    let mut grads = Gradients::zeros_like(m);
    let mut cache = ForwardCache::default();
    let loss = accumulate_gradients(m, x, targets, weights, &mut cache, &mut grads);
    Ok((loss, grads))
}

/// `[w_h; w_o; f_g; f_h]` for one triplet.
pub fn assemble_input(
    t: &InteractionTriplet,
    embeddings: &EmbeddingTable,
    img: &ImageInfo,
    human_token: &str,
) -> Result<Vec<f64>> {
    assemble_parts(&t.human_box, &t.object_box, &t.object_class, &t.human_feature, embeddings, img, human_token)
}

/// Same layout as [`assemble_input`] from loose parts (used at inference).
pub fn assemble_parts(
    human_box: &BoundingBox,
    object_box: &BoundingBox,
    object_class: &str,
    human_feature: &[f64],
    embeddings: &EmbeddingTable,
    img: &ImageInfo,
    human_token: &str,
) -> Result<Vec<f64>> {
    let w_h = embeddings
        .get(human_token)
        .ok_or_else(|| HoiError::Missing { key: human_token.to_string(), table: "embedding" })?;
    let w_o = embeddings
        .get(object_class)
        .ok_or_else(|| HoiError::Missing { key: object_class.to_string(), table: "embedding" })?;
    let f_g = geometric_feature(human_box, object_box, img)?;
    let mut x = Vec::with_capacity(2 * embeddings.dim() + GEOMETRIC_FEATURE_LEN + human_feature.len());
    x.extend_from_slice(w_h);
    x.extend_from_slice(w_o);
    x.extend_from_slice(f_g.as_slice());
    x.extend_from_slice(human_feature);
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    /// Learning rate multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub human_token: String,
    pub loss_weights: LossWeightScheme,
    pub ablation: InputAblation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            lr0: 0.1,
            decay: 0.1,
            decay_every: 10,
            batch_size: 128,
            momentum: 0.9,
            seed: 0,
            hidden1: 1024,
            hidden2: 512,
            human_token: crate::datamodel::DEFAULT_HUMAN_CLASS.to_string(),
            loss_weights: LossWeightScheme::default(),
            ablation: InputAblation::default(),
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let steps = epoch.checked_div(self.decay_every).unwrap_or(0);
        self.lr0 * self.decay.powi(steps as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(HoiError::Config("batch size and hidden sizes must be positive".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(HoiError::Config(format!("invalid learning rate {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HoiError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredicateModel,
    /// Mean minibatch loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// One training example: input, 0/1 targets and loss weights.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Vec<f64>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Assembles model inputs, targets and weights for every triplet.
pub fn build_examples(
    d: &Dataset,
    embeddings: &EmbeddingTable,
    predicates: &[String],
    cfg: &TrainConfig,
) -> Result<Vec<Example>> {
    let images = d.image_map();
    let image_predicates = d.image_predicates();
    let index: HashMap<&str, usize> = predicates.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    d.triplets
        .iter()
        .map(|t| {
            let img = images
                .get(t.image_id.as_str())
                .ok_or_else(|| HoiError::invalid("dataset", format!("image_id {} has no image entry", t.image_id)))?;
            let mut input = assemble_input(t, embeddings, img, &cfg.human_token)?;
            cfg.ablation.apply(&mut input, embeddings.dim());
            let mut targets = vec![0.0; predicates.len()];
            for p in &t.predicates {
                let &j = index
                    .get(p.as_str())
                    .ok_or_else(|| HoiError::Missing { key: p.clone(), table: "predicate vocabulary" })?;
                targets[j] = 1.0;
            }
            let weights = class_weights(
                t.predicates.iter().map(String::as_str),
                image_predicates[t.image_id.as_str()].iter().copied(),
                predicates,
                &cfg.loss_weights,
            )?;
            Ok(Example { input, targets, weights })
        })
        .collect()
}

/// Minibatch SGD with momentum over seeded shuffles of the (augmented)
/// training set. The learning rate is `lr0 * decay^(epoch / decay_every)`.
pub fn train(d: &Dataset, embeddings: &EmbeddingTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_vocabulary(d, embeddings, &d.predicate_vocabulary, cfg)
}

pub fn train_with_vocabulary(
    d: &Dataset,
    embeddings: &EmbeddingTable,
    predicates: &[String],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if d.triplets.is_empty() {
        return Err(HoiError::invalid("training", "dataset has no triplets"));
    }
    let unique: BTreeSet<&String> = predicates.iter().collect();
    if unique.len() != predicates.len() || predicates.is_empty() {
        return Err(HoiError::invalid("training", "predicate vocabulary must be non-empty and duplicate-free"));
    }
    let dims = ModelDims {
        embedding_dim: embeddings.dim(),
        feature_dim: d.triplets[0].human_feature.len(),
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
        predicates: predicates.len(),
    };
    let examples = build_examples(d, embeddings, predicates, cfg)?;
    for e in &examples {
        if e.input.len() != dims.input_dim() {
            return Err(HoiError::Dimension {
                what: "assembled input".into(),
                expected: dims.input_dim(),
                got: e.input.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = PredicateModel::init_with(dims, predicates.to_vec(), &cfg.human_token, &mut rng);
    model.ablation = cfg.ablation;
    let mut velocity = Gradients::zeros_like(&model);
    let mut cache = ForwardCache::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&model);
            let mut batch_loss = 0.0;
            for &i in batch {
                let e = &examples[i];
                batch_loss += accumulate_gradients(&model, &e.input, &e.targets, &e.weights, &mut cache, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.scale(scale);
            loss_sum += batch_loss * scale;
            batches += 1;
            for ((param, vel), grad) in model.layers_mut().into_iter().zip(velocity.layers_mut()).zip(grads.layers()) {
                for ((p, v), g) in param.params_mut().zip(vel.params_mut()).zip(grad.params()) {
                    *v = cfg.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
        }
        let mean = loss_sum / batches as f64;
        if !mean.is_finite() {
            return Err(HoiError::invalid("training", format!("loss diverged at epoch {epoch}")));
        }
        epoch_loss.push(mean);
    }
    Ok(TrainOutcome { model, epoch_loss })
}

/// Serialized model plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub train_config: TrainConfig,
    pub epoch_loss: Vec<f64>,
    pub model: PredicateModel,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut w = jsonl::create(path)?;
    serde_json::to_writer(&mut w, checkpoint).map_err(|e| HoiError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| HoiError::io(path, e))?;
    w.flush().map_err(|e| HoiError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = serde_json::from_reader(jsonl::open(path)?).map_err(|e| HoiError::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(HoiError::invalid(
            path.display().to_string(),
            format!("unsupported checkpoint version {}", ck.format_version),
        ));
    }
    ck.model.validate()?;
    Ok(ck)
}
