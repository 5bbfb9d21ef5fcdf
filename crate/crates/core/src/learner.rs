//! Desk-scale classifiers with hand-derived gradients.
//!
//! Two model families are supported: a linear softmax classifier and a
//! network with one rectified hidden layer. Weight matrices are stored
//! row-major with one row per output unit, so row `r` of `w` is the weight
//! vector feeding logit `r`. The rectifier's subgradient at zero is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector};
use crate::rng::{role, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(input: Vec<f64>, label: usize) -> Self {
        Self { input, label }
    }
}

/// A non-empty, dimensionally consistent set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let first = examples.first().ok_or(Error::Empty("dataset"))?;
        let dim = first.input.len();
        if let Some(bad) = examples.iter().find(|e| e.input.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "dataset example",
                expected: dim,
                found: bad.input.len(),
            });
        }
        Ok(Self { examples })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples[0].input.len()
    }

    pub fn num_classes(&self) -> usize {
        self.examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn label_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for e in &self.examples {
            if e.label < num_classes {
                counts[e.label] += 1;
            }
        }
        counts
    }

    /// First `n` examples, or everything if `n` exceeds the size.
    pub fn take(&self, n: usize) -> Result<Self> {
        Self::new(self.examples.iter().take(n).cloned().collect())
    }

    /// Examples with the given label, if there are any.
    pub fn filter_label(&self, label: usize) -> Option<Self> {
        Self::new(
            self.examples
                .iter()
                .filter(|e| e.label == label)
                .cloned()
                .collect(),
        )
        .ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    OneHiddenLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Ignored for the linear model.
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            input_dim,
            hidden_dim: 0,
            num_classes,
            seed,
        }
    }

    pub fn hidden(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::OneHiddenLayer,
            input_dim,
            hidden_dim,
            num_classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::domain("model.input_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::domain("model.num_classes", "need at least 2 classes"));
        }
        if self.kind == ModelKind::OneHiddenLayer && self.hidden_dim == 0 {
            return Err(Error::domain("model.hidden_dim", "must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::LinearSoftmax => Layout::from_sizes([("w", c * d), ("b", c)]),
            ModelKind::OneHiddenLayer => {
                Layout::from_sizes([("w1", h * d), ("b1", h), ("w2", c * h), ("b2", c)])
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("train.learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("train.batch_size", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::domain("train.local_epochs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Gaussian noise added after every mini-batch step.
pub struct BatchNoise<'a> {
    pub std: f64,
    pub stream: &'a mut Stream,
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_model(spec: &ModelSpec) -> ParamVector {
    let layout = spec.layout();
    let mut params = ParamVector::zeros(layout.clone());
    let mut stream = Stream::derive(spec.seed, role::INIT, 0);
    let fan_in = |name: &str| match name {
        "w" | "w1" => spec.input_dim,
        "w2" => spec.hidden_dim,
        _ => 0,
    };
    for seg in layout.segments() {
        let fan = fan_in(&seg.name);
        if fan == 0 {
            continue;
        }
        let bound = 1.0 / (fan as f64).sqrt();
        for v in &mut params.values_mut()[seg.range.clone()] {
            *v = bound * (2.0 * stream.uniform() - 1.0);
        }
    }
    params
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn check_model(model: &ParamVector, spec: &ModelSpec) -> Result<()> {
    if model.layout() != &spec.layout() {
        return Err(Error::DimensionMismatch {
            context: "model parameters",
            expected: spec.param_count(),
            found: model.len(),
        });
    }
    Ok(())
}

fn check_example(example: &Example, spec: &ModelSpec) -> Result<()> {
    if example.input.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "example input",
            expected: spec.input_dim,
            found: example.input.len(),
        });
    }
    if example.label >= spec.num_classes {
        return Err(Error::DimensionMismatch {
            context: "example label",
            expected: spec.num_classes,
            found: example.label,
        });
    }
    Ok(())
}

fn nonzero(input: &[f64]) -> Vec<(usize, f64)> {
    input
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, x)| (i, *x))
        .collect()
}

/// Intermediate values of one forward pass.
struct Forward {
    active: Vec<(usize, f64)>,
    /// Hidden pre-activations; empty for the linear model.
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(p: &[f64], spec: &ModelSpec, input: &[f64]) -> Forward {
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    let active = nonzero(input);
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let (w, b) = p.split_at(c * d);
            let logits = (0..c)
                .map(|r| {
                    let row = &w[r * d..(r + 1) * d];
                    b[r] + active.iter().map(|&(i, x)| row[i] * x).sum::<f64>()
                })
                .collect();
            Forward {
                active,
                hidden: Vec::new(),
                logits,
            }
        }
        ModelKind::OneHiddenLayer => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let hidden: Vec<f64> = (0..h)
                .map(|j| {
                    let row = &w1[j * d..(j + 1) * d];
                    b1[j] + active.iter().map(|&(i, x)| row[i] * x).sum::<f64>()
                })
                .collect();
            let logits = (0..c)
                .map(|r| {
                    let row = &w2[r * h..(r + 1) * h];
                    b2[r]
                        + row
                            .iter()
                            .zip(&hidden)
                            .map(|(w, z)| w * z.max(0.0))
                            .sum::<f64>()
                })
                .collect();
            Forward {
                active,
                hidden,
                logits,
            }
        }
    }
}

/// Logits for one input.
pub fn logits(model: &ParamVector, spec: &ModelSpec, input: &[f64]) -> Result<Vec<f64>> {
    check_model(model, spec)?;
    if input.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "example input",
            expected: spec.input_dim,
            found: input.len(),
        });
    }
    Ok(forward(model.values(), spec, input).logits)
}

/// Mean cross-entropy over `data`.
pub fn loss(model: &ParamVector, spec: &ModelSpec, data: &Dataset) -> Result<f64> {
    check_model(model, spec)?;
    let mut total = 0.0;
    for e in data.examples() {
        check_example(e, spec)?;
        let f = forward(model.values(), spec, &e.input);
        total += log_sum_exp(&f.logits) - f.logits[e.label];
    }
    Ok(total / data.len() as f64)
}

/// Add the cross-entropy gradient of one example into `grad`.
fn accumulate(p: &[f64], spec: &ModelSpec, e: &Example, grad: &mut [f64]) {
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    let f = forward(p, spec, &e.input);
    let mut gz = softmax(&f.logits);
    gz[e.label] -= 1.0;
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let (gw, gb) = grad.split_at_mut(c * d);
            for r in 0..c {
                let row = &mut gw[r * d..(r + 1) * d];
                for &(i, x) in &f.active {
                    row[i] += gz[r] * x;
                }
                gb[r] += gz[r];
            }
        }
        ModelKind::OneHiddenLayer => {
            let w2 = &p[h * d + h..h * d + h + c * h];
            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            let mut gh = vec![0.0; h];
            for r in 0..c {
                let grow = &mut gw2[r * h..(r + 1) * h];
                let wrow = &w2[r * h..(r + 1) * h];
                for j in 0..h {
                    grow[j] += gz[r] * f.hidden[j].max(0.0);
                    gh[j] += wrow[j] * gz[r];
                }
                gb2[r] += gz[r];
            }
            for j in 0..h {
                if f.hidden[j] <= 0.0 {
                    continue;
                }
                let row = &mut gw1[j * d..(j + 1) * d];
                for &(i, x) in &f.active {
                    row[i] += gh[j] * x;
                }
                gb1[j] += gh[j];
            }
        }
    }
}

fn mean_gradient<'e>(
    model: &ParamVector,
    spec: &ModelSpec,
    batch: impl ExactSizeIterator<Item = &'e Example>,
) -> Result<ParamVector> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut grad = model.zeros_like();
    for e in batch {
        check_example(e, spec)?;
        accumulate(model.values(), spec, e, grad.values_mut());
    }
    grad.scale(1.0 / n as f64);
    Ok(grad)
}

/// Exact mean gradient of the cross-entropy over `batch`.
pub fn gradient(model: &ParamVector, spec: &ModelSpec, batch: &Dataset) -> Result<ParamVector> {
    check_model(model, spec)?;
    mean_gradient(model, spec, batch.examples().iter())
}

/// Gradient of a single example.
pub fn example_gradient(
    model: &ParamVector,
    spec: &ModelSpec,
    example: &Example,
) -> Result<ParamVector> {
    check_model(model, spec)?;
    mean_gradient(model, spec, std::iter::once(example))
}

/// Mini-batch SGD for `cfg.local_epochs` epochs.
///
/// Each epoch reshuffles the example order with a Fisher–Yates pass over
/// `rng`; indices within a batch are visited in ascending order so a single
/// full-size batch reproduces [`gradient`] bit for bit.
pub fn local_train(
    model: &ParamVector,
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    mut noise: Option<BatchNoise<'_>>,
    rng: &mut Stream,
) -> Result<ParamVector> {
    check_model(model, spec)?;
    cfg.validate()?;
    let mut w = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let examples = data.examples();
    for _ in 0..cfg.local_epochs {
        for i in (1..order.len()).rev() {
            let j = rng.below(i + 1);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            let grad = mean_gradient(&w, spec, batch.iter().map(|&i| &examples[i]))?;
            w.axpy(-cfg.learning_rate, &grad)?;
            if let Some(n) = noise.as_mut() {
                for v in w.values_mut() {
                    *v += n.std * n.stream.gaussian();
                }
            }
        }
    }
    Ok(w)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &ParamVector, spec: &ModelSpec, input: &[f64]) -> Result<usize> {
    Ok(argmax(&logits(model, spec, input)?))
}

/// Fraction of examples whose arg-max logit (lowest index on ties) equals the label.
pub fn evaluate(model: &ParamVector, spec: &ModelSpec, data: &Dataset) -> Result<f64> {
    check_model(model, spec)?;
    let mut correct = 0usize;
    for e in data.examples() {
        check_example(e, spec)?;
        if argmax(&forward(model.values(), spec, &e.input).logits) == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy restricted to examples of one class; `None` if the class is absent.
pub fn class_accuracy(
    model: &ParamVector,
    spec: &ModelSpec,
    data: &Dataset,
    class: usize,
) -> Result<Option<f64>> {
    match data.filter_label(class) {
        Some(subset) => evaluate(model, spec, &subset).map(Some),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::new(vec![
            Example::new(vec![0.1, 0.9], 1),
            Example::new(vec![0.8, 0.2], 0),
            Example::new(vec![0.3, 0.4], 1),
        ])
        .unwrap()
    }

    /// Straight scalar-loop softmax cross-entropy for the linear model.
    fn reference_loss(p: &[f64], spec: &ModelSpec, data: &Dataset) -> f64 {
        let (d, c) = (spec.input_dim, spec.num_classes);
        let mut total = 0.0;
        for e in data.examples() {
            let mut z = vec![0.0; c];
            for r in 0..c {
                z[r] = p[c * d + r];
                for i in 0..d {
                    z[r] += p[r * d + i] * e.input[i];
                }
            }
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            total += -(z[e.label] - m - s.ln());
        }
        total / data.len() as f64
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = ModelSpec::linear(2, 2, 7);
        let a = init_model(&spec);
        assert_eq!(a, init_model(&spec));
        assert!(a.segment("b").unwrap().iter().all(|b| *b == 0.0));
        assert!(a.segment("w").unwrap().iter().any(|w| *w != 0.0));
    }

    #[test]
    fn hidden_layout_counts() {
        let spec = ModelSpec::hidden(2, 4, 2, 1);
        assert_eq!(spec.param_count(), 22);
        let p = init_model(&spec);
        assert!(p.segment("b1").unwrap().iter().all(|b| *b == 0.0));
        assert!(p.segment("b2").unwrap().iter().all(|b| *b == 0.0));
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let spec = ModelSpec::linear(2, 2, 0);
        let model = ParamVector::zeros(spec.layout());
        let l = loss(&model, &spec, &toy()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_model_has_zero_loss() {
        let spec = ModelSpec::linear(2, 2, 0);
        let mut model = ParamVector::zeros(spec.layout());
        // Huge bias toward class 1.
        model.segment_mut("b").unwrap()[1] = 1e4;
        let data = Dataset::new(vec![Example::new(vec![0.5, 0.5], 1)]).unwrap();
        assert_eq!(loss(&model, &spec, &data).unwrap(), 0.0);
    }

    #[test]
    fn loss_matches_scalar_reimplementation() {
        let mut s = Stream::from_seed(11);
        for trial in 0..20 {
            let spec = ModelSpec::linear(5, 3, trial);
            let mut model = init_model(&spec);
            for v in model.values_mut() {
                *v += s.normal(0.0, 1.0);
            }
            let data = Dataset::new(
                (0..8)
                    .map(|_| Example::new((0..5).map(|_| s.uniform()).collect(), s.below(3)))
                    .collect(),
            )
            .unwrap();
            let got = loss(&model, &spec, &data).unwrap();
            let want = reference_loss(model.values(), &spec, &data);
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn duplicated_example_has_same_gradient() {
        let spec = ModelSpec::hidden(2, 3, 2, 5);
        let model = init_model(&spec);
        let e = Example::new(vec![0.3, 0.7], 1);
        let one = gradient(&model, &spec, &Dataset::new(vec![e.clone()]).unwrap()).unwrap();
        let two = gradient(&model, &spec, &Dataset::new(vec![e.clone(), e]).unwrap()).unwrap();
        for (a, b) in one.values().iter().zip(two.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = ModelSpec::linear(3, 2, 0);
        let model = init_model(&spec);
        let err = loss(&model, &spec, &toy()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let wrong = init_model(&ModelSpec::linear(2, 2, 0));
        assert!(evaluate(&wrong, &spec, &toy()).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let spec = ModelSpec::hidden(2, 3, 2, 1);
        let model = init_model(&spec);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            local_epochs: 3,
        };
        let out = local_train(&model, &spec, &toy(), &cfg, None, &mut Stream::from_seed(1)).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn single_full_batch_epoch_is_one_gradient_step() {
        let spec = ModelSpec::linear(2, 2, 3);
        let model = init_model(&spec);
        let data = toy();
        let cfg = TrainConfig {
            learning_rate: 0.3,
            batch_size: data.len(),
            local_epochs: 1,
        };
        let out = local_train(&model, &spec, &data, &cfg, None, &mut Stream::from_seed(9)).unwrap();
        let mut expected = model.clone();
        expected
            .axpy(-0.3, &gradient(&model, &spec, &data).unwrap())
            .unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn batch_noise_perturbs_and_is_reproducible() {
        let spec = ModelSpec::linear(2, 2, 3);
        let model = init_model(&spec);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 1,
            local_epochs: 1,
        };
        let run = |seed| {
            let mut noise_stream = Stream::from_seed(seed);
            let noise = BatchNoise {
                std: 0.5,
                stream: &mut noise_stream,
            };
            local_train(&model, &spec, &toy(), &cfg, Some(noise), &mut Stream::from_seed(1))
                .unwrap()
        };
        let clean =
            local_train(&model, &spec, &toy(), &cfg, None, &mut Stream::from_seed(1)).unwrap();
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), clean);
    }

    #[test]
    fn evaluate_edge_cases() {
        let spec = ModelSpec::linear(2, 3, 0);
        let mut model = ParamVector::zeros(spec.layout());
        // All logits tie at zero: prediction is class 0.
        let zeros = Dataset::new(vec![Example::new(vec![0.2, 0.1], 0); 4]).unwrap();
        assert_eq!(evaluate(&model, &spec, &zeros).unwrap(), 1.0);
        model.segment_mut("b").unwrap()[2] = 1.0;
        assert_eq!(evaluate(&model, &spec, &zeros).unwrap(), 0.0);
        assert_eq!(class_accuracy(&model, &spec, &zeros, 1).unwrap(), None);
    }
}
