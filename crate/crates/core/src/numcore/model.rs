use alloc::vec;
use alloc::vec::Vec;

use super::{ParamVector, SimRng};
use crate::datagen::Dataset;
use crate::{config_err, Error, Result};

/// Architecture of the classifier being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogisticRegression,
    /// One hidden tanh layer.
    Mlp1 {
        hidden_dim: usize,
    },
}

/// Classifier shape. Two equal specs always have the same parameter count.
///
/// Parameter layout (row-major):
/// - logistic: `W (C x D)`, `b (C)`
/// - mlp: `W1 (H x D)`, `b1 (H)`, `W2 (C x H)`, `b2 (C)`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1 { hidden_dim },
            input_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(config_err("input_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(config_err("num_classes must be at least 2"));
        }
        if let ModelKind::Mlp1 { hidden_dim: 0 } = self.kind {
            return Err(config_err("hidden_dim must be positive"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LogisticRegression => c * d + c,
            ModelKind::Mlp1 { hidden_dim: h } => h * d + h + c * h + c,
        }
    }

    /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
    pub fn init(&self, rng: &mut SimRng) -> ParamVector {
        let (d, c) = (self.input_dim, self.num_classes);
        let mut v = Vec::with_capacity(self.num_params());
        let mut layer = |rows: usize, fan_in: usize, v: &mut Vec<f64>| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for _ in 0..rows * fan_in {
                v.push(rng.uniform_range(-bound, bound));
            }
            v.extend(core::iter::repeat_n(0.0, rows));
        };
        match self.kind {
            ModelKind::LogisticRegression => layer(c, d, &mut v),
            ModelKind::Mlp1 { hidden_dim: h } => {
                layer(h, d, &mut v);
                layer(c, h, &mut v);
            }
        }
        ParamVector::from_vec(v).expect("uniform init is finite")
    }
}

/// Borrowed feature/label matrix, `features` row-major with `width` columns.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    labels: &'a [usize],
    width: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [usize], width: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.len() != labels.len() * width {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * width,
                found: features.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

fn check_inputs(spec: &ModelSpec, theta: &[f64], batch: &Batch<'_>) -> Result<()> {
    if theta.len() != spec.num_params() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_params(),
            found: theta.len(),
        });
    }
    if batch.width != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            found: batch.width,
        });
    }
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= spec.num_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: spec.num_classes,
        });
    }
    if batch.features.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("batch features"));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("model parameters"));
    }
    Ok(())
}

/// Writes logits into `out`; returns hidden activations for the MLP.
fn logits_into(spec: &ModelSpec, theta: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
    let (d, c) = (spec.input_dim, spec.num_classes);
    match spec.kind {
        ModelKind::LogisticRegression => {
            let (w, b) = theta.split_at(c * d);
            for k in 0..c {
                out[k] = b[k] + dot(&w[k * d..(k + 1) * d], x);
            }
        }
        ModelKind::Mlp1 { hidden_dim: h } => {
            let (w1, rest) = theta.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            for j in 0..h {
                hidden[j] = libm::tanh(b1[j] + dot(&w1[j * d..(j + 1) * d], x));
            }
            for k in 0..c {
                out[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], hidden);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax in place; returns log-sum-exp of the input logits.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + libm::log(sum)
}

fn hidden_len(spec: &ModelSpec) -> usize {
    match spec.kind {
        ModelKind::LogisticRegression => 0,
        ModelKind::Mlp1 { hidden_dim } => hidden_dim,
    }
}

/// Mean cross-entropy and its gradient, written into `grad` (overwritten).
/// Inputs are assumed validated.
pub(crate) fn loss_and_grad(spec: &ModelSpec, theta: &[f64], batch: &Batch<'_>, grad: &mut [f64]) -> f64 {
    let (d, c) = (spec.input_dim, spec.num_classes);
    let h = hidden_len(spec);
    let mut hidden = vec![0.0; h];
    let mut probs = vec![0.0; c];
    let mut dh = vec![0.0; h];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;

    for i in 0..batch.len() {
        let x = batch.row(i);
        let y = batch.label(i);
        logits_into(spec, theta, x, &mut hidden, &mut probs);
        let zy = probs[y];
        let lse = softmax_in_place(&mut probs);
        total += lse - zy;
        // probs now holds dL/dz after subtracting the one-hot target.
        probs[y] -= 1.0;
        match spec.kind {
            ModelKind::LogisticRegression => {
                let (gw, gb) = grad.split_at_mut(c * d);
                for k in 0..c {
                    let dz = probs[k];
                    for (g, xv) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += dz * xv;
                    }
                    gb[k] += dz;
                }
            }
            ModelKind::Mlp1 { .. } => {
                let w2 = &theta[h * d + h..h * d + h + c * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                dh.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let dz = probs[k];
                    let row = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += dz * hidden[j];
                        dh[j] += dz * row[j];
                    }
                    gb2[k] += dz;
                }
                for j in 0..h {
                    let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                    for (g, xv) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += da * xv;
                    }
                    gb1[j] += da;
                }
            }
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    total / n
}

/// Mean cross-entropy of `theta` on `batch`.
pub fn forward_loss(spec: &ModelSpec, theta: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
    check_inputs(spec, theta.as_slice(), batch)?;
    let c = spec.num_classes;
    let mut hidden = vec![0.0; hidden_len(spec)];
    let mut z = vec![0.0; c];
    let mut total = 0.0;
    for i in 0..batch.len() {
        logits_into(spec, theta.as_slice(), batch.row(i), &mut hidden, &mut z);
        let zy = z[batch.label(i)];
        total += softmax_in_place(&mut z) - zy;
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean batch cross-entropy with respect to `theta`.
pub fn backward(spec: &ModelSpec, theta: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector> {
    check_inputs(spec, theta.as_slice(), batch)?;
    let mut grad = vec![0.0; theta.dim()];
    loss_and_grad(spec, theta.as_slice(), batch, &mut grad);
    ParamVector::from_vec(grad)
}

/// Fraction of rows in `ds` whose argmax prediction equals the label.
pub fn accuracy(spec: &ModelSpec, theta: &ParamVector, ds: &Dataset) -> Result<f64> {
    if theta.dim() != spec.num_params() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_params(),
            found: theta.dim(),
        });
    }
    if ds.input_dim() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            found: ds.input_dim(),
        });
    }
    let mut hidden = vec![0.0; hidden_len(spec)];
    let mut z = vec![0.0; spec.num_classes];
    let mut correct = 0usize;
    for i in 0..ds.len() {
        logits_into(spec, theta.as_slice(), ds.row(i), &mut hidden, &mut z);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        if best == ds.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(rng: &mut SimRng, n: usize, d: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
        let x = (0..n * d).map(|_| rng.normal()).collect();
        let y = (0..n).map(|_| rng.below(c)).collect();
        (x, y)
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let spec = ModelSpec::logistic(3, 4);
        let theta = ParamVector::zeros(spec.num_params());
        let mut rng = SimRng::new(1);
        let (x, y) = random_batch(&mut rng, 5, 3, 4);
        let b = Batch::new(&x, &y, 3).unwrap();
        let loss = forward_loss(&spec, &theta, &b).unwrap();
        assert!((loss - libm::log(4.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_margin_gives_ln2() {
        let spec = ModelSpec::logistic(1, 2);
        // Both classes get weight 0.7 on the single feature: margin 0.
        let theta = ParamVector::from_vec(vec![0.7, 0.7, 0.0, 0.0]).unwrap();
        let x = [1.3];
        let y = [1];
        let b = Batch::new(&x, &y, 1).unwrap();
        let loss = forward_loss(&spec, &theta, &b).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn balanced_batch_has_zero_bias_gradient() {
        // theta = 0 and one sample per class with x = 0: bias gradient is
        // mean(p - onehot) = 1/C - 1/C = 0.
        let spec = ModelSpec::logistic(2, 3);
        let theta = ParamVector::zeros(spec.num_params());
        let x = [1.0, -2.0, -1.0, 2.0, 0.0, 0.0];
        let y = [0, 1, 2];
        let b = Batch::new(&x, &y, 2).unwrap();
        let g = backward(&spec, &theta, &b).unwrap();
        for &gb in &g.as_slice()[6..] {
            assert!(gb.abs() < 1e-15);
        }
    }

    #[test]
    fn errors_on_bad_inputs() {
        let spec = ModelSpec::mlp(2, 3, 2);
        let theta = ParamVector::zeros(spec.num_params());
        let x = [1.0, 2.0];
        let bad_label = [5];
        let b = Batch::new(&x, &bad_label, 2).unwrap();
        assert!(matches!(
            forward_loss(&spec, &theta, &b),
            Err(Error::LabelOutOfRange { .. })
        ));
        let nan = [f64::NAN, 0.0];
        let b = Batch::new(&nan, &[0], 2).unwrap();
        assert_eq!(backward(&spec, &theta, &b), Err(Error::NonFinite("batch features")));
        let b = Batch::new(&[1.0, 2.0, 3.0], &[0], 3).unwrap();
        assert!(matches!(
            forward_loss(&spec, &theta, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(Batch::new(&[], &[], 2).unwrap_err(), Error::EmptyBatch);
        let short = ParamVector::zeros(3);
        let b = Batch::new(&x, &[0], 2).unwrap();
        assert!(forward_loss(&spec, &short, &b).is_err());
    }

    #[test]
    fn init_is_bounded_with_zero_biases() {
        let spec = ModelSpec::mlp(16, 8, 4);
        let theta = spec.init(&mut SimRng::new(9));
        let v = theta.as_slice();
        assert_eq!(v.len(), spec.num_params());
        assert!(v[..128].iter().all(|w| w.abs() <= 0.25));
        assert!(v[128..136].iter().all(|&b| b == 0.0));
        let bound = 1.0 / libm::sqrt(8.0);
        assert!(v[136..168].iter().all(|w| w.abs() <= bound));
        assert!(v[168..].iter().all(|&b| b == 0.0));
    }
}
