//! The shallow classification head trained on concatenated frame
//! embeddings.
//!
//! Layout: `input -> 10 (ReLU) -> [128 (ReLU)] x hidden_layers -> n_outputs
//! (sigmoid)`. Dropout follows every ReLU in training mode. All arithmetic is
//! f64; parameters live in one flat vector so the optimizer and the gradient
//! check can treat them uniformly.

mod io;
mod threshold;
mod train;
mod weights;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_head, write_head, HeadFile};
pub use threshold::{
    micro_f1, multilabel_threshold_grid, select_threshold_binary, select_threshold_multilabel,
};
pub use train::{data_fingerprint, train, AdamState, Task, TrainingData, TrainingMeta};
pub use weights::{class_weights, sample_weights, WeightScheme, MULTILABEL_EPSILON};

use crate::error::{Error, Result};

pub const HIDDEN_WIDTH: usize = 128;
pub const BOTTLENECK_WIDTH: usize = 10;
pub const BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub bottleneck_width: usize,
    pub n_outputs: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl HeadConfig {
    pub fn new(input_dim: usize, n_outputs: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 0,
            hidden_width: HIDDEN_WIDTH,
            bottleneck_width: BOTTLENECK_WIDTH,
            n_outputs,
            dropout_rate: 0.0,
            learning_rate: 1e-3,
            batch_size: BATCH_SIZE,
            epochs: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden_width", self.hidden_width),
            ("bottleneck_width", self.bottleneck_width),
            ("n_outputs", self.n_outputs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden_layers > 3 {
            return Err(Error::Config(format!(
                "hidden_layers must be in 0..=3, got {}",
                self.hidden_layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of every dense layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_dim, self.bottleneck_width)];
        let mut prev = self.bottleneck_width;
        for _ in 0..self.hidden_layers {
            dims.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        dims.push((prev, self.n_outputs));
        dims
    }
}

/// Position of one dense layer in the flat parameter vector. Weights are
/// `outputs x inputs`, row-major, followed by the biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn shapes_for(config: &HeadConfig) -> Vec<LayerShape> {
    let mut offset = 0;
    config
        .layer_dims()
        .into_iter()
        .map(|(inputs, outputs)| {
            let s = LayerShape {
                inputs,
                outputs,
                offset,
            };
            offset += s.len();
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    config: HeadConfig,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    threshold: f64,
    adam: Option<AdamState>,
    meta: Option<TrainingMeta>,
}

/// Largest f64 below 1; keeps sigmoid outputs inside the open interval.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-layer values kept from a forward pass for backpropagation.
struct Trace {
    /// Input to each layer (post-activation, post-dropout of the previous).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout multiplier per hidden unit (0 or 1/(1-p)); empty when off.
    masks: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl ClassifierHead {
    /// He-uniform weights for the ReLU layers, Glorot-uniform for the sigmoid
    /// output layer, zero biases, threshold 0.5.
    pub fn new(config: HeadConfig) -> Result<Self> {
        config.validate()?;
        let layers = shapes_for(&config);
        let total = layers.iter().map(LayerShape::len).sum();
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let last = layers.len() - 1;
        for (l, shape) in layers.iter().enumerate() {
            let limit = if l == last {
                (6.0 / (shape.inputs + shape.outputs) as f64).sqrt()
            } else {
                (6.0 / shape.inputs as f64).sqrt()
            };
            for w in &mut params[shape.weights()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            config,
            layers,
            params,
            threshold: 0.5,
            adam: None,
            meta: None,
        })
    }

    pub(crate) fn from_parts(
        config: HeadConfig,
        params: Vec<f64>,
        threshold: f64,
        meta: Option<TrainingMeta>,
    ) -> Result<Self> {
        config.validate()?;
        let layers = shapes_for(&config);
        let total: usize = layers.iter().map(LayerShape::len).sum();
        if params.len() != total {
            return Err(Error::InvalidInput(format!(
                "head needs {total} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("head parameters are not finite".into()));
        }
        let mut head = Self {
            config,
            layers,
            params,
            threshold: 0.5,
            adam: None,
            meta,
        };
        head.set_threshold(threshold)?;
        Ok(head)
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Threshold(format!("threshold {t} outside (0, 1)")));
        }
        self.threshold = t;
        Ok(())
    }

    pub fn training_meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    fn trace(&self, x: &[f64], dropout: Option<&mut dyn rand::RngCore>) -> Result<Trace> {
        if x.len() != self.config.input_dim {
            return Err(Error::InvalidInput(format!(
                "feature has {} values, head expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        let p = self.config.dropout_rate;
        let mut rng = dropout.filter(|_| p > 0.0);
        let last = self.layers.len() - 1;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
            masks: Vec::with_capacity(last),
            logits: Vec::new(),
        };
        let mut a = x.to_vec();
        for (l, shape) in self.layers.iter().enumerate() {
            let w = &self.params[shape.weights()];
            let b = &self.params[shape.biases()];
            let z: Vec<f64> = (0..shape.outputs)
                .map(|o| {
                    let row = &w[o * shape.inputs..(o + 1) * shape.inputs];
                    b[o] + row.iter().zip(&a).map(|(w, a)| w * a).sum::<f64>()
                })
                .collect();
            trace.inputs.push(std::mem::take(&mut a));
            if l == last {
                trace.logits = z;
                break;
            }
            let mut next: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) => {
                    let keep = 1.0 / (1.0 - p);
                    let m: Vec<f64> = (0..next.len())
                        .map(|_| if r.random::<f64>() < p { 0.0 } else { keep })
                        .collect();
                    next.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
                    m
                }
                None => Vec::new(),
            };
            trace.pre.push(z);
            trace.masks.push(mask);
            a = next;
        }
        Ok(trace)
    }

    /// Per-output sigmoid probabilities. Dropout is applied only when
    /// `train_mode` is set.
    pub fn forward(&self, x: &[f64], train_mode: bool, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        let trace = self.trace(x, train_mode.then_some(rng))?;
        Ok(trace.logits.into_iter().map(sigmoid).collect())
    }

    /// Evaluation-mode forward pass.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.trace(x, None)?;
        Ok(trace.logits.into_iter().map(sigmoid).collect())
    }

    pub fn predict_proba_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.predict_proba(x)).collect()
    }

    /// Weighted binary cross-entropy and its gradient for every parameter.
    ///
    /// `loss = (1/B) * sum_i w_i * mean_c BCE(y_ic, sigmoid(z_ic))`, computed
    /// from the logits. Labels must be 0 or 1.
    pub fn loss_and_gradients(
        &self,
        xs: &[&[f64]],
        ys: &[&[f64]],
        weights: &[f64],
        train_mode: bool,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(f64, Vec<f64>)> {
        let batch = xs.len();
        if batch == 0 || ys.len() != batch || weights.len() != batch {
            return Err(Error::InvalidInput(format!(
                "batch of {batch} features, {} labels, {} weights",
                ys.len(),
                weights.len()
            )));
        }
        let n_out = self.config.n_outputs;
        let scale = 1.0 / (batch * n_out) as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for ((x, y), &w) in xs.iter().zip(ys).zip(weights) {
            if y.len() != n_out {
                return Err(Error::InvalidInput(format!(
                    "label has {} entries, head has {n_out} outputs",
                    y.len()
                )));
            }
            let trace = self.trace(x, train_mode.then_some(&mut *rng))?;
            let mut delta: Vec<f64> = Vec::with_capacity(n_out);
            for (&z, &t) in trace.logits.iter().zip(y.iter()) {
                loss += w * (softplus(z) - t * z) * scale;
                let p = 1.0 / (1.0 + (-z).exp());
                delta.push(w * (p - t) * scale);
            }
            self.backward(&trace, delta, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        Ok((loss, grad))
    }

    fn backward(&self, trace: &Trace, mut delta: Vec<f64>, grad: &mut [f64]) {
        for (l, shape) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[l];
            let gw = &mut grad[shape.weights()];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * shape.inputs..(o + 1) * shape.inputs];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
            }
            grad[shape.biases()]
                .iter_mut()
                .zip(&delta)
                .for_each(|(g, d)| *g += d);
            if l == 0 {
                break;
            }
            let w = &self.params[shape.weights()];
            let mut prev = vec![0.0; shape.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * shape.inputs..(o + 1) * shape.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            let pre = &trace.pre[l - 1];
            let mask = &trace.masks[l - 1];
            for (i, p) in prev.iter_mut().enumerate() {
                if pre[i] <= 0.0 {
                    *p = 0.0;
                } else if !mask.is_empty() {
                    *p *= mask[i];
                }
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(hidden: usize, n_out: usize, dropout: f64) -> ClassifierHead {
        let mut c = HeadConfig::new(6, n_out);
        c.hidden_layers = hidden;
        c.hidden_width = 8;
        c.dropout_rate = dropout;
        c.seed = 11;
        ClassifierHead::new(c).unwrap()
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let mut h = head(2, 3, 0.0);
        h.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(h.predict_proba(&[1.0; 6]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn architecture_shapes() {
        let h = head(0, 1, 0.0);
        assert_eq!(h.layers().len(), 2);
        assert_eq!(h.config().layer_dims(), vec![(6, 10), (10, 1)]);
        let h3 = head(3, 2, 0.0);
        assert_eq!(
            h3.config().layer_dims(),
            vec![(6, 10), (10, 8), (8, 8), (8, 8), (8, 2)]
        );
        assert_eq!(h3.params().len(), 6 * 10 + 10 + 10 * 8 + 8 + 2 * (8 * 8 + 8) + 8 * 2 + 2);
    }

    #[test]
    fn dropout_off_means_train_equals_eval() {
        let h = head(2, 1, 0.0);
        let x = [0.3, -1.0, 2.0, 0.0, 1.5, -0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(h.forward(&x, true, &mut rng).unwrap(), h.predict_proba(&x).unwrap());
    }

    #[test]
    fn dropout_changes_training_outputs_only() {
        let h = head(2, 1, 0.5);
        let x = [0.3, -1.0, 2.0, 0.0, 1.5, -0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eval = h.predict_proba(&x).unwrap();
        let differs = (0..20).any(|_| h.forward(&x, true, &mut rng).unwrap() != eval);
        assert!(differs);
        assert_eq!(h.forward(&x, false, &mut rng).unwrap(), eval);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let h = head(0, 1, 0.0);
        assert!(matches!(h.predict_proba(&[1.0; 5]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn outputs_are_independent_sigmoids() {
        let h = head(1, 3, 0.0);
        let x = [1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
        let before = h.predict_proba(&x).unwrap();
        let mut altered = h.clone();
        let out = *altered.layers().last().unwrap();
        let inputs = out.inputs;
        let w = out.weights();
        altered.params_mut()[w.start + 2 * inputs..w.start + 3 * inputs]
            .iter_mut()
            .for_each(|p| *p = 0.0);
        altered.params_mut()[out.biases().start + 2] = 0.0;
        let after = altered.predict_proba(&x).unwrap();
        assert_eq!(&before[..2], &after[..2]);
        assert_eq!(after[2], 0.5);
    }

    #[test]
    fn uninformative_predictions_cost_ln2() {
        let mut h = head(1, 1, 0.0);
        h.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let x = [0.0; 6];
        let xs: Vec<&[f64]> = vec![&x; 4];
        let y0 = [0.0];
        let y1 = [1.0];
        let ys: Vec<&[f64]> = vec![&y0, &y1, &y1, &y0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, _) = h.loss_and_gradients(&xs, &ys, &[1.0; 4], false, &mut rng).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let mut h = head(0, 1, 0.0);
        h.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let bias = h.layers()[1].biases().start;
        h.params_mut()[bias] = 60.0;
        let x = [0.0; 6];
        let y = [1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, _) = h
            .loss_and_gradients(&[&x], &[&y], &[1.0], false, &mut rng)
            .unwrap();
        assert!(loss < 1e-20);
    }
}
