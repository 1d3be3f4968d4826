use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::weights::{class_weights, sample_weights, MULTILABEL_EPSILON};
use super::{ClassifierHead, HeadConfig};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub data_fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multilabel,
}

#[derive(Debug, Clone, PartialEq)]
enum Targets {
    Binary(Vec<bool>),
    Multilabel {
        sets: Vec<Vec<usize>>,
        n_classes: usize,
    },
}

/// Features, dense 0/1 targets and per-sample loss weights.
///
/// Binary sets weight each sample by its class weight; multi-label sets use
/// the max class weight over the sample's labels, with smoothing. Weights are
/// recomputed whenever a subset is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    targets: Targets,
}

impl TrainingData {
    pub fn binary(x: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self> {
        check_rows(&x, labels.len())?;
        let pos = labels.iter().filter(|&&l| l).count();
        let w = class_weights(&[labels.len() - pos, pos], labels.len(), 0.0)?;
        let weights = labels.iter().map(|&l| w[l as usize]).collect();
        let y = labels.iter().map(|&l| vec![l as u8 as f64]).collect();
        Ok(Self {
            x,
            y,
            weights,
            targets: Targets::Binary(labels),
        })
    }

    pub fn multilabel(x: Vec<Vec<f64>>, sets: Vec<Vec<usize>>, n_classes: usize) -> Result<Self> {
        check_rows(&x, sets.len())?;
        let mut counts = vec![0usize; n_classes];
        for (i, set) in sets.iter().enumerate() {
            for &k in set {
                *counts.get_mut(k).ok_or_else(|| {
                    Error::InvalidInput(format!("sample {i} has class {k} >= {n_classes}"))
                })? += 1;
            }
        }
        let w = class_weights(&counts, sets.len(), MULTILABEL_EPSILON)?;
        let weights = sample_weights(&sets, &w)?;
        let y = sets
            .iter()
            .map(|set| {
                let mut row = vec![0.0; n_classes];
                set.iter().for_each(|&k| row[k] = 1.0);
                row
            })
            .collect();
        Ok(Self {
            x,
            y,
            weights,
            targets: Targets::Multilabel { sets, n_classes },
        })
    }

    pub fn task(&self) -> Task {
        match self.targets {
            Targets::Binary(_) => Task::Binary,
            Targets::Multilabel { .. } => Task::Multilabel,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        match &self.targets {
            Targets::Binary(_) => 1,
            Targets::Multilabel { n_classes, .. } => *n_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Binary labels; `None` for multi-label data.
    pub fn binary_labels(&self) -> Option<&[bool]> {
        match &self.targets {
            Targets::Binary(l) => Some(l),
            Targets::Multilabel { .. } => None,
        }
    }

    pub fn label_matrix(&self) -> Vec<Vec<bool>> {
        self.y
            .iter()
            .map(|row| row.iter().map(|&v| v > 0.5).collect())
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let x = indices.iter().map(|&i| self.x[i].clone()).collect();
        match &self.targets {
            Targets::Binary(l) => Self::binary(x, indices.iter().map(|&i| l[i]).collect()),
            Targets::Multilabel { sets, n_classes } => Self::multilabel(
                x,
                indices.iter().map(|&i| sets[i].clone()).collect(),
                *n_classes,
            ),
        }
    }
}

fn check_rows(x: &[Vec<f64>], n_labels: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidInput("training data is empty".into()));
    }
    if x.len() != n_labels {
        return Err(Error::InvalidInput(format!(
            "{} feature rows for {n_labels} labels",
            x.len()
        )));
    }
    let d = x[0].len();
    if let Some(i) = x.iter().position(|r| r.len() != d) {
        return Err(Error::InvalidInput(format!(
            "row {i} has {} values, row 0 has {d}",
            x[i].len()
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training features contain non-finite values".into()));
    }
    Ok(())
}

/// SHA-256 over features, targets and weights, as hex.
pub fn data_fingerprint(data: &TrainingData) -> String {
    let mut h = Sha256::new();
    for ((x, y), w) in data.x.iter().zip(&data.y).zip(&data.weights) {
        x.iter().for_each(|v| h.update(v.to_le_bytes()));
        y.iter().for_each(|v| h.update(v.to_le_bytes()));
        h.update(w.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Mini-batch Adam on the weighted BCE for `config.epochs` epochs. Batches
/// are drawn from a seeded shuffle each epoch; the result is a pure function
/// of `config` and `data`.
pub fn train(config: &HeadConfig, data: &TrainingData) -> Result<ClassifierHead> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training data is empty".into()));
    }
    if data.input_dim() != config.input_dim || data.n_outputs() != config.n_outputs {
        return Err(Error::InvalidInput(format!(
            "data is {}->{}, head is configured {}->{}",
            data.input_dim(),
            data.n_outputs(),
            config.input_dim,
            config.n_outputs
        )));
    }
    let mut head = ClassifierHead::new(config.clone())?;
    head.meta = Some(TrainingMeta {
        seed: config.seed,
        epochs: config.epochs,
        data_fingerprint: data_fingerprint(data),
    });
    if config.epochs == 0 {
        return Ok(head);
    }
    let mut adam = AdamState::new(head.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| data.x[i].as_slice()).collect();
            let ys: Vec<&[f64]> = batch.iter().map(|&i| data.y[i].as_slice()).collect();
            let ws: Vec<f64> = batch.iter().map(|&i| data.weights[i]).collect();
            let (_, grad) = head
                .loss_and_gradients(&xs, &ys, &ws, true, &mut rng)
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
            adam.update(&mut head.params, &grad, config.learning_rate);
        }
        if head.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameters diverged in epoch {epoch}"
            )));
        }
    }
    head.adam = Some(adam);
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> TrainingData {
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64 {
            let a = (i % 8) as f64 / 8.0;
            let b = (i / 8) as f64 / 8.0;
            x.push(vec![a, b]);
            labels.push(a + b > 0.9);
        }
        TrainingData::binary(x, labels).unwrap()
    }

    fn config(epochs: usize) -> HeadConfig {
        let mut c = HeadConfig::new(2, 1);
        c.hidden_layers = 1;
        c.learning_rate = 0.01;
        c.epochs = epochs;
        c.seed = 3;
        c
    }

    #[test]
    fn learns_a_separable_set() {
        let data = separable();
        let head = train(&config(300), &data).unwrap();
        let labels = data.binary_labels().unwrap();
        let correct = data
            .x
            .iter()
            .zip(labels)
            .filter(|(x, &l)| (head.predict_proba(x).unwrap()[0] >= 0.5) == l)
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn zero_epochs_returns_the_initialisation() {
        let head = train(&config(0), &separable()).unwrap();
        let fresh = ClassifierHead::new(config(0)).unwrap();
        assert_eq!(head.params(), fresh.params());
        assert_eq!(head.threshold(), 0.5);
    }

    #[test]
    fn training_is_deterministic() {
        let mut c = config(5);
        c.dropout_rate = 0.25;
        let a = train(&c, &separable()).unwrap();
        let b = train(&c, &separable()).unwrap();
        assert!(a
            .params()
            .iter()
            .zip(b.params())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn binary_weights_follow_class_frequency() {
        let data = TrainingData::binary(
            vec![vec![0.0]; 5],
            vec![true, false, false, false, false],
        )
        .unwrap();
        assert_eq!(data.weights, vec![2.5, 0.625, 0.625, 0.625, 0.625]);
        assert!(TrainingData::binary(vec![vec![0.0]; 2], vec![false, false]).is_err());
    }

    #[test]
    fn multilabel_weights() {
        let data = TrainingData::multilabel(
            vec![vec![0.0]; 4],
            vec![vec![0], vec![0], vec![0, 1], vec![]],
            3,
        )
        .unwrap();
        assert_eq!(data.y[2], vec![1.0, 1.0, 0.0]);
        // counts (3, 1, 0): w = 4 / (3 * f + eps)
        let w1 = 4.0 / (3.0 + MULTILABEL_EPSILON);
        assert_eq!(data.weights[2], w1);
        assert_eq!(data.weights[3], 1.0);
    }
}
