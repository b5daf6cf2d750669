//! Reference multilayer perceptron over fused feature grids.
//!
//! Architecture: each 32x32 channel flattens to 1024 inputs and passes
//! through its own input weight block (mirroring per-pipeline filters);
//! the blocks sum into a shared tanh hidden layer of width 64, then a tanh
//! layer of width 32, then softmax over the classes. Trained by mini-batch
//! gradient descent on cross-entropy, deterministic in the seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CloudError;
use crate::features::FeatureGrid;
use crate::types::make_rng;

pub const HIDDEN_1: usize = 64;
pub const HIDDEN_2: usize = 32;
pub const INPUT_LEN: usize = 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            learning_rate: 0.08,
            batch_size: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub channels: usize,
    pub classes: usize,
    pub config: TrainConfig,
    /// One input block per channel, each HIDDEN_1 x INPUT_LEN.
    pub w1: Vec<DMatrix<f64>>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

pub(crate) fn grid_channel_vectors(grid: &FeatureGrid) -> Vec<DVector<f64>> {
    grid.channels
        .iter()
        .map(|(_, g)| DVector::from_column_slice(&g.data))
        .collect()
}

fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: DVector<f64> = logits.map(|v| (v - max).exp());
    let sum: f64 = exps.iter().sum();
    exps / sum
}

struct ForwardPass {
    h1: DVector<f64>,
    h2: DVector<f64>,
    probs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Vec<DMatrix<f64>>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

impl MlpModel {
    pub fn init(channels: usize, classes: usize, config: TrainConfig) -> Self {
        let mut rng = make_rng(config.seed);
        let mut init_matrix = |rows: usize, cols: usize| -> DMatrix<f64> {
            let scale = 1.0 / (cols as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
        };
        let w1 = (0..channels).map(|_| init_matrix(HIDDEN_1, INPUT_LEN)).collect();
        let w2 = init_matrix(HIDDEN_2, HIDDEN_1);
        let w3 = init_matrix(classes, HIDDEN_2);
        MlpModel {
            channels,
            classes,
            config,
            w1,
            b1: DVector::zeros(HIDDEN_1),
            w2,
            b2: DVector::zeros(HIDDEN_2),
            w3,
            b3: DVector::zeros(classes),
        }
    }

    fn forward(&self, inputs: &[DVector<f64>]) -> ForwardPass {
        let mut u = self.b1.clone();
        for (w, x) in self.w1.iter().zip(inputs) {
            u += w * x;
        }
        let h1 = u.map(f64::tanh);
        let h2 = (&self.w2 * &h1 + &self.b2).map(f64::tanh);
        let logits = &self.w3 * &h2 + &self.b3;
        ForwardPass {
            h1,
            h2,
            probs: softmax(&logits),
        }
    }

    /// Softmax probabilities for one grid.
    pub fn predict(&self, grid: &FeatureGrid) -> Result<Vec<f64>, CloudError> {
        let inputs = grid_channel_vectors(grid);
        if inputs.len() != self.channels {
            return Err(CloudError::ChannelMismatch {
                expected: self.channels,
                got: inputs.len(),
            });
        }
        if inputs.iter().any(|x| x.len() != INPUT_LEN) {
            return Err(CloudError::ChannelMismatch {
                expected: INPUT_LEN,
                got: inputs.iter().map(|x| x.len()).max().unwrap_or(0),
            });
        }
        Ok(self.forward(&inputs).probs.iter().copied().collect())
    }

    fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w1: self
                .w1
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
            w3: DMatrix::zeros(self.w3.nrows(), self.w3.ncols()),
            b3: DVector::zeros(self.b3.len()),
        }
    }

    /// Mean cross-entropy over the batch plus analytic gradients.
    pub fn loss_and_grad(&self, batch: &[(Vec<DVector<f64>>, usize)]) -> (f64, MlpGrads) {
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for (inputs, label) in batch {
            let pass = self.forward(inputs);
            loss -= (pass.probs[*label].max(1e-300)).ln() * scale;

            let mut dlogits = pass.probs.clone();
            dlogits[*label] -= 1.0;
            dlogits *= scale;

            grads.w3.gemm(1.0, &dlogits, &pass.h2.transpose(), 1.0);
            grads.b3 += &dlogits;

            let dh2 = self.w3.transpose() * &dlogits;
            let dv = dh2.zip_map(&pass.h2, |g, h| g * (1.0 - h * h));
            grads.w2.gemm(1.0, &dv, &pass.h1.transpose(), 1.0);
            grads.b2 += &dv;

            let dh1 = self.w2.transpose() * &dv;
            let du = dh1.zip_map(&pass.h1, |g, h| g * (1.0 - h * h));
            for (gw, x) in grads.w1.iter_mut().zip(inputs) {
                gw.gemm(1.0, &du, &x.transpose(), 1.0);
            }
            grads.b1 += &du;
        }
        (loss, grads)
    }

    fn apply(&mut self, grads: &MlpGrads, lr: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grads.w1) {
            *w -= g * lr;
        }
        self.b1 -= &grads.b1 * lr;
        self.w2 -= &grads.w2 * lr;
        self.b2 -= &grads.b2 * lr;
        self.w3 -= &grads.w3 * lr;
        self.b3 -= &grads.b3 * lr;
    }

    /// Trains in place; returns the mean epoch losses in order.
    pub fn fit(&mut self, samples: &[(Vec<DVector<f64>>, usize)]) -> Vec<f64> {
        let config = self.config;
        let mut rng = make_rng(config.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            // Fisher-Yates with the pinned stream.
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size.max(1)) {
                let batch: Vec<(Vec<DVector<f64>>, usize)> = chunk
                    .iter()
                    .map(|&i| (samples[i].0.clone(), samples[i].1))
                    .collect();
                let (loss, grads) = self.loss_and_grad(&batch);
                self.apply(&grads, config.learning_rate);
                epoch_loss += loss;
                batches += 1;
            }
            epoch_losses.push(epoch_loss / batches.max(1) as f64);
        }
        epoch_losses
    }

    // Flat parameter views for finite-difference checking and
    // serialization. Order: w1 blocks (row-major, channel order), b1, w2,
    // b2, w3, b3.

    pub fn param_count(&self) -> usize {
        self.w1.iter().map(|w| w.len()).sum::<usize>()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.w3.len()
            + self.b3.len()
    }

    fn locate(&self, index: usize) -> (usize, usize) {
        // Returns (section, offset); sections: 0..channels = w1 blocks,
        // then b1, w2, b2, w3, b3.
        let mut idx = index;
        for (c, w) in self.w1.iter().enumerate() {
            if idx < w.len() {
                return (c, idx);
            }
            idx -= w.len();
        }
        let sections = [
            self.b1.len(),
            self.w2.len(),
            self.b2.len(),
            self.w3.len(),
            self.b3.len(),
        ];
        for (s, len) in sections.iter().enumerate() {
            if idx < *len {
                return (self.channels + s, idx);
            }
            idx -= len;
        }
        panic!("parameter index {index} out of range");
    }

    fn matrix_flat(m: &DMatrix<f64>, offset: usize) -> (usize, usize) {
        // Row-major offset -> (row, col).
        (offset / m.ncols(), offset % m.ncols())
    }

    pub fn get_param(&self, index: usize) -> f64 {
        let (section, offset) = self.locate(index);
        if section < self.channels {
            let (r, c) = Self::matrix_flat(&self.w1[section], offset);
            return self.w1[section][(r, c)];
        }
        match section - self.channels {
            0 => self.b1[offset],
            1 => {
                let (r, c) = Self::matrix_flat(&self.w2, offset);
                self.w2[(r, c)]
            }
            2 => self.b2[offset],
            3 => {
                let (r, c) = Self::matrix_flat(&self.w3, offset);
                self.w3[(r, c)]
            }
            _ => self.b3[offset],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (section, offset) = self.locate(index);
        if section < self.channels {
            let (r, c) = Self::matrix_flat(&self.w1[section], offset);
            self.w1[section][(r, c)] = value;
            return;
        }
        match section - self.channels {
            0 => self.b1[offset] = value,
            1 => {
                let (r, c) = Self::matrix_flat(&self.w2, offset);
                self.w2[(r, c)] = value;
            }
            2 => self.b2[offset] = value,
            3 => {
                let (r, c) = Self::matrix_flat(&self.w3, offset);
                self.w3[(r, c)] = value;
            }
            _ => self.b3[offset] = value,
        }
    }

    pub fn grad_param(&self, grads: &MlpGrads, index: usize) -> f64 {
        let (section, offset) = self.locate(index);
        if section < self.channels {
            let (r, c) = Self::matrix_flat(&grads.w1[section], offset);
            return grads.w1[section][(r, c)];
        }
        match section - self.channels {
            0 => grads.b1[offset],
            1 => {
                let (r, c) = Self::matrix_flat(&grads.w2, offset);
                grads.w2[(r, c)]
            }
            2 => grads.b2[offset],
            3 => {
                let (r, c) = Self::matrix_flat(&grads.w3, offset);
                grads.w3[(r, c)]
            }
            _ => grads.b3[offset],
        }
    }

    /// Parameters in serialization order (see `param_count`).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in &self.w1 {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
        }
        out.extend(self.b1.iter());
        for m in [&self.w2] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.push(m[(r, c)]);
                }
            }
        }
        out.extend(self.b2.iter());
        for m in [&self.w3] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.push(m[(r, c)]);
                }
            }
        }
        out.extend(self.b3.iter());
        out
    }

    pub fn from_flat_params(
        channels: usize,
        classes: usize,
        config: TrainConfig,
        params: &[f64],
    ) -> Result<Self, CloudError> {
        let mut model = MlpModel::init(channels, classes, config);
        if params.len() != model.param_count() {
            return Err(CloudError::ModelFormat(format!(
                "expected {} parameters, got {}",
                model.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for c in 0..channels {
            let mut w = DMatrix::zeros(HIDDEN_1, INPUT_LEN);
            for r in 0..HIDDEN_1 {
                for col in 0..INPUT_LEN {
                    w[(r, col)] = it.next().unwrap();
                }
            }
            model.w1[c] = w;
        }
        for i in 0..HIDDEN_1 {
            model.b1[i] = it.next().unwrap();
        }
        for r in 0..HIDDEN_2 {
            for c in 0..HIDDEN_1 {
                model.w2[(r, c)] = it.next().unwrap();
            }
        }
        for i in 0..HIDDEN_2 {
            model.b2[i] = it.next().unwrap();
        }
        for r in 0..classes {
            for c in 0..HIDDEN_2 {
                model.w3[(r, c)] = it.next().unwrap();
            }
        }
        for i in 0..classes {
            model.b3[i] = it.next().unwrap();
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(channels: usize, classes: usize, n: usize) -> Vec<(Vec<DVector<f64>>, usize)> {
        let mut rng = make_rng(3);
        (0..n)
            .map(|i| {
                let inputs = (0..channels)
                    .map(|_| DVector::from_fn(INPUT_LEN, |_, _| rng.random_range(0.0..1.0)))
                    .collect();
                (inputs, i % classes)
            })
            .collect()
    }

    #[test]
    fn softmax_is_probability_vector() {
        let model = MlpModel::init(2, 5, TrainConfig::default());
        let batch = toy_batch(2, 5, 3);
        for (inputs, _) in &batch {
            let pass = model.forward(inputs);
            let sum: f64 = pass.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(pass.probs.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        // Vector-norm relative error over sampled coordinates, 10 trials.
        let mut coord_rng = make_rng(1234);
        for trial in 0..10 {
            let config = TrainConfig {
                seed: 100 + trial,
                ..TrainConfig::default()
            };
            let mut model = MlpModel::init(1, 3, config);
            let batch = toy_batch(1, 3, 3);
            let (_, grads) = model.loss_and_grad(&batch);
            let total = model.param_count();
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for _ in 0..40 {
                let idx = coord_rng.random_range(0..total);
                let theta = model.get_param(idx);
                let h = 1e-5 * theta.abs().max(1.0);
                model.set_param(idx, theta + h);
                let (lp, _) = model.loss_and_grad(&batch);
                model.set_param(idx, theta - h);
                let (lm, _) = model.loss_and_grad(&batch);
                model.set_param(idx, theta);
                analytic.push(model.grad_param(&grads, idx));
                numeric.push((lp - lm) / (2.0 * h));
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = numeric
                .iter()
                .map(|n| n * n)
                .sum::<f64>()
                .sqrt()
                .max(analytic.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(
                diff <= 1e-4 * norm.max(1e-12),
                "trial {trial}: relative gradient error {}",
                diff / norm
            );
        }
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let batch = toy_batch(1, 3, 12);
        let mut a = MlpModel::init(1, 3, TrainConfig { epochs: 5, ..TrainConfig::default() });
        let mut b = MlpModel::init(1, 3, TrainConfig { epochs: 5, ..TrainConfig::default() });
        a.fit(&batch);
        b.fit(&batch);
        assert_eq!(a, b);
    }

    #[test]
    fn flat_param_roundtrip() {
        let model = MlpModel::init(2, 4, TrainConfig::default());
        let flat = model.flat_params();
        assert_eq!(flat.len(), model.param_count());
        let back = MlpModel::from_flat_params(2, 4, model.config, &flat).unwrap();
        assert_eq!(back, model);
        // Flat order agrees with indexed access.
        for idx in [0usize, 7, flat.len() - 1, flat.len() / 2] {
            assert_eq!(model.get_param(idx), flat[idx]);
        }
    }
}
