//! Toy classifiers with hand-derived gradients: softmax regression and a
//! one-hidden-layer tanh network.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyModelSpec {
    Linear,
    Mlp { hidden_units: usize },
}

impl ToyModelSpec {
    pub fn num_params(&self, dim: usize, num_classes: usize) -> usize {
        match *self {
            ToyModelSpec::Linear => num_classes * dim + num_classes,
            ToyModelSpec::Mlp { hidden_units: h } => h * dim + h + num_classes * h + num_classes,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ToyModelSpec::Linear => "linear".to_string(),
            ToyModelSpec::Mlp { hidden_units } => format!("mlp{hidden_units}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ToyModelSpec::Mlp { hidden_units: 0 } = self {
            return Err(Error::invalid("mlp needs at least one hidden unit"));
        }
        Ok(())
    }
}

impl fmt::Display for ToyModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A model architecture bound to an input dimension and class count.
/// Parameters live in a flat vector owned by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyModel {
    pub spec: ToyModelSpec,
    pub dim: usize,
    pub num_classes: usize,
}

/// Numerically stable softmax, in place.
pub fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

impl ToyModel {
    pub fn new(spec: ToyModelSpec, dim: usize, num_classes: usize) -> Result<Self> {
        spec.validate()?;
        if dim == 0 || num_classes < 2 {
            return Err(Error::invalid("model needs dim >= 1 and at least two classes"));
        }
        Ok(ToyModel { spec, dim, num_classes })
    }

    pub fn num_params(&self) -> usize {
        self.spec.num_params(self.dim, self.num_classes)
    }

    fn hidden(&self) -> usize {
        match self.spec {
            ToyModelSpec::Linear => 0,
            ToyModelSpec::Mlp { hidden_units } => hidden_units,
        }
    }

    /// Linear models start at zero (uniform predictions). The mlp draws
    /// first-layer weights from N(0, 1/dim) and output weights from
    /// N(0, 0.01/hidden); biases start at zero.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        if let ToyModelSpec::Mlp { hidden_units: h } = self.spec {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, c) = (self.dim, self.num_classes);
            let w1 = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("finite std");
            for p in &mut params[..h * d] {
                *p = w1.sample(&mut rng);
            }
            let w2 = Normal::new(0.0, (0.01 / h as f64).sqrt()).expect("finite std");
            let off = h * d + h;
            for p in &mut params[off..off + c * h] {
                *p = w2.sample(&mut rng);
            }
        }
        params
    }

    /// Writes logits for one input into `logits` (len = num_classes);
    /// `hidden` is scratch space of len `hidden_units` (unused for linear).
    fn forward_into(&self, params: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (d, c) = (self.dim, self.num_classes);
        match self.spec {
            ToyModelSpec::Linear => {
                let (w, b) = params.split_at(c * d);
                for k in 0..c {
                    logits[k] = b[k] + dot(&w[k * d..(k + 1) * d], x);
                }
            }
            ToyModelSpec::Mlp { hidden_units: h } => {
                let (w1, rest) = params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                for j in 0..h {
                    hidden[j] = (b1[j] + dot(&w1[j * d..(j + 1) * d], x)).tanh();
                }
                for k in 0..c {
                    logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], hidden);
                }
            }
        }
    }

    /// Class probabilities for one input.
    pub fn predict_proba(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden()];
        let mut out = vec![0.0; self.num_classes];
        self.forward_into(params, x, &mut hidden, &mut out);
        softmax(&mut out);
        out
    }

    /// Class probabilities for many inputs (`features` is row-major).
    pub fn predict_many(&self, params: &[f64], features: &[f64], rows: &[usize]) -> Vec<Vec<f64>> {
        let mut hidden = vec![0.0; self.hidden()];
        rows.iter()
            .map(|&r| {
                let mut out = vec![0.0; self.num_classes];
                self.forward_into(params, &features[r * self.dim..(r + 1) * self.dim], &mut hidden, &mut out);
                softmax(&mut out);
                out
            })
            .collect()
    }

    /// Mean cross-entropy over the given rows.
    pub fn loss(&self, params: &[f64], features: &[f64], labels: &[usize], rows: &[usize]) -> f64 {
        let mut hidden = vec![0.0; self.hidden()];
        let mut logits = vec![0.0; self.num_classes];
        let mut total = 0.0;
        for &r in rows {
            self.forward_into(params, &features[r * self.dim..(r + 1) * self.dim], &mut hidden, &mut logits);
            total += log_sum_exp(&logits) - logits[labels[r]];
        }
        total / rows.len() as f64
    }

    /// Mean cross-entropy over `rows` and its gradient w.r.t. `params`.
    pub fn loss_and_grad(&self, params: &[f64], features: &[f64], labels: &[usize], rows: &[usize]) -> (f64, Vec<f64>) {
        let (d, c) = (self.dim, self.num_classes);
        let h = self.hidden();
        let mut grad = vec![0.0; params.len()];
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut dhidden = vec![0.0; h];
        let scale = 1.0 / rows.len() as f64;
        let mut total = 0.0;

        for &r in rows {
            let x = &features[r * d..(r + 1) * d];
            let y = labels[r];
            self.forward_into(params, x, &mut hidden, &mut logits);
            total += log_sum_exp(&logits) - logits[y];
            softmax(&mut logits);
            // dL/dlogit = p - onehot(y)
            logits[y] -= 1.0;
            let dlogits = &logits;

            match self.spec {
                ToyModelSpec::Linear => {
                    let (gw, gb) = grad.split_at_mut(c * d);
                    for k in 0..c {
                        let g = dlogits[k] * scale;
                        gb[k] += g;
                        for (gw, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *gw += g * xi;
                        }
                    }
                }
                ToyModelSpec::Mlp { .. } => {
                    let w2 = &params[h * d + h..h * d + h + c * h];
                    let (gw1, rest) = grad.split_at_mut(h * d);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(c * h);
                    dhidden.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..c {
                        let g = dlogits[k] * scale;
                        gb2[k] += g;
                        for j in 0..h {
                            gw2[k * h + j] += g * hidden[j];
                            dhidden[j] += g * w2[k * h + j];
                        }
                    }
                    for j in 0..h {
                        // tanh' = 1 - tanh^2
                        let dpre = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                        gb1[j] += dpre;
                        for (gw, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *gw += dpre * xi;
                        }
                    }
                }
            }
        }
        (total * scale, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
