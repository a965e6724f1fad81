//! Fully connected network with optional per-layer batch normalization and
//! analytic backward pass.
//!
//! Layers compute `activation(batchnorm(x W + b))`. Train mode normalizes
//! with batch statistics, eval mode with running statistics, so eval outputs
//! do not depend on batch composition.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::Tensor2;
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("cache does not match this network (layer {0})")]
    StaleCache(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("training diverged: loss is not finite at epoch {0}")]
    Diverged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Learnable scale/shift plus running statistics for one normalized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// in_dim x out_dim.
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub batch_norm: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

struct BnCache {
    mean: Vec<f64>,
    var: Vec<f64>,
    x_hat: Tensor2,
}

struct LayerCache {
    input: Tensor2,
    bn: Option<BnCache>,
    /// Input of the activation (post-norm when normalized).
    pre_act: Tensor2,
    output: Tensor2,
}

pub struct ForwardCache {
    layers: Vec<LayerCache>,
    mode: Mode,
}

/// Per-layer parameter gradients, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dweight: Tensor2,
    pub dbias: Vec<f64>,
    pub dgamma: Option<Vec<f64>>,
    pub dbeta: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

fn xavier_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor2::from_vec(rows, cols, values).expect("init shape")
}

impl Mlp {
    /// Build and initialize a network; per-layer seeds derive from `seed`.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Self {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                DenseLayer {
                    weight: xavier_init(spec.in_dim, spec.out_dim, &mut rng),
                    bias: vec![0.0; spec.out_dim],
                    batch_norm: spec.batch_norm.then(|| BatchNorm::new(spec.out_dim)),
                    activation: spec.activation,
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Forward pass. Pure: running statistics are not touched; train mode
    /// records batch statistics in the cache for [`Mlp::update_running_stats`].
    pub fn forward(&self, batch: &Tensor2, mode: Mode) -> Result<(Tensor2, ForwardCache), NnError> {
        if batch.cols() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "input has {} features, network expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weight);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let (bn_cache, pre_act) = match &layer.batch_norm {
                Some(bn) => {
                    let (normed, cache) = bn_forward(bn, &z, mode);
                    (Some(cache), normed)
                }
                None => (None, z.clone()),
            };
            let output = apply_activation(&pre_act, layer.activation);
            caches.push(LayerCache { input: x, bn: bn_cache, pre_act, output: output.clone() });
            x = output;
        }
        Ok((x, ForwardCache { layers: caches, mode }))
    }

    /// Fold the batch statistics recorded by a train-mode forward into the
    /// running statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            let (Some(bn), Some(bc)) = (&mut layer.batch_norm, &lc.bn) else {
                continue;
            };
            let batch = lc.pre_act.rows() as f64;
            let unbias = if batch > 1.0 { batch / (batch - 1.0) } else { 1.0 };
            let m = bn.momentum;
            for j in 0..bn.running_mean.len() {
                bn.running_mean[j] = (1.0 - m) * bn.running_mean[j] + m * bc.mean[j];
                bn.running_var[j] = (1.0 - m) * bn.running_var[j] + m * bc.var[j] * unbias;
            }
        }
    }

    /// Backward pass from `upstream = dL/doutput`. Returns parameter
    /// gradients and the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Tensor2,
    ) -> Result<(MlpGrads, Tensor2), NnError> {
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache(cache.layers.len()));
        }
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (idx, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            if delta.rows() != lc.output.rows() || delta.cols() != lc.output.cols() {
                return Err(NnError::StaleCache(idx));
            }
            // activation
            let mut d_pre = delta.clone();
            match layer.activation {
                Activation::Relu => {
                    for (d, &p) in d_pre.values_mut().iter_mut().zip(lc.pre_act.values()) {
                        if p <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Sigmoid => {
                    for (d, &s) in d_pre.values_mut().iter_mut().zip(lc.output.values()) {
                        *d *= s * (1.0 - s);
                    }
                }
                Activation::None => {}
            }
            // batch norm
            let (dz, dgamma, dbeta) = match (&layer.batch_norm, &lc.bn) {
                (Some(bn), Some(bc)) => {
                    let (dz, dg, db) = bn_backward(bn, bc, &d_pre, cache.mode);
                    (dz, Some(dg), Some(db))
                }
                (None, None) => (d_pre, None, None),
                _ => return Err(NnError::StaleCache(idx)),
            };
            // linear
            let dweight = lc.input.matmul_tn(&dz);
            let dbias = dz.column_sums();
            delta = dz.matmul_nt(&layer.weight);
            grads.push(LayerGrads { dweight, dbias, dgamma, dbeta });
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let mut n = l.weight.values().len() + l.bias.len();
                if let Some(bn) = &l.batch_norm {
                    n += bn.gamma.len() + bn.beta.len();
                }
                n
            })
            .sum()
    }

    /// Trainable parameters (weights, biases, gamma, beta) as one flat vector.
    /// Running statistics are excluded.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.values());
            out.extend_from_slice(&l.bias);
            if let Some(bn) = &l.batch_norm {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &flat[pos..pos + n];
            pos += n;
            s
        };
        for l in &mut self.layers {
            let n = l.weight.values().len();
            l.weight.values_mut().copy_from_slice(take(n));
            let n = l.bias.len();
            l.bias.copy_from_slice(take(n));
            if let Some(bn) = &mut l.batch_norm {
                let n = bn.gamma.len();
                bn.gamma.copy_from_slice(take(n));
                let n = bn.beta.len();
                bn.beta.copy_from_slice(take(n));
            }
        }
        assert_eq!(pos, flat.len(), "flat parameter vector length mismatch");
    }
}

impl MlpGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.dweight.values());
            out.extend_from_slice(&g.dbias);
            if let Some(dg) = &g.dgamma {
                out.extend_from_slice(dg);
            }
            if let Some(db) = &g.dbeta {
                out.extend_from_slice(db);
            }
        }
        out
    }
}

fn apply_activation(x: &Tensor2, act: Activation) -> Tensor2 {
    let mut out = x.clone();
    match act {
        Activation::Relu => {
            for v in out.values_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for v in out.values_mut() {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
        Activation::None => {}
    }
    out
}

fn bn_forward(bn: &BatchNorm, z: &Tensor2, mode: Mode) -> (Tensor2, BnCache) {
    let (rows, cols) = (z.rows(), z.cols());
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; cols];
            for r in 0..rows {
                for (m, &v) in mean.iter_mut().zip(z.row(r)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= rows as f64;
            }
            let mut var = vec![0.0; cols];
            for r in 0..rows {
                for j in 0..cols {
                    let d = z.get(r, j) - mean[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v /= rows as f64;
            }
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let mut x_hat = Tensor2::zeros(rows, cols);
    let mut out = Tensor2::zeros(rows, cols);
    for r in 0..rows {
        for j in 0..cols {
            let xh = (z.get(r, j) - mean[j]) / (var[j] + bn.eps).sqrt();
            x_hat.set(r, j, xh);
            out.set(r, j, bn.gamma[j] * xh + bn.beta[j]);
        }
    }
    (out, BnCache { mean, var, x_hat })
}

fn bn_backward(
    bn: &BatchNorm,
    bc: &BnCache,
    upstream: &Tensor2,
    mode: Mode,
) -> (Tensor2, Vec<f64>, Vec<f64>) {
    let (rows, cols) = (upstream.rows(), upstream.cols());
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for r in 0..rows {
        for j in 0..cols {
            dgamma[j] += upstream.get(r, j) * bc.x_hat.get(r, j);
            dbeta[j] += upstream.get(r, j);
        }
    }
    let mut dz = Tensor2::zeros(rows, cols);
    match mode {
        Mode::Train => {
            // dx_hat = upstream * gamma; fold the mean/variance paths
            let mut sum_dxh = vec![0.0; cols];
            let mut sum_dxh_xh = vec![0.0; cols];
            for r in 0..rows {
                for j in 0..cols {
                    let dxh = upstream.get(r, j) * bn.gamma[j];
                    sum_dxh[j] += dxh;
                    sum_dxh_xh[j] += dxh * bc.x_hat.get(r, j);
                }
            }
            let n = rows as f64;
            for r in 0..rows {
                for j in 0..cols {
                    let inv_std = 1.0 / (bc.var[j] + bn.eps).sqrt();
                    let dxh = upstream.get(r, j) * bn.gamma[j];
                    let v = inv_std / n
                        * (n * dxh - sum_dxh[j] - bc.x_hat.get(r, j) * sum_dxh_xh[j]);
                    dz.set(r, j, v);
                }
            }
        }
        Mode::Eval => {
            for r in 0..rows {
                for j in 0..cols {
                    let inv_std = 1.0 / (bc.var[j] + bn.eps).sqrt();
                    dz.set(r, j, upstream.get(r, j) * bn.gamma[j] * inv_std);
                }
            }
        }
    }
    (dz, dgamma, dbeta)
}
