//! Losses and similarity scores with their analytic derivatives.

use serde::{Deserialize, Serialize};

use super::mlp::NnError;
use super::tensor::Tensor2;

const PROB_CLAMP: f64 = 1e-7;

/// Cosine similarity of two nonzero vectors, in [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NnError> {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(NnError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Derivatives of cosine similarity with respect to both inputs.
pub fn cosine_similarity_backward(u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    let du = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| b / (nu * nv) - dot * a / (nu.powi(3) * nv))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| a / (nu * nv) - dot * b / (nv.powi(3) * nu))
        .collect();
    (du, dv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    Matching,
    NonMatching,
}

/// Pairwise contrastive objective over a similarity score: matching pairs are
/// pulled to similarity 1, non-matching pairs pushed below the margin.
/// Returns `(loss, dloss/dsim)`.
pub fn contrastive_pair_loss(sim: f64, label: PairLabel, margin: f64) -> (f64, f64) {
    match label {
        PairLabel::Matching => (1.0 - sim, -1.0),
        PairLabel::NonMatching => {
            if sim > margin {
                (sim - margin, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Mean binary cross-entropy with probability clamping.
/// Returns the loss and `dloss/dprobs` (zero where the clamp is active).
pub fn bce_loss(probs: &Tensor2, targets: &Tensor2) -> Result<(f64, Tensor2), NnError> {
    if probs.rows() != targets.rows() || probs.cols() != targets.cols() {
        return Err(NnError::Shape(format!(
            "probs {}x{} vs targets {}x{}",
            probs.rows(),
            probs.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    let n = (probs.rows() * probs.cols()) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(probs.rows(), probs.cols());
    for i in 0..probs.values().len() {
        let raw = probs.values()[i];
        let t = targets.values()[i];
        let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        let clamped = raw < PROB_CLAMP || raw > 1.0 - PROB_CLAMP;
        grad.values_mut()[i] = if clamped { 0.0 } else { (-t / p + (1.0 - t) / (1.0 - p)) / n };
    }
    Ok((loss / n, grad))
}

/// Per-row weighted mean BCE: `sum_i w_i * bce_i / sum_i w_i` where `bce_i`
/// is the mean over row i's elements.
pub fn bce_loss_weighted(
    probs: &Tensor2,
    targets: &Tensor2,
    row_weights: &[f64],
) -> Result<(f64, Tensor2), NnError> {
    if probs.rows() != targets.rows() || probs.cols() != targets.cols() {
        return Err(NnError::Shape("probs vs targets".into()));
    }
    if row_weights.len() != probs.rows() {
        return Err(NnError::Shape("row weights".into()));
    }
    let wsum: f64 = row_weights.iter().sum();
    let cols = probs.cols() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let w = row_weights[r];
        for c in 0..probs.cols() {
            let raw = probs.get(r, c);
            let t = targets.get(r, c);
            let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= w * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            let clamped = raw < PROB_CLAMP || raw > 1.0 - PROB_CLAMP;
            let g = if clamped { 0.0 } else { w * (-t / p + (1.0 - t) / (1.0 - p)) / (wsum * cols) };
            grad.set(r, c, g);
        }
    }
    Ok((loss / (wsum * cols), grad))
}
