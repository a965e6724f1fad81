//! Multi-label command classifier over hashed token n-grams. Feeds the
//! distribution module's select mode; an empty prediction tells the caller
//! to fall back to naive pooling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommandLabelSet, CommandType, Sample};
use crate::matcher::{TrainError, TrainMeta};
use crate::nn::{bce_loss, Activation, AdamState, LayerSpec, Mlp, Mode, Tensor2};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub buckets: usize,
    pub hidden: usize,
    pub threshold: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            buckets: 4096,
            hidden: 128,
            threshold: 0.5,
            epochs: 12,
            lr: 2e-3,
            batch_size: 32,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandClassifierModel {
    pub buckets: usize,
    pub head: Mlp,
    pub threshold: f64,
    pub meta: TrainMeta,
}

fn hash_feature(parts: &[&str], buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^= 0x1f;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    (h % buckets as u64) as usize
}

/// Hashed unigram + bigram counts as a sparse (index, count) list.
pub fn featurize(tokens: &[String], buckets: usize) -> Vec<(usize, f64)> {
    let mut counts = std::collections::BTreeMap::new();
    for tok in tokens {
        *counts.entry(hash_feature(&["u", tok], buckets)).or_insert(0.0) += 1.0;
    }
    for pair in tokens.windows(2) {
        *counts.entry(hash_feature(&["b", &pair[0], &pair[1]], buckets)).or_insert(0.0) += 1.0;
    }
    counts.into_iter().collect()
}

fn dense_features(samples: &[&Sample], buckets: usize) -> Tensor2 {
    let mut batch = Tensor2::zeros(samples.len(), buckets);
    for (r, sample) in samples.iter().enumerate() {
        if let Some(t) = &sample.transcript {
            for (idx, count) in featurize(t, buckets) {
                batch.set(r, idx, count);
            }
        }
    }
    batch
}

fn targets_for(samples: &[&Sample]) -> Tensor2 {
    let mut t = Tensor2::zeros(samples.len(), CommandType::ALL.len());
    for (r, sample) in samples.iter().enumerate() {
        for cmd in &sample.commands {
            t.set(r, cmd.index(), 1.0);
        }
    }
    t
}

impl CommandClassifierModel {
    pub fn init(config: &ClassifierConfig) -> Self {
        let head = Mlp::init(
            &[
                LayerSpec {
                    in_dim: config.buckets,
                    out_dim: config.hidden,
                    batch_norm: false,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    in_dim: config.hidden,
                    out_dim: config.hidden,
                    batch_norm: false,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    in_dim: config.hidden,
                    out_dim: CommandType::ALL.len(),
                    batch_norm: false,
                    activation: Activation::Sigmoid,
                },
            ],
            derive_seed(config.seed, 0xC1A55),
        );
        CommandClassifierModel {
            buckets: config.buckets,
            head,
            threshold: config.threshold,
            meta: TrainMeta { seed: config.seed, ..TrainMeta::default() },
        }
    }

    fn probs(&self, tokens: &[String]) -> [f64; 6] {
        let mut batch = Tensor2::zeros(1, self.buckets);
        for (idx, count) in featurize(tokens, self.buckets) {
            batch.set(0, idx, count);
        }
        let (out, _) = self.head.forward(&batch, Mode::Eval).expect("classifier forward");
        let mut probs = [0.0; 6];
        probs.copy_from_slice(out.row(0));
        probs
    }
}

fn usable (sample: &&Sample) -> bool {
    sample.transcript.as_ref().is_some_and(|t| !t.is_empty())
}

fn split_loss(model: &CommandClassifierModel, samples: &[&Sample]) -> f64 {
    let features = dense_features(samples, model.buckets);
    let targets = targets_for(samples);
    let (probs, _) = model.head.forward(&features, Mode::Eval).expect("forward");
    bce_loss(&probs, &targets).expect("loss").0
}

/// Supervised multi-label training on the keyword-derived labels; returns
/// the best-validation-epoch snapshot.
pub fn train_classifier(
    train: &[Sample],
    val: &[Sample],
    config: &ClassifierConfig,
) -> Result<CommandClassifierModel, TrainError> {
    let train: Vec<&Sample> = train.iter().filter(usable).collect();
    let val: Vec<&Sample> = val.iter().filter(usable).collect();
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut model = CommandClassifierModel::init(config);
    let mut params = model.head.params_flat();
    let mut adam = AdamState::new(params.len(), config.lr);

    let mut best = model.clone();
    let mut best_val = split_loss(&model, &val);
    let mut best_epoch = 0;

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xC000 + epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let features = dense_features(&batch, model.buckets);
            let targets = targets_for(&batch);
            let (probs, cache) = model.head.forward(&features, Mode::Train)?;
            let (loss, dprobs) = bce_loss(&probs, &targets)?;
            let (grads, _) = model.head.backward(&cache, &dprobs)?;
            adam.step(&mut params, &grads.flat());
            model.head.set_params_flat(&params);
            epoch_loss += loss * batch.len() as f64;
        }
        epoch_loss /= train.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        let val_loss = split_loss(&model, &val);
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
        }
    }
    best.meta = TrainMeta {
        epochs_run: config.epochs,
        best_epoch,
        best_val_loss: best_val,
        seed: config.seed,
        train_condition: None,
    };
    Ok(best)
}

/// Threshold the per-type probabilities. Empty transcripts predict the empty
/// set by contract (the caller then uses naive distribution pooling).
pub fn predict_commands(
    model: &CommandClassifierModel,
    tokens: &[String],
) -> (CommandLabelSet, [f64; 6]) {
    let probs = model.probs(tokens);
    if tokens.is_empty() {
        return (CommandLabelSet::new(), probs);
    }
    let labels = CommandType::ALL
        .into_iter()
        .filter(|c| probs[c.index()] >= model.threshold)
        .collect();
    (labels, probs)
}

/// The command with the highest probability, regardless of threshold.
pub fn top_command(model: &CommandClassifierModel, tokens: &[String]) -> CommandType {
    let probs = model.probs(tokens);
    let mut best = CommandType::ALL[0];
    for cmd in CommandType::ALL {
        if probs[cmd.index()] > probs[best.index()] {
            best = cmd;
        }
    }
    best
}

/// Macro-averaged F1 over the six command types.
pub fn macro_f1(model: &CommandClassifierModel, samples: &[Sample]) -> f64 {
    let mut f1_sum = 0.0;
    for cmd in CommandType::ALL {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for sample in samples {
            let tokens = sample.transcript.clone().unwrap_or_default();
            let (predicted, _) = predict_commands(model, &tokens);
            let actual = sample.commands.contains(&cmd);
            let said = predicted.contains(&cmd);
            match (actual, said) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        f1_sum += if denom == 0.0 { 1.0 } else { 2.0 * tp / denom };
    }
    f1_sum / CommandType::ALL.len() as f64
}
