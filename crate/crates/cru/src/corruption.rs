//! The three edge-case conditions: calibrated ASR-style word noise, front
//! clipping, and missing transcripts.
//!
//! The noise model applies per-word edits i.i.d.; the per-word edit rate is
//! calibrated by binary search so the corpus-level mean word error rate lands
//! on the requested target.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::grammar::{levenshtein, word_error_rate};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("target WER {0} outside [0, 0.9]")]
    BadTarget(f64),
    #[error("op mix must be non-negative and sum to 1")]
    BadOpMix,
    #[error("confusion pool is empty")]
    EmptyPool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub target_wer: f64,
    /// (substitution, deletion, insertion) probabilities, summing to 1.
    pub op_mix: [f64; 3],
    pub confusion_pool: Vec<String>,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(target_wer: f64, confusion_pool: Vec<String>, seed: u64) -> Self {
        NoiseConfig { target_wer, op_mix: [0.6, 0.2, 0.2], confusion_pool, seed }
    }

    fn validate(&self) -> Result<(), CorruptionError> {
        if !(0.0..=0.9).contains(&self.target_wer) {
            return Err(CorruptionError::BadTarget(self.target_wer));
        }
        let sum: f64 = self.op_mix.iter().sum();
        if self.op_mix.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorruptionError::BadOpMix);
        }
        if self.confusion_pool.is_empty() && self.target_wer > 0.0 {
            return Err(CorruptionError::EmptyPool);
        }
        Ok(())
    }
}

/// Collect the vocabulary of a corpus as a substitution/insertion pool.
pub fn vocabulary_pool(samples: &[Sample]) -> Vec<String> {
    let mut pool: Vec<String> = samples
        .iter()
        .filter_map(|s| s.transcript.as_ref())
        .flatten()
        .cloned()
        .collect();
    pool.sort_unstable();
    pool.dedup();
    pool
}

/// Noise source with a calibrated per-word edit rate.
#[derive(Debug, Clone)]
pub struct CalibratedNoise {
    config: NoiseConfig,
    rate: f64,
    /// Per pool word: indices of confusable pool words (same first letter or
    /// character edit distance <= 2).
    confusables: Vec<Vec<usize>>,
}

const CALIBRATION_BATCH: usize = 200;
const RATE_TOLERANCE: f64 = 0.005;

/// Binary-search the per-word edit rate until the mean WER over a
/// calibration batch matches the target.
pub fn calibrate_noise(
    transcripts: &[&[String]],
    config: &NoiseConfig,
) -> Result<CalibratedNoise, CorruptionError> {
    config.validate()?;
    let confusables = build_confusables(&config.confusion_pool);
    let mut noise = CalibratedNoise { config: config.clone(), rate: 0.0, confusables };
    if noise.config.target_wer == 0.0 || transcripts.is_empty() {
        return Ok(noise);
    }
    let batch: Vec<&[String]> = transcripts.iter().take(CALIBRATION_BATCH).copied().collect();
    let measure = |noise: &CalibratedNoise| -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, t) in batch.iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            let corrupted = noise.corrupt(t, derive_seed(noise.config.seed, 0xCA11 + i as u64));
            total += word_error_rate(t, &corrupted).expect("nonempty reference");
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    };
    let (mut lo, mut hi) = (0.0f64, 0.98f64);
    while hi - lo > RATE_TOLERANCE {
        let mid = (lo + hi) / 2.0;
        noise.rate = mid;
        if measure(&noise) < noise.config.target_wer {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    noise.rate = (lo + hi) / 2.0;
    Ok(noise)
}

fn build_confusables(pool: &[String]) -> Vec<Vec<usize>> {
    pool.iter()
        .map(|word| {
            pool.iter()
                .enumerate()
                .filter(|(_, other)| {
                    *other != word
                        && (other.as_bytes().first() == word.as_bytes().first()
                            || char_edit_distance(word, other) <= 2)
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

fn char_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

impl CalibratedNoise {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn target(&self) -> f64 {
        self.config.target_wer
    }

    /// Apply per-word edits. Deterministic in (transcript, seed).
    pub fn corrupt(&self, transcript: &[String], seed: u64) -> Vec<String> {
        if self.rate == 0.0 {
            return transcript.to_vec();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = &self.config.confusion_pool;
        let mut out = Vec::with_capacity(transcript.len() + 2);
        for word in transcript {
            if rng.random_range(0.0..1.0) >= self.rate {
                out.push(word.clone());
                continue;
            }
            let op = rng.random_range(0.0..1.0);
            let [p_sub, p_del, _] = self.config.op_mix;
            if op < p_sub {
                out.push(self.substitute(word, &mut rng));
            } else if op < p_sub + p_del {
                // deletion
            } else {
                out.push(word.clone());
                out.push(pool[rng.random_range(0..pool.len())].clone());
            }
        }
        out
    }

    fn substitute(&self, word: &str, rng: &mut ChaCha8Rng) -> String {
        let pool = &self.config.confusion_pool;
        if rng.random_bool(0.5) {
            if let Some(pos) = pool.iter().position(|w| w == word) {
                let candidates = &self.confusables[pos];
                if !candidates.is_empty() {
                    return pool[candidates[rng.random_range(0..candidates.len())]].clone();
                }
            }
        }
        // uniform draw, avoiding an identity substitution when possible
        for _ in 0..8 {
            let pick = &pool[rng.random_range(0..pool.len())];
            if pick != word {
                return pick.clone();
            }
        }
        pool[rng.random_range(0..pool.len())].clone()
    }
}

/// Corrupt every present transcript in place and record the target in the
/// provenance. The scene, labels, and gold call-sign are untouched.
pub fn inject_asr_noise(
    samples: &mut [Sample],
    config: &NoiseConfig,
) -> Result<CalibratedNoise, CorruptionError> {
    let transcripts: Vec<&[String]> = samples
        .iter()
        .filter_map(|s| s.transcript.as_deref())
        .filter(|t| !t.is_empty())
        .collect();
    let noise = calibrate_noise(&transcripts, config)?;
    for (i, sample) in samples.iter_mut().enumerate() {
        if let Some(t) = &sample.transcript {
            if !t.is_empty() {
                sample.transcript = Some(noise.corrupt(t, derive_seed(config.seed, i as u64)));
            }
            sample.provenance.target_wer = Some(config.target_wer);
        }
    }
    Ok(noise)
}

/// Remove the first `n` words (or everything, if shorter).
pub fn clip_words(transcript: &[String], n: usize) -> Vec<String> {
    transcript[n.min(transcript.len())..].to_vec()
}

/// Clip every present transcript and record the count.
pub fn clip_samples(samples: &mut [Sample], n: usize) {
    for sample in samples.iter_mut() {
        if let Some(t) = &sample.transcript {
            sample.transcript = Some(clip_words(t, n));
            sample.provenance.clipped_words = Some(n + sample.provenance.clipped_words.unwrap_or(0));
        }
    }
}

/// The missing-transcript condition: everything else stays.
pub fn drop_transcript(sample: &Sample) -> Sample {
    let mut out = sample.clone();
    out.transcript = None;
    out
}
