//! Contrastive call-sign matcher: one shared text encoder embeds transcripts
//! and candidate call-sign expansions into the same space; candidates are
//! ranked sequentially by cosine similarity, so any candidate count works
//! without reconfiguration.
//!
//! The encoder hashes character trigrams (word boundaries marked with `#`,
//! so cross-word trigrams carry local order) into an embedding bag with a
//! two-layer projection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sample, SurveillanceScene};
use crate::grammar::{expand_icao, DesignatorTable};
use crate::nn::{
    contrastive_pair_loss, cosine_similarity, cosine_similarity_backward, Activation, AdamState,
    EmbeddingEncoder, LayerSpec, Mlp, NnError, PairLabel,
};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("cannot rank candidates in an empty scene")]
    EmptyScene,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("call-sign expansion failed: {0}")]
    Grammar(#[from] crate::grammar::GrammarError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {0}: loss is not finite")]
    Diverged(usize),
    #[error("empty training split")]
    EmptySplit,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub proj_hidden: usize,
    pub out_dim: usize,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            vocab_size: 8192,
            embed_dim: 64,
            proj_hidden: 64,
            out_dim: 64,
            margin: 0.5,
            negatives_per_positive: 3,
            epochs: 8,
            lr: 2e-3,
            batch_size: 32,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    pub train_condition: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatcherModel {
    pub encoder: EmbeddingEncoder,
    pub margin: f64,
    pub meta: TrainMeta,
}

/// Per-candidate scores, filled stage by stage: `sim` by the matcher, `dis`
/// by the distribution maps, `fused` by the identifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub callsign: String,
    pub scene_index: usize,
    pub sim: f64,
    pub dis: Option<f64>,
    pub fused: Option<f64>,
}

/// Hash character trigrams of `#`-joined tokens into `1..vocab_size`
/// (row 0 is reserved for the empty input).
pub fn trigram_indices(tokens: &[String], vocab_size: usize) -> Vec<usize> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut text = String::with_capacity(tokens.iter().map(|t| t.len() + 1).sum::<usize>() + 1);
    text.push('#');
    for tok in tokens {
        text.push_str(tok);
        text.push('#');
    }
    let chars: Vec<u8> = text.into_bytes();
    chars
        .windows(3)
        .map(|w| {
            // FNV-1a
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for &b in w {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            1 + (h % (vocab_size as u64 - 1)) as usize
        })
        .collect()
}

impl MatcherModel {
    pub fn init(config: &MatcherConfig) -> Self {
        let projection = Mlp::init(
            &[
                LayerSpec {
                    in_dim: config.embed_dim,
                    out_dim: config.proj_hidden,
                    batch_norm: false,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    in_dim: config.proj_hidden,
                    out_dim: config.out_dim,
                    batch_norm: false,
                    activation: Activation::None,
                },
            ],
            derive_seed(config.seed, 0x9A07),
        );
        let encoder = EmbeddingEncoder::init(
            config.vocab_size,
            config.embed_dim,
            projection,
            derive_seed(config.seed, 0x9A08),
        );
        MatcherModel {
            encoder,
            margin: config.margin,
            meta: TrainMeta { seed: config.seed, ..TrainMeta::default() },
        }
    }

    fn raw_embed(&self, tokens: &[String]) -> (Vec<f64>, crate::nn::EncoderCache) {
        let indices = trigram_indices(tokens, self.encoder.vocab_size);
        self.encoder.forward(&indices).expect("encoder forward")
    }
}

/// Embed a token sequence; the result has unit L2 norm.
pub fn encode(model: &MatcherModel, tokens: &[String]) -> Vec<f64> {
    let (mut out, _) = model.raw_embed(tokens);
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for v in &mut out {
        *v /= norm;
    }
    out
}

/// One contrastive training pair.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub transcript: Vec<String>,
    pub candidate: Vec<String>,
    pub label: PairLabel,
}

/// One matching pair (the gold call-sign) plus up to `k` non-matching pairs
/// drawn without replacement from the rest of the scene. Missing-transcript
/// samples produce no pairs.
pub fn make_pairs(
    sample: &Sample,
    table: &DesignatorTable,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TrainPair> {
    let Some(transcript) = &sample.transcript else {
        return Vec::new();
    };
    let expansion = |icao: &str| expand_icao(icao, table).expect("scene call-signs are valid");
    let mut pairs = vec![TrainPair {
        transcript: transcript.clone(),
        candidate: expansion(&sample.gold_icao),
        label: PairLabel::Matching,
    }];
    let mut others: Vec<usize> = (0..sample.scene.len())
        .filter(|&i| i != sample.scene.gold_index)
        .collect();
    others.shuffle(rng);
    for &i in others.iter().take(k) {
        pairs.push(TrainPair {
            transcript: transcript.clone(),
            candidate: expansion(&sample.scene.planes[i].callsign),
            label: PairLabel::NonMatching,
        });
    }
    pairs
}

fn pair_loss_and_grads(
    model: &MatcherModel,
    pair: &TrainPair,
    grad_buf: Option<&mut [f64]>,
) -> Result<f64, NnError> {
    let (u, cache_u) = model.raw_embed(&pair.transcript);
    let (v, cache_v) = model.raw_embed(&pair.candidate);
    let sim = cosine_similarity(&u, &v)?;
    let (loss, dsim) = contrastive_pair_loss(sim, pair.label, model.margin);
    if let Some(buf) = grad_buf {
        if dsim != 0.0 {
            let (du, dv) = cosine_similarity_backward(&u, &v);
            let du: Vec<f64> = du.iter().map(|g| g * dsim).collect();
            let dv: Vec<f64> = dv.iter().map(|g| g * dsim).collect();
            model.encoder.accumulate_grads(&cache_u, &du, buf)?;
            model.encoder.accumulate_grads(&cache_v, &dv, buf)?;
        }
    }
    Ok(loss)
}

fn mean_pair_loss(model: &MatcherModel, pairs: &[TrainPair]) -> Result<f64, NnError> {
    let mut total = 0.0;
    for pair in pairs {
        total += pair_loss_and_grads(model, pair, None)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Contrastive training with per-epoch negative resampling; the returned
/// model is the epoch snapshot with the lowest validation loss.
pub fn train_matcher(
    train: &[Sample],
    val: &[Sample],
    table: &DesignatorTable,
    config: &MatcherConfig,
) -> Result<MatcherModel, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut model = MatcherModel::init(config);
    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x7A1));
    let val_pairs: Vec<TrainPair> = val
        .iter()
        .flat_map(|s| make_pairs(s, table, config.negatives_per_positive, &mut val_rng))
        .collect();

    let mut params = model.encoder.params_flat();
    let mut adam = AdamState::new(params.len(), config.lr);
    let mut grad_buf = vec![0.0; params.len()];

    let mut best = model.clone();
    let mut best_val = mean_pair_loss(&model, &val_pairs)?;
    let mut best_epoch = 0;

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xE000 + epoch as u64));
        let mut pairs: Vec<TrainPair> = train
            .iter()
            .flat_map(|s| make_pairs(s, table, config.negatives_per_positive, &mut rng))
            .collect();
        pairs.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(config.batch_size) {
            grad_buf.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for pair in batch {
                batch_loss += pair_loss_and_grads(&model, pair, Some(&mut grad_buf))?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad_buf.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad_buf);
            model.encoder.set_params_flat(&params);
            epoch_loss += batch_loss;
        }
        epoch_loss /= pairs.len().max(1) as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }

        let val_loss = mean_pair_loss(&model, &val_pairs)?;
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

/// Score every scene call-sign against the transcript and rank by similarity
/// (ties break toward the lower scene index). Works for any candidate count.
pub fn rank_candidates(
    model: &MatcherModel,
    transcript: &[String],
    scene: &SurveillanceScene,
    table: &DesignatorTable,
) -> Result<(Vec<ScoredCandidate>, String), MatchError> {
    if scene.is_empty() {
        return Err(MatchError::EmptyScene);
    }
    let (query, _) = model.raw_embed(transcript);
    let mut scored = Vec::with_capacity(scene.len());
    for (i, plane) in scene.planes.iter().enumerate() {
        let expansion = expand_icao(&plane.callsign, table)?;
        let (cand, _) = model.raw_embed(&expansion);
        let sim = cosine_similarity(&query, &cand)?;
        scored.push(ScoredCandidate {
            callsign: plane.callsign.clone(),
            scene_index: i,
            sim,
            dis: None,
            fused: None,
        });
    }
    // stable sort keeps scene order among equal sims: lowest index wins
    scored.sort_by(|a, b| b.sim.partial_cmp(&a.sim).expect("sims are finite"));
    let predicted = scored[0].callsign.clone();
    Ok((scored, predicted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::region::RegionModel;
    use crate::corpus::templates::default_templates;
    use crate::corpus::{generate_corpus, CommandLabelSet, CommandType, CorpusConfig, generate_scene};
    use crate::nn::finite_diff_gradcheck;

    fn table() -> DesignatorTable {
        DesignatorTable::bundled()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn encode_is_unit_norm_and_deterministic() {
        let model = MatcherModel::init(&MatcherConfig::default());
        let e1 = encode(&model, &toks("ryanair one two four"));
        let e2 = encode(&model, &toks("ryanair one two four"));
        assert_eq!(e1, e2);
        let norm: f64 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_texts_have_cosine_one() {
        let model = MatcherModel::init(&MatcherConfig::default());
        let t = toks("lufthansa one two four lima echo");
        let (scored, _) = {
            let scene = generate_scene(
                3,
                &RegionModel::default_regions(),
                &CommandLabelSet::new(),
                4,
                &table(),
            );
            rank_candidates(&model, &toks("dummy"), &scene, &table()).unwrap()
        };
        assert_eq!(scored.len(), 4);
        let a = encode(&model, &t);
        let b = encode(&model, &t);
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trigram_indices_stay_in_vocab_and_reserve_row_zero() {
        let idx = trigram_indices(&toks("ryanair one two four"), 512);
        assert!(!idx.is_empty());
        assert!(idx.iter().all(|&i| (1..512).contains(&i)));
        assert!(trigram_indices(&[], 512).is_empty());
    }

    #[test]
    fn make_pairs_structure() {
        let config = CorpusConfig { n_samples: 5, ..CorpusConfig::default() };
        let corpus = generate_corpus(
            &config,
            &RegionModel::default_regions(),
            &default_templates(),
            &table(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = make_pairs(&corpus[0], &table(), 3, &mut rng);
        assert_eq!(pairs.len(), 4);
        let positives = pairs.iter().filter(|p| p.label == PairLabel::Matching).count();
        assert_eq!(positives, 1);

        // deterministic under the same rng seed
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let again = make_pairs(&corpus[0], &table(), 3, &mut rng2);
        for (a, b) in pairs.iter().zip(&again) {
            assert_eq!(a.candidate, b.candidate);
        }

        // missing transcript: no pairs
        let dropped = crate::corruption::drop_transcript(&corpus[0]);
        assert!(make_pairs(&dropped, &table(), 3, &mut rng).is_empty());
    }

    #[test]
    fn singleton_scene_yields_positive_only() {
        let config = CorpusConfig { n_samples: 1, plane_count_min: 1, plane_count_max: 1, ..CorpusConfig::default() };
        let corpus = generate_corpus(
            &config,
            &RegionModel::default_regions(),
            &default_templates(),
            &table(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = make_pairs(&corpus[0], &table(), 3, &mut rng);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].label, PairLabel::Matching);
    }

    #[test]
    fn rank_single_candidate_and_ties() {
        let model = MatcherModel::init(&MatcherConfig::default());
        let scene = generate_scene(
            11,
            &RegionModel::default_regions(),
            &CommandLabelSet::new(),
            1,
            &table(),
        );
        let (scored, predicted) = rank_candidates(&model, &toks("anything"), &scene, &table()).unwrap();
        assert_eq!(scored.len(), 1);
        assert_eq!(predicted, scene.planes[0].callsign);

        let empty = crate::corpus::SurveillanceScene { planes: vec![], gold_index: 0 };
        assert!(rank_candidates(&model, &toks("x"), &empty, &table()).is_err());
    }

    #[test]
    fn scores_are_independent_of_other_candidates() {
        let model = MatcherModel::init(&MatcherConfig::default());
        let region = RegionModel::default_regions();
        let scene_big = generate_scene(21, &region, &CommandLabelSet::new(), 24, &table());
        let mut scene_small = scene_big.clone();
        scene_small.planes.truncate(4);
        scene_small.gold_index = 0;
        let t = toks("ryanair one two four turn right heading two five zero");
        let (big, _) = rank_candidates(&model, &t, &scene_big, &table()).unwrap();
        let (small, _) = rank_candidates(&model, &t, &scene_small, &table()).unwrap();
        for s in &small {
            let in_big = big.iter().find(|b| b.callsign == s.callsign).unwrap();
            assert_eq!(s.sim, in_big.sim);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let model = MatcherModel::init(&MatcherConfig::default());
        let region = RegionModel::default_regions();
        let scene = generate_scene(31, &region, &CommandLabelSet::new(), 8, &table());
        let mut reversed = scene.clone();
        reversed.planes.reverse();
        reversed.gold_index = scene.len() - 1 - scene.gold_index;
        let t = toks("speedbird two two one station calling");
        let (a, pred_a) = rank_candidates(&model, &t, &scene, &table()).unwrap();
        let (b, pred_b) = rank_candidates(&model, &t, &reversed, &table()).unwrap();
        assert_eq!(pred_a, pred_b);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.callsign, y.callsign);
            assert_eq!(x.sim, y.sim);
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let config = CorpusConfig { n_samples: 12, ..CorpusConfig::default() };
        let corpus = generate_corpus(
            &config,
            &RegionModel::default_regions(),
            &default_templates(),
            &table(),
        );
        let (train, val) = corpus.split_at(8);
        let mcfg = MatcherConfig { epochs: 0, ..MatcherConfig::default() };
        let model = train_matcher(train, val, &table(), &mcfg).unwrap();
        let fresh = MatcherModel::init(&mcfg);
        assert_eq!(model.encoder.params_flat(), fresh.encoder.params_flat());
    }

    #[test]
    fn training_is_seed_deterministic_and_reduces_val_loss() {
        let config = CorpusConfig { n_samples: 200, ..CorpusConfig::default() };
        let corpus = generate_corpus(
            &config,
            &RegionModel::default_regions(),
            &default_templates(),
            &table(),
        );
        let (train, val) = corpus.split_at(160);
        let mcfg = MatcherConfig { epochs: 4, ..MatcherConfig::default() };
        let a = train_matcher(train, val, &table(), &mcfg).unwrap();
        let b = train_matcher(train, val, &table(), &mcfg).unwrap();
        assert_eq!(a.encoder.params_flat(), b.encoder.params_flat());

        let init = MatcherModel::init(&mcfg);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let val_pairs: Vec<TrainPair> =
            val.iter().flat_map(|s| make_pairs(s, &table(), 3, &mut rng)).collect();
        let loss_init = mean_pair_loss(&init, &val_pairs).unwrap();
        let loss_trained = mean_pair_loss(&a, &val_pairs).unwrap();
        assert!(
            loss_trained < loss_init,
            "trained {loss_trained} vs init {loss_init}"
        );
    }

    #[test]
    fn pair_gradients_check_against_finite_differences() {
        // small encoder; full pair-loss path through both encoder passes
        let config = MatcherConfig {
            vocab_size: 64,
            embed_dim: 8,
            proj_hidden: 8,
            out_dim: 8,
            ..MatcherConfig::default()
        };
        let model = MatcherModel::init(&config);
        let pair = TrainPair {
            transcript: toks("ryanair one two four turn right"),
            candidate: toks("ryanair one two four"),
            label: PairLabel::Matching,
        };
        let params = model.encoder.params_flat();
        let mut analytic = vec![0.0; params.len()];
        pair_loss_and_grads(&model, &pair, Some(&mut analytic)).unwrap();
        let mut probe = model.clone();
        let mut f = |p: &[f64]| {
            probe.encoder.set_params_flat(p);
            pair_loss_and_grads(&probe, &pair, None).unwrap()
        };
        let err = finite_diff_gradcheck(&mut f, &params, &analytic, 1e-3);
        assert!(err < 1e-4, "max rel err {err}");
    }
}
