//! Final call-sign identifier: per-candidate similarity and distribution
//! scores pass through a five-layer network into one fused score; the
//! highest-scoring candidate wins. Candidates are scored independently, so
//! the candidate count stays unconstrained, and zeroed similarity features
//! carry the missing-transcript path.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdm::{Cdm, CdmError};
use crate::classifier::{predict_commands, CommandClassifierModel};
use crate::corpus::Sample;
use crate::grammar::DesignatorTable;
use crate::matcher::{rank_candidates, MatchError, MatcherModel, ScoredCandidate, TrainError, TrainMeta};
use crate::nn::{bce_loss_weighted, Activation, AdamState, LayerSpec, Mlp, Mode, Tensor2};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Cdm(#[from] CdmError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

pub const FEATURE_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub sim: f64,
    pub dis: f64,
    pub sim_rank_fraction: f64,
    pub dis_rank_fraction: f64,
    pub candidate_count_norm: f64,
    pub transcript_missing: f64,
}

impl CandidateFeatures {
    pub fn to_array(self) -> [f64; FEATURE_DIM] {
        [
            self.sim,
            self.dis,
            self.sim_rank_fraction,
            self.dis_rank_fraction,
            self.candidate_count_norm,
            self.transcript_missing,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of training samples whose transcript is hidden so the
    /// surveillance-only path gets trained.
    pub transcript_drop_fraction: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { epochs: 20, lr: 2e-3, seed: 1, transcript_drop_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionModel {
    pub net: Mlp,
    pub meta: TrainMeta,
}

impl FusionModel {
    /// Five weight layers 6 -> 64 -> 64 -> 32 -> 16 -> 1, batch
    /// normalization between the fully connected layers, relu activations,
    /// sigmoid output.
    pub fn init(seed: u64) -> Self {
        let spec = |in_dim, out_dim, bn, act| LayerSpec { in_dim, out_dim, batch_norm: bn, activation: act };
        let net = Mlp::init(
            &[
                spec(FEATURE_DIM, 64, true, Activation::Relu),
                spec(64, 64, true, Activation::Relu),
                spec(64, 32, true, Activation::Relu),
                spec(32, 16, true, Activation::Relu),
                spec(16, 1, false, Activation::Sigmoid),
            ],
            derive_seed(seed, 0xF0510),
        );
        FusionModel { net, meta: TrainMeta { seed, ..TrainMeta::default() } }
    }

    /// Fused scores for a feature batch (eval mode).
    pub fn score(&self, features: &[CandidateFeatures]) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
        let batch = Tensor2::from_rows(&rows).expect("feature rows");
        let (out, _) = self.net.forward(&batch, Mode::Eval).expect("fusion forward");
        (0..out.rows()).map(|r| out.get(r, 0)).collect()
    }
}

fn rank_fractions<F: Fn(&ScoredCandidate) -> f64>(scored: &[ScoredCandidate], key: F) -> Vec<f64> {
    let n = scored.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(&scored[b]).partial_cmp(&key(&scored[a])).expect("finite score"));
    let mut fractions = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        fractions[idx] = if n > 1 { rank as f64 / (n - 1) as f64 } else { 0.0 };
    }
    fractions
}

/// Per-candidate feature vectors. Rank 0 is the best score; with a missing
/// transcript all similarity features are zeroed.
pub fn build_features(scored: &[ScoredCandidate], transcript_missing: bool) -> Vec<CandidateFeatures> {
    assert!(!scored.is_empty(), "no candidates to featurize");
    let n = scored.len();
    let count_norm = 1.0 / n as f64;
    let sim_fracs = rank_fractions(scored, |c| c.sim);
    let dis_fracs = rank_fractions(scored, |c| c.dis.unwrap_or(0.0));
    scored
        .iter()
        .enumerate()
        .map(|(i, c)| CandidateFeatures {
            sim: if transcript_missing { 0.0 } else { c.sim },
            dis: c.dis.unwrap_or(0.0),
            sim_rank_fraction: if transcript_missing { 0.0 } else { sim_fracs[i] },
            dis_rank_fraction: dis_fracs[i],
            candidate_count_norm: count_norm,
            transcript_missing: if transcript_missing { 1.0 } else { 0.0 },
        })
        .collect()
}

/// Run the upstream stages for one sample: similarity ranking (skipped when
/// the transcript is missing), command prediction, and distribution scores.
/// Returns candidates with `sim`/`dis` filled.
pub fn stage_candidates(
    sample: &Sample,
    matcher: &MatcherModel,
    classifier: &CommandClassifierModel,
    cdm: &Cdm,
    table: &DesignatorTable,
    force_missing: bool,
) -> Result<(Vec<ScoredCandidate>, bool), PipelineError> {
    let transcript = if force_missing { None } else { sample.transcript.as_ref() };
    let (mut scored, missing) = match transcript {
        Some(tokens) => {
            let (scored, _) = rank_candidates(matcher, tokens, &sample.scene, table)?;
            (scored, false)
        }
        None => {
            if sample.scene.is_empty() {
                return Err(PipelineError::Cdm(CdmError::EmptyScene));
            }
            let scored = sample
                .scene
                .planes
                .iter()
                .enumerate()
                .map(|(i, p)| ScoredCandidate {
                    callsign: p.callsign.clone(),
                    scene_index: i,
                    sim: 0.0,
                    dis: None,
                    fused: None,
                })
                .collect();
            (scored, true)
        }
    };
    let predicted = match transcript {
        Some(tokens) => predict_commands(classifier, tokens).0,
        None => Default::default(),
    };
    for candidate in &mut scored {
        let plane = &sample.scene.planes[candidate.scene_index];
        candidate.dis = Some(cdm.query_dis(plane.position(), &predicted));
    }
    Ok((scored, missing))
}

/// Full pipeline for one sample: fused scores plus the predicted call-sign
/// (ties break toward the lower scene index).
pub fn identify(
    sample: &Sample,
    matcher: &MatcherModel,
    classifier: &CommandClassifierModel,
    cdm: &Cdm,
    fusion: &FusionModel,
    table: &DesignatorTable,
) -> Result<(String, Vec<ScoredCandidate>), PipelineError> {
    let (mut scored, missing) = stage_candidates(sample, matcher, classifier, cdm, table, false)?;
    let features = build_features(&scored, missing);
    let fused = fusion.score(&features);
    for (candidate, score) in scored.iter_mut().zip(&fused) {
        candidate.fused = Some(*score);
    }
    let best = scored
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            b.fused
                .partial_cmp(&a.fused)
                .expect("finite fused scores")
                .then(a.scene_index.cmp(&b.scene_index))
        })
        .map(|(i, _)| i)
        .expect("nonempty candidates");
    Ok((scored[best].callsign.clone(), scored))
}

struct FeatureGroup {
    features: Vec<CandidateFeatures>,
    targets: Vec<f64>,
    weights: Vec<f64>,
}

fn build_groups(
    samples: &[Sample],
    matcher: &MatcherModel,
    classifier: &CommandClassifierModel,
    cdm: &Cdm,
    table: &DesignatorTable,
    drop_fraction: f64,
    drop_seed: u64,
) -> Result<Vec<FeatureGroup>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(drop_seed);
    let mut groups = Vec::with_capacity(samples.len());
    for sample in samples {
        let force_missing = rng.random_range(0.0..1.0) < drop_fraction;
        let (scored, missing) =
            stage_candidates(sample, matcher, classifier, cdm, table, force_missing)?;
        let features = build_features(&scored, missing);
        let n = scored.len();
        let positive_weight = (n.saturating_sub(1)).max(1) as f64;
        let mut targets = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for candidate in &scored {
            let is_gold = candidate.scene_index == sample.scene.gold_index;
            targets.push(if is_gold { 1.0 } else { 0.0 });
            weights.push(if is_gold { positive_weight } else { 1.0 });
        }
        groups.push(FeatureGroup { features, targets, weights });
    }
    Ok(groups)
}

fn group_tensors(group: &FeatureGroup) -> (Tensor2, Tensor2) {
    let rows: Vec<Vec<f64>> = group.features.iter().map(|f| f.to_array().to_vec()).collect();
    let features = Tensor2::from_rows(&rows).expect("feature rows");
    let targets = Tensor2::from_vec(group.targets.len(), 1, group.targets.clone()).expect("targets");
    (features, targets)
}

fn groups_loss(model: &Mlp, groups: &[FeatureGroup]) -> f64 {
    let mut total = 0.0;
    for group in groups {
        let (features, targets) = group_tensors(group);
        let (probs, _) = model.forward(&features, Mode::Eval).expect("forward");
        let (loss, _) = bce_loss_weighted(&probs, &targets, &group.weights).expect("loss");
        total += loss;
    }
    total / groups.len().max(1) as f64
}

/// Train the identifier on frozen upstream stages. Each scene is one batch;
/// the gold candidate is upweighted by the number of non-gold candidates. A
/// fraction of samples is fed with hidden transcripts so the model learns
/// the surveillance-only path. Returns the best-validation snapshot.
pub fn train_identifier(
    train: &[Sample],
    val: &[Sample],
    matcher: &MatcherModel,
    classifier: &CommandClassifierModel,
    cdm: &Cdm,
    table: &DesignatorTable,
    config: &FusionConfig,
) -> Result<FusionModel, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let stage = |samples: &[Sample], stream: u64| {
        build_groups(
            samples,
            matcher,
            classifier,
            cdm,
            table,
            config.transcript_drop_fraction,
            derive_seed(config.seed, stream),
        )
    };
    let train_groups = stage(train, 0xD201).map_err(pipeline_to_train)?;
    let val_groups = stage(val, 0xD202).map_err(pipeline_to_train)?;

    let mut model = FusionModel::init(config.seed);
    let mut params = model.net.params_flat();
    let mut adam = AdamState::new(params.len(), config.lr);

    let mut best = model.clone();
    let mut best_val = groups_loss(&model.net, &val_groups);
    let mut best_epoch = 0;

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xF000 + epoch as u64));
        let mut order: Vec<usize> = (0..train_groups.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &gi in &order {
            let group = &train_groups[gi];
            let (features, targets) = group_tensors(group);
            let (probs, cache) = model.net.forward(&features, Mode::Train)?;
            model.net.update_running_stats(&cache);
            let (loss, dprobs) = bce_loss_weighted(&probs, &targets, &group.weights)?;
            let (grads, _) = model.net.backward(&cache, &dprobs)?;
            adam.step(&mut params, &grads.flat());
            model.net.set_params_flat(&params);
            epoch_loss += loss;
        }
        epoch_loss /= train_groups.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        let val_loss = groups_loss(&model.net, &val_groups);
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

fn pipeline_to_train(e: PipelineError) -> TrainError {
    match e {
        PipelineError::Nn(nn) => TrainError::Nn(nn),
        other => TrainError::Nn(crate::nn::NnError::Shape(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdm::{build_cdm, FilterConfig, FilterKind, GridDims};
    use crate::classifier::{train_classifier, ClassifierConfig};
    use crate::corpus::region::RegionModel;
    use crate::corpus::templates::default_templates;
    use crate::corpus::{generate_corpus, split_dataset, CorpusConfig};
    use crate::corruption::drop_transcript;
    use crate::matcher::{train_matcher, MatcherConfig};
    use crate::nn::{BatchNorm, DenseLayer};

    fn mk(callsign: &str, idx: usize, sim: f64, dis: f64) -> ScoredCandidate {
        ScoredCandidate { callsign: callsign.into(), scene_index: idx, sim, dis: Some(dis), fused: None }
    }

    #[test]
    fn single_candidate_features() {
        let features = build_features(&[mk("A", 0, 0.7, 0.4)], false);
        assert_eq!(features.len(), 1);
        let f = features[0];
        assert_eq!(f.sim_rank_fraction, 0.0);
        assert_eq!(f.dis_rank_fraction, 0.0);
        assert_eq!(f.candidate_count_norm, 1.0);
        assert_eq!(f.transcript_missing, 0.0);
    }

    #[test]
    fn missing_transcript_zeroes_similarity_features() {
        let scored = vec![mk("A", 0, 0.9, 0.2), mk("B", 1, 0.1, 0.8)];
        let features = build_features(&scored, true);
        for f in &features {
            assert_eq!(f.sim, 0.0);
            assert_eq!(f.sim_rank_fraction, 0.0);
            assert_eq!(f.transcript_missing, 1.0);
        }
        // dis ranks still live
        assert_eq!(features[1].dis_rank_fraction, 0.0);
        assert_eq!(features[0].dis_rank_fraction, 1.0);
    }

    #[test]
    fn two_candidate_rank_fractions() {
        let scored = vec![mk("A", 0, 0.9, 0.1), mk("B", 1, 0.1, 0.9)];
        let features = build_features(&scored, false);
        assert_eq!(features[0].sim_rank_fraction, 0.0);
        assert_eq!(features[1].sim_rank_fraction, 1.0);
        assert_eq!(features[0].dis_rank_fraction, 1.0);
        assert_eq!(features[1].dis_rank_fraction, 0.0);
    }

    /// Weights that pass the sim feature through every layer: fused becomes
    /// a strictly monotone function of sim.
    fn sim_passthrough_fusion() -> FusionModel {
        let mut model = FusionModel::init(0);
        for (li, layer) in model.net.layers.iter_mut().enumerate() {
            let mut weight = crate::nn::Tensor2::zeros(layer.weight.rows(), layer.weight.cols());
            weight.set(0, 0, 1.0);
            let mut bias = vec![0.0; layer.bias.len()];
            if li == 0 {
                bias[0] = 2.0; // keep sim + 2 positive through relu
            }
            *layer = DenseLayer {
                weight,
                bias,
                batch_norm: layer.batch_norm.as_ref().map(|bn| BatchNorm::new(bn.gamma.len())),
                activation: layer.activation,
            };
        }
        model
    }

    #[test]
    fn passthrough_fusion_agrees_with_similarity_ranking() {
        let table = DesignatorTable::bundled();
        let region = RegionModel::default_regions();
        let config = CorpusConfig { n_samples: 30, ..CorpusConfig::default() };
        let corpus = generate_corpus(&config, &region, &default_templates(), &table);
        let matcher = MatcherModel::init(&MatcherConfig::default());
        let classifier = crate::classifier::CommandClassifierModel::init(&ClassifierConfig::default());
        let cdm = build_cdm(&region, 30, &FilterConfig::new(FilterKind::Gaussian), GridDims::ThreeD, 1);
        let fusion = sim_passthrough_fusion();
        for sample in &corpus {
            let (fused_pred, _) =
                identify(sample, &matcher, &classifier, &cdm, &fusion, &table).unwrap();
            let (_, sim_pred) = rank_candidates(
                &matcher,
                sample.transcript.as_ref().unwrap(),
                &sample.scene,
                &table,
            )
            .unwrap();
            assert_eq!(fused_pred, sim_pred, "sample {}", sample.id);
        }
    }

    #[test]
    fn fused_scores_in_unit_interval_and_permutation_invariant() {
        let table = DesignatorTable::bundled();
        let region = RegionModel::default_regions();
        let config = CorpusConfig { n_samples: 6, ..CorpusConfig::default() };
        let corpus = generate_corpus(&config, &region, &default_templates(), &table);
        let matcher = MatcherModel::init(&MatcherConfig::default());
        let classifier = crate::classifier::CommandClassifierModel::init(&ClassifierConfig::default());
        let cdm = build_cdm(&region, 30, &FilterConfig::new(FilterKind::Gaussian), GridDims::ThreeD, 1);
        let fusion = FusionModel::init(3);
        for sample in &corpus {
            let (pred, scored) = identify(sample, &matcher, &classifier, &cdm, &fusion, &table).unwrap();
            for c in &scored {
                let f = c.fused.unwrap();
                assert!((0.0..=1.0).contains(&f));
            }
            // permute the scene
            let mut permuted = sample.clone();
            permuted.scene.planes.reverse();
            permuted.scene.gold_index = permuted.scene.len() - 1 - permuted.scene.gold_index;
            let (pred2, _) = identify(&permuted, &matcher, &classifier, &cdm, &fusion, &table).unwrap();
            assert_eq!(pred, pred2);
        }
    }

    #[test]
    fn missing_transcript_prediction_ignores_matcher() {
        let table = DesignatorTable::bundled();
        let region = RegionModel::default_regions();
        let config = CorpusConfig { n_samples: 4, ..CorpusConfig::default() };
        let corpus = generate_corpus(&config, &region, &default_templates(), &table);
        let classifier = crate::classifier::CommandClassifierModel::init(&ClassifierConfig::default());
        let cdm = build_cdm(&region, 30, &FilterConfig::new(FilterKind::Gaussian), GridDims::ThreeD, 1);
        let fusion = FusionModel::init(3);
        let matcher_a = MatcherModel::init(&MatcherConfig::default());
        let matcher_b = MatcherModel::init(&MatcherConfig { seed: 99, ..MatcherConfig::default() });
        for sample in &corpus {
            let dropped = drop_transcript(sample);
            let (a, _) = identify(&dropped, &matcher_a, &classifier, &cdm, &fusion, &table).unwrap();
            let (b, _) = identify(&dropped, &matcher_b, &classifier, &cdm, &fusion, &table).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_model_and_training_improves() {
        let table = DesignatorTable::bundled();
        let region = RegionModel::default_regions();
        let config = CorpusConfig { n_samples: 120, ..CorpusConfig::default() };
        let corpus = generate_corpus(&config, &region, &default_templates(), &table);
        let (train, val, _) = split_dataset(corpus, [0.8, 0.2, 0.0], 5).unwrap();
        let matcher = train_matcher(&train, &val, &table, &MatcherConfig { epochs: 2, ..MatcherConfig::default() }).unwrap();
        let classifier = train_classifier(&train, &val, &ClassifierConfig { epochs: 2, ..ClassifierConfig::default() }).unwrap();
        let cdm = build_cdm(&region, 100, &FilterConfig::new(FilterKind::Gaussian), GridDims::ThreeD, 1);

        let zero_cfg = FusionConfig { epochs: 0, ..FusionConfig::default() };
        let model = train_identifier(&train, &val, &matcher, &classifier, &cdm, &table, &zero_cfg).unwrap();
        assert_eq!(model.net.params_flat(), FusionModel::init(zero_cfg.seed).net.params_flat());

        let cfg = FusionConfig { epochs: 6, ..FusionConfig::default() };
        let trained = train_identifier(&train, &val, &matcher, &classifier, &cdm, &table, &cfg).unwrap();
        assert!(trained.meta.best_epoch > 0, "validation loss never improved");

        // seed determinism
        let again = train_identifier(&train, &val, &matcher, &classifier, &cdm, &table, &cfg).unwrap();
        assert_eq!(trained.net.params_flat(), again.net.params_flat());
    }
}
