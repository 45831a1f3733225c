//! Cross-validated training runs and the front-end comparison.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Adam, Rng, Tape};
use crate::dsp::{Preprocessor, Spectrogram};
use crate::model::{Frontend, LatentSequence, Model, ModelConfig};
use crate::signal_io::{oversample, stratified_kfold, Chunk, DatasetSplit, Labeled, RhythmClass};

use super::config::{LatentInput, TrainConfig};
use super::metrics::{argmax, compute_metrics, confusion_matrix, MetricsReport};
use super::stage::{
    freeze_representation, joint_step, moving_average, should_switch_stage, stage1_step, stage2_step, Stage,
    StageState, SMOOTHING_WINDOW,
};
use super::TrainingError;

/// A labelled spectrogram ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: RhythmClass,
    pub spec: Spectrogram,
}

impl Labeled for Example {
    fn item_id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> RhythmClass {
        self.label
    }
}

/// Runs the preprocessing chain over every chunk.
pub fn prepare_examples(chunks: &[Chunk], pre: &Preprocessor) -> Result<Vec<Example>, TrainingError> {
    chunks
        .par_iter()
        .map(|c| {
            Ok(Example {
                id: c.id(),
                label: c.label,
                spec: pre.run(&c.samples, c.sample_rate_hz)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub stage: Stage,
    /// 1-based within the stage.
    pub epoch: usize,
    pub train_loss: f64,
    /// Test-fold accuracy after the epoch; absent for representation epochs.
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub epochs: usize,
    pub iterations: usize,
    pub final_smoothed_loss: Option<f64>,
    pub threshold_reached: bool,
    pub eta: Vec<f64>,
    pub loss: Vec<f64>,
    /// SHA-256 over the frozen representation parameters.
    pub frozen_hash: String,
}

impl Stage1Summary {
    pub fn first_smoothed_eta(&self) -> Option<f64> {
        moving_average(&self.eta, SMOOTHING_WINDOW).first().copied()
    }

    pub fn final_smoothed_eta(&self) -> Option<f64> {
        moving_average(&self.eta, SMOOTHING_WINDOW).last().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub frontend: Frontend,
    pub train_size: usize,
    pub oversampled_size: usize,
    pub test_ids: Vec<String>,
    pub metrics: MetricsReport,
    pub series: Vec<EpochPoint>,
    pub stage1: Option<Stage1Summary>,
}

impl FoldReport {
    /// First supervised epoch whose test accuracy reaches `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.series
            .iter()
            .filter(|p| p.stage == Stage::Classifier)
            .find(|p| p.test_accuracy.is_some_and(|a| a >= target))
            .map(|p| p.epoch)
    }

    pub fn accuracy_series(&self) -> Vec<f64> {
        self.series.iter().filter_map(|p| p.test_accuracy).collect()
    }
}

/// A trained fold: report plus the final model.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub model: Model,
}

/// SHA-256 over parameter names, shapes, and `f32` little-endian values.
pub fn params_hash(params: &crate::model::ParamStore) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.names().iter().zip(params.tensors()) {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update((*v as f32).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

fn evaluate_latents(model: &Model, latents: &[&LatentSequence], batch: usize) -> Result<Vec<usize>, TrainingError> {
    let mut preds = Vec::with_capacity(latents.len());
    let mut rng = Rng::new(0);
    for group in latents.chunks(batch) {
        for probs in model.classify(group, 0.0, &mut rng)? {
            preds.push(argmax(&probs));
        }
    }
    Ok(preds)
}

fn evaluate_joint(model: &Model, specs: &[&Spectrogram], micro: usize) -> Result<Vec<usize>, TrainingError> {
    let mut preds = Vec::with_capacity(specs.len());
    for group in specs.chunks(micro) {
        let mut tape = Tape::new();
        let rv = model.representation.params().bind(&mut tape, false);
        let cv = model.classifier.params().bind(&mut tape, false);
        let logits = model.joint_logits(&mut tape, &rv, &cv, group)?;
        let value = tape.value(logits);
        let m = value.shape()[1];
        preds.extend(value.data().chunks(m).map(argmax));
    }
    Ok(preds)
}

fn accuracy(preds: &[usize], truth: &[usize]) -> f64 {
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Trains and evaluates one fold. All randomness is derived from
/// `(cfg.seed, split.fold_index)`.
pub fn run_fold(
    examples: &[Example],
    split: &DatasetSplit,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FoldOutcome, TrainingError> {
    cfg.validate()?;
    let fold_rng = Rng::new(cfg.seed).derive(split.fold_index as u64);
    let index: HashMap<&str, usize> = examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let lookup = |ids: &[String]| -> Result<Vec<usize>, TrainingError> {
        ids.iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| TrainingError::UnknownId(id.clone())))
            .collect()
    };
    let train = lookup(&split.train_ids)?;
    let test = lookup(&split.test_ids)?;
    let mut by_class: BTreeMap<RhythmClass, Vec<usize>> = BTreeMap::new();
    for &i in &train {
        by_class.entry(examples[i].label).or_default().push(i);
    }
    let resampled = oversample(&by_class, fold_rng.derive(1).seed());
    let mut model = Model::new(model_cfg, cfg.frontend, fold_rng.derive(2).seed())?;
    let mut order_rng = fold_rng.derive(3);
    let mut sample_rng = fold_rng.derive(4);
    let test_truth: Vec<usize> = test.iter().map(|&i| examples[i].label.id()).collect();
    let mut series = Vec::new();
    let mut stage1 = None;
    let mut order = resampled.clone();

    match cfg.frontend {
        Frontend::Vae => {
            let mut state = StageState::new(cfg.eta_min);
            let mut opt = Adam::new(cfg.lr);
            'stage1: loop {
                order_rng.shuffle(&mut order);
                let mut epoch_loss = Vec::new();
                for batch in batches(&order, cfg.batch_size) {
                    let specs: Vec<&Spectrogram> = batch.iter().map(|&i| &examples[i].spec).collect();
                    let stats = stage1_step(&mut model, &specs, &mut opt, &mut state, cfg, &mut sample_rng)?;
                    epoch_loss.push(stats.recon + stats.latent);
                    if state.smoothed_loss().is_some_and(|l| l <= cfg.stage1_loss_threshold) {
                        break;
                    }
                }
                state.epoch += 1;
                series.push(EpochPoint {
                    stage: Stage::Representation,
                    epoch: state.epoch,
                    train_loss: epoch_loss.iter().sum::<f64>() / epoch_loss.len() as f64,
                    test_accuracy: None,
                });
                log::debug!("fold {} stage 1 epoch {} loss {:?}", split.fold_index, state.epoch, state.smoothed_loss());
                if should_switch_stage(&state, cfg) {
                    break 'stage1;
                }
            }
            let smoothed = state.smoothed_loss();
            let summary = Stage1Summary {
                epochs: state.epoch,
                iterations: state.iteration,
                final_smoothed_loss: smoothed,
                threshold_reached: smoothed.is_some_and(|l| l <= cfg.stage1_loss_threshold),
                eta: state.etas.clone(),
                loss: state.losses.clone(),
                frozen_hash: String::new(),
            };
            let scale = match cfg.latent_input {
                LatentInput::Sampled => state.eta,
                LatentInput::Mean => 0.0,
            };
            if cfg.standardize_latents {
                let train_specs: Vec<&Spectrogram> = train.iter().map(|&i| &examples[i].spec).collect();
                model.standardize_latents(&train_specs)?;
            }
            freeze_representation(&mut model, &mut state, scale)?;
            stage1 = Some(Stage1Summary {
                frozen_hash: params_hash(model.representation.params()),
                ..summary
            });

            let specs: Vec<&Spectrogram> = examples.iter().map(|e| &e.spec).collect();
            let latents = model.latents(&specs)?;
            let test_latents: Vec<&LatentSequence> = test.iter().map(|&i| &latents[i]).collect();
            let mut opt = Adam::new(cfg.lr);
            for epoch in 1..=cfg.classifier_epochs {
                order_rng.shuffle(&mut order);
                let mut losses = Vec::new();
                for batch in batches(&order, cfg.batch_size) {
                    let lat: Vec<&LatentSequence> = batch.iter().map(|&i| &latents[i]).collect();
                    let labels: Vec<usize> = batch.iter().map(|&i| examples[i].label.id()).collect();
                    losses.push(stage2_step(&mut model, &lat, &labels, &mut opt, &mut state, &mut sample_rng)?);
                }
                state.epoch = epoch;
                let acc = accuracy(&evaluate_latents(&model, &test_latents, cfg.batch_size)?, &test_truth);
                log::debug!("fold {} classifier epoch {epoch} accuracy {acc:.3}", split.fold_index);
                series.push(EpochPoint {
                    stage: Stage::Classifier,
                    epoch,
                    train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                    test_accuracy: Some(acc),
                });
            }
        }
        Frontend::DenseProjection => {
            let mut opts = [Adam::new(cfg.lr), Adam::new(cfg.lr)];
            let test_specs: Vec<&Spectrogram> = test.iter().map(|&i| &examples[i].spec).collect();
            for epoch in 1..=cfg.classifier_epochs {
                order_rng.shuffle(&mut order);
                let mut losses = Vec::new();
                for batch in batches(&order, cfg.batch_size) {
                    let specs: Vec<&Spectrogram> = batch.iter().map(|&i| &examples[i].spec).collect();
                    let labels: Vec<usize> = batch.iter().map(|&i| examples[i].label.id()).collect();
                    losses.push(joint_step(&mut model, &specs, &labels, &mut opts, cfg)?);
                }
                let acc = accuracy(&evaluate_joint(&model, &test_specs, cfg.micro_batch)?, &test_truth);
                log::debug!("fold {} joint epoch {epoch} accuracy {acc:.3}", split.fold_index);
                series.push(EpochPoint {
                    stage: Stage::Classifier,
                    epoch,
                    train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                    test_accuracy: Some(acc),
                });
            }
        }
    }

    model.round_to_storage_precision();
    let test_specs: Vec<&Spectrogram> = test.iter().map(|&i| &examples[i].spec).collect();
    let preds = match cfg.frontend {
        Frontend::Vae => {
            let lat = model.latents(&test_specs)?;
            evaluate_latents(&model, &lat.iter().collect::<Vec<_>>(), cfg.batch_size)?
        }
        Frontend::DenseProjection => evaluate_joint(&model, &test_specs, cfg.micro_batch)?,
    };
    let confusion = confusion_matrix(test_truth.iter().copied().zip(preds), model_cfg.n_classes);
    let metrics = compute_metrics(&confusion)?;
    Ok(FoldOutcome {
        report: FoldReport {
            fold_index: split.fold_index,
            frontend: cfg.frontend,
            train_size: train.len(),
            oversampled_size: resampled.len(),
            test_ids: split.test_ids.clone(),
            metrics,
            series,
            stage1,
        },
        model,
    })
}

/// Stratified k-fold splits keyed by the run seed.
pub fn make_splits(examples: &[Example], cfg: &TrainConfig) -> Result<Vec<DatasetSplit>, TrainingError> {
    Ok(stratified_kfold(examples, cfg.k_folds, cfg.seed)?)
}

/// Full cross-validation; folds train independently (in parallel when
/// threads are available).
pub fn run_cv(examples: &[Example], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Vec<FoldOutcome>, TrainingError> {
    let splits = make_splits(examples, cfg)?;
    splits.par_iter().map(|s| run_fold(examples, s, model_cfg, cfg)).collect()
}

/// One named setup of the front-end comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
    pub frontend: Frontend,
}

/// Base, #1 (hidden 15), #2 (window 5, three layers), and #3/#4: #1/#2
/// with the dense projection front end.
pub fn standard_variants(base: &ModelConfig) -> Vec<Variant> {
    let v1 = ModelConfig {
        rnn_hidden: 15,
        ..base.clone()
    };
    let v2 = ModelConfig {
        min_attention_window: 5,
        rnn_layers: 3,
        ..base.clone()
    };
    let mk = |name: &str, model: &ModelConfig, frontend| Variant {
        name: name.to_string(),
        model: model.clone(),
        frontend,
    };
    vec![
        mk("base", base, Frontend::Vae),
        mk("#1", &v1, Frontend::Vae),
        mk("#2", &v2, Frontend::Vae),
        mk("#3", &v1, Frontend::DenseProjection),
        mk("#4", &v2, Frontend::DenseProjection),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub reports: Vec<FoldReport>,
}

impl VariantResult {
    /// Per-epoch accuracy averaged over the evaluated folds.
    pub fn mean_accuracy_series(&self) -> Vec<f64> {
        let series: Vec<Vec<f64>> = self.reports.iter().map(FoldReport::accuracy_series).collect();
        let len = series.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|e| series.iter().map(|s| s[e]).sum::<f64>() / series.len() as f64)
            .collect()
    }

    /// First epoch at which the averaged accuracy reaches `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.mean_accuracy_series().iter().position(|&a| a >= target).map(|i| i + 1)
    }
}

/// Runs every variant on the same splits and seed; `folds` selects which
/// fold indices are evaluated.
pub fn comparative_experiment(
    examples: &[Example],
    variants: &[Variant],
    cfg: &TrainConfig,
    folds: &[usize],
) -> Result<Vec<VariantResult>, TrainingError> {
    let splits = make_splits(examples, cfg)?;
    let chosen: Vec<&DatasetSplit> = splits.iter().filter(|s| folds.contains(&s.fold_index)).collect();
    variants
        .par_iter()
        .map(|v| {
            let vcfg = TrainConfig {
                frontend: v.frontend,
                ..cfg.clone()
            };
            let reports = chosen
                .iter()
                .map(|s| run_fold(examples, s, &v.model, &vcfg).map(|o| o.report))
                .collect::<Result<_, _>>()?;
            Ok(VariantResult {
                variant: v.clone(),
                reports,
            })
        })
        .collect()
}
