//! Two-stage optimisation: the representation net on its own objective
//! with eta-gated sampling, then the classifier on frozen latents.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Rng, Tape, Tensor};
use crate::dsp::Spectrogram;
use crate::model::{LatentSequence, Model};

use super::config::TrainConfig;
use super::TrainingError;

/// Iterations averaged by the stage-switch rule.
pub const SMOOTHING_WINDOW: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Representation,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub stage: Stage,
    pub iteration: usize,
    pub epoch: usize,
    pub last_recon: f64,
    pub last_latent: f64,
    /// Sampling-std multiplier for the next representation step.
    pub eta: f64,
    pub losses: Vec<f64>,
    pub etas: Vec<f64>,
}

impl StageState {
    pub fn new(eta_min: f64) -> Self {
        Self {
            stage: Stage::Representation,
            iteration: 0,
            epoch: 0,
            last_recon: 0.0,
            last_latent: 0.0,
            eta: eta_min,
            losses: Vec::new(),
            etas: Vec::new(),
        }
    }

    /// Moves to the classifier stage; the transition happens once.
    pub fn advance(&mut self) -> Result<(), TrainingError> {
        if self.stage != Stage::Representation {
            return Err(TrainingError::StageOrder("classifier stage already entered".into()));
        }
        self.stage = Stage::Classifier;
        self.iteration = 0;
        self.epoch = 0;
        Ok(())
    }

    pub fn smoothed_loss(&self) -> Option<f64> {
        smoothed_tail(&self.losses, SMOOTHING_WINDOW)
    }
}

/// Mean of the last `window` values, once that many exist.
pub fn smoothed_tail(values: &[f64], window: usize) -> Option<f64> {
    (values.len() >= window && window > 0)
        .then(|| values[values.len() - window..].iter().sum::<f64>() / window as f64)
}

/// Trailing moving average (shorter windows at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Latent share of the total loss, clamped to `[eta_min, 1]`.
pub fn compute_eta(recon_loss: f64, latent_loss: f64, eta_min: f64) -> Result<f64, TrainingError> {
    if !(recon_loss >= 0.0) || !(latent_loss >= 0.0) {
        return Err(TrainingError::NegativeLoss {
            recon: recon_loss,
            latent: latent_loss,
        });
    }
    let total = recon_loss + latent_loss;
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok((latent_loss / total).clamp(eta_min, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Stats {
    pub recon: f64,
    pub latent: f64,
    pub sample_scale: f64,
}

fn total_frames(batch: &[&Spectrogram]) -> usize {
    batch.iter().map(|s| s.n_frames()).sum()
}

/// One representation-net update on a batch of spectrograms.
pub fn stage1_step(
    model: &mut Model,
    batch: &[&Spectrogram],
    opt: &mut Adam,
    state: &mut StageState,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Stage1Stats, TrainingError> {
    if state.stage != Stage::Representation || model.representation_frozen {
        return Err(TrainingError::StageOrder("representation step after freeze".into()));
    }
    let n_frames = total_frames(batch);
    if n_frames == 0 {
        return Err(TrainingError::EmptyBatch);
    }
    let sample_scale = state.eta;
    let mut grads: Vec<Tensor> = model
        .representation
        .params()
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    let (mut recon, mut latent) = (0.0, 0.0);
    for micro in batch.chunks(cfg.micro_batch) {
        let weight = total_frames(micro) as f64 / n_frames as f64;
        let frames: Vec<f64> = micro.iter().flat_map(|s| s.frames_major()).collect();
        let mut tape = Tape::new();
        let vars = model.representation.params().bind(&mut tape, true);
        let x = model.representation.frames_input(&mut tape, frames)?;
        let loss = model.representation.loss(&mut tape, &vars, x, sample_scale, rng)?;
        recon += weight * tape.value(loss.recon).item();
        latent += weight * tape.value(loss.kl).item();
        let g = tape.backward(loss.total)?;
        for (acc, &v) in grads.iter_mut().zip(&vars) {
            if let Some(d) = g.get_data(v) {
                acc.data_mut().iter_mut().zip(d).for_each(|(a, d)| *a += weight * d);
            }
        }
    }
    if !(recon + latent).is_finite() {
        return Err(TrainingError::NaNLoss {
            stage: Stage::Representation,
            iteration: state.iteration,
            detail: format!("recon {recon}, latent {latent}, sample scale {sample_scale}"),
        });
    }
    opt.step(model.representation.params_mut().tensors_mut(), &grads)?;
    state.iteration += 1;
    state.last_recon = recon;
    state.last_latent = latent;
    state.eta = compute_eta(recon, latent, cfg.eta_min)?;
    state.losses.push(recon + latent);
    state.etas.push(state.eta);
    Ok(Stage1Stats {
        recon,
        latent,
        sample_scale,
    })
}

/// Smoothed loss reached the threshold, or the epoch budget ran out (the
/// latter is logged as a warning).
pub fn should_switch_stage(state: &StageState, cfg: &TrainConfig) -> bool {
    if state.smoothed_loss().is_some_and(|l| l <= cfg.stage1_loss_threshold) {
        return true;
    }
    if state.epoch >= cfg.max_epochs_per_stage {
        log::warn!(
            "stage-1 loss threshold {} not reached after {} epochs (smoothed loss {:?}); switching anyway",
            cfg.stage1_loss_threshold,
            state.epoch,
            state.smoothed_loss()
        );
        return true;
    }
    false
}

/// Freezes the representation net at the current stage-1 state.
pub fn freeze_representation(model: &mut Model, state: &mut StageState, sample_scale: f64) -> Result<(), TrainingError> {
    state.advance()?;
    model.representation.params_mut().round_to_f32();
    model.representation_frozen = true;
    model.classifier_sample_scale = sample_scale;
    Ok(())
}

/// One classifier update on cached latents; returns the batch loss.
pub fn stage2_step(
    model: &mut Model,
    batch: &[&LatentSequence],
    labels: &[usize],
    opt: &mut Adam,
    state: &mut StageState,
    rng: &mut Rng,
) -> Result<f64, TrainingError> {
    if state.stage != Stage::Classifier || !model.representation_frozen {
        return Err(TrainingError::StageOrder("classifier step before freeze".into()));
    }
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let vars = model.classifier.params().bind(&mut tape, true);
    let input = model.sample_latent_input(&mut tape, batch, model.classifier_sample_scale, rng)?;
    let logits = model.classifier.logits(&mut tape, &vars, input)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(TrainingError::NaNLoss {
            stage: Stage::Classifier,
            iteration: state.iteration,
            detail: format!("cross entropy {value}"),
        });
    }
    let g = tape.backward(loss)?;
    let grads: Vec<Tensor> = vars.iter().map(|&v| g.get(v)).collect();
    opt.step(model.classifier.params_mut().tensors_mut(), &grads)?;
    state.iteration += 1;
    state.losses.push(value);
    Ok(value)
}

/// End-to-end update of both nets on the classification loss, for the
/// dense projection front end. `opts` holds one optimizer per net.
pub fn joint_step(
    model: &mut Model,
    batch: &[&Spectrogram],
    labels: &[usize],
    opts: &mut [Adam; 2],
    cfg: &TrainConfig,
) -> Result<f64, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    let zeros = |ts: &[Tensor]| ts.iter().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
    let mut rep_grads = zeros(model.representation.params().tensors());
    let mut cls_grads = zeros(model.classifier.params().tensors());
    let mut total = 0.0;
    for (specs, ys) in batch.chunks(cfg.micro_batch).zip(labels.chunks(cfg.micro_batch)) {
        let weight = specs.len() as f64 / batch.len() as f64;
        let mut tape = Tape::new();
        let rep_vars = model.representation.params().bind(&mut tape, true);
        let cls_vars = model.classifier.params().bind(&mut tape, true);
        let logits = model.joint_logits(&mut tape, &rep_vars, &cls_vars, specs)?;
        let loss = tape.softmax_cross_entropy(logits, ys)?;
        total += weight * tape.value(loss).item();
        let g = tape.backward(loss)?;
        for (acc, vars) in [(&mut rep_grads, &rep_vars), (&mut cls_grads, &cls_vars)] {
            for (a, &v) in acc.iter_mut().zip(vars) {
                if let Some(d) = g.get_data(v) {
                    a.data_mut().iter_mut().zip(d).for_each(|(a, d)| *a += weight * d);
                }
            }
        }
    }
    if !total.is_finite() {
        return Err(TrainingError::NaNLoss {
            stage: Stage::Classifier,
            iteration: opts[1].steps_taken() as usize,
            detail: format!("joint cross entropy {total}"),
        });
    }
    let [rep_opt, cls_opt] = opts;
    rep_opt.step(model.representation.params_mut().tensors_mut(), &rep_grads)?;
    cls_opt.step(model.classifier.params_mut().tensors_mut(), &cls_grads)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_examples() {
        assert!((compute_eta(0.8, 0.2, 1e-3).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(compute_eta(0.0, 0.0, 1e-3).unwrap(), 1.0);
        assert_eq!(compute_eta(1e6, 1e-9, 1e-3).unwrap(), 1e-3);
        assert!(matches!(
            compute_eta(-1.0, 0.5, 1e-3),
            Err(TrainingError::NegativeLoss { .. })
        ));
    }

    fn state_with(losses: Vec<f64>, epoch: usize) -> StageState {
        StageState {
            losses,
            epoch,
            ..StageState::new(1e-3)
        }
    }

    #[test]
    fn infinite_threshold_switches_after_first_window() {
        let cfg = TrainConfig {
            stage1_loss_threshold: f64::INFINITY,
            ..TrainConfig::default()
        };
        assert!(!should_switch_stage(&state_with(vec![1.0; SMOOTHING_WINDOW - 1], 0), &cfg));
        assert!(should_switch_stage(&state_with(vec![1.0; SMOOTHING_WINDOW], 0), &cfg));
    }

    #[test]
    fn unreachable_threshold_switches_at_epoch_budget() {
        let cfg = TrainConfig {
            stage1_loss_threshold: f64::MIN_POSITIVE,
            max_epochs_per_stage: 3,
            ..TrainConfig::default()
        };
        let noisy: Vec<f64> = (0..200).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
        assert!(!should_switch_stage(&state_with(noisy.clone(), 2), &cfg));
        assert!(should_switch_stage(&state_with(noisy, 3), &cfg));
    }

    #[test]
    fn crossing_detected_within_one_window() {
        let cfg = TrainConfig {
            stage1_loss_threshold: 0.1,
            max_epochs_per_stage: usize::MAX,
            ..TrainConfig::default()
        };
        let curve: Vec<f64> = (0..400)
            .map(|i| (-(i as f64) / 50.0).exp() * (1.0 + 0.05 * if i % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let truth: usize = (0..400).find(|&i| (-(i as f64) / 50.0).exp() <= 0.1).unwrap();
        let detected = (1..=400)
            .find(|&n| should_switch_stage(&state_with(curve[..n].to_vec(), 0), &cfg))
            .unwrap()
            - 1;
        assert!(detected >= truth.saturating_sub(SMOOTHING_WINDOW) && detected <= truth + SMOOTHING_WINDOW);
    }

    #[test]
    fn stage_advances_once() {
        let mut s = StageState::new(0.01);
        s.advance().unwrap();
        assert!(s.advance().is_err());
    }
}
