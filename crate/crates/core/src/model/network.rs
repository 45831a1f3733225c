use crate::autodiff::{Rng, Tape, Tensor, Var};
use crate::dsp::Spectrogram;

use super::classifier::{ClassifierNet, Sequence};
use super::config::{Frontend, ModelConfig};
use super::representation::RepresentationNet;
use super::ModelError;

/// Trainable-scalar budgets the base configuration is sized against.
pub const REFERENCE_REPRESENTATION_PARAMS: usize = 1425;
pub const REFERENCE_CLASSIFIER_PARAMS: usize = 11790;

/// Chunks encoded per tape when computing latents without gradients.
const INFERENCE_CHUNKS_PER_TAPE: usize = 8;

/// Per-frame Gaussian parameters, frame-major (`frames x dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    pub means: Vec<f64>,
    pub log_vars: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
}

impl LatentSequence {
    pub fn mean(&self, frame: usize) -> &[f64] {
        &self.means[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn log_var(&self, frame: usize) -> &[f64] {
        &self.log_vars[frame * self.dim..(frame + 1) * self.dim]
    }

    /// Copy with frames reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let pick = |v: &[f64]| order.iter().flat_map(|&f| v[f * self.dim..(f + 1) * self.dim].to_vec()).collect();
        Self {
            means: pick(&self.means),
            log_vars: pick(&self.log_vars),
            frames: order.len(),
            dim: self.dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Latents sampled at `sample_scale` times the encoder std; loss terms
    /// of the representation objective are reported.
    Train { sample_scale_bits: u64 },
}

impl Mode {
    pub fn train(sample_scale: f64) -> Self {
        Self::Train {
            sample_scale_bits: sample_scale.to_bits(),
        }
    }
}

/// Representation-objective intermediates for one spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTerms {
    pub z: Vec<f64>,
    pub recon_target: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub recon_per_frame: Vec<f64>,
    pub kl_per_frame: Vec<f64>,
    pub recon_loss: f64,
    pub kl_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    pub latents: LatentSequence,
    pub train: Option<TrainTerms>,
}

/// Full network: representation net plus classification net.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub representation: RepresentationNet,
    pub classifier: ClassifierNet,
    pub representation_frozen: bool,
    /// Std multiplier for latent sampling while the classifier trains.
    pub classifier_sample_scale: f64,
}

fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let (_, m) = (logits.shape()[0], logits.shape()[1]);
    logits
        .data()
        .chunks(m)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect()
}

/// Time-major `[T * B, dim]` layout of per-item frame-major rows.
pub fn time_major(items: &[&[f64]], frames: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(items.len() * frames * dim);
    for t in 0..frames {
        for item in items {
            out.extend_from_slice(&item[t * dim..(t + 1) * dim]);
        }
    }
    out
}

impl Model {
    pub fn new(config: &ModelConfig, frontend: Frontend, seed: u64) -> Result<Self, ModelError> {
        let root = Rng::new(seed);
        let representation = RepresentationNet::new(config, frontend, &mut root.derive(1))?;
        let classifier = ClassifierNet::new(config, &mut root.derive(2))?;
        Ok(Self {
            config: config.clone(),
            representation,
            classifier,
            representation_frozen: false,
            classifier_sample_scale: 0.0,
        })
    }

    pub fn frontend(&self) -> Frontend {
        self.representation.frontend()
    }

    pub fn param_counts(&self) -> (usize, usize) {
        (self.representation.param_count(), self.classifier.param_count())
    }

    pub fn param_report(&self) -> String {
        let (r, c) = self.param_counts();
        format!(
            "representation net: {r} floats (reference budget {REFERENCE_REPRESENTATION_PARAMS}, delta {:+}); \
             classification net: {c} floats (reference budget {REFERENCE_CLASSIFIER_PARAMS}, delta {:+})",
            r as i64 - REFERENCE_REPRESENTATION_PARAMS as i64,
            c as i64 - REFERENCE_CLASSIFIER_PARAMS as i64,
        )
    }

    fn check_spectrogram(&self, spec: &Spectrogram) -> Result<(), ModelError> {
        if spec.n_bins() != self.config.kept_bins {
            return Err(ModelError::ShapeMismatch(format!(
                "spectrogram has {} bins, model expects {}",
                spec.n_bins(),
                self.config.kept_bins
            )));
        }
        if spec.n_frames() < self.config.min_attention_window {
            return Err(ModelError::TooFewFrames {
                found: spec.n_frames(),
                needed: self.config.min_attention_window,
            });
        }
        Ok(())
    }

    /// Latent means and log-variances for each spectrogram (no gradients).
    /// The dense projection front end reports zero log-variance.
    pub fn latents(&self, specs: &[&Spectrogram]) -> Result<Vec<LatentSequence>, ModelError> {
        let dim = self.config.latent_dim;
        let mut out = Vec::with_capacity(specs.len());
        for group in specs.chunks(INFERENCE_CHUNKS_PER_TAPE) {
            let mut frames = Vec::new();
            for spec in group {
                self.check_spectrogram(spec)?;
                frames.extend(spec.frames_major());
            }
            let mut tape = Tape::new();
            let vars = self.representation.params().bind(&mut tape, false);
            let x = self.representation.frames_input(&mut tape, frames)?;
            let enc = self.representation.forward(&mut tape, &vars, x)?;
            let means = tape.value(enc.mean).data();
            let log_vars = enc.log_var.map(|v| tape.value(v).data());
            let mut offset = 0;
            for spec in group {
                let n = spec.n_frames() * dim;
                out.push(LatentSequence {
                    means: means[offset..offset + n].to_vec(),
                    log_vars: log_vars.map_or_else(|| vec![0.0; n], |lv| lv[offset..offset + n].to_vec()),
                    frames: spec.n_frames(),
                    dim,
                });
                offset += n;
            }
        }
        Ok(out)
    }

    /// Records latent samples for a batch of equal-length sequences as a
    /// time-major constant: `mean + scale * std * noise`.
    pub fn sample_latent_input(
        &self,
        tape: &mut Tape,
        latents: &[&LatentSequence],
        sample_scale: f64,
        rng: &mut Rng,
    ) -> Result<Sequence, ModelError> {
        let first = latents.first().ok_or_else(|| ModelError::ShapeMismatch("empty batch".into()))?;
        let (steps, dim) = (first.frames, first.dim);
        if latents.iter().any(|l| l.frames != steps || l.dim != dim) {
            return Err(ModelError::ShapeMismatch("latent sequences differ in length".into()));
        }
        let means: Vec<&[f64]> = latents.iter().map(|l| l.means.as_slice()).collect();
        let mut data = time_major(&means, steps, dim);
        if sample_scale != 0.0 {
            let lvs: Vec<&[f64]> = latents.iter().map(|l| l.log_vars.as_slice()).collect();
            let lv = time_major(&lvs, steps, dim);
            for (z, l) in data.iter_mut().zip(lv) {
                *z += sample_scale * (0.5 * l).exp() * rng.normal();
            }
        }
        let var = tape.constant(Tensor::new(vec![steps * latents.len(), dim], data)?);
        Ok(Sequence {
            data: var,
            steps,
            batch: latents.len(),
        })
    }

    /// Class probabilities from latent sequences; `sample_scale = 0` uses
    /// the means and is deterministic.
    pub fn classify(
        &self,
        latents: &[&LatentSequence],
        sample_scale: f64,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        if !(0.0..=1.0).contains(&sample_scale) {
            return Err(ModelError::InvalidConfig(format!("sample scale {sample_scale} outside [0, 1]")));
        }
        let mut tape = Tape::new();
        let vars = self.classifier.params().bind(&mut tape, false);
        let input = self.sample_latent_input(&mut tape, latents, sample_scale, rng)?;
        let logits = self.classifier.logits(&mut tape, &vars, input)?;
        Ok(softmax_rows(tape.value(logits)))
    }

    /// End-to-end logits for the dense projection front end, recorded on
    /// one tape so gradients reach every parameter.
    pub fn joint_logits(
        &self,
        tape: &mut Tape,
        rep_vars: &[Var],
        cls_vars: &[Var],
        specs: &[&Spectrogram],
    ) -> Result<Var, ModelError> {
        let steps = specs.first().map_or(0, |s| s.n_frames());
        let mut per_item = Vec::with_capacity(specs.len());
        for spec in specs {
            self.check_spectrogram(spec)?;
            if spec.n_frames() != steps {
                return Err(ModelError::ShapeMismatch("spectrograms differ in frame count".into()));
            }
            per_item.push(spec.frames_major());
        }
        let refs: Vec<&[f64]> = per_item.iter().map(Vec::as_slice).collect();
        let frames = time_major(&refs, steps, self.config.kept_bins);
        let x = self.representation.frames_input(tape, frames)?;
        let enc = self.representation.forward(tape, rep_vars, x)?;
        let input = Sequence {
            data: enc.mean,
            steps,
            batch: specs.len(),
        };
        self.classifier.logits(tape, cls_vars, input)
    }

    /// Spectrogram to class probabilities, with the representation terms in
    /// train mode.
    pub fn forward_full(&self, spec: &Spectrogram, mode: Mode, rng: &mut Rng) -> Result<ForwardOutput, ModelError> {
        self.check_spectrogram(spec)?;
        let dim = self.config.latent_dim;
        let frames = spec.n_frames();
        let mut tape = Tape::new();
        let rep_vars = self.representation.params().bind(&mut tape, false);
        let cls_vars = self.classifier.params().bind(&mut tape, false);
        let x = self.representation.frames_input(&mut tape, spec.frames_major())?;
        let sample_scale = match mode {
            Mode::Infer => 0.0,
            Mode::Train { sample_scale_bits } => f64::from_bits(sample_scale_bits),
        };
        let (enc, z, train) = match (self.frontend(), mode) {
            (Frontend::Vae, Mode::Train { .. }) => {
                let loss = self.representation.loss(&mut tape, &rep_vars, x, sample_scale, rng)?;
                let feat = self.config.feature_dim;
                let target = tape.value(loss.recon_target).data().to_vec();
                let recon = tape.value(loss.reconstruction).data().to_vec();
                let means = tape.value(loss.encoded.mean).data();
                let lvs = tape.value(loss.encoded.log_var.expect("vae")).data();
                let recon_per_frame = (0..frames)
                    .map(|f| {
                        (0..feat)
                            .map(|j| (target[f * feat + j] - recon[f * feat + j]).powi(2))
                            .sum::<f64>()
                    })
                    .collect();
                let kl_per_frame = (0..frames)
                    .map(|f| {
                        (0..dim)
                            .map(|d| {
                                let (m, lv) = (means[f * dim + d], lvs[f * dim + d]);
                                0.5 * (lv.exp() + m * m - 1.0 - lv)
                            })
                            .sum()
                    })
                    .collect();
                let terms = TrainTerms {
                    z: tape.value(loss.z).data().to_vec(),
                    recon_target: target,
                    reconstruction: recon,
                    recon_per_frame,
                    kl_per_frame,
                    recon_loss: tape.value(loss.recon).item(),
                    kl_loss: tape.value(loss.kl).item(),
                };
                (loss.encoded, loss.z, Some(terms))
            }
            _ => {
                let enc = self.representation.forward(&mut tape, &rep_vars, x)?;
                let z = match enc.log_var {
                    Some(lv) if sample_scale > 0.0 => tape.reparameterize(enc.mean, lv, sample_scale, rng)?,
                    _ => enc.mean,
                };
                (enc, z, None)
            }
        };
        let latents = LatentSequence {
            means: tape.value(enc.mean).data().to_vec(),
            log_vars: enc
                .log_var
                .map_or_else(|| vec![0.0; frames * dim], |lv| tape.value(lv).data().to_vec()),
            frames,
            dim,
        };
        let logits = self.classifier.logits(
            &mut tape,
            &cls_vars,
            Sequence {
                data: z,
                steps: frames,
                batch: 1,
            },
        )?;
        let probs = softmax_rows(tape.value(logits)).remove(0);
        Ok(ForwardOutput { probs, latents, train })
    }

    /// Inference probabilities (latent means, no sampling).
    pub fn predict(&self, spec: &Spectrogram) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_full(spec, Mode::Infer, &mut Rng::new(0))?.probs)
    }

    /// Moves the latent coordinates to zero mean and unit spread per
    /// dimension over `specs`, leaving the VAE's reconstructions unchanged.
    pub fn standardize_latents(&mut self, specs: &[&Spectrogram]) -> Result<(), ModelError> {
        let dim = self.config.latent_dim;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        for seq in self.latents(specs)? {
            for row in seq.means.chunks(dim) {
                for k in 0..dim {
                    sum[k] += row[k];
                    sq[k] += row[k] * row[k];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(ModelError::ShapeMismatch("no frames to standardize over".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> = (0..dim)
            .map(|k| (sq[k] / n as f64 - mean[k] * mean[k]).max(0.0).sqrt().max(1e-8))
            .collect();
        self.representation.standardize_latents(&mean, &std)
    }

    /// Rounds all parameters to `f32`, the stored precision.
    pub fn round_to_storage_precision(&mut self) {
        self.representation.params_mut().round_to_f32();
        self.classifier.params_mut().round_to_f32();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bidirectional_gru, sequence_lengths};

    fn spec(rng: &mut Rng, frames: usize) -> Spectrogram {
        let values = (0..60 * frames).map(|_| rng.uniform()).collect();
        Spectrogram::from_values(values, 60, frames, 200.0 / 1024.0, 5).unwrap()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            rnn_hidden: 4,
            attention_dim: 4,
            head_hidden: 6,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn encode_frame_gives_twenty_features() {
        let m = Model::new(&ModelConfig::default(), Frontend::Vae, 1).unwrap();
        let mut tape = Tape::new();
        let vars = m.representation.params().bind(&mut tape, false);
        let mut frames = vec![0.0; 60];
        frames.extend((0..60).map(|i| (i as f64 / 7.0).sin().abs()));
        frames.extend(vec![0.0; 60]);
        let x = m.representation.frames_input(&mut tape, frames).unwrap();
        let f = m.representation.encode_frames(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.shape(f), &[3, 20]);
        let d = tape.value(f).data();
        assert_eq!(&d[..20], &d[40..60]);
    }

    #[test]
    fn zero_convs_leave_the_skip_path() {
        let mut m = Model::new(&ModelConfig::default(), Frontend::Vae, 1).unwrap();
        for name in ["res0.conv1.w", "res0.conv1.b", "res0.conv2.w", "res0.conv2.b"] {
            m.representation.params_mut().get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let frame: Vec<f64> = (0..60).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut tape = Tape::new();
        let vars = m.representation.params().bind(&mut tape, false);
        let x = m.representation.frames_input(&mut tape, frame.clone()).unwrap();
        let f = m.representation.encode_frames(&mut tape, &vars, x).unwrap();
        let expected: Vec<f64> = frame.chunks(3).map(|w| w.iter().map(|v| v.max(0.0)).sum::<f64>() / 3.0).collect();
        for (a, b) in tape.value(f).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn decoded_means(m: &Model, s: &Spectrogram) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let vars = m.representation.params().bind(&mut tape, false);
        let x = m.representation.frames_input(&mut tape, s.frames_major()).unwrap();
        let enc = m.representation.forward(&mut tape, &vars, x).unwrap();
        let y = m.representation.decode(&mut tape, &vars, enc.mean).unwrap();
        let std: Vec<f64> = tape.value(enc.log_var.unwrap()).data().iter().map(|l| (0.5 * l).exp()).collect();
        (tape.value(y).data().to_vec(), std)
    }

    #[test]
    fn standardizing_latents_keeps_the_vae_function() {
        let mut rng = Rng::new(5);
        let specs: Vec<Spectrogram> = (0..3).map(|_| spec(&mut rng, 6)).collect();
        let refs: Vec<&Spectrogram> = specs.iter().collect();
        let mut m = Model::new(&ModelConfig::default(), Frontend::Vae, 3).unwrap();
        let (before, std_before) = decoded_means(&m, &specs[0]);
        m.standardize_latents(&refs).unwrap();
        let (after, std_after) = decoded_means(&m, &specs[0]);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-9);
        }
        let lat = m.latents(&refs).unwrap();
        let stds: Vec<f64> = {
            let orig = Model::new(&ModelConfig::default(), Frontend::Vae, 3).unwrap().latents(&refs).unwrap();
            let r: Vec<&[f64]> = orig.iter().flat_map(|l| l.means.chunks(8)).collect();
            (0..8)
                .map(|k| {
                    let m = r.iter().map(|x| x[k]).sum::<f64>() / r.len() as f64;
                    (r.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt()
                })
                .collect()
        };
        let rows: Vec<&[f64]> = lat.iter().flat_map(|l| l.means.chunks(8)).collect();
        for k in 0..8 {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-6, "dim {k}: {mean} {var}");
        }
        for k in 0..8 {
            assert!((std_after[k] * stds[k] - std_before[k]).abs() < 1e-9);
        }
        assert!(Model::new(&ModelConfig::default(), Frontend::DenseProjection, 3).unwrap().standardize_latents(&refs).is_err());
    }

    #[test]
    fn zero_encoder_weights_give_biases() {
        let mut m = Model::new(&ModelConfig::default(), Frontend::Vae, 1).unwrap();
        let p = m.representation.params_mut();
        p.get_mut("enc.mean.w").unwrap().data_mut().fill(0.0);
        p.get_mut("enc.log_var.w").unwrap().data_mut().fill(0.0);
        p.get_mut("enc.mean.b").unwrap().data_mut().copy_from_slice(&[0.5; 8]);
        p.get_mut("enc.log_var.b").unwrap().data_mut().copy_from_slice(&[-1.0; 8]);
        let mut rng = Rng::new(2);
        let lat = m.latents(&[&spec(&mut rng, 4)]).unwrap().remove(0);
        assert!(lat.means.iter().all(|&v| v == 0.5));
        assert!(lat.log_vars.iter().all(|&v| v == -1.0));
        assert_eq!((lat.frames, lat.dim), (4, 8));
    }

    #[test]
    fn decoder_of_zero_is_tanh_bias() {
        let mut m = Model::new(&ModelConfig::default(), Frontend::Vae, 1).unwrap();
        let bias: Vec<f64> = (0..20).map(|i| i as f64 / 10.0 - 1.0).collect();
        m.representation.params_mut().get_mut("dec.b").unwrap().data_mut().copy_from_slice(&bias);
        let mut tape = Tape::new();
        let vars = m.representation.params().bind(&mut tape, false);
        let z = tape.constant(Tensor::zeros(&[1, 8]));
        let y = m.representation.decode(&mut tape, &vars, z).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&bias) {
            assert_eq!(*a, b.tanh());
        }
    }

    #[test]
    fn dense_frontend_has_no_decoder() {
        let m = Model::new(&ModelConfig::default(), Frontend::DenseProjection, 1).unwrap();
        let mut tape = Tape::new();
        let vars = m.representation.params().bind(&mut tape, false);
        let z = tape.constant(Tensor::zeros(&[1, 8]));
        assert!(matches!(m.representation.decode(&mut tape, &vars, z), Err(ModelError::NoDecoder)));
        assert_eq!(m.representation.param_count(), 68 + 168);
    }

    #[test]
    fn base_param_counts() {
        let m = Model::new(&ModelConfig::default(), Frontend::Vae, 1).unwrap();
        // res unit: 4*1*3+4 + 4*4*3+4 = 68; heads 2*168; decoder 8*20+20
        assert_eq!(m.representation.param_count(), 68 + 2 * 168 + 180);
        let report = m.param_report();
        assert!(report.contains("1425") && report.contains("11790"));
    }

    #[test]
    fn simplex_over_random_inputs() {
        let m = Model::new(&small_cfg(), Frontend::Vae, 3).unwrap();
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let lat: Vec<LatentSequence> = (0..20)
                .map(|_| LatentSequence {
                    means: rng.normals(12 * 8).into_iter().map(|v| 3.0 * v).collect(),
                    log_vars: rng.normals(12 * 8),
                    frames: 12,
                    dim: 8,
                })
                .collect();
            let refs: Vec<&LatentSequence> = lat.iter().collect();
            for p in m.classify(&refs, 0.5, &mut rng).unwrap() {
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let m = Model::new(&small_cfg(), Frontend::Vae, 3).unwrap();
        let s = spec(&mut Rng::new(9), 20);
        assert_eq!(m.predict(&s).unwrap(), m.predict(&s).unwrap());
        let a = m.forward_full(&s, Mode::Infer, &mut Rng::new(1)).unwrap();
        let b = m.forward_full(&s, Mode::Infer, &mut Rng::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_frames() {
        let m = Model::new(&small_cfg(), Frontend::Vae, 3).unwrap();
        let s = spec(&mut Rng::new(9), 2);
        assert!(matches!(m.predict(&s), Err(ModelError::TooFewFrames { found: 2, needed: 3 })));
    }

    #[test]
    fn attention_lengths_follow_ceil_division() {
        let cfg = ModelConfig {
            rnn_hidden: 2,
            attention_dim: 2,
            head_hidden: 2,
            ..ModelConfig::default()
        };
        let m = Model::new(&cfg, Frontend::Vae, 3).unwrap();
        let mut rng = Rng::new(1);
        for t in 3..600 {
            let mut tape = Tape::new();
            let vars = m.classifier.params().bind(&mut tape, false);
            let lat = LatentSequence {
                means: rng.normals(t * 8),
                log_vars: vec![0.0; t * 8],
                frames: t,
                dim: 8,
            };
            let input = m.sample_latent_input(&mut tape, &[&lat], 0.0, &mut rng).unwrap();
            let (_, lengths) = m.classifier.logits_traced(&mut tape, &vars, input).unwrap();
            let mut expected = sequence_lengths(t, m.classifier.spans());
            expected.push(1);
            assert_eq!(lengths, expected, "T = {t}");
        }
    }

    #[test]
    fn palindrome_with_tied_directions_is_mirror_symmetric() {
        let mut m = Model::new(&small_cfg(), Frontend::Vae, 5).unwrap();
        let (fwd, bwd) = m.classifier.gru_indices(0);
        let p = m.classifier.params_mut();
        for (a, b) in [(fwd.wx, bwd.wx), (fwd.wh, bwd.wh), (fwd.bx, bwd.bx), (fwd.bh, bwd.bh)] {
            let src = p.tensors()[a].clone();
            p.tensors_mut()[b] = src;
        }
        let (t, h): (usize, usize) = (9, 4);
        let mut rng = Rng::new(6);
        let half: Vec<Vec<f64>> = (0..t.div_ceil(2)).map(|_| rng.normals(8)).collect();
        let frames: Vec<f64> = (0..t).flat_map(|i| half[i.min(t - 1 - i)].clone()).collect();
        let mut tape = Tape::new();
        let vars = m.classifier.params().bind(&mut tape, false);
        let x = tape.constant(Tensor::new(vec![t, 8], frames).unwrap());
        let seq = Sequence {
            data: x,
            steps: t,
            batch: 1,
        };
        let out = bidirectional_gru(&mut tape, &vars, fwd, bwd, seq, h).unwrap();
        let d = tape.value(out.data).data();
        for i in 0..t {
            let mirror = t - 1 - i;
            for j in 0..h {
                assert!((d[i * 2 * h + j] - d[mirror * 2 * h + h + j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn train_terms_match_recomputation() {
        let m = Model::new(&small_cfg(), Frontend::Vae, 7).unwrap();
        let s = spec(&mut Rng::new(8), 12);
        let out = m.forward_full(&s, Mode::train(0.3), &mut Rng::new(3)).unwrap();
        let terms = out.train.expect("train mode");
        let n = terms.recon_target.len() as f64;
        let recon: f64 = terms
            .recon_target
            .iter()
            .zip(&terms.reconstruction)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n
            * 20.0;
        assert!((recon - terms.recon_loss).abs() <= 1e-10);
        let frames = out.latents.frames;
        let kl: f64 = (0..frames)
            .map(|f| {
                out.latents
                    .mean(f)
                    .iter()
                    .zip(out.latents.log_var(f))
                    .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / frames as f64;
        assert!((kl - terms.kl_loss).abs() <= 1e-10);
        let per_frame = terms.recon_per_frame.iter().sum::<f64>() / frames as f64;
        assert!((per_frame - terms.recon_loss).abs() <= 1e-10);
        // pooled target is the input column averaged in threes
        let col = s.column(0);
        assert!((terms.recon_target[0] - (col[0] + col[1] + col[2]) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shape_flow_for_full_chunk() {
        let m = Model::new(&ModelConfig::default(), Frontend::Vae, 1).unwrap();
        let s = spec(&mut Rng::new(1), 509);
        let out = m.forward_full(&s, Mode::Infer, &mut Rng::new(1)).unwrap();
        assert_eq!((out.latents.frames, out.latents.dim), (509, 8));
        assert_eq!(out.probs.len(), 5);
    }
}
