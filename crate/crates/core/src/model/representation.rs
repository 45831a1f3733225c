//! Per-frame representation net: ResUnit feature extractor followed by the
//! variational encoder/decoder pair (or a plain dense projection).

use crate::autodiff::{Rng, Tape, Tensor, Var};

use super::config::{Frontend, ModelConfig};
use super::params::{glorot, ParamStore};
use super::ModelError;

const ENCODER_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
struct ResUnitIdx {
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct RepIdx {
    res_units: Vec<ResUnitIdx>,
    mean_w: usize,
    mean_b: usize,
    vae: Option<VaeIdx>,
}

#[derive(Clone, Debug, PartialEq)]
struct VaeIdx {
    log_var_w: usize,
    log_var_b: usize,
    dec_w: usize,
    dec_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationNet {
    cfg: ModelConfig,
    frontend: Frontend,
    params: ParamStore,
    idx: RepIdx,
}

/// Tape handles for one encoder pass over a batch of frames.
#[derive(Clone, Copy, Debug)]
pub struct EncodedFrames {
    pub features: Var,
    pub mean: Var,
    /// Absent for the dense projection front end.
    pub log_var: Option<Var>,
}

/// Tape handles for the representation loss.
#[derive(Clone, Copy, Debug)]
pub struct RepresentationLoss {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub encoded: EncodedFrames,
    pub z: Var,
    pub recon_target: Var,
    pub reconstruction: Var,
}

impl RepresentationNet {
    pub fn new(cfg: &ModelConfig, frontend: Frontend, rng: &mut Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let (c, k) = (cfg.res_channels, cfg.res_kernel);
        let mut res_units = Vec::new();
        for u in 0..cfg.n_res_units {
            let cin = if u == 0 { 1 } else { c };
            let conv1_w = params.push(format!("res{u}.conv1.w"), glorot(rng, cin * k, c * k, &[c, cin, k]));
            let conv1_b = params.push(format!("res{u}.conv1.b"), Tensor::zeros(&[c]));
            let conv2_w = params.push(format!("res{u}.conv2.w"), glorot(rng, c * k, c * k, &[c, c, k]));
            let conv2_b = params.push(format!("res{u}.conv2.b"), Tensor::zeros(&[c]));
            res_units.push(ResUnitIdx {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
            });
        }
        let (f, l) = (cfg.feature_dim, cfg.latent_dim);
        let head = match frontend {
            Frontend::Vae => "enc.mean",
            Frontend::DenseProjection => "proj",
        };
        let mut mean_init = glorot(rng, f, l, &[f, l]);
        if frontend == Frontend::Vae {
            // start near the prior so the latent term begins small
            mean_init.data_mut().iter_mut().for_each(|v| *v *= ENCODER_INIT_SCALE);
        }
        let mean_w = params.push(format!("{head}.w"), mean_init);
        let mean_b = params.push(format!("{head}.b"), Tensor::zeros(&[l]));
        let vae = match frontend {
            Frontend::DenseProjection => None,
            Frontend::Vae => {
                let log_var_w = params.push("enc.log_var.w", Tensor::zeros(&[f, l]));
                let log_var_b = params.push("enc.log_var.b", Tensor::zeros(&[l]));
                let dec_w = params.push("dec.w", glorot(rng, l, f, &[l, f]));
                let dec_b = params.push("dec.b", Tensor::zeros(&[f]));
                Some(VaeIdx {
                    log_var_w,
                    log_var_b,
                    dec_w,
                    dec_b,
                })
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            frontend,
            params,
            idx: RepIdx {
                res_units,
                mean_w,
                mean_b,
                vae,
            },
        })
    }

    pub fn frontend(&self) -> Frontend {
        self.frontend
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Re-expresses the latent space in coordinates `z' = (z - mean) / std`.
    ///
    /// Encoder heads absorb the shift and scale and the decoder absorbs the
    /// inverse, so reconstructions and sampling are unchanged; only the
    /// coordinates handed to the classifier move.
    pub fn standardize_latents(&mut self, mean: &[f64], std: &[f64]) -> Result<(), ModelError> {
        let vae = self.idx.vae.clone().ok_or(ModelError::NoDecoder)?;
        let (f, l) = (self.cfg.feature_dim, self.cfg.latent_dim);
        if mean.len() != l || std.len() != l || std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ModelError::ShapeMismatch(format!(
                "latent statistics must hold {l} finite values with positive spread"
            )));
        }
        let t = self.params.tensors_mut();
        for row in t[self.idx.mean_w].data_mut().chunks_mut(l) {
            row.iter_mut().zip(std).for_each(|(w, s)| *w /= s);
        }
        for k in 0..l {
            let b = &mut t[self.idx.mean_b].data_mut()[k];
            *b = (*b - mean[k]) / std[k];
            t[vae.log_var_b].data_mut()[k] -= 2.0 * std[k].ln();
        }
        for j in 0..f {
            let shift: f64 = (0..l).map(|k| mean[k] * t[vae.dec_w].data()[k * f + j]).sum();
            t[vae.dec_b].data_mut()[j] += shift;
        }
        for (row, s) in t[vae.dec_w].data_mut().chunks_mut(f).zip(std) {
            row.iter_mut().for_each(|w| *w *= s);
        }
        Ok(())
    }

    /// Frames `[N, kept_bins]` (row-major) as a `[N, 1, kept_bins]` constant.
    pub fn frames_input(&self, tape: &mut Tape, frames: Vec<f64>) -> Result<Var, ModelError> {
        let bins = self.cfg.kept_bins;
        if !frames.len().is_multiple_of(bins) {
            return Err(ModelError::ShapeMismatch(format!(
                "{} frame values are not a multiple of {bins} bins",
                frames.len()
            )));
        }
        let n = frames.len() / bins;
        Ok(tape.constant(Tensor::new(vec![n, 1, bins], frames)?))
    }

    /// ResUnit stack, channel mean, and average pooling: `[N,1,bins]` to
    /// `[N, feature_dim]`.
    pub fn encode_frames(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, ModelError> {
        let pad = self.cfg.res_kernel / 2;
        let mut h = x;
        for unit in &self.idx.res_units {
            let a = tape.conv1d(h, vars[unit.conv1_w], vars[unit.conv1_b], 1, pad)?;
            let a = tape.relu(a)?;
            let b = tape.conv1d(a, vars[unit.conv2_w], vars[unit.conv2_b], 1, pad)?;
            let skip = if tape.shape(h)[1] == self.cfg.res_channels {
                h
            } else {
                let copies = vec![h; self.cfg.res_channels];
                tape.concat(&copies, 1)?
            };
            let sum = tape.add(b, skip)?;
            h = tape.relu(sum)?;
        }
        let mean = tape.mean_axis(h, 1)?;
        let pool = self.cfg.pool_width();
        Ok(tape.avg_pool1d(mean, pool, pool)?)
    }

    /// Encoder heads: `(mean, log_var)` for the VAE, `(projection, None)`
    /// for the dense front end.
    pub fn encode(&self, tape: &mut Tape, vars: &[Var], features: Var) -> Result<EncodedFrames, ModelError> {
        let mean = tape.dense(features, vars[self.idx.mean_w], vars[self.idx.mean_b])?;
        let log_var = match &self.idx.vae {
            Some(v) => Some(tape.dense(features, vars[v.log_var_w], vars[v.log_var_b])?),
            None => None,
        };
        Ok(EncodedFrames {
            features,
            mean,
            log_var,
        })
    }

    /// Decoder: dense + tanh back to `feature_dim`.
    pub fn decode(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var, ModelError> {
        let v = self.idx.vae.as_ref().ok_or(ModelError::NoDecoder)?;
        let y = tape.dense(z, vars[v.dec_w], vars[v.dec_b])?;
        Ok(tape.tanh(y)?)
    }

    /// Encoder pass from raw frames.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<EncodedFrames, ModelError> {
        let features = self.encode_frames(tape, vars, x)?;
        self.encode(tape, vars, features)
    }

    /// Reconstruction target: each frame's spectrum pooled to `feature_dim`.
    pub fn recon_target(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let pool = self.cfg.pool_width();
        let n = tape.shape(x)[0];
        let flat = tape.value(x).clone().reshape(vec![n, self.cfg.kept_bins])?;
        let c = tape.constant(flat);
        Ok(tape.avg_pool1d(c, pool, pool)?)
    }

    /// Reconstruction squared error plus Gaussian KL over a batch of frames, with the
    /// latent sample drawn at `sample_scale` times the encoder std.
    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        sample_scale: f64,
        rng: &mut Rng,
    ) -> Result<RepresentationLoss, ModelError> {
        let encoded = self.forward(tape, vars, x)?;
        let log_var = encoded.log_var.ok_or(ModelError::NoDecoder)?;
        let z = tape.reparameterize(encoded.mean, log_var, sample_scale, rng)?;
        let reconstruction = self.decode(tape, vars, z)?;
        let recon_target = self.recon_target(tape, x)?;
        // squared norm per frame, averaged over frames
        let mse = tape.mse(recon_target, reconstruction)?;
        let recon = tape.affine(mse, self.cfg.feature_dim as f64, 0.0)?;
        let kl = tape.gaussian_kl(encoded.mean, log_var)?;
        let total = tape.add(recon, kl)?;
        Ok(RepresentationLoss {
            total,
            recon,
            kl,
            encoded,
            z,
            recon_target,
            reconstruction,
        })
    }
}
