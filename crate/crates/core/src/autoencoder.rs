//! Small KL-regularized video autoencoder.
//!
//! Frames pass a stride-2 conv pyramid (spatial factor `c_s`), then groups of
//! `c_t` consecutive frame features merge into one latent frame through a 1x1
//! conv. Decoding mirrors the path. Only the compression factors are
//! contractual; temporal attention/causality is not.

use crate::error::{Error, Result};
use crate::nn;
use candle_core::{DType, Device, Tensor};
use candle_nn::{
    conv2d, conv_transpose2d, Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, Module,
    Optimizer, VarBuilder, VarMap,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    /// Temporal compression factor `c_t`; matches the frame-repeat factor.
    pub temporal_factor: usize,
    /// Spatial compression factor `c_s` per side.
    pub spatial_factor: usize,
    /// Latent channels.
    pub latent_channels: usize,
    /// First conv width; later stages double it.
    pub base_width: usize,
    /// KL regularization weight.
    pub kl_weight: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            temporal_factor: 4,
            spatial_factor: 8,
            latent_channels: 8,
            base_width: 16,
            kl_weight: 1e-6,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("temporal_factor", self.temporal_factor), ("spatial_factor", self.spatial_factor)] {
            if !v.is_power_of_two() {
                return Err(Error::config(format!("{name} must be a power of two, got {v}")));
            }
        }
        if self.latent_channels == 0 {
            return Err(Error::config("latent_channels must be >= 1"));
        }
        if self.spatial_factor < 2 {
            return Err(Error::config("spatial_factor must be >= 2"));
        }
        Ok(())
    }

    /// Latent frame count for a pixel frame count.
    pub fn latent_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.temporal_factor)
    }

    /// Feature width after the conv pyramid.
    fn feat_width(&self) -> usize {
        self.base_width << (self.spatial_factor.ilog2() as usize - 1)
    }
}

/// Compressed video tensor with its compression factors recorded alongside.
#[derive(Debug, Clone)]
pub struct LatentVideo {
    /// `[C_lat, T_lat, H_lat, W_lat]`
    pub data: Tensor,
    pub temporal_factor: usize,
    pub spatial_factor: usize,
}

struct EncoderNet {
    stages: Vec<Conv2d>,
    refine: Vec<Conv2d>,
    temporal_merge: Conv2d,
}

struct DecoderNet {
    temporal_split: Conv2d,
    stages: Vec<ConvTranspose2d>,
    refine: Vec<Conv2d>,
    to_rgb: Conv2d,
}

pub struct Autoencoder {
    pub varmap: VarMap,
    cfg: AutoencoderConfig,
    enc: EncoderNet,
    dec: DecoderNet,
    device: Device,
}

impl Autoencoder {
    pub fn new(cfg: &AutoencoderConfig, device: &Device, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
        let model = Self::build(cfg, vb, device)?;
        nn::deterministic_init(&varmap, seed, &[])?;
        Ok(Self { varmap, ..model })
    }

    fn build(cfg: &AutoencoderConfig, vb: VarBuilder, device: &Device) -> Result<Self> {
        let n_stages = cfg.spatial_factor.ilog2() as usize;
        let down = Conv2dConfig { stride: 2, padding: 1, ..Default::default() };
        let same = Conv2dConfig { padding: 1, ..Default::default() };
        let up = ConvTranspose2dConfig { stride: 2, padding: 1, output_padding: 1, ..Default::default() };

        let mut stages = Vec::new();
        let mut refine = Vec::new();
        let mut in_c = 3;
        for s in 0..n_stages {
            let out_c = cfg.base_width << s;
            stages.push(conv2d(in_c, out_c, 3, down, vb.pp(format!("enc.down{s}")))?);
            refine.push(conv2d(out_c, out_c, 3, same, vb.pp(format!("enc.refine{s}")))?);
            in_c = out_c;
        }
        let feat = cfg.feat_width();
        let temporal_merge = conv2d(
            feat * cfg.temporal_factor,
            2 * cfg.latent_channels,
            1,
            Conv2dConfig::default(),
            vb.pp("enc.temporal_merge"),
        )?;
        let enc = EncoderNet { stages, refine, temporal_merge };

        let temporal_split = conv2d(
            cfg.latent_channels,
            feat * cfg.temporal_factor,
            1,
            Conv2dConfig::default(),
            vb.pp("dec.temporal_split"),
        )?;
        let mut dstages = Vec::new();
        let mut drefine = Vec::new();
        let mut c = feat;
        for s in 0..n_stages {
            let out_c = if s + 1 == n_stages { cfg.base_width } else { c / 2 };
            dstages.push(conv_transpose2d(c, out_c, 3, up, vb.pp(format!("dec.up{s}")))?);
            drefine.push(conv2d(out_c, out_c, 3, same, vb.pp(format!("dec.refine{s}")))?);
            c = out_c;
        }
        let to_rgb = conv2d(cfg.base_width, 3, 3, same, vb.pp("dec.to_rgb"))?;
        let dec = DecoderNet { temporal_split, stages: dstages, refine: drefine, to_rgb };

        Ok(Self { varmap: VarMap::new(), cfg: cfg.clone(), enc, dec, device: device.clone() })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.cfg
    }

    /// Posterior (mean, logvar) for a batch `[B, 3, T, H, W]`, each
    /// `[B, C_lat, T_lat, H_lat, W_lat]`.
    pub fn encode_batch(&self, video: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, c, t, h, w) = video.dims5()?;
        if c != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        if t == 0 {
            return Err(Error::shape("empty video"));
        }
        let cs = self.cfg.spatial_factor;
        if h % cs != 0 || w % cs != 0 {
            return Err(Error::shape(format!("spatial dims {h}x{w} not divisible by {cs}")));
        }
        let ct = self.cfg.temporal_factor;
        let t_lat = self.cfg.latent_frames(t);
        let t_pad = t_lat * ct;
        // Zero-pad the tail frames, then fold frames into the batch dim.
        let video = if t_pad > t {
            let zeros = Tensor::zeros((b, c, t_pad - t, h, w), video.dtype(), video.device())?;
            Tensor::cat(&[video, &zeros], 2)?
        } else {
            video.clone()
        };
        let x = video.transpose(1, 2)?.reshape((b * t_pad, c, h, w))?;
        let mut x = x;
        for (down, refine) in self.enc.stages.iter().zip(&self.enc.refine) {
            x = down.forward(&x)?.gelu_erf()?;
            x = refine.forward(&x)?.gelu_erf()?;
        }
        let (_, f, hh, ww) = x.dims4()?;
        // Merge each group of c_t frame features into one latent frame.
        let x = x
            .reshape((b, t_lat, ct * f, hh, ww))?
            .reshape((b * t_lat, ct * f, hh, ww))?;
        let stats = self.enc.temporal_merge.forward(&x)?; // [B*T_lat, 2C, h, w]
        let stats = stats.reshape((b, t_lat, 2 * self.cfg.latent_channels, hh, ww))?.transpose(1, 2)?;
        let mean = stats.narrow(1, 0, self.cfg.latent_channels)?.contiguous()?;
        let logvar = stats
            .narrow(1, self.cfg.latent_channels, self.cfg.latent_channels)?
            .clamp(-30.0, 20.0)?
            .contiguous()?;
        Ok((mean, logvar))
    }

    /// Deterministic eval-mode encode (posterior mean) of one video
    /// `[3, T, H, W]`.
    pub fn encode(&self, video: &Tensor) -> Result<LatentVideo> {
        let (mean, _) = self.encode_batch(&video.unsqueeze(0)?)?;
        Ok(LatentVideo {
            data: mean.squeeze(0)?,
            temporal_factor: self.cfg.temporal_factor,
            spatial_factor: self.cfg.spatial_factor,
        })
    }

    /// Decode a latent batch `[B, C_lat, T_lat, h, w]` to
    /// `[B, 3, T_lat * c_t, H, W]` with pixels in `[0, 1]`.
    pub fn decode_batch(&self, latent: &Tensor) -> Result<Tensor> {
        let (b, c, t_lat, hh, ww) = latent.dims5()?;
        if c != self.cfg.latent_channels {
            return Err(Error::shape(format!(
                "latent has {c} channels, config says {}",
                self.cfg.latent_channels
            )));
        }
        let ct = self.cfg.temporal_factor;
        let x = latent.transpose(1, 2)?.reshape((b * t_lat, c, hh, ww))?;
        let x = self.dec.temporal_split.forward(&x)?; // [B*T_lat, ct*F, h, w]
        let f = self.cfg.feat_width();
        let mut x = x.reshape((b * t_lat * ct, f, hh, ww))?;
        for (upc, refine) in self.dec.stages.iter().zip(&self.dec.refine) {
            x = upc.forward(&x)?.gelu_erf()?;
            x = refine.forward(&x)?.gelu_erf()?;
        }
        let x = candle_nn::ops::sigmoid(&self.dec.to_rgb.forward(&x)?)?;
        let (_, _, h, w) = x.dims4()?;
        let x = x.reshape((b, t_lat * ct, 3, h, w))?.transpose(1, 2)?.contiguous()?;
        Ok(x)
    }

    /// Decode one latent video, checking its recorded factors against the
    /// model config.
    pub fn decode(&self, latent: &LatentVideo) -> Result<Tensor> {
        if latent.temporal_factor != self.cfg.temporal_factor
            || latent.spatial_factor != self.cfg.spatial_factor
        {
            return Err(Error::config(format!(
                "latent factors (c_t={}, c_s={}) do not match autoencoder config (c_t={}, c_s={})",
                latent.temporal_factor, latent.spatial_factor, self.cfg.temporal_factor, self.cfg.spatial_factor
            )));
        }
        Ok(self.decode_batch(&latent.data.unsqueeze(0)?)?.squeeze(0)?)
    }

    pub fn device(&self) -> &Device {
        &self.device
    }
}

/// Sidecar stored next to autoencoder checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutoencoderCheckpointMeta {
    pub config: AutoencoderConfig,
    pub config_hash: String,
    pub corpus_hash: String,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { steps: 1200, batch_size: 4, lr: 2e-3, seed: 0 }
    }
}

/// Reconstruction + KL training over corpus videos. Returns the per-step loss
/// curve. Aborts with a diagnostic on NaN loss.
pub fn train_autoencoder(
    model: &Autoencoder,
    videos: &[Tensor],
    train_cfg: &VaeTrainConfig,
) -> Result<Vec<f64>> {
    use rand::Rng;
    if videos.is_empty() {
        return Err(Error::config("no training videos"));
    }
    let params = nn::vars_matching(&model.varmap, |_| true);
    let adamw = candle_nn::ParamsAdamW { lr: train_cfg.lr, weight_decay: 0.0, ..Default::default() };
    let mut opt = candle_nn::AdamW::new(params, adamw)?;
    let mut losses = Vec::with_capacity(train_cfg.steps);
    for step in 0..train_cfg.steps {
        let mut batch_rng = crate::rng::stream(train_cfg.seed, "vae-batch", step as u64);
        let picks: Vec<usize> =
            (0..train_cfg.batch_size).map(|_| batch_rng.gen_range(0..videos.len())).collect();
        let batch = Tensor::stack(&picks.iter().map(|i| videos[*i].clone()).collect::<Vec<_>>(), 0)?;
        let (mean, logvar) = model.encode_batch(&batch)?;
        // Reparameterized posterior sample with an externally seeded draw.
        let mut noise_rng = crate::rng::stream(train_cfg.seed, "vae-noise", step as u64);
        let noise = crate::rng::normal_vec(&mut noise_rng, mean.elem_count());
        let noise = Tensor::from_vec(noise, mean.shape(), mean.device())?;
        let z = (&mean + (logvar.affine(0.5, 0.0)?.exp()? * noise)?)?;
        let recon = model.decode_batch(&z)?;
        let recon = recon.narrow(2, 0, batch.dim(2)?)?;
        let mse = (recon - &batch)?.sqr()?.mean_all()?;
        let kl = ((mean.sqr()? + logvar.exp()?)? - &logvar)?
            .affine(0.5, -0.5)?
            .mean_all()?;
        let loss = (&mse + kl.affine(model.cfg.kl_weight, 0.0)?)?;
        let loss_v = loss.to_scalar::<f32>()? as f64;
        if !loss_v.is_finite() {
            return Err(Error::Numerical(format!("autoencoder loss diverged at step {step}: {loss_v}")));
        }
        opt.backward_step(&loss)?;
        losses.push(loss_v);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Autoencoder {
        Autoencoder::new(&AutoencoderConfig::default(), &Device::Cpu, 1).unwrap()
    }

    #[test]
    fn latent_shape_law() {
        let m = model();
        for (t, expect_tl) in [(16usize, 4usize), (1, 1), (4, 1), (5, 2), (8, 2), (13, 4)] {
            let v = Tensor::zeros((3, t, 64, 64), DType::F32, &Device::Cpu).unwrap();
            let lat = m.encode(&v).unwrap();
            assert_eq!(lat.data.dims(), &[8, expect_tl, 8, 8], "T={t}");
        }
    }

    #[test]
    fn non_divisible_spatial_dims_error() {
        let m = model();
        let v = Tensor::zeros((3, 4, 60, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(m.encode(&v), Err(Error::Shape(_))));
    }

    #[test]
    fn decode_preserves_shape_and_range() {
        let m = model();
        let spec = crate::corpus::CorpusSpec::default();
        let t = crate::corpus::generate_triplet(4, &spec).unwrap();
        let v = crate::imageio::video_to_tensor(&t.video, &Device::Cpu).unwrap();
        let lat = m.encode(&v).unwrap();
        let out = m.decode(&lat).unwrap();
        assert_eq!(out.dims(), v.dims());
        let (mn, mx) = (
            out.flatten_all().unwrap().min(0).unwrap().to_scalar::<f32>().unwrap(),
            out.flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap(),
        );
        assert!(mn >= 0.0 && mx <= 1.0);
    }

    #[test]
    fn zero_latent_decodes_finite() {
        let m = model();
        let lat = LatentVideo {
            data: Tensor::zeros((8, 4, 8, 8), DType::F32, &Device::Cpu).unwrap(),
            temporal_factor: 4,
            spatial_factor: 8,
        };
        let out = m.decode(&lat).unwrap();
        let s = out.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(s.is_finite());
    }

    #[test]
    fn mismatched_factors_error() {
        let m = model();
        let lat = LatentVideo {
            data: Tensor::zeros((8, 4, 8, 8), DType::F32, &Device::Cpu).unwrap(),
            temporal_factor: 2,
            spatial_factor: 8,
        };
        assert!(matches!(m.decode(&lat), Err(Error::Config(_))));
    }

    #[test]
    fn encode_is_deterministic_in_eval_mode() {
        let m = model();
        let spec = crate::corpus::CorpusSpec::default();
        let t = crate::corpus::generate_triplet(5, &spec).unwrap();
        let v = crate::imageio::video_to_tensor(&t.video, &Device::Cpu).unwrap();
        let a = m.encode(&v).unwrap().data.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = m.encode(&v).unwrap().data.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_seeds_build_identical_models_and_zero_steps_keep_init() {
        let m1 = model();
        let m2 = model();
        for name in nn::param_names(&m1.varmap) {
            let h1 = nn::named_hashes(&m1.varmap, &[name.clone()]).unwrap();
            let h2 = nn::named_hashes(&m2.varmap, &[name.clone()]).unwrap();
            assert_eq!(h1, h2, "{name}");
        }
        // 0-step training leaves the checkpoint at initialization.
        let spec = crate::corpus::CorpusSpec::default();
        let t = crate::corpus::generate_triplet(6, &spec).unwrap();
        let v = crate::imageio::video_to_tensor(&t.video, &Device::Cpu).unwrap();
        let before = nn::named_hashes(&m1.varmap, &nn::param_names(&m1.varmap)).unwrap();
        train_autoencoder(&m1, &[v], &VaeTrainConfig { steps: 0, ..Default::default() }).unwrap();
        let after = nn::named_hashes(&m1.varmap, &nn::param_names(&m1.varmap)).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn short_training_reduces_loss() {
        let m = model();
        let spec = crate::corpus::CorpusSpec::default();
        let videos: Vec<Tensor> = (0..4)
            .map(|s| {
                let t = crate::corpus::generate_triplet(s, &spec).unwrap();
                crate::imageio::video_to_tensor(&t.video, &Device::Cpu).unwrap()
            })
            .collect();
        let losses =
            train_autoencoder(&m, &videos, &VaeTrainConfig { steps: 30, batch_size: 2, lr: 2e-3, seed: 0 })
                .unwrap();
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "loss did not drop: head {head}, tail {tail}");
    }
}
