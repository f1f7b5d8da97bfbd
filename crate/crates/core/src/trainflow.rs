//! Flow-matching objective and the two-stage trainer.
//!
//! Stage 1 ("pretrain") trains the backbone as a text-to-video model: zero
//! spatial condition, learned null image tokens. Stage 2 ("finetune") adds
//! both conditioning branches over reference elements, with per-sample CFG
//! dropout and a configurable trainable set; everything outside that set is
//! frozen and hash-checked. The velocity interpolant is rectified flow:
//! x_t = (1-t) x0 + t eps, v = eps - x0, t=1 noise / t=0 data.

use crate::conditioning::{self, DropoutPolicy};
use crate::corpus::Triplet;
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::{LearnableSet, Model};
use candle_core::Tensor;
use candle_nn::{Module, Optimizer, VarBuilder, VarMap};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

// ---------------------------------------------------------------------------
// Flow kernels
// ---------------------------------------------------------------------------

/// x_t = (1 - t) x0 + t eps for a scalar time.
pub fn flow_interpolate(x0: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    check_same_shape(x0, eps)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::config(format!("flow time {t} outside [0, 1]")));
    }
    Ok((x0.affine(1.0 - t, 0.0)? + eps.affine(t, 0.0)?)?)
}

/// Batched interpolation with per-sample times `t: [B]` against `[B, ...]`.
pub fn flow_interpolate_batch(x0: &Tensor, eps: &Tensor, t: &Tensor) -> Result<Tensor> {
    check_same_shape(x0, eps)?;
    let b = x0.dims()[0];
    if t.dims() != [b] {
        return Err(Error::shape(format!("expected t of shape [{b}], got {:?}", t.dims())));
    }
    let mut shape = vec![1usize; x0.rank()];
    shape[0] = b;
    let t = t.reshape(shape)?;
    let one_minus = t.affine(-1.0, 1.0)?;
    Ok((x0.broadcast_mul(&one_minus)? + eps.broadcast_mul(&t)?)?)
}

/// v = eps - x0, the rectified-flow velocity target.
pub fn velocity_target(x0: &Tensor, eps: &Tensor) -> Result<Tensor> {
    check_same_shape(x0, eps)?;
    Ok((eps - x0)?)
}

/// Mean squared error over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same_shape(pred, target)?;
    Ok((pred - target)?.sqr()?.mean_all()?)
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("shape mismatch: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Pretrain => write!(f, "pretrain"),
            Stage::Finetune => write!(f, "finetune"),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    /// Toy default 16 (the full-scale recipe uses a global batch of 256).
    pub batch_size: usize,
    /// Toy default 1e-4 (full-scale recipe: 1e-5).
    pub lr: f64,
    pub seed: u64,
    /// Corpus mixing weights (single-subject : multi-subject).
    pub alpha: (u32, u32),
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Trainable set for stage 2; stage 1 always trains the full set.
    pub learnable_set: LearnableSet,
    pub dropout: DropoutPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Finetune,
            steps: 600,
            batch_size: 16,
            lr: 1e-4,
            seed: 0,
            alpha: (0, 1),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learnable_set: LearnableSet::Cross,
            dropout: DropoutPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.alpha == (0, 0) {
            return Err(Error::config("alpha weights cannot both be zero"));
        }
        self.dropout.validate()
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub stage: String,
}

/// Write loss rows as `step,loss,lr,stage` CSV.
pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = String::from("step,loss,lr,stage\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.lr, r.stage));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Alpha-weighted corpus sampling
// ---------------------------------------------------------------------------

/// Pick a corpus index for one training draw: choose the single- or
/// multi-subject arm with probability proportional to `alpha`, then uniform
/// within the arm. An empty arm defers to the other.
pub fn alpha_pick(
    singles: &[usize],
    multis: &[usize],
    alpha: (u32, u32),
    seed: u64,
    draw: u64,
) -> Result<usize> {
    if singles.is_empty() && multis.is_empty() {
        return Err(Error::config("empty corpus"));
    }
    let mut rng = crate::rng::stream(seed, "data-mix", draw);
    let (ws, wm) = (alpha.0 as f64, alpha.1 as f64);
    let pick_single = if singles.is_empty() {
        false
    } else if multis.is_empty() {
        true
    } else {
        rng.gen::<f64>() * (ws + wm) < ws
    };
    let arm = if pick_single { singles } else { multis };
    Ok(arm[rng.gen_range(0..arm.len())])
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct SampleCache {
    caption: String,
    x0: Tensor,         // [C, T_lat, h, w]
    cond: Tensor,       // spatial condition latent, same shape
    ref_images: Tensor, // [N, 3, H, W]
    grid_feats: Tensor, // [N, G*G, F], detached conv features
    is_single: bool,
}

fn build_caches(model: &Model, triplets: &[Triplet]) -> Result<Vec<SampleCache>> {
    let dev = model.device().clone();
    let mut out = Vec::with_capacity(triplets.len());
    for t in triplets {
        let video = imageio::video_to_tensor(&t.video, &dev)?;
        let frames = t.video.len();
        let x0 = model.vae.encode(&video)?.data;
        let cond = conditioning::assemble_spatial_condition(
            &t.elements,
            model.cfg.spatial_mode,
            model.cfg.spatial_repeat,
            frames,
            &model.vae,
        )?
        .latent;
        let mut imgs = Vec::new();
        for s in &t.elements.subjects {
            imgs.push(imageio::image_to_tensor(&s.image, &dev)?);
        }
        imgs.push(imageio::image_to_tensor(&t.elements.background, &dev)?);
        let ref_images = Tensor::stack(&imgs, 0)?;
        let grid_feats = model.semantic.grid_feature_sequence(&ref_images)?.detach();
        out.push(SampleCache {
            caption: t.rendered_caption.clone(),
            x0,
            cond,
            ref_images,
            grid_feats,
            is_single: t.elements.subjects.len() == 1,
        });
    }
    Ok(out)
}

/// Padded text sequence for one caption: `([L_max, d], [L_max])`.
pub(crate) fn text_padded(model: &Model, caption: &str) -> Result<(Tensor, Tensor)> {
    let ids = model.tokenizer.tokenize(caption)?;
    let e = model.text.embed_padded(&ids)?;
    Ok((e.tokens, e.mask))
}

/// Null text sequence padded to `L_max`: the learned null token then zeros.
pub(crate) fn null_text_padded(model: &Model) -> Result<(Tensor, Tensor)> {
    let d = model.cfg.encoders.d_model;
    let l = model.cfg.encoders.max_len;
    let dev = model.device();
    let row = model.backbone.null_text_sequence(1)?.squeeze(0)?; // [1, d]
    let tokens = Tensor::cat(&[&row, &Tensor::zeros((l - 1, d), row.dtype(), dev)?], 0)?;
    let mut mask = vec![0f32; l];
    mask[0] = 1.0;
    Ok((tokens, Tensor::from_vec(mask, l, dev)?))
}

/// Image tokens padded to `max_refs * grid^2`: real tokens then zeros.
pub(crate) fn image_tokens_padded(model: &Model, tokens: &Tensor) -> Result<(Tensor, Tensor)> {
    let (l, d) = tokens.dims2()?;
    let g2 = model.cfg.encoders.grid * model.cfg.encoders.grid;
    let l_max = model.cfg.encoders.max_refs * g2;
    if l > l_max {
        return Err(Error::shape(format!("{l} image tokens exceed the {l_max} budget")));
    }
    let dev = model.device();
    let padded = if l < l_max {
        Tensor::cat(&[tokens, &Tensor::zeros((l_max - l, d), tokens.dtype(), dev)?], 0)?
    } else {
        tokens.clone()
    };
    let mut mask = vec![0f32; l_max];
    mask[..l].fill(1.0);
    Ok((padded, Tensor::from_vec(mask, l_max, dev)?))
}

/// Null image sequence padded like the real ones.
pub(crate) fn null_image_padded(model: &Model) -> Result<(Tensor, Tensor)> {
    let row = model.backbone.null_image_sequence(1)?.squeeze(0)?; // [1, d]
    image_tokens_padded(model, &row)
}

/// Two-stage flow-matching training over a triplet corpus. Returns the
/// per-step loss log; the caller persists checkpoints.
pub fn train(model: &Model, triplets: &[Triplet], cfg: &TrainConfig) -> Result<Vec<LossRow>> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::config("no training samples"));
    }
    let dev = model.device().clone();
    let caches = build_caches(model, triplets)?;
    let singles: Vec<usize> =
        (0..caches.len()).filter(|i| caches[*i].is_single).collect();
    let multis: Vec<usize> =
        (0..caches.len()).filter(|i| !caches[*i].is_single).collect();

    let set = match cfg.stage {
        Stage::Pretrain => LearnableSet::Full,
        Stage::Finetune => cfg.learnable_set,
    };
    let params = candle_nn::ParamsAdamW {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: 0.0,
    };
    let mut opt = candle_nn::AdamW::new(model.trainable_vars(set), params)?;

    let latent_dims = caches[0].x0.dims().to_vec(); // [C, T_lat, h, w]
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let b = cfg.batch_size;
        let picks: Vec<usize> = (0..b)
            .map(|slot| alpha_pick(&singles, &multis, cfg.alpha, cfg.seed, (step * b + slot) as u64))
            .collect::<Result<_>>()?;

        let mut x0s = Vec::with_capacity(b);
        let mut conds = Vec::with_capacity(b);
        let mut texts = Vec::with_capacity(b);
        let mut text_masks = Vec::with_capacity(b);
        let mut imgs = Vec::with_capacity(b);
        let mut img_masks = Vec::with_capacity(b);
        for (slot, idx) in picks.iter().enumerate() {
            let cache = &caches[*idx];
            let global = (step * b + slot) as u64;
            let drop = conditioning::draw_dropout(&cfg.dropout, cfg.seed, global);
            let text_is_null = drop.drop_text;
            // Stage 1 is text-only: references always nulled.
            let refs_are_null = drop.drop_ref || cfg.stage == Stage::Pretrain;

            x0s.push(cache.x0.clone());
            conds.push(if refs_are_null {
                Tensor::zeros(latent_dims.as_slice(), cache.cond.dtype(), &dev)?
            } else {
                cache.cond.clone()
            });
            let (tt, tm) = if text_is_null {
                null_text_padded(model)?
            } else {
                text_padded(model, &cache.caption)?
            };
            texts.push(tt);
            text_masks.push(tm);
            let (it, im) = if refs_are_null {
                null_image_padded(model)?
            } else {
                let tokens = match set {
                    // Conv pyramid frozen: project cached features.
                    LearnableSet::Cross => model.semantic.project_features(&cache.grid_feats)?,
                    // Fully trainable: recompute from pixels.
                    LearnableSet::Full => model.semantic.encode_batch(&cache.ref_images)?,
                };
                let (n, g2, d) = tokens.dims3()?;
                image_tokens_padded(model, &tokens.reshape((n * g2, d))?)?
            };
            imgs.push(it);
            img_masks.push(im);
        }
        let x0 = Tensor::stack(&x0s, 0)?;
        let cond = Tensor::stack(&conds, 0)?;
        let text = Tensor::stack(&texts, 0)?;
        let text_mask = Tensor::stack(&text_masks, 0)?;
        let img = Tensor::stack(&imgs, 0)?;
        let img_mask = Tensor::stack(&img_masks, 0)?;

        let mut trng = crate::rng::stream(cfg.seed, "fm-time", step as u64);
        let ts: Vec<f32> = (0..b)
            .map(|_| {
                let u: f64 = trng.gen();
                if u == 0.0 { 0.5 } else { u as f32 }
            })
            .collect();
        let t = Tensor::from_vec(ts, b, &dev)?;
        let mut nrng = crate::rng::stream(cfg.seed, "fm-noise", step as u64);
        let eps = Tensor::from_vec(
            crate::rng::normal_vec(&mut nrng, x0.elem_count()),
            x0.shape(),
            &dev,
        )?;
        let xt = flow_interpolate_batch(&x0, &eps, &t)?;
        let v = velocity_target(&x0, &eps)?;
        let pred = model
            .backbone
            .forward(&xt, &cond, &t, &text, Some(&text_mask), Some(&img), Some(&img_mask))?;
        let loss = mse_loss(&pred, &v)?;
        let loss_v = loss.to_scalar::<f32>()? as f64;
        if !loss_v.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged at step {step}: {loss_v}")));
        }
        opt.backward_step(&loss)?;
        rows.push(LossRow { step, loss: loss_v, lr: cfg.lr, stage: cfg.stage.to_string() });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Semantic-encoder pretraining (stage-1 companion)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderPretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EncoderPretrainConfig {
    fn default() -> Self {
        Self { steps: 400, batch_size: 16, lr: 2e-3, seed: 0 }
    }
}

/// Class id for a subject appearance: color x shape.
pub fn subject_class(color: crate::corpus::sprites::ColorName, shape: crate::corpus::sprites::Shape) -> usize {
    use crate::corpus::sprites::{COLORS, SHAPES};
    let c = COLORS.iter().position(|x| *x == color).unwrap();
    let s = SHAPES.iter().position(|x| *x == shape).unwrap();
    c * SHAPES.len() + s
}

/// Class id for a background texture, after all subject classes.
pub fn background_class(tex: crate::corpus::sprites::Texture) -> usize {
    use crate::corpus::sprites::{COLORS, SHAPES, TEXTURES};
    COLORS.len() * SHAPES.len() + TEXTURES.iter().position(|x| *x == tex).unwrap()
}

pub fn n_classes() -> usize {
    use crate::corpus::sprites::{COLORS, SHAPES, TEXTURES};
    COLORS.len() * SHAPES.len() + TEXTURES.len()
}

/// Classification pretraining of the semantic conv pyramid so that its
/// pooled features separate subject appearances and backgrounds; this is
/// what makes the benchmark's consistency metrics discriminative. Trains on
/// reference renders plus in-video subject crops (blur-augmented), with a
/// throwaway linear head.
pub fn pretrain_semantic_encoder(
    model: &Model,
    triplets: &[Triplet],
    cfg: &EncoderPretrainConfig,
) -> Result<Vec<LossRow>> {
    if triplets.is_empty() {
        return Err(Error::config("no samples for encoder pretraining"));
    }
    let dev = model.device().clone();
    let size = model.cfg.encoders.image_size as u32;
    // Item list: (image, class).
    let mut items: Vec<(image::RgbImage, u32)> = Vec::new();
    for t in triplets {
        let w = t.video[0].width();
        for (si, s) in t.elements.subjects.iter().enumerate() {
            let class = subject_class(s.color, s.shape) as u32;
            items.push((s.image.clone(), class));
            // Two in-video crops per subject from fixed frames.
            for f in [0, t.video.len() - 1] {
                if let Some(c) = crop_around_mask(&t.video[f], &t.masks[si][f], w, size) {
                    items.push((c, class));
                }
            }
        }
        let bg_class = background_class(t.elements.background_tex) as u32;
        items.push((t.elements.background.clone(), bg_class));
        // An off-center background crop for scale robustness.
        items.push((imageio::crop_resize(&t.elements.background, 20.0, 20.0, 20.0, size), bg_class));
    }

    // Throwaway classifier head.
    let head_map = VarMap::new();
    let vb = VarBuilder::from_varmap(&head_map, candle_core::DType::F32, &dev);
    let head = candle_nn::linear(model.cfg.encoders.feat_dim, n_classes(), vb.pp("head"))?;
    crate::nn::deterministic_init(&head_map, cfg.seed, &[])?;

    let mut vars = crate::nn::vars_matching(&model.enc_varmap, |n| n.starts_with("img_enc."));
    vars.extend(crate::nn::vars_matching(&head_map, |_| true));
    let params = candle_nn::ParamsAdamW { lr: cfg.lr, weight_decay: 0.0, ..Default::default() };
    let mut opt = candle_nn::AdamW::new(vars, params)?;

    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = crate::rng::stream(cfg.seed, "enc-pretrain", step as u64);
        let mut imgs = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (img, class) = &items[rng.gen_range(0..items.len())];
            // Blur augmentation mimics decoded-video softness.
            let img = if rng.gen::<f64>() < 0.5 {
                image::imageops::blur(img, rng.gen_range(0.5..1.5))
            } else {
                img.clone()
            };
            imgs.push(imageio::image_to_tensor(&img, &dev)?);
            labels.push(*class);
        }
        let batch = Tensor::stack(&imgs, 0)?;
        let labels = Tensor::from_vec(labels, cfg.batch_size, &dev)?;
        let feats = model.semantic.pooled_features_batch(&batch)?;
        let logits = head.forward(&feats)?;
        let loss = candle_nn::loss::cross_entropy(&logits, &labels)?;
        let loss_v = loss.to_scalar::<f32>()? as f64;
        if !loss_v.is_finite() {
            return Err(Error::Numerical(format!("encoder pretraining diverged at step {step}")));
        }
        opt.backward_step(&loss)?;
        rows.push(LossRow { step, loss: loss_v, lr: cfg.lr, stage: "encoder".into() });
    }
    Ok(rows)
}

/// Crop a subject neighborhood from a frame using its visibility mask.
pub fn crop_around_mask(
    frame: &image::RgbImage,
    mask: &[bool],
    width: u32,
    out_size: u32,
) -> Option<image::RgbImage> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for (i, on) in mask.iter().enumerate() {
        if *on {
            any = true;
            let x = i as u32 % width;
            let y = i as u32 / width;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    if !any {
        return None;
    }
    let cx = (x0 + x1) as f64 / 2.0;
    let cy = (y0 + y1) as f64 / 2.0;
    let half = ((x1 - x0).max(y1 - y0) as f64 / 2.0 + 2.0).max(4.0);
    Some(imageio::crop_resize(frame, cx, cy, half, out_size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_triplet, CorpusSpec};
    use crate::model::ModelConfig;
    use candle_core::{DType, Device};

    #[test]
    fn interpolant_endpoints_and_arithmetic() {
        let dev = Device::Cpu;
        let x0 = Tensor::from_vec(vec![2f32, -1.0], 2, &dev).unwrap();
        let eps = Tensor::from_vec(vec![0f32, 3.0], 2, &dev).unwrap();
        let at = |t: f64| {
            flow_interpolate(&x0, &eps, t).unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(at(0.0), vec![2.0, -1.0]);
        assert_eq!(at(1.0), vec![0.0, 3.0]);
        assert_eq!(at(0.25)[0], 1.5);
        let v = velocity_target(&x0, &eps).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![-2.0, 4.0]);
        // Shape mismatch errors.
        let bad = Tensor::zeros(3, DType::F32, &dev).unwrap();
        assert!(flow_interpolate(&x0, &bad, 0.5).is_err());
        assert!(velocity_target(&x0, &bad).is_err());
        assert!(flow_interpolate(&x0, &eps, 1.5).is_err());
    }

    #[test]
    fn batched_interpolation_matches_scalar() {
        let dev = Device::Cpu;
        let mut r = crate::rng::stream(1, "tf-test", 0);
        let x0 = Tensor::from_vec(crate::rng::normal_vec(&mut r, 2 * 6), (2, 6), &dev).unwrap();
        let eps = Tensor::from_vec(crate::rng::normal_vec(&mut r, 2 * 6), (2, 6), &dev).unwrap();
        let t = Tensor::from_vec(vec![0.2f32, 0.7], 2, &dev).unwrap();
        let batched = flow_interpolate_batch(&x0, &eps, &t).unwrap();
        for (i, ti) in [0.2f64, 0.7].iter().enumerate() {
            let xi = x0.narrow(0, i, 1).unwrap();
            let ei = eps.narrow(0, i, 1).unwrap();
            let want = flow_interpolate(&xi, &ei, *ti).unwrap();
            let diff = (batched.narrow(0, i, 1).unwrap() - want)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap();
            assert!(diff < 1e-7);
        }
    }

    #[test]
    fn mse_matches_recompute_oracle() {
        let dev = Device::Cpu;
        let mut r = crate::rng::stream(2, "tf-mse", 0);
        let a_v = crate::rng::normal_vec(&mut r, 24);
        let b_v = crate::rng::normal_vec(&mut r, 24);
        let a = Tensor::from_vec(a_v.clone(), (2, 3, 4), &dev).unwrap();
        let b = Tensor::from_vec(b_v.clone(), (2, 3, 4), &dev).unwrap();
        let got = mse_loss(&a, &b).unwrap().to_scalar::<f32>().unwrap() as f64;
        let want: f64 = a_v
            .iter()
            .zip(&b_v)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / 24.0;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        // Exact cases.
        assert_eq!(mse_loss(&a, &a).unwrap().to_scalar::<f32>().unwrap(), 0.0);
        let shifted = a.affine(1.0, 1.0).unwrap();
        let one = mse_loss(&shifted, &a).unwrap().to_scalar::<f32>().unwrap();
        assert!((one - 1.0).abs() < 1e-6);
    }

    #[test]
    fn alpha_sampling_is_binomially_plausible() {
        let singles: Vec<usize> = (0..10).collect();
        let multis: Vec<usize> = (10..20).collect();
        let mut picked_single = 0usize;
        for draw in 0..10_000u64 {
            let i = alpha_pick(&singles, &multis, (1, 1), 7, draw).unwrap();
            picked_single += (i < 10) as usize;
        }
        // +/- 3 sigma around 5000 at p=0.5.
        assert!((4850..=5150).contains(&picked_single), "{picked_single}");
        // Degenerate weights and empty arms.
        for draw in 0..50 {
            assert!(alpha_pick(&singles, &multis, (0, 1), 7, draw).unwrap() >= 10);
            assert!(alpha_pick(&singles, &[], (0, 1), 7, draw).unwrap() < 10);
            assert!(alpha_pick(&[], &multis, (1, 0), 7, draw).unwrap() >= 10);
        }
        assert!(alpha_pick(&[], &[], (1, 1), 7, 0).is_err());
    }

    fn tiny_model() -> Model {
        let mut cfg = ModelConfig::default();
        cfg.backbone.layers = 2;
        cfg.backbone.d_model = 64;
        cfg.backbone.d_ff = 128;
        cfg.backbone.heads = 2;
        cfg.encoders.d_model = 64;
        Model::new(&cfg, &Device::Cpu).unwrap()
    }

    fn tiny_corpus(n: usize) -> Vec<Triplet> {
        let spec = CorpusSpec::default();
        (0..n as u64).map(|s| generate_triplet(s, &spec).unwrap()).collect()
    }

    #[test]
    fn finetune_steps_run_and_are_deterministic() {
        let triplets = tiny_corpus(2);
        let cfg = TrainConfig { steps: 2, batch_size: 2, ..Default::default() };
        let m1 = tiny_model();
        let r1 = train(&m1, &triplets, &cfg).unwrap();
        let m2 = tiny_model();
        let r2 = train(&m2, &triplets, &cfg).unwrap();
        assert_eq!(r1.len(), 2);
        let l1: Vec<f64> = r1.iter().map(|r| r.loss).collect();
        let l2: Vec<f64> = r2.iter().map(|r| r.loss).collect();
        assert_eq!(l1, l2);
        // The two runs end in identical weights.
        let names = m1.all_param_names();
        assert_eq!(m1.hash_params(&names).unwrap(), m2.hash_params(&names).unwrap());
    }

    #[test]
    fn zero_steps_leave_weights_untouched() {
        let triplets = tiny_corpus(1);
        let m = tiny_model();
        let names = m.all_param_names();
        let before = m.hash_params(&names).unwrap();
        let cfg = TrainConfig { steps: 0, batch_size: 1, ..Default::default() };
        train(&m, &triplets, &cfg).unwrap();
        assert_eq!(before, m.hash_params(&names).unwrap());
    }

    #[test]
    fn cross_only_finetune_preserves_frozen_hashes() {
        let triplets = tiny_corpus(2);
        let m = tiny_model();
        let frozen = m.frozen_param_names(LearnableSet::Cross);
        let before = m.hash_params(&frozen).unwrap();
        let cfg = TrainConfig { steps: 2, batch_size: 2, ..Default::default() };
        train(&m, &triplets, &cfg).unwrap();
        assert_eq!(before, m.hash_params(&frozen).unwrap());
        // And some trainable parameter did change.
        let trainable = m.trainable_param_names(LearnableSet::Cross);
        let m2 = tiny_model();
        let init = m2.hash_params(&trainable).unwrap();
        let after = m.hash_params(&trainable).unwrap();
        assert_ne!(init, after);
    }

    #[test]
    fn pretrain_stage_runs_with_null_references() {
        let triplets = tiny_corpus(1);
        let m = tiny_model();
        let cfg = TrainConfig { stage: Stage::Pretrain, steps: 1, batch_size: 2, ..Default::default() };
        let rows = train(&m, &triplets, &cfg).unwrap();
        assert_eq!(rows[0].stage, "pretrain");
    }

    #[test]
    fn encoder_pretraining_reduces_loss() {
        let triplets = tiny_corpus(6);
        let m = tiny_model();
        let cfg = EncoderPretrainConfig { steps: 30, batch_size: 8, ..Default::default() };
        let rows = pretrain_semantic_encoder(&m, &triplets, &cfg).unwrap();
        let head: f64 = rows[..5].iter().map(|r| r.loss).sum::<f64>() / 5.0;
        let tail: f64 = rows[rows.len() - 5..].iter().map(|r| r.loss).sum::<f64>() / 5.0;
        assert!(tail < head, "encoder loss did not drop: {head} -> {tail}");
    }

    #[test]
    fn class_ids_are_distinct_and_dense() {
        use crate::corpus::sprites::{COLORS, SHAPES, TEXTURES};
        let mut seen = std::collections::HashSet::new();
        for c in COLORS {
            for s in SHAPES {
                assert!(seen.insert(subject_class(c, s)));
            }
        }
        for t in TEXTURES {
            assert!(seen.insert(background_class(t)));
        }
        assert_eq!(seen.len(), n_classes());
        assert_eq!(*seen.iter().max().unwrap(), n_classes() - 1);
    }

    #[test]
    fn loss_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![LossRow { step: 0, loss: 1.5, lr: 1e-4, stage: "finetune".into() }];
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &rows).unwrap();
        let raw = std::fs::read_to_string(&p).unwrap();
        assert!(raw.starts_with("step,loss,lr,stage\n"));
        assert!(raw.contains("0,1.5,0.0001,finetune"));
    }
}

#[cfg(test)]
mod bench_tmp {
    use super::*;
    use crate::corpus::{generate_triplet, CorpusSpec};
    use crate::model::{Model, ModelConfig};
    use candle_core::Device;

    #[test]
    #[ignore]
    fn bench_full_size_step() {
        let cfg = ModelConfig::default();
        let m = Model::new(&cfg, &Device::Cpu).unwrap();
        let spec = CorpusSpec::default();
        let triplets: Vec<_> = (0..4u64).map(|s| generate_triplet(s, &spec).unwrap()).collect();
        let tc = TrainConfig { steps: 3, batch_size: 16, ..Default::default() };
        let t0 = std::time::Instant::now();
        train(&m, &triplets, &tc).unwrap();
        eprintln!("3 steps (cross, batch16): {:?}", t0.elapsed());
        let tc = TrainConfig { steps: 3, batch_size: 16, learnable_set: crate::model::LearnableSet::Full, stage: Stage::Pretrain, ..Default::default() };
        let t0 = std::time::Instant::now();
        train(&m, &triplets, &tc).unwrap();
        eprintln!("3 steps (pretrain full, batch16): {:?}", t0.elapsed());
    }
}
