//! Latent video diffusion transformer predicting flow-matching velocity.
//!
//! The noise latent is channel-concatenated with the spatial condition
//! latent, patch-embedded over (t, h, w) patches, and processed by
//! pre-norm transformer blocks with adaLN timestep modulation. Each block
//! runs self-attention, text cross-attention and, every
//! `image_cross_stride` blocks, image cross-attention that shares the text
//! branch's query projection; the two cross outputs are summed into the
//! residual stream. Image cross output projections start at zero so an
//! untrained model ignores references.

use crate::error::{Error, Result};
use crate::nn;
use candle_core::{DType, Device, Tensor, D};
use candle_nn::{linear, layer_norm, LayerNorm, LayerNormConfig, Linear, Module, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Patch extent along (t, h, w) of the latent grid.
    pub patch: (usize, usize, usize),
    /// Channels of the noise latent; the input sees twice this after the
    /// condition concat.
    pub latent_channels: usize,
    /// Image cross-attention sits in every `image_cross_stride`-th block.
    pub image_cross_stride: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            layers: 8,
            heads: 4,
            d_ff: 512,
            patch: (1, 2, 2),
            latent_channels: 8,
            image_cross_stride: 1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 8 != 0 {
            return Err(Error::config("d_model must be a multiple of 8 for factorized positions"));
        }
        if self.layers == 0 || self.image_cross_stride == 0 {
            return Err(Error::config("layers and image_cross_stride must be >= 1"));
        }
        let (pt, ph, pw) = self.patch;
        if pt == 0 || ph == 0 || pw == 0 {
            return Err(Error::config("patch extents must be >= 1"));
        }
        Ok(())
    }

    /// Blocks that carry image cross-attention.
    pub fn image_cross_layers(&self) -> Vec<usize> {
        (0..self.layers).filter(|l| l % self.image_cross_stride == 0).collect()
    }
}

/// Zero-initialized parameter groups for production models: adaLN modulation
/// projections and image cross-attention output projections.
pub const ZERO_INIT: &[&str] = &["ada", "img_cross.out"];

struct Block {
    ln_self: LayerNorm,
    ada: Linear,
    sa_q: Linear,
    sa_k: Linear,
    sa_v: Linear,
    sa_out: Linear,
    ln_cross: LayerNorm,
    cross_q: Linear,
    text_k: Linear,
    text_v: Linear,
    text_out: Linear,
    img_kvo: Option<(Linear, Linear, Linear)>,
    ln_mlp: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

pub struct Backbone {
    pub varmap: VarMap,
    cfg: BackboneConfig,
    device: Device,
    dtype: DType,
    patch_embed: Linear,
    time_fc1: Linear,
    time_fc2: Linear,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    final_ada: Linear,
    head: Linear,
    null_text: Tensor,
    null_image: Tensor,
}

fn no_affine() -> LayerNormConfig {
    LayerNormConfig { affine: false, eps: 1e-5, remove_mean: true }
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig, device: &Device, dtype: DType, seed: u64) -> Result<Self> {
        Self::new_with_init(cfg, device, dtype, seed, ZERO_INIT)
    }

    /// Build with an explicit zero-init list (tests pass `&[]` for a fully
    /// random model, e.g. for gradient checks).
    pub fn new_with_init(
        cfg: &BackboneConfig,
        device: &Device,
        dtype: DType,
        seed: u64,
        zero_init: &[&str],
    ) -> Result<Self> {
        cfg.validate()?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, device);
        let d = cfg.d_model;
        let (pt, ph, pw) = cfg.patch;
        let in_p = 2 * cfg.latent_channels * pt * ph * pw;
        let out_p = cfg.latent_channels * pt * ph * pw;
        let patch_embed = linear(in_p, d, vb.pp("patch_embed"))?;
        let time_fc1 = linear(d, d, vb.pp("time.fc1"))?;
        let time_fc2 = linear(d, d, vb.pp("time.fc2"))?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let vb = vb.pp(format!("layer{l}"));
            let img_kvo = if l % cfg.image_cross_stride == 0 {
                Some((
                    linear(d, d, vb.pp("img_cross.k"))?,
                    linear(d, d, vb.pp("img_cross.v"))?,
                    linear(d, d, vb.pp("img_cross.out"))?,
                ))
            } else {
                None
            };
            blocks.push(Block {
                ln_self: layer_norm(d, no_affine(), vb.pp("ln_self"))?,
                ada: linear(d, 6 * d, vb.pp("ada"))?,
                sa_q: linear(d, d, vb.pp("self.q"))?,
                sa_k: linear(d, d, vb.pp("self.k"))?,
                sa_v: linear(d, d, vb.pp("self.v"))?,
                sa_out: linear(d, d, vb.pp("self.out"))?,
                ln_cross: layer_norm(d, no_affine(), vb.pp("ln_cross"))?,
                cross_q: linear(d, d, vb.pp("cross.q"))?,
                text_k: linear(d, d, vb.pp("text_cross.k"))?,
                text_v: linear(d, d, vb.pp("text_cross.v"))?,
                text_out: linear(d, d, vb.pp("text_cross.out"))?,
                img_kvo,
                ln_mlp: layer_norm(d, no_affine(), vb.pp("ln_mlp"))?,
                fc1: linear(d, cfg.d_ff, vb.pp("mlp.fc1"))?,
                fc2: linear(cfg.d_ff, d, vb.pp("mlp.fc2"))?,
            });
        }
        let ln_final = layer_norm(d, no_affine(), vb.pp("ln_final"))?;
        let final_ada = linear(d, 2 * d, vb.pp("final.ada"))?;
        let head = linear(d, out_p, vb.pp("head"))?;
        let null_text = vb.get_with_hints((1, d), "null.text", candle_nn::init::ZERO)?;
        let null_image = vb.get_with_hints((1, d), "null.image", candle_nn::init::ZERO)?;
        nn::deterministic_init(&varmap, seed, zero_init)?;
        Ok(Self {
            varmap,
            cfg: cfg.clone(),
            device: device.clone(),
            dtype,
            patch_embed,
            time_fc1,
            time_fc2,
            blocks,
            ln_final,
            final_ada,
            head,
            null_text,
            null_image,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Learned null text sequence, `[B, 1, d_model]`.
    pub fn null_text_sequence(&self, batch: usize) -> Result<Tensor> {
        Ok(self.null_text.unsqueeze(0)?.broadcast_as((batch, 1, self.cfg.d_model))?.contiguous()?)
    }

    /// Learned null image-token sequence, `[B, 1, d_model]`.
    pub fn null_image_sequence(&self, batch: usize) -> Result<Tensor> {
        Ok(self.null_image.unsqueeze(0)?.broadcast_as((batch, 1, self.cfg.d_model))?.contiguous()?)
    }

    /// Velocity prediction.
    ///
    /// - `x`, `cond`: `[B, C, T_lat, H_lat, W_lat]` noise latent and spatial
    ///   condition latent (same shape).
    /// - `t`: `[B]` flow time in `[0, 1]`.
    /// - `text`: `[B, L, d]` embedded caption; `text_mask`: `[B, L]` with 1
    ///   for real positions (None = all real).
    /// - `image`: `[B, Li, d]` image tokens; None uses the learned null
    ///   sequence. `image_mask` like `text_mask`.
    pub fn forward(
        &self,
        x: &Tensor,
        cond: &Tensor,
        t: &Tensor,
        text: &Tensor,
        text_mask: Option<&Tensor>,
        image: Option<&Tensor>,
        image_mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let (b, c, tl, hl, wl) = x.dims5()?;
        if c != self.cfg.latent_channels {
            return Err(Error::shape(format!(
                "latent has {c} channels, config says {}",
                self.cfg.latent_channels
            )));
        }
        if cond.dims() != x.dims() {
            return Err(Error::shape(format!(
                "condition shape {:?} does not match latent {:?}",
                cond.dims(),
                x.dims()
            )));
        }
        let (pt, ph, pw) = self.cfg.patch;
        if tl % pt != 0 || hl % ph != 0 || wl % pw != 0 {
            return Err(Error::shape(format!(
                "latent grid {tl}x{hl}x{wl} not divisible by patch {pt}x{ph}x{pw}"
            )));
        }
        let (bt, lt, dt_) = text.dims3()?;
        if bt != b || dt_ != self.cfg.d_model {
            return Err(Error::shape(format!(
                "text tokens [{bt}, {lt}, {dt_}] incompatible with batch {b}, d_model {}",
                self.cfg.d_model
            )));
        }

        let inp = Tensor::cat(&[x, cond], 1)?; // [B, 2C, T, H, W]
        let mut h = self.patchify(&inp)?; // [B, S, P]
        h = self.patch_embed.forward(&h)?;
        let s = h.dims3()?.1;
        let pos = self.positions(tl / pt, hl / ph, wl / pw)?; // [S, d]
        h = h.broadcast_add(&pos.unsqueeze(0)?)?;
        debug_assert_eq!(s, (tl / pt) * (hl / ph) * (wl / pw));

        let temb = self.time_embedding(t)?; // [B, 1, d]

        let img_owned;
        let img = match image {
            Some(i) => i,
            None => {
                img_owned = self.null_image_sequence(b)?;
                &img_owned
            }
        };

        for block in &self.blocks {
            h = self.block_forward(block, &h, &temb, text, text_mask, img, image_mask)?;
        }

        let fa = linear_per_item(&self.final_ada, &temb)?; // [B, 1, 2d]
        let d = self.cfg.d_model;
        let shift = fa.narrow(2, 0, d)?;
        let scale = fa.narrow(2, d, d)?;
        let y = modulate(&self.ln_final.forward(&h)?, &shift, &scale)?;
        let out = self.head.forward(&y)?; // [B, S, out_p]
        self.unpatchify(&out, tl, hl, wl)
    }

    fn block_forward(
        &self,
        blk: &Block,
        h: &Tensor,
        temb: &Tensor,
        text: &Tensor,
        text_mask: Option<&Tensor>,
        img: &Tensor,
        image_mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let d = self.cfg.d_model;
        let ada = linear_per_item(&blk.ada, temb)?; // [B, 1, 6d]
        let chunk = |i: usize| ada.narrow(2, i * d, d);
        let (sh_sa, sc_sa, gate_sa) = (chunk(0)?, chunk(1)?, chunk(2)?);
        let (sh_ml, sc_ml, gate_ml) = (chunk(3)?, chunk(4)?, chunk(5)?);

        // Self-attention, gated by adaLN.
        let z = modulate(&blk.ln_self.forward(h)?, &sh_sa, &sc_sa)?;
        let q = self.heads_split(&blk.sa_q.forward(&z)?)?;
        let k = self.heads_split(&blk.sa_k.forward(&z)?)?;
        let v = self.heads_split(&blk.sa_v.forward(&z)?)?;
        let sa = self.heads_merge(&attention(&q, &k, &v, None)?)?;
        let sa = blk.sa_out.forward(&sa)?;
        let h = (h + sa.broadcast_mul(&gate_sa)?)?;

        // Cross-attention: shared queries, text + optional image, summed.
        let z = blk.ln_cross.forward(&h)?;
        let q = self.heads_split(&blk.cross_q.forward(&z)?)?;
        let tk = self.heads_split(&blk.text_k.forward(text)?)?;
        let tv = self.heads_split(&blk.text_v.forward(text)?)?;
        let mut cross = blk.text_out.forward(&self.heads_merge(&attention(&q, &tk, &tv, text_mask)?)?)?;
        if let Some((ik, iv, iout)) = &blk.img_kvo {
            let ik = self.heads_split(&ik.forward(img)?)?;
            let iv = self.heads_split(&iv.forward(img)?)?;
            let io = iout.forward(&self.heads_merge(&attention(&q, &ik, &iv, image_mask)?)?)?;
            cross = (cross + io)?;
        }
        let h = (h + cross)?;

        // MLP, gated by adaLN.
        let z = modulate(&blk.ln_mlp.forward(&h)?, &sh_ml, &sc_ml)?;
        let m = blk.fc2.forward(&blk.fc1.forward(&z)?.gelu_erf()?)?;
        Ok((h + m.broadcast_mul(&gate_ml)?)?)
    }

    fn heads_split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let hd = d / self.cfg.heads;
        Ok(x.reshape((b, l, self.cfg.heads, hd))?.transpose(1, 2)?.contiguous()?)
    }

    fn heads_merge(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, l, hd) = x.dims4()?;
        Ok(x.transpose(1, 2)?.reshape((b, l, h * hd))?)
    }

    fn patchify(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t, h, w) = x.dims5()?;
        let (pt, ph, pw) = self.cfg.patch;
        let x = x.reshape(&[b, c, t / pt, pt, h / ph, ph, w / pw, pw][..])?;
        let x = x.permute([0, 2, 4, 6, 1, 3, 5, 7])?.contiguous()?;
        Ok(x.reshape((b, (t / pt) * (h / ph) * (w / pw), c * pt * ph * pw))?)
    }

    fn unpatchify(&self, x: &Tensor, t: usize, h: usize, w: usize) -> Result<Tensor> {
        let (b, _s, _p) = x.dims3()?;
        let (pt, ph, pw) = self.cfg.patch;
        let c = self.cfg.latent_channels;
        let x = x.reshape(&[b, t / pt, h / ph, w / pw, c, pt, ph, pw][..])?;
        let x = x.permute([0, 4, 1, 5, 2, 6, 3, 7])?.contiguous()?;
        Ok(x.reshape((b, c, t, h, w))?)
    }

    /// Factorized sinusoidal positions over the (t, h, w) patch grid,
    /// concatenated per axis: `[S, d_model]`, t-major raster order.
    fn positions(&self, nt: usize, nh: usize, nw: usize) -> Result<Tensor> {
        let d = self.cfg.d_model;
        let dt = d / 4;
        let dh = (d - dt) / 2;
        let dw = d - dt - dh;
        let mut vals = Vec::with_capacity(nt * nh * nw * d);
        for it in 0..nt {
            for ih in 0..nh {
                for iw in 0..nw {
                    sinusoid_into(it as f64, dt, &mut vals);
                    sinusoid_into(ih as f64, dh, &mut vals);
                    sinusoid_into(iw as f64, dw, &mut vals);
                }
            }
        }
        let t = Tensor::from_vec(vals, (nt * nh * nw, d), &self.device)?;
        Ok(t.to_dtype(self.dtype)?)
    }

    /// Sinusoidal embedding of the (scaled) flow time through a 2-layer MLP:
    /// `[B] -> [B, 1, d_model]`.
    ///
    /// The whole time path runs on 3D tensors so every matmul sees the same
    /// inner shape regardless of batch size; this keeps batched and
    /// per-sample forward passes bit-identical (the CFG batching contract).
    fn time_embedding(&self, t: &Tensor) -> Result<Tensor> {
        let ts = t.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let d = self.cfg.d_model;
        let mut vals = Vec::with_capacity(ts.len() * d);
        for v in &ts {
            sinusoid_into(v * 1000.0, d, &mut vals);
        }
        let emb = Tensor::from_vec(vals, (ts.len(), 1, d), &self.device)?.to_dtype(self.dtype)?;
        let h = linear_per_item(&self.time_fc1, &emb)?.gelu_erf()?;
        Ok(linear_per_item(&self.time_fc2, &h)?)
    }
}

/// Apply a linear layer one batch item at a time.
///
/// candle's batched matmul is not bit-equivariant in the batch when the
/// per-item row count is 1 (the backing gemm picks a different accumulation
/// path), which would break the contract that batched CFG passes match
/// sequential ones bitwise. The time path runs on `[B, 1, d]` tensors, so
/// its linears go through this helper instead.
fn linear_per_item(lin: &Linear, x: &Tensor) -> Result<Tensor> {
    let b = x.dims3()?.0;
    if b == 1 {
        return Ok(lin.forward(x)?);
    }
    let mut outs = Vec::with_capacity(b);
    for i in 0..b {
        outs.push(lin.forward(&x.narrow(0, i, 1)?.contiguous()?)?);
    }
    Ok(Tensor::cat(&outs.iter().collect::<Vec<_>>(), 0)?)
}

/// x * (1 + scale) + shift with `[B, 1, d]` modulation vectors.
fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let one = scale.affine(1.0, 1.0)?;
    Ok(x.broadcast_mul(&one)?.broadcast_add(shift)?)
}

/// Scaled dot-product attention over `[B, H, L, hd]` tensors. `mask` is
/// `[B, Lk]` with 1.0 at attendable positions.
fn attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let hd = q.dims4()?.3;
    let mut scores = q.matmul(&k.transpose(D::Minus2, D::Minus1)?)?;
    scores = scores.affine(1.0 / (hd as f64).sqrt(), 0.0)?;
    if let Some(m) = mask {
        let (b, lk) = m.dims2()?;
        // 0 -> -1e9 additive bias; underflows to exact zero after softmax.
        let bias = m.to_dtype(scores.dtype())?.affine(1e9, -1e9)?.reshape((b, 1, 1, lk))?;
        scores = scores.broadcast_add(&bias)?;
    }
    let w = candle_nn::ops::softmax_last_dim(&scores)?;
    Ok(w.matmul(v)?)
}

/// Append the standard sin/cos embedding of `pos` at width `dim` (even).
fn sinusoid_into(pos: f64, dim: usize, out: &mut Vec<f64>) {
    let half = dim / 2;
    for i in 0..half {
        let freq = (10000f64).powf(-(i as f64) / half as f64);
        out.push((pos * freq).sin());
        out.push((pos * freq).cos());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(b: usize, dtype: DType, dev: &Device) -> (Tensor, Tensor, Tensor, Tensor) {
        let mut r = crate::rng::stream(3, "backbone-test", b as u64);
        let mk = |n: usize, r: &mut rand_chacha::ChaCha12Rng| {
            Tensor::from_vec(crate::rng::normal_vec_f64(r, n), n, dev)
                .unwrap()
                .to_dtype(dtype)
                .unwrap()
        };
        let x = mk(b * 8 * 4 * 8 * 8, &mut r).reshape((b, 8, 4, 8, 8)).unwrap();
        let cond = mk(b * 8 * 4 * 8 * 8, &mut r).reshape((b, 8, 4, 8, 8)).unwrap();
        let t = Tensor::from_vec(vec![0.5f64; b], b, dev).unwrap().to_dtype(dtype).unwrap();
        let text = mk(b * 6 * 256, &mut r).reshape((b, 6, 256)).unwrap();
        (x, cond, t, text)
    }

    #[test]
    fn forward_shape_and_determinism() {
        let dev = Device::Cpu;
        let m = Backbone::new(&BackboneConfig::default(), &dev, DType::F32, 7).unwrap();
        for b in [1usize, 3] {
            let (x, cond, t, text) = inputs(b, DType::F32, &dev);
            let out = m.forward(&x, &cond, &t, &text, None, None, None).unwrap();
            assert_eq!(out.dims(), &[b, 8, 4, 8, 8]);
            let out2 = m.forward(&x, &cond, &t, &text, None, None, None).unwrap();
            let a = out.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let bvals = out2.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, bvals);
        }
    }

    #[test]
    fn f64_forward_is_finite() {
        let dev = Device::Cpu;
        let m = Backbone::new_with_init(&BackboneConfig::default(), &dev, DType::F64, 7, &[]).unwrap();
        let (x, cond, t, text) = inputs(2, DType::F64, &dev);
        let out = m.forward(&x, &cond, &t, &text, None, None, None).unwrap();
        let s = out.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(s.is_finite() && s > 0.0);
    }

    #[test]
    fn image_cross_layer_registry_counts() {
        let c1 = BackboneConfig::default();
        assert_eq!(c1.image_cross_layers(), (0..8).collect::<Vec<_>>());
        let c2 = BackboneConfig { image_cross_stride: 2, ..Default::default() };
        assert_eq!(c2.image_cross_layers(), vec![0, 2, 4, 6]);
        let dev = Device::Cpu;
        for (cfg, expect_blocks) in [(c1, 8usize), (c2, 4)] {
            let m = Backbone::new(&cfg, &dev, DType::F32, 1).unwrap();
            let names = nn::param_names(&m.varmap);
            let n_out = names.iter().filter(|n| n.contains("img_cross.out") && n.ends_with(".weight")).count();
            assert_eq!(n_out, expect_blocks);
        }
    }

    #[test]
    fn zero_init_ignores_image_tokens() {
        // With img_cross.out zero-initialized, any image token content leaves
        // the output bitwise unchanged.
        let dev = Device::Cpu;
        let m = Backbone::new(&BackboneConfig::default(), &dev, DType::F32, 9).unwrap();
        let (x, cond, t, text) = inputs(2, DType::F32, &dev);
        let base = m.forward(&x, &cond, &t, &text, None, None, None).unwrap();
        let mut r = crate::rng::stream(11, "img-tokens", 0);
        let img = Tensor::from_vec(crate::rng::normal_vec_f64(&mut r, 2 * 128 * 256), (2, 128, 256), &dev)
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        let with_img = m.forward(&x, &cond, &t, &text, None, Some(&img), None).unwrap();
        let a = base.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = with_img.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
        // A randomly initialized model does depend on them.
        let m2 = Backbone::new_with_init(&BackboneConfig::default(), &dev, DType::F32, 9, &[]).unwrap();
        let base2 = m2.forward(&x, &cond, &t, &text, None, None, None).unwrap();
        let with2 = m2.forward(&x, &cond, &t, &text, None, Some(&img), None).unwrap();
        let d = (base2 - with2).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn masked_padding_matches_unpadded() {
        let dev = Device::Cpu;
        let m = Backbone::new_with_init(&BackboneConfig::default(), &dev, DType::F32, 5, &[]).unwrap();
        let (x, cond, t, text) = inputs(1, DType::F32, &dev);
        let out_short = m.forward(&x, &cond, &t, &text, None, None, None).unwrap();
        // Pad the text to length 10 with junk and mask it away.
        let junk = Tensor::ones((1, 4, 256), DType::F32, &dev).unwrap();
        let padded = Tensor::cat(&[&text, &junk], 1).unwrap();
        let mask = Tensor::from_vec(
            vec![1f32, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            (1, 10),
            &dev,
        )
        .unwrap();
        let out_pad = m.forward(&x, &cond, &t, &padded, Some(&mask), None, None).unwrap();
        let d = (out_short - out_pad)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(d < 1e-6, "masked padding changed output by {d}");
    }

    #[test]
    fn shape_errors() {
        let dev = Device::Cpu;
        let m = Backbone::new(&BackboneConfig::default(), &dev, DType::F32, 1).unwrap();
        let (x, cond, t, text) = inputs(1, DType::F32, &dev);
        // Wrong channel count.
        let bad = Tensor::zeros((1, 4, 4, 8, 8), DType::F32, &dev).unwrap();
        assert!(m.forward(&bad, &bad, &t, &text, None, None, None).is_err());
        // Condition shape mismatch.
        let bad_cond = Tensor::zeros((1, 8, 4, 8, 4), DType::F32, &dev).unwrap();
        assert!(m.forward(&x, &bad_cond, &t, &text, None, None, None).is_err());
        // Indivisible grid.
        let odd = Tensor::zeros((1, 8, 4, 7, 8), DType::F32, &dev).unwrap();
        assert!(m.forward(&odd, &odd, &t, &text, None, None, None).is_err());
        // Text width mismatch.
        let bad_text = Tensor::zeros((1, 6, 128), DType::F32, &dev).unwrap();
        assert!(m.forward(&x, &cond, &t, &bad_text, None, None, None).is_err());
        let _ = (cond, text);
    }

    #[test]
    fn null_sequences_are_shared_tensors() {
        let dev = Device::Cpu;
        let m = Backbone::new(&BackboneConfig::default(), &dev, DType::F32, 2).unwrap();
        let a = m.null_text_sequence(2).unwrap();
        let row0 = a.narrow(0, 0, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let row1 = a.narrow(0, 1, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(row0, row1);
        assert!(row0.iter().any(|v| *v != 0.0), "null text embedding should be non-zero at init");
        let b = m.null_image_sequence(1).unwrap();
        assert_eq!(b.dims(), &[1, 1, 256]);
    }

    #[test]
    fn timestep_changes_output() {
        // Production init zeroes the adaLN projections, deliberately making
        // the time path inert until trained; use random init here.
        let dev = Device::Cpu;
        let m = Backbone::new_with_init(&BackboneConfig::default(), &dev, DType::F32, 4, &[]).unwrap();
        let (x, cond, _t, text) = inputs(1, DType::F32, &dev);
        let t0 = Tensor::from_vec(vec![0.1f32], 1, &dev).unwrap();
        let t1 = Tensor::from_vec(vec![0.9f32], 1, &dev).unwrap();
        let a = m.forward(&x, &cond, &t0, &text, None, None, None).unwrap();
        let b = m.forward(&x, &cond, &t1, &text, None, None, None).unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn batched_forward_matches_sequential_bitwise() {
        // The CFG sampler batches (cond, uncond) pairs; results must match
        // running the two samples separately, bit for bit.
        let dev = Device::Cpu;
        let m = Backbone::new_with_init(&BackboneConfig::default(), &dev, DType::F32, 6, &[]).unwrap();
        let (x, cond, t, text) = inputs(2, DType::F32, &dev);
        // The CFG pair always carries equal-length (masked) token sequences;
        // row 1 plays the unconditional branch with padding masked away.
        let mut r = crate::rng::stream(13, "cfg-tokens", 0);
        let img = Tensor::from_vec(crate::rng::normal_vec_f64(&mut r, 2 * 64 * 256), (2, 64, 256), &dev)
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        let mut img_mask = vec![1f32; 64];
        img_mask.extend(std::iter::once(1.0).chain(std::iter::repeat(0.0).take(63)));
        let img_mask = Tensor::from_vec(img_mask, (2, 64), &dev).unwrap();
        let text_mask = Tensor::from_vec(
            vec![1f32, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            (2, 6),
            &dev,
        )
        .unwrap();
        let full = m
            .forward(&x, &cond, &t, &text, Some(&text_mask), Some(&img), Some(&img_mask))
            .unwrap();
        for i in 0..2 {
            let sl = |t: &Tensor| t.narrow(0, i, 1).unwrap().contiguous().unwrap();
            let one = m
                .forward(
                    &sl(&x),
                    &sl(&cond),
                    &sl(&t),
                    &sl(&text),
                    Some(&sl(&text_mask)),
                    Some(&sl(&img)),
                    Some(&sl(&img_mask)),
                )
                .unwrap();
            let a = full.narrow(0, i, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = one.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b, "sample {i} diverges between batched and sequential");
        }
    }
}


