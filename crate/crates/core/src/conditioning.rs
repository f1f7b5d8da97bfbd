//! Spatial-branch condition assembly and classifier-free-guidance dropout.
//!
//! References are white-matted, repeated along the frame dimension, and
//! either (before-vae) concatenated in pixel space, zero-padded to the clip
//! length and encoded in one pass, or (after-vae) encoded independently and
//! concatenated in latent space with zero latent frames appended. Both modes
//! produce exactly the noise latent's shape.

use crate::autoencoder::Autoencoder;
use crate::corpus::ElementSet;
use crate::error::{Error, Result};
use crate::imageio;
use candle_core::Tensor;
use image::RgbImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialMode {
    BeforeVae,
    AfterVae,
}

impl std::fmt::Display for SpatialMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpatialMode::BeforeVae => write!(f, "before-vae"),
            SpatialMode::AfterVae => write!(f, "after-vae"),
        }
    }
}

impl std::str::FromStr for SpatialMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before-vae" | "before" => Ok(SpatialMode::BeforeVae),
            "after-vae" | "after" => Ok(SpatialMode::AfterVae),
            other => Err(Error::config(format!("unknown spatial mode {other:?}"))),
        }
    }
}

/// Condition latent aligned with the noise latent grid.
#[derive(Debug, Clone)]
pub struct SpatialCondition {
    /// `[C_lat, T_lat, H_lat, W_lat]`, same shape as the noise latent.
    pub latent: Tensor,
    pub mode: SpatialMode,
    pub repeat: usize,
}

/// CFG dropout probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutPolicy {
    pub p_text: f64,
    pub p_ref: f64,
}

impl Default for DropoutPolicy {
    fn default() -> Self {
        Self { p_text: 0.30, p_ref: 0.10 }
    }
}

impl DropoutPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_text", self.p_text), ("p_ref", self.p_ref)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Outcome of the per-sample dropout draw. Text and reference draws are
/// independent; a dropped reference nulls BOTH the semantic tokens and the
/// spatial condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropDecision {
    pub drop_text: bool,
    pub drop_ref: bool,
}

/// Draw dropout decisions from a stream keyed by `(seed, sample_index)`, so
/// any worker reproduces the same corpus of decisions.
pub fn draw_dropout(policy: &DropoutPolicy, seed: u64, sample_index: u64) -> DropDecision {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, "cfg-dropout", sample_index);
    let t: f64 = rng.gen();
    let r: f64 = rng.gen();
    DropDecision { drop_text: t < policy.p_text, drop_ref: r < policy.p_ref }
}

/// White-matte a subject: pixels outside the mask become (255,255,255).
pub fn matte_subject(image: &RgbImage, mask: &[bool]) -> Result<RgbImage> {
    let (w, h) = (image.width(), image.height());
    if mask.len() != (w * h) as usize {
        return Err(Error::shape(format!(
            "mask has {} entries for a {w}x{h} image",
            mask.len()
        )));
    }
    let mut out = image.clone();
    for (i, on) in mask.iter().enumerate() {
        if !on {
            out.put_pixel(i as u32 % w, i as u32 / w, image::Rgb([255, 255, 255]));
        }
    }
    Ok(out)
}

/// Build the spatial condition for an element set.
///
/// `frames` is the training clip length T. Each reference is repeated
/// `repeat` times along the frame dimension; subjects come first, background
/// last, matching the semantic-token ordering.
pub fn assemble_spatial_condition(
    elements: &ElementSet,
    mode: SpatialMode,
    repeat: usize,
    frames: usize,
    vae: &Autoencoder,
) -> Result<SpatialCondition> {
    if repeat == 0 {
        return Err(Error::config("repeat factor must be >= 1"));
    }
    let n = elements.len();
    if n * repeat > frames {
        return Err(Error::config(format!(
            "references exceed frame budget: {n} refs x repeat {repeat} > {frames} frames"
        )));
    }
    let device = vae.device().clone();
    let mut ref_imgs: Vec<&RgbImage> = elements.subjects.iter().map(|s| &s.image).collect();
    ref_imgs.push(&elements.background);

    let t_lat = vae.config().latent_frames(frames);
    let latent = match mode {
        SpatialMode::BeforeVae => {
            // Pixel-space concat: [ref0 x r, ref1 x r, ..., zeros] -> encode once.
            let mut frames_px = Vec::with_capacity(frames);
            for img in &ref_imgs {
                for _ in 0..repeat {
                    frames_px.push((*img).clone());
                }
            }
            let pixel_frames = frames_px.len();
            let mut t = imageio::video_to_tensor(&frames_px, &device)?;
            if pixel_frames < frames {
                let (c, _, h, w) = t.dims4()?;
                let zeros = Tensor::zeros((c, frames - pixel_frames, h, w), t.dtype(), t.device())?;
                t = Tensor::cat(&[&t, &zeros], 1)?;
            }
            vae.encode(&t)?.data
        }
        SpatialMode::AfterVae => {
            // Latent-space concat: encode each repeated reference on its own,
            // then append zero latent frames up to T_lat.
            let mut chunks = Vec::with_capacity(n);
            for img in &ref_imgs {
                let rep: Vec<RgbImage> = std::iter::repeat((*img).clone()).take(repeat).collect();
                let t = imageio::video_to_tensor(&rep, &device)?;
                chunks.push(vae.encode(&t)?.data);
            }
            let used: usize = chunks.iter().map(|c| c.dims()[1]).sum();
            if used > t_lat {
                return Err(Error::config(format!(
                    "references exceed frame budget in latent space: {used} > {t_lat}"
                )));
            }
            let mut parts: Vec<Tensor> = chunks;
            if used < t_lat {
                let d = parts[0].dims().to_vec();
                parts.push(Tensor::zeros((d[0], t_lat - used, d[2], d[3]), parts[0].dtype(), &device)?);
            }
            Tensor::cat(&parts.iter().collect::<Vec<_>>(), 1)?
        }
    };
    // Contract: exact noise-latent shape.
    let dims = latent.dims();
    if dims[1] != t_lat {
        return Err(Error::shape(format!(
            "condition latent has {} frames, expected {t_lat}",
            dims[1]
        )));
    }
    Ok(SpatialCondition { latent, mode, repeat })
}
