//! Text tokenizer/embedder over the closed caption grammar, and the semantic
//! image encoder + projection that produces image tokens for the semantic
//! conditioning branch.

use crate::corpus::grammar::{self, vocabulary};
use crate::corpus::ElementSet;
use crate::error::{Error, Result};
use crate::imageio;
use candle_core::{Device, Tensor, D};
use candle_nn::{conv2d, embedding, linear, Conv2d, Conv2dConfig, Embedding, Linear, Module, VarBuilder};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// The vocabulary file shipped with the corpus grammar.
pub const VOCAB_FILE: &str = include_str!("../assets/vocab.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodersConfig {
    /// Shared embedding width for text and image tokens.
    pub d_model: usize,
    /// Image token grid edge; each reference yields `grid * grid` tokens.
    pub grid: usize,
    /// Penultimate (pre-projection) feature width of the image encoder.
    pub feat_dim: usize,
    /// Max caption length in tokens, specials included.
    pub max_len: usize,
    /// Reference image edge expected by the image encoder.
    pub image_size: usize,
    /// Maximum reference count (subjects + background).
    pub max_refs: usize,
}

impl Default for EncodersConfig {
    fn default() -> Self {
        Self { d_model: 256, grid: 8, feat_dim: 128, max_len: 48, image_size: 64, max_refs: 4 }
    }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Whitespace tokenizer over the closed grammar vocabulary. Bijective on the
/// grammar language; anything outside errors with the offending token.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::from_tokens(vocabulary().into_iter().map(str::to_string).collect())
    }

    fn from_tokens(vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { vocab, index }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        Ok(Self::from_tokens(raw.lines().map(str::to_string).collect()))
    }

    pub fn write_vocab(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.vocab.join("\n") + "\n")?;
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn bos(&self) -> u32 {
        self.index[grammar::BOS]
    }
    pub fn eos(&self) -> u32 {
        self.index[grammar::EOS]
    }
    pub fn pad(&self) -> u32 {
        self.index[grammar::PAD]
    }
    pub fn null(&self) -> u32 {
        self.index[grammar::NULL]
    }

    /// Caption string to `[BOS, w0, .., wn, EOS]`. The empty string maps to
    /// `[BOS, EOS]`.
    pub fn tokenize(&self, caption: &str) -> Result<Vec<u32>> {
        let mut ids = vec![self.bos()];
        for word in caption.split_whitespace() {
            let id = self
                .index
                .get(word)
                .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))?;
            ids.push(*id);
        }
        ids.push(self.eos());
        Ok(ids)
    }

    /// Inverse of `tokenize`: strips specials and rejoins words.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut words = Vec::new();
        for id in ids {
            let tok = self
                .vocab
                .get(*id as usize)
                .ok_or_else(|| Error::config(format!("token id {id} out of range")))?;
            if tok == grammar::BOS || tok == grammar::EOS || tok == grammar::PAD {
                continue;
            }
            words.push(tok.as_str());
        }
        Ok(words.join(" "))
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Text embedder
// ---------------------------------------------------------------------------

/// Token embedding plus learned positions. Output `[L, d_model]` with an
/// attention mask; padded positions are zero vectors.
#[derive(Debug, Clone)]
pub struct TextEmbedding {
    /// `[L, d_model]`
    pub tokens: Tensor,
    /// `[L]`, 1.0 for real positions and 0.0 for padding.
    pub mask: Tensor,
}

pub struct TextEmbedder {
    token_emb: Embedding,
    pos_emb: Tensor,
    cfg: EncodersConfig,
}

impl TextEmbedder {
    pub fn new(cfg: &EncodersConfig, vocab_size: usize, vb: VarBuilder) -> Result<Self> {
        let token_emb = embedding(vocab_size, cfg.d_model, vb.pp("token"))?;
        let pos_emb = vb.get_with_hints((cfg.max_len, cfg.d_model), "pos.weight", candle_nn::init::ZERO)?;
        Ok(Self { token_emb, pos_emb, cfg: cfg.clone() })
    }

    /// Embed unpadded ids: `[L, d_model]`, mask of ones.
    pub fn embed(&self, ids: &[u32]) -> Result<TextEmbedding> {
        if ids.len() > self.cfg.max_len {
            return Err(Error::shape(format!("caption length {} exceeds max {}", ids.len(), self.cfg.max_len)));
        }
        let dev = self.pos_emb.device();
        let id_t = Tensor::from_vec(ids.to_vec(), (ids.len(),), dev)?;
        let emb = self.token_emb.forward(&id_t)?;
        let pos = self.pos_emb.narrow(0, 0, ids.len())?.to_dtype(emb.dtype())?;
        let tokens = (emb + pos)?;
        let mask = Tensor::ones((ids.len(),), tokens.dtype(), dev)?;
        Ok(TextEmbedding { tokens, mask })
    }

    /// Embed and right-pad to `max_len`; padded positions are zero vectors.
    pub fn embed_padded(&self, ids: &[u32]) -> Result<TextEmbedding> {
        let e = self.embed(ids)?;
        let l = ids.len();
        let pad = self.cfg.max_len - l;
        if pad == 0 {
            return Ok(e);
        }
        let dev = e.tokens.device();
        let zeros = Tensor::zeros((pad, self.cfg.d_model), e.tokens.dtype(), dev)?;
        let tokens = Tensor::cat(&[&e.tokens, &zeros], 0)?;
        let mask = Tensor::cat(&[&e.mask, &Tensor::zeros((pad,), e.mask.dtype(), dev)?], 0)?;
        Ok(TextEmbedding { tokens, mask })
    }
}

// ---------------------------------------------------------------------------
// Semantic image encoder
// ---------------------------------------------------------------------------

/// Per-reference grid tokens, flattened over the element set.
#[derive(Debug, Clone)]
pub struct ImageTokens {
    /// `[N * grid * grid, d_model]`, subjects in element order, background last.
    pub tokens: Tensor,
    pub n_refs: usize,
}

/// Small conv pyramid (3 stride-2 stages) plus a 2-layer MLP projection.
/// Grid features play the role of a vision encoder's penultimate layer; the
/// pooled penultimate feature doubles as the metric feature for the
/// benchmark's consistency scores.
pub struct SemanticEncoder {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    proj1: Linear,
    proj2: Linear,
    cfg: EncodersConfig,
}

impl SemanticEncoder {
    pub fn new(cfg: &EncodersConfig, vb_encoder: VarBuilder, vb_proj: VarBuilder) -> Result<Self> {
        let cc = Conv2dConfig { stride: 2, padding: 1, ..Default::default() };
        let conv1 = conv2d(3, 32, 3, cc, vb_encoder.pp("conv1"))?;
        let conv2 = conv2d(32, 64, 3, cc, vb_encoder.pp("conv2"))?;
        let conv3 = conv2d(64, cfg.feat_dim, 3, cc, vb_encoder.pp("conv3"))?;
        let proj1 = linear(cfg.feat_dim, cfg.d_model, vb_proj.pp("fc1"))?;
        let proj2 = linear(cfg.d_model, cfg.d_model, vb_proj.pp("fc2"))?;
        Ok(Self { conv1, conv2, conv3, proj1, proj2, cfg: cfg.clone() })
    }

    /// Grid feature map for a batch of images `[B, 3, H, W]` ->
    /// `[B, feat_dim, grid, grid]`.
    pub fn grid_features(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        if h != self.cfg.image_size || w != self.cfg.image_size {
            return Err(Error::shape(format!(
                "expected {0}x{0} reference, got {h}x{w}",
                self.cfg.image_size
            )));
        }
        let x = self.conv1.forward(images)?.gelu_erf()?;
        let x = self.conv2.forward(&x)?.gelu_erf()?;
        let x = self.conv3.forward(&x)?;
        Ok(x)
    }

    /// Apply only the 2-layer MLP projection to encoder features
    /// `[..., feat_dim] -> [..., d_model]`; used when the conv pyramid is
    /// frozen and its features cached.
    pub fn project_features(&self, seq: &Tensor) -> Result<Tensor> {
        let x = self.proj1.forward(seq)?.gelu_erf()?;
        Ok(self.proj2.forward(&x)?)
    }

    /// Grid tokens for a batch: `[B, grid*grid, d_model]` after projection.
    pub fn encode_batch(&self, images: &Tensor) -> Result<Tensor> {
        let seq = self.grid_feature_sequence(images)?;
        self.project_features(&seq)
    }

    /// Grid features in raster order: `[B, grid*grid, feat_dim]`.
    pub fn grid_feature_sequence(&self, images: &Tensor) -> Result<Tensor> {
        let feats = self.grid_features(images)?; // [B, F, G, G]
        let (b, f, g1, g2) = feats.dims4()?;
        Ok(feats.reshape((b, f, g1 * g2))?.transpose(1, 2)?.contiguous()?)
    }

    /// Mean-pooled, unnormalized penultimate features `[B, feat_dim]`;
    /// gradient-friendly batch form for encoder pretraining.
    pub fn pooled_features_batch(&self, images: &Tensor) -> Result<Tensor> {
        let feats = self.grid_features(images)?;
        Ok(feats.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    /// Grid tokens for one reference image: `[grid*grid, d_model]`.
    pub fn encode_reference(&self, image: &RgbImage, device: &Device) -> Result<Tensor> {
        let t = imageio::image_to_tensor(image, device)?.unsqueeze(0)?;
        Ok(self.encode_batch(&t)?.squeeze(0)?)
    }

    /// Pooled, L2-normalized penultimate feature for metric use: `[feat_dim]`.
    pub fn pooled_feature(&self, image: &RgbImage, device: &Device) -> Result<Tensor> {
        let t = imageio::image_to_tensor(image, device)?.unsqueeze(0)?;
        let feats = self.grid_features(&t)?; // [1, F, G, G]
        let pooled = feats.mean(D::Minus1)?.mean(D::Minus1)?.squeeze(0)?; // [F]
        let norm = pooled.sqr()?.sum_all()?.sqrt()?.to_scalar::<f32>()?.max(1e-8);
        Ok((pooled / norm as f64)?)
    }

    /// Concatenated tokens for a whole element set:
    /// `[N * grid * grid, d_model]` with subjects first, background last.
    pub fn assemble_image_tokens(&self, elements: &ElementSet, device: &Device) -> Result<ImageTokens> {
        let n = elements.len();
        if n > self.cfg.max_refs {
            return Err(Error::config(format!("{n} references exceed the max of {}", self.cfg.max_refs)));
        }
        let mut imgs = Vec::with_capacity(n);
        for s in &elements.subjects {
            imgs.push(imageio::image_to_tensor(&s.image, device)?);
        }
        imgs.push(imageio::image_to_tensor(&elements.background, device)?);
        let batch = Tensor::stack(&imgs, 0)?;
        let tokens = self.encode_batch(&batch)?; // [N, G*G, d]
        let (nn, g2, d) = tokens.dims3()?;
        Ok(ImageTokens { tokens: tokens.reshape((nn * g2, d))?, n_refs: n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::grammar::{StructuredCaption, SubjectSlot};
    use crate::corpus::motion::MOTIONS;
    use crate::corpus::sprites::{COLORS, SHAPES, TEXTURES};
    use candle_core::DType;

    #[test]
    fn vocab_file_matches_builtin_vocabulary() {
        let from_code = vocabulary();
        let from_file: Vec<&str> = VOCAB_FILE.lines().collect();
        assert_eq!(from_code, from_file);
    }

    #[test]
    fn tokenize_known_caption_to_fixed_ids() {
        let tok = Tokenizer::new();
        let ids = tok.tokenize("a red circle moves left").unwrap();
        // Ids come from the shipped vocabulary table.
        let expect: Vec<u32> = std::iter::once(tok.bos())
            .chain(["a", "red", "circle", "moves", "left"].iter().map(|w| tok.index[*w]))
            .chain(std::iter::once(tok.eos()))
            .collect();
        assert_eq!(ids, expect);
    }

    #[test]
    fn empty_string_is_bos_eos() {
        let tok = Tokenizer::new();
        assert_eq!(tok.tokenize("").unwrap(), vec![tok.bos(), tok.eos()]);
    }

    #[test]
    fn out_of_vocabulary_errors_with_the_token() {
        let tok = Tokenizer::new();
        match tok.tokenize("a red dragon moves left") {
            Err(Error::OutOfVocabulary(w)) => assert_eq!(w, "dragon"),
            other => panic!("expected OOV error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_over_random_grammar_captions() {
        let tok = Tokenizer::new();
        let mut rng = crate::rng::stream(42, "grammar-roundtrip", 0);
        use rand::Rng;
        for _ in 0..1000 {
            let n = rng.gen_range(1..=3);
            let subjects = (0..n)
                .map(|_| SubjectSlot {
                    color: COLORS[rng.gen_range(0..COLORS.len())],
                    shape: SHAPES[rng.gen_range(0..SHAPES.len())],
                    motion: MOTIONS[rng.gen_range(0..MOTIONS.len())],
                })
                .collect();
            let cap = StructuredCaption::new(subjects, TEXTURES[rng.gen_range(0..TEXTURES.len())]);
            let s = cap.render().unwrap();
            let ids = tok.tokenize(&s).unwrap();
            assert_eq!(tok.detokenize(&ids).unwrap(), s);
        }
    }

    fn build_encoders(dev: &Device) -> (candle_nn::VarMap, TextEmbedder, SemanticEncoder) {
        let cfg = EncodersConfig::default();
        let varmap = candle_nn::VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, dev);
        let tok = Tokenizer::new();
        let text = TextEmbedder::new(&cfg, tok.vocab_size(), vb.pp("text")).unwrap();
        let img = SemanticEncoder::new(&cfg, vb.pp("img_enc"), vb.pp("img_proj")).unwrap();
        crate::nn::deterministic_init(&varmap, 5, &[]).unwrap();
        (varmap, text, img)
    }

    #[test]
    fn text_embedding_shapes_and_masking() {
        let dev = Device::Cpu;
        let (_m, text, _img) = build_encoders(&dev);
        let e = text.embed(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(e.tokens.dims(), &[5, 256]);
        assert_eq!(e.mask.to_vec1::<f32>().unwrap(), vec![1.0; 5]);
        let p = text.embed_padded(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(p.tokens.dims(), &[48, 256]);
        let mask = p.mask.to_vec1::<f32>().unwrap();
        assert!(mask[..5].iter().all(|v| *v == 1.0));
        assert!(mask[5..].iter().all(|v| *v == 0.0));
        // Padded positions carry zero vectors.
        let tail = p.tokens.narrow(0, 5, 43).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(tail, 0.0);
        // Determinism.
        let e2 = text.embed(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(e.tokens.to_vec2::<f32>().unwrap(), e2.tokens.to_vec2::<f32>().unwrap());
        // Over-length input errors.
        assert!(text.embed(&vec![1u32; 49]).is_err());
    }

    #[test]
    fn image_token_counts_follow_the_n_g_g_law() {
        let dev = Device::Cpu;
        let (_m, _text, enc) = build_encoders(&dev);
        let spec = crate::corpus::CorpusSpec { n_subjects: 2, ..Default::default() };
        let t = crate::corpus::generate_triplet(3, &spec).unwrap();
        let tokens = enc.assemble_image_tokens(&t.elements, &dev).unwrap();
        // N = 2 subjects + background = 3 references.
        assert_eq!(tokens.tokens.dims(), &[3 * 64, 256]);
        let single = enc.encode_reference(&t.elements.subjects[0].image, &dev).unwrap();
        assert_eq!(single.dims(), &[64, 256]);
        // The first block equals the first subject's tokens (block structure).
        let block0 = tokens.tokens.narrow(0, 0, 64).unwrap();
        let diff = (block0 - &single).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5);
    }

    #[test]
    fn identical_images_give_identical_tokens() {
        let dev = Device::Cpu;
        let (_m, _text, enc) = build_encoders(&dev);
        let spec = crate::corpus::CorpusSpec::default();
        let t = crate::corpus::generate_triplet(9, &spec).unwrap();
        let a = enc.encode_reference(&t.elements.subjects[0].image, &dev).unwrap();
        let b = enc.encode_reference(&t.elements.subjects[0].image, &dev).unwrap();
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
    }
}
