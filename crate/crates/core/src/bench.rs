//! Micro evaluation suite: composition-consistency, visual-quality, and
//! prompt-following metrics with synthetic-corpus oracles, plus a weighted
//! comprehensive score and a crash-tolerant suite runner.
//!
//! The corpus palette is closed, so element tracking is color template
//! matching against the case's own subject colors and background render;
//! consistency metrics compare semantic-encoder features of tracked crops
//! against the reference features.

use crate::corpus::{
    mask_centroid, ElementSet, ElementTag, MotionKind, StructuredCaption, Triplet,
};
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::Model;
use crate::sampler::{self, SamplerConfig};
use image::RgbImage;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Tracking
// ---------------------------------------------------------------------------

/// One tracked element in one frame.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub mask: Vec<bool>,
    pub centroid: (f64, f64),
    pub area: usize,
}

/// Per-pixel color budget for claiming a pixel as a subject (squared RGB
/// distance); generous because decoded videos are soft.
const COLOR_BUDGET: f64 = 3.0 * 60.0 * 60.0;
/// Minimum claimed pixels for a subject to count as found in a frame.
const MIN_AREA: usize = 10;

/// Track every subject of `elements` through `frames` by nearest-color
/// assignment: a pixel belongs to the closest subject color when that beats
/// both the color budget and the reference background at the same location.
/// Returns `[subject][frame]`.
pub fn track_subjects(
    frames: &[RgbImage],
    elements: &ElementSet,
) -> Result<Vec<Vec<Option<TrackState>>>> {
    if frames.is_empty() {
        return Err(Error::shape("empty video"));
    }
    let w = frames[0].width();
    let h = frames[0].height();
    let bg = &elements.background;
    if bg.width() != w || bg.height() != h {
        return Err(Error::shape("background size does not match the video frames"));
    }
    let colors: Vec<[f64; 3]> = elements
        .subjects
        .iter()
        .map(|s| {
            let c = s.color.rgb();
            [c[0] as f64, c[1] as f64, c[2] as f64]
        })
        .collect();
    let n = colors.len();
    let mut out: Vec<Vec<Option<TrackState>>> = vec![Vec::with_capacity(frames.len()); n];
    for frame in frames {
        if frame.width() != w || frame.height() != h {
            return Err(Error::shape("inconsistent frame sizes"));
        }
        let mut masks = vec![vec![false; (w * h) as usize]; n];
        for (x, y, p) in frame.enumerate_pixels() {
            let b = bg.get_pixel(x, y);
            let d_bg: f64 = (0..3).map(|c| (p[c] as f64 - b[c] as f64).powi(2)).sum();
            let mut best: Option<(usize, f64)> = None;
            for (i, col) in colors.iter().enumerate() {
                let d: f64 = (0..3).map(|c| (p[c] as f64 - col[c]).powi(2)).sum();
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, d)) = best {
                if d <= COLOR_BUDGET && d < d_bg {
                    masks[i][(y * w + x) as usize] = true;
                }
            }
        }
        for (i, mask) in masks.into_iter().enumerate() {
            let area = mask.iter().filter(|b| **b).count();
            let state = mask_centroid(&mask, w).and_then(|centroid| {
                (area >= MIN_AREA).then_some(TrackState { mask, centroid, area })
            });
            out[i].push(state);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Consistency metrics
// ---------------------------------------------------------------------------

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    dot / (na * nb)
}

fn pooled(model: &Model, img: &RgbImage) -> Result<Vec<f32>> {
    Ok(model
        .semantic
        .pooled_feature(img, model.device())?
        .to_vec1::<f32>()?)
}

/// Bounding-box crop of a tracked mask resized to the encoder input size.
fn tracked_crop(model: &Model, frame: &RgbImage, state: &TrackState) -> Option<RgbImage> {
    let crop = imageio::crop_mask_bbox(frame, &state.mask, frame.width())?;
    let size = model.cfg.encoders.image_size as u32;
    Some(image::imageops::resize(
        &crop,
        size,
        size,
        image::imageops::FilterType::Triangle,
    ))
}

/// Mean clamped cosine between the reference feature and tracked-crop
/// features across frames; `(score, found_in_any_frame)`.
pub fn subject_consistency(
    model: &Model,
    frames: &[RgbImage],
    tracks: &[Option<TrackState>],
    reference: &RgbImage,
) -> Result<(f64, bool)> {
    if frames.is_empty() {
        return Err(Error::shape("empty video"));
    }
    let ref_feat = pooled(model, reference)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (frame, state) in frames.iter().zip(tracks) {
        if let Some(state) = state {
            if let Some(crop) = tracked_crop(model, frame, state) {
                sum += cosine(&ref_feat, &pooled(model, &crop)?).clamp(0.0, 1.0);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Ok((0.0, false));
    }
    Ok((sum / n as f64, true))
}

/// Mean clamped cosine between the reference-background feature and frame
/// features with every subject pixel matted to white. Frames with no
/// background pixels are skipped; all frames skipped is an error.
pub fn background_consistency(
    model: &Model,
    frames: &[RgbImage],
    subject_masks: &[Vec<Vec<bool>>],
    reference: &RgbImage,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::shape("empty video"));
    }
    let ref_feat = pooled(model, reference)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (fi, frame) in frames.iter().enumerate() {
        let mut matted = frame.clone();
        let w = frame.width();
        let mut bg_pixels = (w * frame.height()) as usize;
        for masks in subject_masks {
            for (i, on) in masks[fi].iter().enumerate() {
                if *on {
                    let (x, y) = (i as u32 % w, i as u32 / w);
                    if matted.get_pixel(x, y) != &image::Rgb([255, 255, 255]) {
                        bg_pixels -= 1;
                    }
                    matted.put_pixel(x, y, image::Rgb([255, 255, 255]));
                }
            }
        }
        if bg_pixels == 0 {
            continue;
        }
        sum += cosine(&ref_feat, &pooled(model, &matted)?).clamp(0.0, 1.0);
        n += 1;
    }
    if n == 0 {
        return Err(Error::runtime("no frame kept any background pixels"));
    }
    Ok(sum / n as f64)
}

// ---------------------------------------------------------------------------
// Visual-quality proxies
// ---------------------------------------------------------------------------

fn frame_f64(frame: &RgbImage) -> Vec<f64> {
    frame.as_raw().iter().map(|v| *v as f64 / 255.0).collect()
}

/// Mean absolute inter-frame difference over normalized pixels, in [0, 1];
/// 0 iff all frames are identical.
pub fn dynamic_degree(frames: &[RgbImage]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::shape("dynamic degree needs at least two frames"));
    }
    let data: Vec<Vec<f64>> = frames.iter().map(frame_f64).collect();
    let per_frame = data[0].len() as f64;
    let mut acc = 0.0;
    for w in data.windows(2) {
        acc += w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() / per_frame;
    }
    Ok(acc / (frames.len() - 1) as f64)
}

/// 1 − half the mean absolute second temporal difference, clamped to [0, 1];
/// exactly 1 for static or constant-velocity (per-pixel linear) videos.
pub fn motion_smoothness(frames: &[RgbImage]) -> Result<f64> {
    if frames.len() < 3 {
        return Err(Error::shape("motion smoothness needs at least three frames"));
    }
    let data: Vec<Vec<f64>> = frames.iter().map(frame_f64).collect();
    let per_frame = data[0].len() as f64;
    let mut acc = 0.0;
    for w in data.windows(3) {
        acc += w[2]
            .iter()
            .zip(&w[1])
            .zip(&w[0])
            .map(|((c, b), a)| (c - 2.0 * b + a).abs())
            .sum::<f64>()
            / per_frame;
    }
    let mean = acc / (frames.len() - 2) as f64;
    Ok((1.0 - mean / 2.0).clamp(0.0, 1.0))
}

/// Sharpness proxy: mean absolute 4-neighbor Laplacian of the grayscale
/// video, normalized to [0, 1].
pub fn image_quality_proxy(frames: &[RgbImage]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::shape("empty video"));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for frame in frames {
        let (w, h) = (frame.width() as i64, frame.height() as i64);
        let gray = |x: i64, y: i64| {
            let p = frame.get_pixel(x as u32, y as u32);
            (p[0] as f64 + p[1] as f64 + p[2] as f64) / (3.0 * 255.0)
        };
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let lap = 4.0 * gray(x, y) - gray(x - 1, y) - gray(x + 1, y) - gray(x, y - 1)
                    - gray(x, y + 1);
                acc += lap.abs() / 4.0;
                n += 1;
            }
        }
    }
    Ok(acc / n as f64)
}

// ---------------------------------------------------------------------------
// Prompt following
// ---------------------------------------------------------------------------

/// Cosine between the pooled text embedding of the caption and the pooled
/// semantic-encoder embedding of the video frames, in [-1, 1].
pub fn prompt_similarity(model: &Model, frames: &[RgbImage], caption: &str) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::shape("empty video"));
    }
    let dev = model.device();
    let ids = model.tokenizer.tokenize(caption)?;
    let text = model.text.embed(&ids)?.tokens; // [L, d]
    let text_pooled = text.mean(0)?.to_vec1::<f32>()?;
    let mut imgs = Vec::with_capacity(frames.len());
    for f in frames {
        imgs.push(imageio::image_to_tensor(f, dev)?);
    }
    let batch = candle_core::Tensor::stack(&imgs, 0)?;
    let tokens = model.semantic.encode_batch(&batch)?; // [T, G*G, d]
    let video_pooled = tokens.mean(1)?.mean(0)?.to_vec1::<f32>()?;
    Ok(cosine(&text_pooled, &video_pooled).clamp(-1.0, 1.0))
}

/// Verdict for one motion predicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredicateResult {
    pub subject: usize,
    pub motion: MotionKind,
    pub satisfied: bool,
    pub flag: Option<String>,
}

/// Check every caption motion predicate against tracked centroids; returns
/// the fraction satisfied and the per-predicate verdicts. An untrackable
/// element counts as a failed predicate.
pub fn script_adherence(
    caption: &StructuredCaption,
    tracks: &[Vec<Option<TrackState>>],
) -> Result<(f64, Vec<PredicateResult>)> {
    if caption.subjects.len() != tracks.len() {
        return Err(Error::shape(format!(
            "{} caption subjects vs {} tracks",
            caption.subjects.len(),
            tracks.len()
        )));
    }
    let mut results = Vec::new();
    for (i, slot) in caption.subjects.iter().enumerate() {
        let states: Option<Vec<&TrackState>> =
            tracks[i].iter().map(|s| s.as_ref()).collect();
        let (satisfied, flag) = match states {
            None => (false, Some("element untrackable in some frame".to_string())),
            Some(states) => (motion_predicate(slot.motion, &states), None),
        };
        results.push(PredicateResult { subject: i, motion: slot.motion, satisfied, flag });
    }
    let frac =
        results.iter().filter(|r| r.satisfied).count() as f64 / results.len().max(1) as f64;
    Ok((frac, results))
}

/// Tolerance (pixels) below which a centroid is considered stationary.
const STILL_TOL: f64 = 1.5;

fn motion_predicate(kind: MotionKind, states: &[&TrackState]) -> bool {
    let first = states[0].centroid;
    let last = states[states.len() - 1].centroid;
    let dx = last.0 - first.0;
    let dy = last.1 - first.1;
    match kind {
        MotionKind::TranslateLeft => dx <= -1.0,
        MotionKind::TranslateRight => dx >= 1.0,
        MotionKind::TranslateUp => dy <= -1.0,
        MotionKind::TranslateDown => dy >= 1.0,
        MotionKind::Bounce => {
            let min_y = states.iter().map(|s| s.centroid.1).fold(f64::INFINITY, f64::min);
            first.1 - min_y >= 1.0 && dy.abs() <= STILL_TOL && dx.abs() <= STILL_TOL
        }
        MotionKind::Rotate => dx.abs() <= STILL_TOL && dy.abs() <= STILL_TOL,
        MotionKind::ScalePulse => {
            let max_a = states.iter().map(|s| s.area).max().unwrap_or(0) as f64;
            let min_a = states.iter().map(|s| s.area).min().unwrap_or(0) as f64;
            dx.abs() <= STILL_TOL && dy.abs() <= STILL_TOL && min_a > 0.0 && max_a / min_a >= 1.3
        }
        MotionKind::Static => dx.abs() <= STILL_TOL && dy.abs() <= STILL_TOL,
    }
}

// ---------------------------------------------------------------------------
// Copy-paste guard
// ---------------------------------------------------------------------------

/// True when no tracked frame crop reproduces the reference render
/// bit-exactly (resized to the reference size with nearest-neighbor, the
/// only resampling that could preserve exact bytes).
pub fn copy_paste_guard(
    frames: &[RgbImage],
    tracks: &[Option<TrackState>],
    reference: &RgbImage,
) -> bool {
    for (frame, state) in frames.iter().zip(tracks) {
        if let Some(state) = state {
            if let Some(crop) = imageio::crop_mask_bbox(frame, &state.mask, frame.width()) {
                let resized = image::imageops::resize(
                    &crop,
                    reference.width(),
                    reference.height(),
                    image::imageops::FilterType::Nearest,
                );
                if resized.as_raw() == reference.as_raw() {
                    return false;
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Per-case evaluation, report, comprehensive score
// ---------------------------------------------------------------------------

/// All metrics for one case. Tag-specific consistency values are `None`
/// when the case has no element with that tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub id_consistency: Option<f64>,
    pub object_consistency: Option<f64>,
    pub background_consistency: f64,
    pub image_quality_proxy: f64,
    pub motion_smoothness: f64,
    pub dynamic_degree: f64,
    pub prompt_similarity: f64,
    pub script_adherence: f64,
    pub copy_paste_clean: bool,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CaseResult {
    Ok(CaseMetrics),
    Failed { message: String },
}

/// Comprehensive-score weights over the three dimension groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub consistency: f64,
    pub quality: f64,
    pub prompt: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { consistency: 0.4, quality: 0.3, prompt: 0.3 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.consistency, self.quality, self.prompt] {
            if w < 0.0 {
                return Err(Error::config("weights must be >= 0"));
            }
        }
        if ((self.consistency + self.quality + self.prompt) - 1.0).abs() > 1e-9 {
            return Err(Error::config("weights must sum to 1"));
        }
        Ok(())
    }
}

/// Mean of every metric over the successful cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregates {
    pub id_consistency: Option<f64>,
    pub object_consistency: Option<f64>,
    pub background_consistency: f64,
    pub image_quality_proxy: f64,
    pub motion_smoothness: f64,
    pub dynamic_degree: f64,
    pub prompt_similarity: f64,
    pub script_adherence: f64,
    pub copy_paste_clean_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: Vec<CaseResult>,
    pub aggregates: Aggregates,
    pub comprehensive: f64,
    pub weights: Weights,
    pub failures: usize,
}

fn mean_opt(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = vals.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn aggregate(cases: &[CaseResult]) -> Result<Aggregates> {
    let ok: Vec<&CaseMetrics> = cases
        .iter()
        .filter_map(|c| match c {
            CaseResult::Ok(m) => Some(m),
            CaseResult::Failed { .. } => None,
        })
        .collect();
    if ok.is_empty() {
        return Err(Error::runtime("every benchmark case failed"));
    }
    let mean = |f: &dyn Fn(&CaseMetrics) -> f64| {
        ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
    };
    Ok(Aggregates {
        id_consistency: mean_opt(ok.iter().filter_map(|m| m.id_consistency)),
        object_consistency: mean_opt(ok.iter().filter_map(|m| m.object_consistency)),
        background_consistency: mean(&|m| m.background_consistency),
        image_quality_proxy: mean(&|m| m.image_quality_proxy),
        motion_smoothness: mean(&|m| m.motion_smoothness),
        dynamic_degree: mean(&|m| m.dynamic_degree),
        prompt_similarity: mean(&|m| m.prompt_similarity),
        script_adherence: mean(&|m| m.script_adherence),
        copy_paste_clean_fraction: mean(&|m| m.copy_paste_clean as u8 as f64),
    })
}

/// Weighted sum of the three dimension groups, each the mean of its member
/// metrics normalized to [0, 1] by their declared ranges (similarity maps
/// from [-1, 1], everything else is already in [0, 1]).
pub fn comprehensive_score(agg: &Aggregates, weights: &Weights) -> Result<f64> {
    weights.validate()?;
    let consistency_members: Vec<f64> = [agg.id_consistency, agg.object_consistency]
        .into_iter()
        .flatten()
        .chain([agg.background_consistency])
        .collect();
    let consistency =
        consistency_members.iter().sum::<f64>() / consistency_members.len() as f64;
    let quality =
        (agg.image_quality_proxy + agg.motion_smoothness + agg.dynamic_degree) / 3.0;
    let prompt = ((agg.prompt_similarity + 1.0) / 2.0 + agg.script_adherence) / 2.0;
    Ok(weights.consistency * consistency + weights.quality * quality + weights.prompt * prompt)
}

/// Evaluate one video (already decoded to frames) against its case.
pub fn evaluate_case(model: &Model, case: &Triplet, frames: &[RgbImage]) -> Result<CaseMetrics> {
    let tracks = track_subjects(frames, &case.elements)?;
    let mut flags = Vec::new();

    let mut id_scores = Vec::new();
    let mut object_scores = Vec::new();
    let mut clean = true;
    for (i, subject) in case.elements.subjects.iter().enumerate() {
        let (score, found) = subject_consistency(model, frames, &tracks[i], &subject.image)?;
        if !found {
            flags.push(format!("subject {i} not found in any frame"));
        }
        match subject.tag {
            ElementTag::Character => id_scores.push(score),
            ElementTag::Object => object_scores.push(score),
            ElementTag::Background => {}
        }
        clean &= copy_paste_guard(frames, &tracks[i], &subject.image);
    }

    let track_masks: Vec<Vec<Vec<bool>>> = tracks
        .iter()
        .map(|per_frame| {
            per_frame
                .iter()
                .map(|s| {
                    s.as_ref().map(|st| st.mask.clone()).unwrap_or_else(|| {
                        vec![false; (frames[0].width() * frames[0].height()) as usize]
                    })
                })
                .collect()
        })
        .collect();
    let background =
        background_consistency(model, frames, &track_masks, &case.elements.background)?;
    let (adherence, verdicts) = script_adherence(&case.caption, &tracks)?;
    for v in verdicts {
        if let Some(flag) = v.flag {
            flags.push(format!("subject {}: {flag}", v.subject));
        }
    }
    Ok(CaseMetrics {
        id_consistency: mean_opt(id_scores.into_iter()),
        object_consistency: mean_opt(object_scores.into_iter()),
        background_consistency: background,
        image_quality_proxy: image_quality_proxy(frames)?,
        motion_smoothness: motion_smoothness(frames)?,
        dynamic_degree: dynamic_degree(frames)?,
        prompt_similarity: prompt_similarity(model, frames, &case.rendered_caption)?,
        script_adherence: adherence,
        copy_paste_clean: clean,
        flags,
    })
}

/// Run the suite by sampling a video per case; case crashes are recorded
/// and the suite continues.
pub fn run_bench(
    model: &Model,
    cases: &[Triplet],
    sampler_cfg: &SamplerConfig,
    weights: &Weights,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        let per_case = SamplerConfig { seed: sampler_cfg.seed ^ case.seed, ..sampler_cfg.clone() };
        let outcome = sampler::sample(model, &case.elements, &case.rendered_caption, &per_case)
            .and_then(|video| imageio::tensor_to_video(&video))
            .and_then(|frames| evaluate_case(model, case, &frames));
        results.push(match outcome {
            Ok(m) => CaseResult::Ok(m),
            Err(e) => CaseResult::Failed { message: e.to_string() },
        });
    }
    finish_report(results, weights)
}

/// Evaluate the ground-truth corpus videos themselves (oracle upper bound).
pub fn run_bench_ground_truth(
    model: &Model,
    cases: &[Triplet],
    weights: &Weights,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        results.push(match evaluate_case(model, case, &case.video) {
            Ok(m) => CaseResult::Ok(m),
            Err(e) => CaseResult::Failed { message: e.to_string() },
        });
    }
    finish_report(results, weights)
}

fn finish_report(results: Vec<CaseResult>, weights: &Weights) -> Result<EvalReport> {
    let aggregates = aggregate(&results)?;
    let comprehensive = comprehensive_score(&aggregates, weights)?;
    let failures = results
        .iter()
        .filter(|c| matches!(c, CaseResult::Failed { .. }))
        .count();
    Ok(EvalReport { cases: results, aggregates, comprehensive, weights: *weights, failures })
}

impl EvalReport {
    /// Plain-text table, one row per dimension.
    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        let a = &self.aggregates;
        let mut rows = vec![
            ("ID Consistency".to_string(), fmt_opt(a.id_consistency)),
            ("Object Consistency".to_string(), fmt_opt(a.object_consistency)),
            ("Background Consistency".to_string(), format!("{:.4}", a.background_consistency)),
            ("Image Quality".to_string(), format!("{:.4}", a.image_quality_proxy)),
            ("Motion Smoothness".to_string(), format!("{:.4}", a.motion_smoothness)),
            ("Dynamic Degree".to_string(), format!("{:.4}", a.dynamic_degree)),
            ("Image-Text Similarity".to_string(), format!("{:.4}", a.prompt_similarity)),
            ("Script Adherence".to_string(), format!("{:.4}", a.script_adherence)),
            ("Comprehensive Score".to_string(), format!("{:.4}", self.comprehensive)),
        ];
        rows.push(("Failed Cases".to_string(), self.failures.to_string()));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:width$}  {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---------------------------------------------------------------------------
// Suite construction
// ---------------------------------------------------------------------------

/// Build a held-out suite: triplets from a disjoint seed range, filtered so
/// every subject stays trackable in every frame (the curation that makes
/// ground-truth adherence an exact oracle).
pub fn bench_suite(
    n_cases: usize,
    seed_base: u64,
    spec: &crate::corpus::CorpusSpec,
    training_seeds: &[u64],
) -> Result<Vec<Triplet>> {
    let training: std::collections::HashSet<u64> = training_seeds.iter().copied().collect();
    let mut out = Vec::with_capacity(n_cases);
    let mut seed = seed_base;
    let mut attempts = 0usize;
    while out.len() < n_cases {
        attempts += 1;
        if attempts > n_cases * 100 {
            return Err(Error::runtime(format!(
                "could not curate {n_cases} trackable cases after {attempts} attempts"
            )));
        }
        if training.contains(&seed) {
            seed += 1;
            continue;
        }
        // Alternate single- and multi-subject cases.
        let mut spec = spec.clone();
        spec.n_subjects = 1 + (out.len() % spec.max_refs.saturating_sub(1).max(1));
        let t = crate::corpus::generate_triplet(seed, &spec)?;
        seed += 1;
        let tracks = track_subjects(&t.video, &t.elements)?;
        let all_tracked = tracks
            .iter()
            .all(|per_frame| per_frame.iter().all(|s| s.is_some()));
        if !all_tracked {
            continue;
        }
        // Ground-truth adherence must hold exactly; drop ambiguous cases
        // (e.g., a sprite that clamps against the canvas edge immediately).
        let (adh, _) = script_adherence(&t.caption, &tracks)?;
        if adh < 1.0 {
            continue;
        }
        out.push(t);
    }
    Ok(out)
}
