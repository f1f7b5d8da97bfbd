//! Triplet generation: one deterministic (caption, references, video) sample.

use super::grammar::{StructuredCaption, SubjectSlot};
use super::motion::{pose_at, MotionEntry, MotionKind, MotionScript};
use super::sprites::{
    footprint, paint, rasterize_mask, render_reference, render_texture, ColorName, Shape, Texture, COLORS,
    SHAPES, TEXTURES,
};
use crate::error::{Error, Result};
use crate::rng;
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementTag {
    Character,
    Object,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arity {
    Single,
    Multi,
}

/// Corpus generation parameters. `generate_triplet` is a pure function of
/// `(seed, spec)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Square canvas edge in pixels.
    pub canvas: u32,
    /// Frames per clip.
    pub frames: usize,
    /// Maximum reference count (subjects plus the one background).
    pub max_refs: usize,
    /// Subjects in this sample.
    pub n_subjects: usize,
    /// Allowed motion kinds.
    pub motions: Vec<MotionKind>,
    /// Reference render edge in pixels.
    pub ref_size: u32,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            canvas: 64,
            frames: 16,
            max_refs: 4,
            n_subjects: 1,
            motions: super::motion::MOTIONS.to_vec(),
            ref_size: 64,
        }
    }
}

/// One matted subject reference together with its ground-truth descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRef {
    pub image: RgbImage,
    pub color: ColorName,
    pub shape: Shape,
    pub tag: ElementTag,
}

/// Ordered reference images: subjects matted on white plus one background.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSet {
    pub subjects: Vec<SubjectRef>,
    pub background: RgbImage,
    pub background_tex: Texture,
}

impl ElementSet {
    /// Total reference count, background included.
    pub fn len(&self) -> usize {
        self.subjects.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false // there is always a background
    }
}

/// One training/eval sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub caption: StructuredCaption,
    pub rendered_caption: String,
    pub elements: ElementSet,
    /// RGB frames, `spec.frames` of them.
    pub video: Vec<RgbImage>,
    /// Visible-pixel masks, indexed `[subject][frame]`, row-major canvas bools.
    pub masks: Vec<Vec<Vec<bool>>>,
    pub script: MotionScript,
    pub seed: u64,
}

/// Per-subject sprite geometry used by the renderer.
#[derive(Debug, Clone, Copy)]
struct SpriteGeom {
    radius: f64,
}

/// Build the structured caption for a script over an element set.
pub fn render_caption(script: &MotionScript, elements: &ElementSet) -> Result<StructuredCaption> {
    let mut subjects = Vec::new();
    for entry in &script.entries {
        let subject = elements
            .subjects
            .get(entry.element_id)
            .ok_or_else(|| Error::config(format!("script references unknown element {}", entry.element_id)))?;
        subjects.push(SubjectSlot { color: subject.color, shape: subject.shape, motion: entry.kind });
    }
    Ok(StructuredCaption::new(subjects, elements.background_tex))
}

/// Deterministically generate one triplet from `(seed, spec)`.
pub fn generate_triplet(seed: u64, spec: &CorpusSpec) -> Result<Triplet> {
    if spec.n_subjects == 0 {
        return Err(Error::config("spec needs at least one subject"));
    }
    if spec.n_subjects + 1 > spec.max_refs {
        return Err(Error::config(format!(
            "{} subjects plus background exceed max_refs {}",
            spec.n_subjects, spec.max_refs
        )));
    }
    if spec.motions.is_empty() {
        return Err(Error::config("spec allows no motion kinds"));
    }
    if spec.frames < 2 {
        return Err(Error::config("need at least two frames"));
    }

    let mut rng = rng::stream(seed, "triplet", 0);
    let tex = TEXTURES[rng.gen_range(0..TEXTURES.len())];
    let background = render_texture(tex, spec.canvas, spec.canvas);

    // Distinct (color, shape) pairs so captions and trackers are unambiguous.
    // Colors are drawn without replacement.
    let mut colors: Vec<ColorName> = COLORS.to_vec();
    colors.shuffle(&mut rng);
    let mut descriptors = Vec::new();
    for i in 0..spec.n_subjects {
        let shape = SHAPES[rng.gen_range(0..SHAPES.len())];
        descriptors.push((colors[i], shape));
    }

    // Geometry and motion per subject; positions avoid initial overlap.
    let mut geoms: Vec<SpriteGeom> = Vec::new();
    let mut entries: Vec<MotionEntry> = Vec::new();
    for (i, _) in descriptors.iter().enumerate() {
        let radius = rng.gen_range(6..=8) as f64;
        let kind = spec.motions[rng.gen_range(0..spec.motions.len())];
        let speed = match kind {
            MotionKind::Static => 0.0,
            _ => rng.gen_range(1..=3) as f64,
        };
        let margin = radius + 2.0;
        let hi = spec.canvas as f64 - 1.0 - margin;
        let (mut x, mut y) = (0.0, 0.0);
        for attempt in 0..64 {
            x = (rng.gen_range(margin..hi)).round();
            y = (rng.gen_range(margin..hi)).round();
            let clear = entries.iter().zip(&geoms).all(|(e, g)| {
                let dx = e.start_x - x;
                let dy = e.start_y - y;
                (dx * dx + dy * dy).sqrt() >= g.radius + radius + 3.0
            });
            if clear || attempt == 63 {
                break;
            }
        }
        geoms.push(SpriteGeom { radius });
        entries.push(MotionEntry { element_id: i, kind, speed, start_x: x, start_y: y });
    }
    let script = MotionScript { entries };

    // Reference renders use a pose jitter distinct from every video frame:
    // rotation within +/-20 degrees, scale in 0.8..1.2, and a much larger
    // nominal radius than the in-video sprite.
    let mut subjects = Vec::new();
    for (i, (color, shape)) in descriptors.iter().enumerate() {
        let mut jrng = rng::stream(seed, "ref-jitter", i as u64);
        let rot = rng::uniform(&mut jrng, -20f64.to_radians(), 20f64.to_radians());
        let scale = rng::uniform(&mut jrng, 0.8, 1.2);
        let image = render_reference(*shape, *color, spec.ref_size, 20.0, rot, scale);
        let tag = match shape {
            Shape::Circle | Shape::Star => ElementTag::Character,
            Shape::Square | Shape::Triangle => ElementTag::Object,
        };
        subjects.push(SubjectRef { image, color: *color, shape: *shape, tag });
    }
    let elements = ElementSet { subjects, background: background.clone(), background_tex: tex };

    // Render frames back-to-front; a subject's mask covers only its visible
    // (topmost) pixels.
    let mut video = Vec::with_capacity(spec.frames);
    let mut masks: Vec<Vec<Vec<bool>>> = vec![Vec::with_capacity(spec.frames); spec.n_subjects];
    for t in 0..spec.frames {
        let mut frame = background.clone();
        let mut frame_masks: Vec<Vec<bool>> = Vec::with_capacity(spec.n_subjects);
        for (i, entry) in script.entries.iter().enumerate() {
            let pose = pose_at(entry, t, spec.frames, spec.canvas, geoms[i].radius);
            let fp = footprint(
                descriptors[i].1,
                pose.cx,
                pose.cy,
                geoms[i].radius,
                pose.rot,
                pose.scale,
            );
            let mask = rasterize_mask(&fp, spec.canvas, spec.canvas);
            paint(&mut frame, &mask, descriptors[i].0.rgb());
            frame_masks.push(mask);
        }
        // Occlusion: later subjects draw over earlier ones.
        for i in 0..spec.n_subjects {
            let mut visible = frame_masks[i].clone();
            for later in frame_masks.iter().skip(i + 1) {
                for (v, l) in visible.iter_mut().zip(later) {
                    if *l {
                        *v = false;
                    }
                }
            }
            masks[i].push(visible);
        }
        video.push(frame);
    }

    let caption = render_caption(&script, &elements)?;
    let rendered_caption = caption.render()?;
    Ok(Triplet { caption, rendered_caption, elements, video, masks, script, seed })
}

/// Centroid of a boolean mask, if non-empty.
pub fn mask_centroid(mask: &[bool], width: u32) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, on) in mask.iter().enumerate() {
        if *on {
            sx += (i as u32 % width) as f64;
            sy += (i as u32 / width) as f64;
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some((sx / n as f64, sy / n as f64))
    }
}
