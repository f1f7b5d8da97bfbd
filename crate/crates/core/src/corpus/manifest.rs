//! Corpus directory layout and manifest.
//!
//! ```text
//! <out>/manifest.json
//! <out>/sample_00000/
//!   sample.json            caption + script + seed + tags
//!   frames/frame_000.png   lossless RGB frames
//!   masks/subject0_f000.png binary masks, one per subject per frame
//!   refs/subject_0.png     white-matted subject references
//!   refs/background.png
//! ```

use super::grammar::StructuredCaption;
use super::motion::MotionScript;
use super::sprites::Texture;
use super::triplet::{generate_triplet, Arity, CorpusSpec, ElementSet, ElementTag, SubjectRef, Triplet};
use crate::error::{Error, Result};
use crate::imageio;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub dir: String,
    pub seed: u64,
    pub arity: Arity,
    pub n_subjects: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub base_seed: u64,
    pub n_samples: usize,
    pub single_count: usize,
    pub multi_count: usize,
    pub spec: CorpusSpec,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleSidecar {
    format_version: u32,
    seed: u64,
    caption: StructuredCaption,
    rendered_caption: String,
    script: MotionScript,
    background: Texture,
    subject_tags: Vec<ElementTag>,
    frames: usize,
    canvas: u32,
}

/// Split `n` into (single, multi) counts for a `single:multi` mixing ratio.
pub fn split_arity(n: usize, ratio: (u32, u32)) -> (usize, usize) {
    let (s, m) = ratio;
    if s == 0 && m == 0 {
        return (0, n);
    }
    let single = ((n as f64) * s as f64 / (s + m) as f64).round() as usize;
    (single.min(n), n - single.min(n))
}

/// Generate and write `n_samples` triplets. Samples `0..single` are
/// single-subject, the rest multi-subject; per-sample seed is
/// `base_seed + index`.
pub fn write_corpus(
    n_samples: usize,
    arity_mix: (u32, u32),
    base_seed: u64,
    spec: &CorpusSpec,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    if n_samples < 1 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    fs::create_dir_all(out_dir)?;
    let (single, multi) = split_arity(n_samples, arity_mix);
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let seed = base_seed + i as u64;
        let arity = if i < single { Arity::Single } else { Arity::Multi };
        let n_subjects = match arity {
            Arity::Single => 1,
            Arity::Multi => {
                let mut r = crate::rng::stream(seed, "arity", 0);
                use rand::Rng;
                r.gen_range(2..=(spec.max_refs - 1).min(3))
            }
        };
        let sample_spec = CorpusSpec { n_subjects, ..spec.clone() };
        let triplet = generate_triplet(seed, &sample_spec)?;
        let dir_name = format!("sample_{i:05}");
        write_sample(&triplet, &sample_spec, &out_dir.join(&dir_name))?;
        samples.push(SampleEntry { dir: dir_name, seed, arity, n_subjects });
    }
    let manifest = CorpusManifest {
        format_version: FORMAT_VERSION,
        base_seed,
        n_samples,
        single_count: single,
        multi_count: multi,
        spec: spec.clone(),
        samples,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

fn write_sample(t: &Triplet, spec: &CorpusSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    fs::create_dir_all(dir.join("masks"))?;
    fs::create_dir_all(dir.join("refs"))?;
    for (f, frame) in t.video.iter().enumerate() {
        frame.save(dir.join(format!("frames/frame_{f:03}.png")))?;
    }
    for (s, subject_masks) in t.masks.iter().enumerate() {
        for (f, mask) in subject_masks.iter().enumerate() {
            imageio::save_mask(mask, spec.canvas, spec.canvas, &dir.join(format!("masks/subject{s}_f{f:03}.png")))?;
        }
    }
    for (s, subject) in t.elements.subjects.iter().enumerate() {
        subject.image.save(dir.join(format!("refs/subject_{s}.png")))?;
    }
    t.elements.background.save(dir.join("refs/background.png"))?;
    let sidecar = SampleSidecar {
        format_version: FORMAT_VERSION,
        seed: t.seed,
        caption: t.caption.clone(),
        rendered_caption: t.rendered_caption.clone(),
        script: t.script.clone(),
        background: t.elements.background_tex,
        subject_tags: t.elements.subjects.iter().map(|s| s.tag).collect(),
        frames: t.video.len(),
        canvas: spec.canvas,
    };
    fs::write(dir.join("sample.json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Load the manifest from a corpus directory.
pub fn load_manifest(dir: &Path) -> Result<CorpusManifest> {
    let raw = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CorpusManifest = serde_json::from_str(&raw)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::config(format!("unsupported corpus format {}", manifest.format_version)));
    }
    // Every listed sample directory must exist.
    for s in &manifest.samples {
        if !dir.join(&s.dir).join("sample.json").exists() {
            return Err(Error::config(format!("missing sample {}", s.dir)));
        }
    }
    if manifest.single_count + manifest.multi_count != manifest.n_samples {
        return Err(Error::config("arity counts do not sum to total"));
    }
    Ok(manifest)
}

/// Load one sample back into an in-memory triplet.
pub fn load_sample(corpus_dir: &Path, entry: &SampleEntry) -> Result<Triplet> {
    let dir = corpus_dir.join(&entry.dir);
    let raw = fs::read_to_string(dir.join("sample.json"))?;
    let sc: SampleSidecar = serde_json::from_str(&raw)?;
    let mut video = Vec::with_capacity(sc.frames);
    for f in 0..sc.frames {
        video.push(image::open(dir.join(format!("frames/frame_{f:03}.png")))?.to_rgb8());
    }
    let n_subjects = sc.caption.subjects.len();
    let mut masks = Vec::with_capacity(n_subjects);
    for s in 0..n_subjects {
        let mut per_frame = Vec::with_capacity(sc.frames);
        for f in 0..sc.frames {
            per_frame.push(imageio::load_mask(&dir.join(format!("masks/subject{s}_f{f:03}.png")))?);
        }
        masks.push(per_frame);
    }
    let mut subjects = Vec::with_capacity(n_subjects);
    for (s, slot) in sc.caption.subjects.iter().enumerate() {
        subjects.push(SubjectRef {
            image: image::open(dir.join(format!("refs/subject_{s}.png")))?.to_rgb8(),
            color: slot.color,
            shape: slot.shape,
            tag: sc.subject_tags[s],
        });
    }
    let background = image::open(dir.join("refs/background.png"))?.to_rgb8();
    let elements = ElementSet { subjects, background, background_tex: sc.background };
    Ok(Triplet {
        caption: sc.caption,
        rendered_caption: sc.rendered_caption,
        elements,
        video,
        masks,
        script: sc.script,
        seed: sc.seed,
    })
}

/// Load every sample of a corpus.
pub fn load_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<Triplet>)> {
    let manifest = load_manifest(dir)?;
    let mut triplets = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        triplets.push(load_sample(dir, entry)?);
    }
    Ok((manifest, triplets))
}

/// SHA-256 of the manifest JSON, used to stamp checkpoints.
pub fn corpus_hash(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let raw = fs::read(dir.join("manifest.json"))?;
    Ok(format!("{:x}", Sha256::digest(raw)))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_split_matches_ratio_arithmetic() {
        assert_eq!(split_arity(300, (2, 1)), (200, 100));
        assert_eq!(split_arity(300, (0, 1)), (0, 300));
        assert_eq!(split_arity(1, (1, 1)), (1, 0));
        let (s, m) = split_arity(1, (0, 1));
        assert_eq!(s + m, 1);
    }

    #[test]
    fn write_load_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = CorpusSpec::default();
        let manifest = write_corpus(4, (1, 1), 100, &spec, tmp.path()).unwrap();
        assert_eq!(manifest.single_count, 2);
        assert_eq!(manifest.multi_count, 2);
        let (m2, triplets) = load_corpus(tmp.path()).unwrap();
        assert_eq!(m2.n_samples, 4);
        for (entry, loaded) in m2.samples.iter().zip(&triplets) {
            let spec2 = CorpusSpec { n_subjects: entry.n_subjects, ..spec.clone() };
            let regenerated = generate_triplet(entry.seed, &spec2).unwrap();
            assert_eq!(&regenerated, loaded);
        }
    }
}
