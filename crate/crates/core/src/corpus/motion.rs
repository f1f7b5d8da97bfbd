//! Motion scripts and closed-form sprite kinematics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    TranslateLeft,
    TranslateRight,
    TranslateUp,
    TranslateDown,
    Bounce,
    Rotate,
    ScalePulse,
    Static,
}

pub const MOTIONS: [MotionKind; 8] = [
    MotionKind::TranslateLeft,
    MotionKind::TranslateRight,
    MotionKind::TranslateUp,
    MotionKind::TranslateDown,
    MotionKind::Bounce,
    MotionKind::Rotate,
    MotionKind::ScalePulse,
    MotionKind::Static,
];

impl MotionKind {
    pub fn verb_phrase(&self) -> &'static str {
        match self {
            MotionKind::TranslateLeft => "moves left",
            MotionKind::TranslateRight => "moves right",
            MotionKind::TranslateUp => "moves up",
            MotionKind::TranslateDown => "moves down",
            MotionKind::Bounce => "bounces",
            MotionKind::Rotate => "spins",
            MotionKind::ScalePulse => "pulses",
            MotionKind::Static => "stays still",
        }
    }
}

/// One element's motion over the clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEntry {
    pub element_id: usize,
    pub kind: MotionKind,
    /// Pixels per frame (ignored for rotate / scale-pulse / static).
    pub speed: f64,
    pub start_x: f64,
    pub start_y: f64,
}

/// Per-element motion plan for a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MotionScript {
    pub entries: Vec<MotionEntry>,
}

/// Pose of a sprite at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub rot: f64,
    pub scale: f64,
}

/// Closed-form pose of an entry at frame `t` of a `frames`-frame clip on a
/// `canvas`-sized square canvas. Positions are clamped so a sprite of radius
/// `radius` stays fully inside the canvas.
pub fn pose_at(entry: &MotionEntry, t: usize, frames: usize, canvas: u32, radius: f64) -> Pose {
    let tf = t as f64;
    let (mut cx, mut cy) = (entry.start_x, entry.start_y);
    let mut rot = 0.0;
    let mut scale = 1.0;
    let period = (frames.max(2) - 1) as f64;
    match entry.kind {
        MotionKind::TranslateLeft => cx -= entry.speed * tf,
        MotionKind::TranslateRight => cx += entry.speed * tf,
        MotionKind::TranslateUp => cy -= entry.speed * tf,
        MotionKind::TranslateDown => cy += entry.speed * tf,
        MotionKind::Bounce => {
            // One full arc: rises by up to 3*speed pixels and returns exactly.
            let amp = 3.0 * entry.speed;
            cy -= amp * (std::f64::consts::PI * tf / period).sin();
        }
        MotionKind::Rotate => rot = 0.18 * entry.speed * tf,
        MotionKind::ScalePulse => {
            scale = 1.0 + 0.3 * (2.0 * std::f64::consts::PI * tf / period).sin();
        }
        MotionKind::Static => {}
    }
    let lo = radius;
    let hi = canvas as f64 - 1.0 - radius;
    Pose { cx: cx.clamp(lo, hi), cy: cy.clamp(lo, hi), rot, scale }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translate_right_is_linear_until_clamped() {
        let e = MotionEntry {
            element_id: 0,
            kind: MotionKind::TranslateRight,
            speed: 2.0,
            start_x: 10.0,
            start_y: 32.0,
        };
        for t in 0..16 {
            let p = pose_at(&e, t, 16, 64, 7.0);
            assert_eq!(p.cx, (10.0 + 2.0 * t as f64).clamp(7.0, 56.0));
            assert_eq!(p.cy, 32.0);
        }
    }

    #[test]
    fn bounce_returns_to_start() {
        let e = MotionEntry {
            element_id: 0,
            kind: MotionKind::Bounce,
            speed: 2.0,
            start_x: 32.0,
            start_y: 40.0,
        };
        let p0 = pose_at(&e, 0, 16, 64, 7.0);
        let plast = pose_at(&e, 15, 16, 64, 7.0);
        assert!((p0.cy - plast.cy).abs() < 1e-9);
        let mid = pose_at(&e, 8, 16, 64, 7.0);
        assert!(p0.cy - mid.cy > 2.0);
    }
}
