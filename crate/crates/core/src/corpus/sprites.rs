//! Sprite and background rasterization.
//!
//! The palette is closed by design: 8 saturated subject colors, 4 shapes and
//! 8 muted background textures. Subject colors keep a large RGB distance from
//! every background palette color so color-template tracking stays reliable
//! even on blurry decoded videos.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Star,
}

pub const SHAPES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Star];

impl Shape {
    pub fn noun(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Star => "star",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorName {
    Red,
    Orange,
    Yellow,
    Green,
    Cyan,
    Blue,
    Purple,
    Pink,
}

pub const COLORS: [ColorName; 8] = [
    ColorName::Red,
    ColorName::Orange,
    ColorName::Yellow,
    ColorName::Green,
    ColorName::Cyan,
    ColorName::Blue,
    ColorName::Purple,
    ColorName::Pink,
];

impl ColorName {
    pub fn noun(&self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Orange => "orange",
            ColorName::Yellow => "yellow",
            ColorName::Green => "green",
            ColorName::Cyan => "cyan",
            ColorName::Blue => "blue",
            ColorName::Purple => "purple",
            ColorName::Pink => "pink",
        }
    }

    pub fn rgb(&self) -> Rgb<u8> {
        match self {
            ColorName::Red => Rgb([220, 40, 40]),
            ColorName::Orange => Rgb([240, 140, 30]),
            ColorName::Yellow => Rgb([235, 220, 50]),
            ColorName::Green => Rgb([60, 200, 70]),
            ColorName::Cyan => Rgb([50, 210, 220]),
            ColorName::Blue => Rgb([50, 90, 230]),
            ColorName::Purple => Rgb([150, 60, 220]),
            ColorName::Pink => Rgb([240, 110, 180]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    Forest,
    Sky,
    Desert,
    Ocean,
    Meadow,
    Night,
    Lava,
    Cave,
}

pub const TEXTURES: [Texture; 8] = [
    Texture::Forest,
    Texture::Sky,
    Texture::Desert,
    Texture::Ocean,
    Texture::Meadow,
    Texture::Night,
    Texture::Lava,
    Texture::Cave,
];

impl Texture {
    pub fn noun(&self) -> &'static str {
        match self {
            Texture::Forest => "forest",
            Texture::Sky => "sky",
            Texture::Desert => "desert",
            Texture::Ocean => "ocean",
            Texture::Meadow => "meadow",
            Texture::Night => "night",
            Texture::Lava => "lava",
            Texture::Cave => "cave",
        }
    }

    fn base_and_accent(&self) -> ([u8; 3], [u8; 3]) {
        match self {
            Texture::Forest => ([30, 56, 24], [48, 82, 38]),
            Texture::Sky => ([150, 162, 175], [120, 132, 148]),
            Texture::Desert => ([178, 158, 112], [150, 130, 88]),
            Texture::Ocean => ([28, 48, 78], [44, 68, 100]),
            Texture::Meadow => ([68, 102, 48], [88, 124, 62]),
            Texture::Night => ([16, 14, 30], [52, 50, 78]),
            Texture::Lava => ([78, 26, 14], [116, 48, 20]),
            Texture::Cave => ([70, 66, 60], [98, 94, 86]),
        }
    }
}

/// Deterministic integer hash noise in [0, 255].
fn hash_noise(x: u32, y: u32, salt: u32) -> u8 {
    let mut h = x.wrapping_mul(0x9E37_79B9) ^ y.wrapping_mul(0x85EB_CA6B) ^ salt.wrapping_mul(0xC2B2_AE35);
    h ^= h >> 13;
    h = h.wrapping_mul(0x27D4_EB2F);
    h ^= h >> 15;
    (h & 0xFF) as u8
}

/// Render the (fixed, seed-independent) background texture.
pub fn render_texture(tex: Texture, width: u32, height: u32) -> RgbImage {
    let (base, accent) = tex.base_and_accent();
    let salt = tex as u32 + 1;
    RgbImage::from_fn(width, height, |x, y| {
        // Per-texture structure: coarse cells mixed with fine hash noise.
        let cell = match tex {
            Texture::Forest => hash_noise(x / 3, 0, salt),          // vertical streaks
            Texture::Sky => ((y * 255) / height.max(1)) as u8,      // vertical gradient
            Texture::Desert => hash_noise(0, y / 4, salt),          // horizontal dunes
            Texture::Ocean => hash_noise(0, (y + x / 6) / 3, salt), // slanted waves
            Texture::Meadow => hash_noise(x / 8, y / 8, salt),      // patchy cells
            Texture::Night => {
                if hash_noise(x, y, salt) > 251 {
                    255
                } else {
                    0
                }
            } // sparse stars
            Texture::Lava => hash_noise(x / 2, (y + x / 3) / 5, salt), // flow streaks
            Texture::Cave => hash_noise(x / 6, y / 6, salt),        // blobs
        } as f32
            / 255.0;
        let fine = hash_noise(x, y, salt ^ 0xABCD) as f32 / 255.0;
        let w = (0.8 * cell + 0.2 * fine).clamp(0.0, 1.0);
        let mix = |b: u8, a: u8| -> u8 { (b as f32 + (a as f32 - b as f32) * w).round() as u8 };
        Rgb([mix(base[0], accent[0]), mix(base[1], accent[1]), mix(base[2], accent[2])])
    })
}

/// Axis-aligned footprint of a sprite: vertex polygon in canvas coordinates,
/// or a circle. Rotation and scale are baked into the vertices.
#[derive(Debug, Clone)]
pub enum Footprint {
    Circle { cx: f64, cy: f64, r: f64 },
    Polygon(Vec<(f64, f64)>),
}

/// Build the footprint of `shape` centered at `(cx, cy)` with nominal radius
/// `r`, rotated by `rot` radians and scaled by `scale`.
pub fn footprint(shape: Shape, cx: f64, cy: f64, r: f64, rot: f64, scale: f64) -> Footprint {
    let r = r * scale;
    let place = |pts: Vec<(f64, f64)>| -> Footprint {
        let (s, c) = rot.sin_cos();
        Footprint::Polygon(
            pts.into_iter()
                .map(|(x, y)| (cx + x * c - y * s, cy + x * s + y * c))
                .collect(),
        )
    };
    match shape {
        Shape::Circle => Footprint::Circle { cx, cy, r },
        Shape::Square => place(vec![(-r, -r), (r, -r), (r, r), (-r, r)]),
        Shape::Triangle => {
            // Equilateral, apex up at rot = 0.
            let pts = (0..3)
                .map(|i| {
                    let a = -std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / 3.0;
                    (r * a.cos(), r * a.sin())
                })
                .collect();
            place(pts)
        }
        Shape::Star => {
            // Five-point star: alternate outer and inner radius.
            let pts = (0..10)
                .map(|i| {
                    let a = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / 5.0;
                    let rr = if i % 2 == 0 { r } else { r * 0.45 };
                    (rr * a.cos(), rr * a.sin())
                })
                .collect();
            place(pts)
        }
    }
}

impl Footprint {
    /// Point-in-footprint test at pixel center `(x, y)`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Footprint::Circle { cx, cy, r } => {
                let dx = x - cx;
                let dy = y - cy;
                dx * dx + dy * dy <= r * r
            }
            Footprint::Polygon(pts) => {
                // Even-odd ray casting.
                let mut inside = false;
                let n = pts.len();
                for i in 0..n {
                    let (x1, y1) = pts[i];
                    let (x2, y2) = pts[(i + 1) % n];
                    if (y1 > y) != (y2 > y) {
                        let xi = x1 + (y - y1) / (y2 - y1) * (x2 - x1);
                        if x < xi {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }
}

/// Rasterize a footprint into a binary mask over a `w`x`h` canvas.
pub fn rasterize_mask(fp: &Footprint, w: u32, h: u32) -> Vec<bool> {
    let mut mask = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if fp.contains(x as f64, y as f64) {
                mask[(y * w + x) as usize] = true;
            }
        }
    }
    mask
}

/// Paint masked pixels with a solid color.
pub fn paint(img: &mut RgbImage, mask: &[bool], color: Rgb<u8>) {
    let w = img.width();
    for (i, on) in mask.iter().enumerate() {
        if *on {
            let x = i as u32 % w;
            let y = i as u32 / w;
            img.put_pixel(x, y, color);
        }
    }
}

/// Render a reference image: the sprite on a pure white canvas.
pub fn render_reference(shape: Shape, color: ColorName, size: u32, r: f64, rot: f64, scale: f64) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let c = (size as f64 - 1.0) / 2.0;
    let fp = footprint(shape, c, c, r, rot, scale);
    let mask = rasterize_mask(&fp, size, size);
    paint(&mut img, &mask, color.rgb());
    img
}
