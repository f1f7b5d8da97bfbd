//! Image/video helpers: crops, tensor conversion, PNG and GIF output.

use crate::error::{Error, Result};
use candle_core::{DType, Device, Tensor};
use image::codecs::gif::{GifEncoder, Repeat};
use image::{Frame, GrayImage, RgbImage, RgbaImage};
use std::fs::File;
use std::path::Path;

/// Bounding-box crop of the masked region, or `None` for an empty mask.
pub fn crop_mask_bbox(img: &RgbImage, mask: &[bool], width: u32) -> Option<RgbImage> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (i, on) in mask.iter().enumerate() {
        if *on {
            let x = i as u32 % width;
            let y = i as u32 / width;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    if x0 == u32::MAX {
        return None;
    }
    Some(image::imageops::crop_imm(img, x0, y0, x1 - x0 + 1, y1 - y0 + 1).to_image())
}

/// Square crop centered at `(cx, cy)` with half-extent `half`, clamped to
/// the image bounds and resized to `out_size`.
pub fn crop_resize(img: &RgbImage, cx: f64, cy: f64, half: f64, out_size: u32) -> RgbImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let side = (2.0 * half).max(2.0).min(w.min(h));
    let x0 = (cx - side / 2.0).clamp(0.0, w - side);
    let y0 = (cy - side / 2.0).clamp(0.0, h - side);
    let crop = image::imageops::crop_imm(img, x0 as u32, y0 as u32, side as u32, side as u32).to_image();
    image::imageops::resize(&crop, out_size, out_size, image::imageops::FilterType::Triangle)
}

/// Video frames to a `[3, T, H, W]` f32 tensor in `[0, 1]`.
pub fn video_to_tensor(frames: &[RgbImage], device: &Device) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(Error::shape("empty video"));
    }
    let (w, h) = (frames[0].width() as usize, frames[0].height() as usize);
    let t = frames.len();
    let mut data = vec![0f32; 3 * t * h * w];
    for (fi, frame) in frames.iter().enumerate() {
        if frame.width() as usize != w || frame.height() as usize != h {
            return Err(Error::shape("inconsistent frame sizes"));
        }
        for (x, y, p) in frame.enumerate_pixels() {
            for c in 0..3 {
                data[((c * t + fi) * h + y as usize) * w + x as usize] = p[c] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(data, (3, t, h, w), device)?)
}

/// Single image to a `[3, H, W]` f32 tensor in `[0, 1]`.
pub fn image_to_tensor(img: &RgbImage, device: &Device) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(data, (3, h, w), device)?)
}

/// `[3, T, H, W]` tensor in `[0, 1]` back to RGB frames.
pub fn tensor_to_video(t: &Tensor) -> Result<Vec<RgbImage>> {
    let (c, frames, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut out = Vec::with_capacity(frames);
    for fi in 0..frames {
        let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |ch: usize| {
                let v = data[((ch * frames + fi) * h + y as usize) * w + x as usize];
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        });
        out.push(img);
    }
    Ok(out)
}

pub fn save_mask(mask: &[bool], width: u32, height: u32, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(width, height, |x, y| {
        image::Luma([if mask[(y * width + x) as usize] { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let img = image::open(path)?.to_luma8();
    Ok(img.as_raw().iter().map(|v| *v >= 128).collect())
}

/// Write frames as an animated GIF looping forever.
pub fn save_gif(frames: &[RgbImage], path: &Path, delay_ms: u32) -> Result<()> {
    let file = File::create(path)?;
    let mut enc = GifEncoder::new(file);
    enc.set_repeat(Repeat::Infinite).map_err(|e| Error::runtime(e.to_string()))?;
    for f in frames {
        let rgba = RgbaImage::from_fn(f.width(), f.height(), |x, y| {
            let p = f.get_pixel(x, y);
            image::Rgba([p[0], p[1], p[2], 255])
        });
        let frame = Frame::from_parts(rgba, 0, 0, image::Delay::from_numer_denom_ms(delay_ms, 1));
        enc.encode_frame(frame).map_err(|e| Error::runtime(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_tensor_round_trip() {
        let frames: Vec<RgbImage> = (0..3)
            .map(|t| RgbImage::from_fn(8, 4, |x, y| image::Rgb([(x * 30) as u8, (y * 60) as u8, t * 80])))
            .collect();
        let tensor = video_to_tensor(&frames, &Device::Cpu).unwrap();
        assert_eq!(tensor.dims(), &[3, 3, 4, 8]);
        let back = tensor_to_video(&tensor).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.as_raw(), b.as_raw());
        }
    }
}
