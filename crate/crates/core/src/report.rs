//! Rendering: evaluation and ablation tables (text + JSON), side-by-side
//! frame strips, and loss-curve plots. Pure functions over immutable
//! inputs; all artifacts are static files.

use crate::bench::EvalReport;
use crate::error::{Error, Result};
use crate::trainflow::LossRow;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed ablation row labels, in table order: spatial-concat rows, then
/// learnable-set rows, then data-mixing rows.
pub const ABLATION_ROWS: [&str; 9] = [
    "Before VAE",
    "After VAE",
    "Frame No Repeat",
    "Cross-2",
    "Cross-1",
    "Full",
    "α = 2:1",
    "α = 1:1",
    "α = 0:1",
];

/// One table row's metric values, in fixed column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub id_consistency: f64,
    pub object_consistency: f64,
    pub background_consistency: f64,
    pub image_quality: f64,
    pub similarity: f64,
    pub adherence: f64,
}

impl RowMetrics {
    pub fn from_report(report: &EvalReport) -> Self {
        let a = &report.aggregates;
        Self {
            id_consistency: a.id_consistency.unwrap_or(f64::NAN),
            object_consistency: a.object_consistency.unwrap_or(f64::NAN),
            background_consistency: a.background_consistency,
            image_quality: a.image_quality_proxy,
            similarity: a.prompt_similarity,
            adherence: a.script_adherence,
        }
    }

    fn columns(&self) -> [f64; 6] {
        [
            self.id_consistency,
            self.object_consistency,
            self.background_consistency,
            self.image_quality,
            self.similarity,
            self.adherence,
        ]
    }
}

/// One row: completed metrics or a recorded failure (the table still
/// renders, with the gap flagged).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub metrics: Option<RowMetrics>,
    pub error: Option<String>,
}

const COLUMN_HEADERS: [&str; 6] =
    ["ID", "Obj.", "Back.", "Image Quality", "Similarity", "Adherence"];

/// Render rows as a text table plus a JSON document. Per-column maxima are
/// marked with `*`; ties mark every maximum.
pub fn render_table(rows: &[TableRow]) -> Result<(String, serde_json::Value)> {
    if rows.is_empty() {
        return Err(Error::config("cannot render an empty table"));
    }
    // Column maxima over completed rows (NaN never wins).
    let mut maxima = [f64::NEG_INFINITY; 6];
    for row in rows {
        if let Some(m) = row.metrics {
            for (mx, v) in maxima.iter_mut().zip(m.columns()) {
                if v.is_finite() && v > *mx {
                    *mx = v;
                }
            }
        }
    }
    let label_w = rows
        .iter()
        .map(|r| r.label.chars().count())
        .chain(["Methods".len()])
        .max()
        .unwrap();
    let col_w = 14usize;
    let mut text = String::new();
    text.push_str(&format!("{:label_w$}", "Methods"));
    for h in COLUMN_HEADERS {
        text.push_str(&format!("  {h:>col_w$}"));
    }
    text.push('\n');
    for row in rows {
        let pad = label_w - row.label.chars().count();
        text.push_str(&format!("{}{}", row.label, " ".repeat(pad)));
        match (&row.metrics, &row.error) {
            (Some(m), _) => {
                for (v, mx) in m.columns().into_iter().zip(maxima) {
                    let cell = if v.is_finite() {
                        let mark = if v == mx { "*" } else { "" };
                        format!("{v:.4}{mark}")
                    } else {
                        "-".to_string()
                    };
                    text.push_str(&format!("  {cell:>col_w$}"));
                }
            }
            (None, err) => {
                let msg = err.as_deref().unwrap_or("failed");
                text.push_str(&format!("  FAILED: {msg}"));
            }
        }
        text.push('\n');
    }
    let json = serde_json::json!({
        "columns": COLUMN_HEADERS,
        "rows": rows,
    });
    Ok((text, json))
}

/// Single-row table for one evaluation report.
pub fn render_report_table(label: &str, report: &EvalReport) -> Result<(String, serde_json::Value)> {
    render_table(&[TableRow {
        label: label.to_string(),
        metrics: Some(RowMetrics::from_report(report)),
        error: None,
    }])
}

/// Evenly sampled frame indices including the first and last frame:
/// `round(i * (T-1) / (k-1))` for `i = 0..k`.
pub fn frame_strip_indices(frames: usize, k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config("frame strip needs k >= 2"));
    }
    if k > frames {
        return Err(Error::config(format!("k={k} exceeds frame count {frames}")));
    }
    Ok((0..k)
        .map(|i| ((i * (frames - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect())
}

/// Horizontal strip of `k` evenly sampled frames with a 2-pixel separator.
pub fn render_frame_strip(frames: &[RgbImage], k: usize) -> Result<RgbImage> {
    let idx = frame_strip_indices(frames.len(), k)?;
    let (w, h) = (frames[0].width(), frames[0].height());
    let sep = 2u32;
    let total_w = w * k as u32 + sep * (k as u32 - 1);
    let mut out = RgbImage::from_pixel(total_w, h, image::Rgb([255, 255, 255]));
    for (slot, fi) in idx.iter().enumerate() {
        let frame = &frames[*fi];
        if frame.width() != w || frame.height() != h {
            return Err(Error::shape("inconsistent frame sizes"));
        }
        let x0 = slot as u32 * (w + sep);
        for (x, y, p) in frame.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *p);
        }
    }
    Ok(out)
}

/// Plot a loss curve as a PNG polyline (log-spaced value axis when the
/// dynamic range warrants it).
pub fn render_loss_curve(rows: &[LossRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("cannot plot an empty loss log"));
    }
    let (w, h) = (640u32, 240u32);
    let margin = 10u32;
    let mut img = RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let lo = rows.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max);
    let log_axis = lo > 0.0 && hi / lo > 50.0;
    let norm = |v: f64| -> f64 {
        if hi == lo {
            return 0.5;
        }
        if log_axis {
            (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
        } else {
            (v - lo) / (hi - lo)
        }
    };
    let to_px = |i: usize, v: f64| -> (i64, i64) {
        let x = margin as f64
            + (w - 2 * margin) as f64 * i as f64 / (rows.len().max(2) - 1) as f64;
        let y = (h - margin) as f64 - (h - 2 * margin) as f64 * norm(v);
        (x as i64, y as i64)
    };
    let blue = image::Rgb([40, 80, 200]);
    let mut prev = to_px(0, rows[0].loss);
    for (i, r) in rows.iter().enumerate().skip(1) {
        let cur = to_px(i, r.loss);
        // Dense line sampling between consecutive points.
        let steps = (prev.0.abs_diff(cur.0).max(prev.1.abs_diff(cur.1))).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = prev.0 as f64 + t * (cur.0 - prev.0) as f64;
            let y = prev.1 as f64 + t * (cur.1 - prev.1) as f64;
            if x >= 0.0 && y >= 0.0 && (x as u32) < w && (y as u32) < h {
                img.put_pixel(x as u32, y as u32, blue);
            }
        }
        prev = cur;
    }
    img.save(path)?;
    Ok(())
}
