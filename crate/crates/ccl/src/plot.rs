//! Loss-curve and mIoU-curve rendering.
//!
//! Charts are drawn directly into PNG buffers with a small built-in 5x7
//! bitmap font, so plotting is deterministic and dependency-free: the
//! same log bytes always produce the same image bytes.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::EvalRecord;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("log {0} contains no records")]
    EmptyLog(PathBuf),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed record in {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
}

/// One line of the line-delimited JSON loss log:
/// {"step": .., "term_name": .., "value": ..}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossLogRecord {
    pub step: usize,
    #[serde(rename = "term_name")]
    pub term: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [120, 40, 30],
    [0, 0, 0],
];

const FONT_CHARS: &str = "0123456789abcdefghijklmnopqrstuvwxyz.-_/:+=, ";

#[rustfmt::skip]
const FONT: [[u8; 7]; 46] = [
    [0x0E,0x11,0x13,0x15,0x19,0x11,0x0E], // 0
    [0x04,0x0C,0x04,0x04,0x04,0x04,0x0E], // 1
    [0x0E,0x11,0x01,0x02,0x04,0x08,0x1F], // 2
    [0x1F,0x02,0x04,0x02,0x01,0x11,0x0E], // 3
    [0x02,0x06,0x0A,0x12,0x1F,0x02,0x02], // 4
    [0x1F,0x10,0x1E,0x01,0x01,0x11,0x0E], // 5
    [0x06,0x08,0x10,0x1E,0x11,0x11,0x0E], // 6
    [0x1F,0x01,0x02,0x04,0x08,0x08,0x08], // 7
    [0x0E,0x11,0x11,0x0E,0x11,0x11,0x0E], // 8
    [0x0E,0x11,0x11,0x0F,0x01,0x02,0x0C], // 9
    [0x00,0x00,0x0E,0x01,0x0F,0x11,0x0F], // a
    [0x10,0x10,0x16,0x19,0x11,0x11,0x1E], // b
    [0x00,0x00,0x0E,0x10,0x10,0x11,0x0E], // c
    [0x01,0x01,0x0D,0x13,0x11,0x11,0x0F], // d
    [0x00,0x00,0x0E,0x11,0x1F,0x10,0x0E], // e
    [0x06,0x09,0x08,0x1C,0x08,0x08,0x08], // f
    [0x00,0x0F,0x11,0x11,0x0F,0x01,0x0E], // g
    [0x10,0x10,0x16,0x19,0x11,0x11,0x11], // h
    [0x04,0x00,0x0C,0x04,0x04,0x04,0x0E], // i
    [0x02,0x00,0x06,0x02,0x02,0x12,0x0C], // j
    [0x10,0x10,0x12,0x14,0x18,0x14,0x12], // k
    [0x0C,0x04,0x04,0x04,0x04,0x04,0x0E], // l
    [0x00,0x00,0x1A,0x15,0x15,0x11,0x11], // m
    [0x00,0x00,0x16,0x19,0x11,0x11,0x11], // n
    [0x00,0x00,0x0E,0x11,0x11,0x11,0x0E], // o
    [0x00,0x00,0x1E,0x11,0x1E,0x10,0x10], // p
    [0x00,0x00,0x0D,0x13,0x0F,0x01,0x01], // q
    [0x00,0x00,0x16,0x19,0x10,0x10,0x10], // r
    [0x00,0x00,0x0E,0x10,0x0E,0x01,0x1E], // s
    [0x08,0x08,0x1C,0x08,0x08,0x09,0x06], // t
    [0x00,0x00,0x11,0x11,0x11,0x13,0x0D], // u
    [0x00,0x00,0x11,0x11,0x11,0x0A,0x04], // v
    [0x00,0x00,0x11,0x11,0x15,0x15,0x0A], // w
    [0x00,0x00,0x11,0x0A,0x04,0x0A,0x11], // x
    [0x00,0x00,0x11,0x11,0x0F,0x01,0x0E], // y
    [0x00,0x00,0x1F,0x02,0x04,0x08,0x1F], // z
    [0x00,0x00,0x00,0x00,0x00,0x0C,0x0C], // .
    [0x00,0x00,0x00,0x1F,0x00,0x00,0x00], // -
    [0x00,0x00,0x00,0x00,0x00,0x00,0x1F], // _
    [0x00,0x01,0x02,0x04,0x08,0x10,0x00], // /
    [0x00,0x0C,0x0C,0x00,0x0C,0x0C,0x00], // :
    [0x00,0x04,0x04,0x1F,0x04,0x04,0x00], // +
    [0x00,0x00,0x1F,0x00,0x1F,0x00,0x00], // =
    [0x00,0x00,0x00,0x00,0x0C,0x04,0x08], // ,
    [0x00,0x00,0x00,0x00,0x00,0x00,0x00], // space
    [0x00,0x00,0x00,0x00,0x00,0x00,0x00], // fallback
];

fn glyph(c: char) -> &'static [u8; 7] {
    match FONT_CHARS.find(c) {
        Some(i) => &FONT[i],
        None => &FONT[45],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        let g = glyph(ch.to_ascii_lowercase());
        for (ry, row) in g.iter().enumerate() {
            for rx in 0..5 {
                if row & (1 << (4 - rx)) != 0 {
                    let px = cx + rx as i64;
                    let py = y + ry as i64;
                    if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height()
                    {
                        img.put_pixel(px as u32, py as u32, Rgb(color));
                    }
                }
            }
        }
        cx += 6;
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, Rgb(color));
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Render one line chart with legend to `path`.
pub fn render_chart(series: &[Series], title: &str, path: &Path) -> Result<(), PlotError> {
    let (w, h) = (960u32, 640u32);
    let (ml, mr, mt, mb) = (80f64, 24f64, 40f64, 48f64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
    }
    let pad = (ymax - ymin) * 0.05;
    let (ymin, ymax) = (ymin - pad, ymax + pad);

    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = ml + (x - xmin) / (xmax - xmin) * (w as f64 - ml - mr);
        let py = h as f64 - mb - (y - ymin) / (ymax - ymin) * (h as f64 - mt - mb);
        (px, py)
    };

    let axis = [60u8, 60, 60];
    draw_line(&mut img, (ml, mt), (ml, h as f64 - mb), axis);
    draw_line(&mut img, (ml, h as f64 - mb), (w as f64 - mr, h as f64 - mb), axis);
    for i in 0..=4 {
        let fx = xmin + (xmax - xmin) * i as f64 / 4.0;
        let (px, py) = to_px(fx, ymin);
        draw_line(&mut img, (px, py), (px, py + 4.0), axis);
        draw_text(&mut img, px as i64 - 10, py as i64 + 8, &fmt_tick(fx), axis);
        let fy = ymin + (ymax - ymin) * i as f64 / 4.0;
        let (qx, qy) = to_px(xmin, fy);
        draw_line(&mut img, (qx - 4.0, qy), (qx, qy), axis);
        draw_text(&mut img, 8, qy as i64 - 3, &fmt_tick(fy), axis);
    }
    draw_text(&mut img, ml as i64, 12, title, [0, 0, 0]);

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for pair in s.points.windows(2) {
            draw_line(&mut img, to_px(pair[0].0, pair[0].1), to_px(pair[1].0, pair[1].1), color);
        }
        // legend
        let ly = mt as i64 + 12 * si as i64;
        let lx = (w - mr as u32) as i64 - 170;
        draw_line(&mut img, (lx as f64, ly as f64 + 3.0), (lx as f64 + 14.0, ly as f64 + 3.0), color);
        draw_text(&mut img, lx + 18, ly, &s.name, [0, 0, 0]);
    }

    img.save(path).map_err(|e| PlotError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

/// Parse a line-delimited loss log into per-term series.
pub fn read_loss_log(path: &Path) -> Result<Vec<Series>, PlotError> {
    let text = fs::read_to_string(path)
        .map_err(|source| PlotError::Io { path: path.to_path_buf(), source })?;
    let mut series: Vec<Series> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LossLogRecord = serde_json::from_str(line)
            .map_err(|e| PlotError::Malformed { path: path.to_path_buf(), msg: e.to_string() })?;
        match series.iter_mut().find(|s| s.name == rec.term) {
            Some(s) => s.points.push((rec.step as f64, rec.value)),
            None => series.push(Series {
                name: rec.term,
                points: vec![(rec.step as f64, rec.value)],
            }),
        }
    }
    if series.is_empty() {
        return Err(PlotError::EmptyLog(path.to_path_buf()));
    }
    Ok(series)
}

/// Loss curves (one per term) from a loss log; returns written paths.
pub fn plot_loss_log(log: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let series = read_loss_log(log)?;
    fs::create_dir_all(out_dir)
        .map_err(|source| PlotError::Io { path: out_dir.to_path_buf(), source })?;
    let out = out_dir.join("loss_curves.png");
    render_chart(&series, "training loss terms", &out)?;
    Ok(vec![out])
}

/// mIoU curves per (role, domain) from a metrics history JSON file.
pub fn plot_history(history_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let text = fs::read_to_string(history_path)
        .map_err(|source| PlotError::Io { path: history_path.to_path_buf(), source })?;
    let records: Vec<EvalRecord> = serde_json::from_str(&text).map_err(|e| PlotError::Malformed {
        path: history_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if records.is_empty() {
        return Err(PlotError::EmptyLog(history_path.to_path_buf()));
    }
    let mut series: Vec<Series> = Vec::new();
    for r in &records {
        let name = format!("{}/target_{}", r.role, r.domain_id);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((r.step as f64, r.miou)),
            None => series.push(Series { name, points: vec![(r.step as f64, r.miou)] }),
        }
    }
    fs::create_dir_all(out_dir)
        .map_err(|source| PlotError::Io { path: out_dir.to_path_buf(), source })?;
    let out = out_dir.join("miou_curves.png");
    render_chart(&series, "miou on target eval splits", &out)?;
    Ok(vec![out])
}
