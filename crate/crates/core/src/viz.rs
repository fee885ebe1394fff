//! Query-to-patch attention heatmaps.
//!
//! An image-attention row is laid out as a `sqrt(n) x sqrt(n)` grid, min-max
//! normalized, colored with a fixed blue-to-red lookup table, upsampled with
//! a bicubic kernel (`a = -0.5`) and blended over a base image at 50% opacity.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionTensor, SpanMap};

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Square, row-major grid of attention values, one cell per image patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatGrid {
    side: usize,
    values: Vec<f64>,
}

impl HeatGrid {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if side == 0 || values.len() != side * side {
            return Err(Error::Input(format!(
                "{} values cannot fill a {side}x{side} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("heat grid has non-finite values".into()));
        }
        Ok(Self { side, values })
    }

    /// Lays `values` (length must be a perfect square) out row by row.
    pub fn from_sequence(values: Vec<f64>) -> Result<Self> {
        let side = (values.len() as f64).sqrt().round() as usize;
        if side * side != values.len() {
            return Err(Error::Input(format!(
                "{} image tokens do not form a square grid",
                values.len()
            )));
        }
        Self::new(side, values)
    }

    /// Attention from `query` to each image token at `layer`; `head = None`
    /// averages over heads.
    pub fn from_attention(
        att: &AttentionTensor,
        spans: &SpanMap,
        layer: usize,
        head: Option<usize>,
        query: usize,
    ) -> Result<Self> {
        if layer >= att.num_layers() || query >= att.seq_len() || spans.img.end > att.seq_len() {
            return Err(Error::Input(format!(
                "layer {layer} / query {query} outside attention tensor"
            )));
        }
        let heads: Vec<usize> = match head {
            Some(h) if h < att.num_heads() => vec![h],
            Some(h) => {
                return Err(Error::Input(format!(
                    "head {h} outside {} heads",
                    att.num_heads()
                )))
            }
            None => (0..att.num_heads()).collect(),
        };
        let mut values = vec![0.0; spans.img.len()];
        for &h in &heads {
            for (v, &w) in values
                .iter_mut()
                .zip(&att.row(layer, h, query)[spans.img.clone()])
            {
                *v += w;
            }
        }
        for v in &mut values {
            *v /= heads.len() as f64;
        }
        Self::from_sequence(values)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// `(A - min) / (max - min)`; a constant grid maps to all zeros.
pub fn normalize_grid(grid: &HeatGrid) -> HeatGrid {
    let min = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = grid
        .values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let values = if range > 0.0 {
        grid.values.iter().map(|v| (v - min) / range).collect()
    } else {
        vec![0.0; grid.values.len()]
    };
    HeatGrid {
        side: grid.side,
        values,
    }
}

// ---------------------------------------------------------------------------
// Colormap
// ---------------------------------------------------------------------------

pub const COLORMAP_SIZE: usize = 257;

/// Piecewise-linear blue -> cyan -> green -> yellow -> red, 64 steps per segment.
/// Entry `i` colors the value `i / 256`.
pub static COLORMAP_LUT: [[u8; 3]; COLORMAP_SIZE] = build_lut();

const fn ramp(step: usize) -> u8 {
    ((step * 255 + 32) / 64) as u8
}

const fn build_lut() -> [[u8; 3]; COLORMAP_SIZE] {
    let mut lut = [[0u8; 3]; COLORMAP_SIZE];
    let mut i = 0;
    while i < COLORMAP_SIZE {
        let seg = i / 64;
        let step = i % 64;
        lut[i] = match seg {
            0 => [0, ramp(step), 255],
            1 => [0, 255, 255 - ramp(step)],
            2 => [ramp(step), 255, 0],
            3 => [255, 255 - ramp(step), 0],
            _ => [255, 0, 0],
        };
        i += 1;
    }
    lut
}

pub fn colormap(value: f64) -> Result<[u8; 3]> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Input(format!(
            "colormap input {value} outside [0, 1]"
        )));
    }
    let idx = (value * (COLORMAP_SIZE - 1) as f64).round() as usize;
    Ok(COLORMAP_LUT[idx])
}

/// One pixel per grid cell.
pub fn apply_colormap(grid: &HeatGrid) -> Result<RgbImage> {
    let side = grid.side as u32;
    let mut img = RgbImage::new(side, side);
    for (i, &v) in grid.values.iter().enumerate() {
        let [r, g, b] = colormap(v)?;
        img.put_pixel(i as u32 % side, i as u32 / side, Rgb([r, g, b]));
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Resampling and blending
// ---------------------------------------------------------------------------

const BICUBIC_A: f64 = -0.5;

fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    let a = BICUBIC_A;
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps and weights for one output coordinate (pixel-center aligned,
/// edge pixels replicated).
fn taps(dst: u32, src_len: u32, dst_len: u32) -> [(u32, f64); 4] {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let base = pos.floor();
    let frac = pos - base;
    let mut out = [(0u32, 0.0); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let offset = k as f64 - 1.0;
        let idx = (base + offset).clamp(0.0, src_len as f64 - 1.0) as u32;
        *slot = (idx, cubic_weight(frac - offset));
    }
    out
}

/// Bicubic resize of each channel, clamped to `[0, 255]` and rounded.
pub fn resize_bicubic(src: &RgbImage, width: u32, height: u32) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::Input("resize target must be positive".into()));
    }
    let (sw, sh) = src.dimensions();
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let ty = taps(y, sh, height);
        for x in 0..width {
            let tx = taps(x, sw, width);
            let mut acc = [0.0f64; 3];
            for &(sy, wy) in &ty {
                for &(sx, wx) in &tx {
                    let p = src.get_pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += wx * wy * p[c] as f64;
                    }
                }
            }
            out.put_pixel(x, y, Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8)));
        }
    }
    Ok(out)
}

/// Output of the rendering pipeline for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedHeatmap {
    /// Colored, resized heatmap.
    pub heat: RgbImage,
    /// The heatmap as a layer with a 50% alpha channel.
    pub overlay: RgbaImage,
    /// `0.5 * base + 0.5 * heat`, rounded half up.
    pub composite: RgbImage,
}

pub const OVERLAY_ALPHA: u8 = 128;

pub fn overlay(base: &RgbImage, heat: &RgbImage) -> Result<RenderedHeatmap> {
    if base.dimensions() != heat.dimensions() {
        return Err(Error::Input(format!(
            "base is {:?} but heatmap is {:?}",
            base.dimensions(),
            heat.dimensions()
        )));
    }
    let (w, h) = base.dimensions();
    let mut layer = RgbaImage::new(w, h);
    let mut composite = RgbImage::new(w, h);
    for (x, y, hp) in heat.enumerate_pixels() {
        let bp = base.get_pixel(x, y);
        layer.put_pixel(x, y, Rgba([hp[0], hp[1], hp[2], OVERLAY_ALPHA]));
        let blend = |c: usize| (bp[c] as u16 + hp[c] as u16).div_ceil(2) as u8;
        composite.put_pixel(x, y, Rgb([blend(0), blend(1), blend(2)]));
    }
    Ok(RenderedHeatmap {
        heat: heat.clone(),
        overlay: layer,
        composite,
    })
}

/// normalize -> colormap -> resize to the base size -> overlay.
pub fn render(grid: &HeatGrid, base: &RgbImage) -> Result<RenderedHeatmap> {
    let colored = apply_colormap(&normalize_grid(grid))?;
    let (w, h) = base.dimensions();
    overlay(base, &resize_bicubic(&colored, w, h)?)
}

/// Deterministic stand-in for a photograph: a soft gray checkerboard of
/// `cells x cells` tiles.
pub fn placeholder_base(width: u32, height: u32, cells: u32) -> RgbImage {
    let cells = cells.max(1);
    RgbImage::from_fn(width, height, |x, y| {
        let cx = x * cells / width.max(1);
        let cy = y * cells / height.max(1);
        let v = if (cx + cy).is_multiple_of(2) { 96 } else { 160 };
        Rgb([v, v, v])
    })
}

// ---------------------------------------------------------------------------
// Gallery
// ---------------------------------------------------------------------------

/// Heads at `layer` ordered by their mean attention to image tokens from
/// `query`, largest first (ties to the lower head).
pub fn rank_heads(
    att: &AttentionTensor,
    spans: &SpanMap,
    layer: usize,
    query: usize,
) -> Vec<usize> {
    let mass = |h: usize| -> f64 {
        let row = att.row(layer, h, query);
        row[spans.img.clone()].iter().sum::<f64>() / spans.img.len().max(1) as f64
    };
    let mut heads: Vec<(usize, f64)> = (0..att.num_heads()).map(|h| (h, mass(h))).collect();
    heads.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    heads.into_iter().map(|(h, _)| h).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub file: String,
    pub layer: usize,
    /// Head index, or `None` for the head mean.
    pub head: Option<usize>,
    pub query: usize,
    /// Position in the head ranking at this layer (`None` for the head mean).
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryOptions {
    pub image_id: String,
    pub layers: Vec<usize>,
    pub query: usize,
    /// Per-layer cap on rendered heads, taken in ranking order.
    pub max_heads: Option<usize>,
}

/// Renders the head mean and the ranked heads for each layer, writes one PNG
/// per rendering plus `index.json`, and returns the index.
pub fn write_gallery(
    att: &AttentionTensor,
    spans: &SpanMap,
    base: &RgbImage,
    opts: &GalleryOptions,
    out_dir: &Path,
) -> Result<Vec<GalleryEntry>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut index = Vec::new();
    for &layer in &opts.layers {
        let ranked = if layer < att.num_layers() && opts.query < att.seq_len() {
            rank_heads(att, spans, layer, opts.query)
        } else {
            Vec::new()
        };
        let cap = opts.max_heads.unwrap_or(ranked.len());
        let mut jobs: Vec<(Option<usize>, Option<usize>)> = vec![(None, None)];
        jobs.extend(
            ranked
                .iter()
                .take(cap)
                .enumerate()
                .map(|(rank, &h)| (Some(h), Some(rank))),
        );
        for (head, rank) in jobs {
            let grid = HeatGrid::from_attention(att, spans, layer, head, opts.query)?;
            let rendered = render(&grid, base)?;
            let head_label = head.map_or_else(|| "mean".to_string(), |h| h.to_string());
            let file = format!(
                "{}_{}_{}_{}.png",
                opts.image_id, layer, head_label, opts.query
            );
            write_png(&rendered.composite, &out_dir.join(&file))?;
            index.push(GalleryEntry {
                file,
                layer,
                head,
                query: opts.query,
                rank,
            });
        }
    }
    let index_path = out_dir.join("index.json");
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&index_path, json + "\n").map_err(|e| Error::io(&index_path, e))?;
    Ok(index)
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: PathBuf::from(path),
            message: e.to_string(),
        })
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    Ok(img.to_rgb8())
}
