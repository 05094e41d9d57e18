//! Visual prompt overlays: magenta referring boxes and numbered candidate
//! boxes, plus the inverse mapping from a numeric answer to a box.

use std::io::Cursor;
use std::sync::OnceLock;

use image::{ImageEncoder, Rgba, RgbaImage};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::annotation::{reading_order, UiElement};
use crate::BBox;

pub const MAGENTA: Rgba<u8> = Rgba([255, 0, 255, 255]);
pub const LABEL_INK: Rgba<u8> = Rgba([255, 255, 255, 255]);

/// 5x7 digit glyphs, one row per byte, low five bits used (bit 4 is the left column).
const DIGITS: [[u8; 7]; 10] = [
    [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
    [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
    [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
    [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
    [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
    [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
    [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
    [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
    [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
];
const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
/// Glyph height plus one padding row above and below, in font units.
const PLATE_UNITS: u32 = GLYPH_H + 2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SomError {
    #[error("box {bbox} lies outside the {width}x{height} image")]
    OutOfBounds { bbox: String, width: u32, height: u32 },
    #[error("no elements to mark")]
    NoElements,
    #[error("invalid style: {0}")]
    Style(String),
    #[error("no integer label in answer {0:?}")]
    UnparseableAnswer(String),
    #[error("label {label} not in 1..={max}")]
    UnknownLabel { label: u64, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SomStyle {
    /// Stroke width in pixels, drawn inward from the box edge.
    pub stroke: u32,
    /// Label plate height in pixels.
    pub font_size: u32,
}

impl Default for SomStyle {
    fn default() -> Self {
        SomStyle { stroke: 4, font_size: 18 }
    }
}

impl SomStyle {
    pub fn validate(&self) -> Result<(), SomError> {
        if self.stroke == 0 {
            return Err(SomError::Style("stroke must be at least 1px".into()));
        }
        if self.font_size < PLATE_UNITS {
            return Err(SomError::Style(format!("font size must be at least {PLATE_UNITS}px")));
        }
        Ok(())
    }

    fn unit(&self) -> u32 {
        (self.font_size / PLATE_UNITS).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAnchor {
    InsideTopLeft,
    AboveTopLeft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomLabel {
    pub label: u32,
    pub element_id: String,
    pub bbox: BBox,
    pub anchor: LabelAnchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomLabelMap {
    pub font_size: u32,
    pub stroke: u32,
    /// Sorted by label, labels run 1..=N.
    pub labels: Vec<SomLabel>,
}

impl SomLabelMap {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: u64) -> Option<&SomLabel> {
        let idx = usize::try_from(label).ok()?.checked_sub(1)?;
        self.labels.get(idx)
    }
}

/// Integer pixel span `[x1, x2) x [y1, y2)` covering a box, clipped to the image.
fn pixel_span(b: &BBox, w: u32, h: u32) -> (u32, u32, u32, u32) {
    let clip = |v: f64, max: u32| v.max(0.0).min(max as f64) as u32;
    (clip(b.x1.floor(), w), clip(b.y1.floor(), h), clip(b.x2.ceil(), w), clip(b.y2.ceil(), h))
}

fn fill(img: &mut RgbaImage, x1: u32, y1: u32, x2: u32, y2: u32, color: Rgba<u8>) {
    let (x2, y2) = (x2.min(img.width()), y2.min(img.height()));
    for y in y1..y2 {
        for x in x1..x2 {
            img.put_pixel(x, y, color);
        }
    }
}

fn stroke_box(img: &mut RgbaImage, b: &BBox, stroke: u32) {
    let (w, h) = img.dimensions();
    if b.width() <= 0.0 || b.height() <= 0.0 {
        // Degenerate box: a plus sign of arm length `stroke` centred on it.
        let cx = (((b.x1 + b.x2) / 2.0).round().max(0.0) as u32).min(w.saturating_sub(1));
        let cy = (((b.y1 + b.y2) / 2.0).round().max(0.0) as u32).min(h.saturating_sub(1));
        fill(img, cx.saturating_sub(stroke), cy, cx + stroke + 1, cy + 1, MAGENTA);
        fill(img, cx, cy.saturating_sub(stroke), cx + 1, cy + stroke + 1, MAGENTA);
        return;
    }
    let (x1, y1, x2, y2) = pixel_span(b, w, h);
    let sx = stroke.min(x2 - x1);
    let sy = stroke.min(y2 - y1);
    fill(img, x1, y1, x2, y1 + sy, MAGENTA);
    fill(img, x1, y2 - sy, x2, y2, MAGENTA);
    fill(img, x1, y1, x1 + sx, y2, MAGENTA);
    fill(img, x2 - sx, y1, x2, y2, MAGENTA);
}

fn plate_size(label: u32, style: &SomStyle) -> (u32, u32) {
    let u = style.unit();
    let n = label.to_string().len() as u32;
    (u * (n * GLYPH_W + (n - 1) + 2), u * PLATE_UNITS)
}

/// Draws a magenta plate with white digits whose top-left corner is `(x, y)`.
fn draw_label(img: &mut RgbaImage, label: u32, x: u32, y: u32, style: &SomStyle) {
    let u = style.unit();
    let (pw, ph) = plate_size(label, style);
    fill(img, x, y, x + pw, y + ph, MAGENTA);
    let mut gx = x + u;
    for d in label.to_string().bytes().map(|c| (c - b'0') as usize) {
        for (row, bits) in DIGITS[d].iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    let px = gx + col * u;
                    let py = y + u + row as u32 * u;
                    fill(img, px, py, px + u, py + u, LABEL_INK);
                }
            }
        }
        gx += (GLYPH_W + 1) * u;
    }
}

fn check_bounds(img: &RgbaImage, b: &BBox) -> Result<(), SomError> {
    if b.validate().is_err() || !b.fits_within(img.width() as f64, img.height() as f64) {
        return Err(SomError::OutOfBounds { bbox: b.to_string(), width: img.width(), height: img.height() });
    }
    Ok(())
}

/// A copy of `image` with one magenta rectangle stroked along the inside of `b`.
pub fn render_single_ref(image: &RgbaImage, b: &BBox, style: &SomStyle) -> Result<RgbaImage, SomError> {
    style.validate()?;
    check_bounds(image, b)?;
    let mut out = image.clone();
    stroke_box(&mut out, b, style.stroke);
    Ok(out)
}

/// Marks every element with a magenta box and a numeric label. Labels follow
/// reading order. A label sits inside the top-left corner of its box, or just
/// above the box when the box is shorter than the label.
pub fn render_som(
    image: &RgbaImage,
    elements: &[UiElement],
    style: &SomStyle,
) -> Result<(RgbaImage, SomLabelMap), SomError> {
    style.validate()?;
    if elements.is_empty() {
        return Err(SomError::NoElements);
    }
    let mut ordered: Vec<&UiElement> = elements.iter().collect();
    ordered.sort_by(|a, b| reading_order(a, b));

    let mut out = image.clone();
    for e in &ordered {
        stroke_box(&mut out, &e.bbox, style.stroke);
    }
    let (w, h) = out.dimensions();
    let mut labels = Vec::with_capacity(ordered.len());
    for (i, e) in ordered.iter().enumerate() {
        let label = i as u32 + 1;
        let (x1, y1, _, y2) = pixel_span(&e.bbox, w, h);
        let (_, ph) = plate_size(label, style);
        let anchor = if y2 - y1 < style.font_size { LabelAnchor::AboveTopLeft } else { LabelAnchor::InsideTopLeft };
        let y = match anchor {
            LabelAnchor::InsideTopLeft => y1,
            LabelAnchor::AboveTopLeft => y1.saturating_sub(ph),
        };
        draw_label(&mut out, label, x1, y, style);
        labels.push(SomLabel { label, element_id: e.id.clone(), bbox: e.bbox, anchor });
    }
    Ok((out, SomLabelMap { font_size: style.font_size, stroke: style.stroke, labels }))
}

fn first_integer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

/// Maps a free-text answer such as `"3"`, `"3."` or `"label 3"` to its box.
pub fn resolve_label_answer<'m>(answer: &str, map: &'m SomLabelMap) -> Result<&'m SomLabel, SomError> {
    let m = first_integer()
        .find(answer)
        .ok_or_else(|| SomError::UnparseableAnswer(answer.to_string()))?;
    let label: u64 = m.as_str().parse().unwrap_or(u64::MAX);
    map.get(label).ok_or(SomError::UnknownLabel { label, max: map.len() })
}

/// PNG bytes for an RGBA image. Output is a pure function of the pixels.
pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut buf).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgba8,
    )?;
    Ok(buf.into_inner())
}
