//! Axis-aligned boxes, screen-relative normalization and the textual box token.
//!
//! Pixel boxes use a top-left origin with `x` growing right and `y` growing
//! down, and cover the closed real intervals `[x1, x2] x [y1, y2]`.
//! Normalized boxes are integers in `0..=999` and travel inside conversation
//! text as `"[x1, y1, x2, y2]"`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scalar::{FloatScalar, Scalar};

/// Upper bound of the normalized coordinate range.
pub const NORM_MAX: u16 = 999;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("malformed box: {0}")]
    Malformed(String),
    #[error("non-positive dimension {width}x{height}")]
    NonPositiveDimension { width: i64, height: i64 },
    #[error("box {bbox} exceeds screen bounds {width}x{height}")]
    OutOfBounds { bbox: String, width: u32, height: u32 },
}

/// Pixel-space box generic over its coordinate type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 4]", into = "[T; 4]")]
pub struct Rect<T: Copy> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Copy> From<[T; 4]> for Rect<T> {
    fn from(v: [T; 4]) -> Self {
        Rect { x1: v[0], y1: v[1], x2: v[2], y2: v[3] }
    }
}

impl<T: Copy> From<Rect<T>> for [T; 4] {
    fn from(r: Rect<T>) -> Self {
        [r.x1, r.y1, r.x2, r.y2]
    }
}

impl<T: Scalar> Rect<T> {
    /// Builds a box, rejecting inverted or negative coordinates.
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self, GeometryError> {
        let r = Rect { x1, y1, x2, y2 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let zero = T::zero();
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(GeometryError::Malformed(format!("inverted coordinates {self:?}")));
        }
        // written so that NaN also fails
        if !(self.x1 >= zero && self.y1 >= zero) {
            return Err(GeometryError::Malformed(format!("negative or NaN coordinates {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    /// Intersection of two boxes; `None` when they do not touch. Touching boxes
    /// yield a zero-area result.
    pub fn intersection(&self, other: &Rect<T>) -> Option<Rect<T>> {
        let x1 = self.x1.max_of(other.x1);
        let y1 = self.y1.max_of(other.y1);
        let x2 = self.x2.min_of(other.x2);
        let y2 = self.y2.min_of(other.y2);
        (x1 <= x2 && y1 <= y2).then_some(Rect { x1, y1, x2, y2 })
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Rect<T>) -> Rect<T> {
        Rect {
            x1: self.x1.min_of(other.x1),
            y1: self.y1.min_of(other.y1),
            x2: self.x2.max_of(other.x2),
            y2: self.y2.max_of(other.y2),
        }
    }

    /// Length of the overlap of the two boxes' x-intervals, or `None` if disjoint.
    pub fn x_overlap(&self, other: &Rect<T>) -> Option<T> {
        let lo = self.x1.max_of(other.x1);
        let hi = self.x2.min_of(other.x2);
        (lo <= hi).then(|| hi - lo)
    }

    pub fn fits_within(&self, width: T, height: T) -> bool {
        self.x2 <= width && self.y2 <= height
    }
}

impl<T: Copy + fmt::Display> fmt::Display for Rect<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union. Returns zero when the union has no area, which
/// covers two identical degenerate boxes.
pub fn iou<T: Scalar>(a: &Rect<T>, b: &Rect<T>) -> Result<T, GeometryError> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection(b).map(|r| r.area()).unwrap_or_else(T::zero);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return Ok(T::zero());
    }
    Ok(inter / union)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoxTokenError {
    #[error("malformed box token {0:?}")]
    Malformed(String),
    #[error("box coordinate {0} outside 0..=999")]
    OutOfRange(String),
    #[error("inverted box coordinates in {0:?}")]
    Inverted(String),
}

/// Screen-relative box with integer coordinates in `0..=999`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u16; 4]")]
pub struct NormBBox {
    x1: u16,
    y1: u16,
    x2: u16,
    y2: u16,
}

impl NormBBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self, BoxTokenError> {
        for c in [x1, y1, x2, y2] {
            if c > NORM_MAX as u32 {
                return Err(BoxTokenError::OutOfRange(c.to_string()));
            }
        }
        if x1 > x2 || y1 > y2 {
            return Err(BoxTokenError::Inverted(format!("[{x1}, {y1}, {x2}, {y2}]")));
        }
        Ok(NormBBox { x1: x1 as u16, y1: y1 as u16, x2: x2 as u16, y2: y2 as u16 })
    }

    pub fn x1(&self) -> u16 {
        self.x1
    }
    pub fn y1(&self) -> u16 {
        self.y1
    }
    pub fn x2(&self) -> u16 {
        self.x2
    }
    pub fn y2(&self) -> u16 {
        self.y2
    }

    pub fn coords(&self) -> [u16; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Largest per-edge distance to another box.
    pub fn max_edge_distance(&self, other: &NormBBox) -> u16 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| a.abs_diff(b))
            .max()
            .unwrap_or(0)
    }

    /// The box as a rect in normalized units.
    pub fn to_rect<T: FloatScalar>(&self) -> Rect<T> {
        let c = |v: u16| T::of_u32(v as u32);
        Rect { x1: c(self.x1), y1: c(self.y1), x2: c(self.x2), y2: c(self.y2) }
    }

    /// Canonical token text, `"[x1, y1, x2, y2]"`.
    pub fn to_token(&self) -> String {
        self.to_string()
    }
}

impl TryFrom<[u32; 4]> for NormBBox {
    type Error = BoxTokenError;
    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        NormBBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<NormBBox> for [u16; 4] {
    fn from(n: NormBBox) -> Self {
        n.coords()
    }
}

impl fmt::Display for NormBBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

static STRICT_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*\[\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\]\s*$").unwrap()
});

// Anything bracketed that looks numeric; strict validation happens afterwards
// so that near-miss boxes in free text are reported instead of skipped.
static CANDIDATE_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[\s*-?\d+(?:\.\d+)?\s*(?:,\s*-?\d+(?:\.\d+)?\s*)+\]").unwrap()
});

impl FromStr for NormBBox {
    type Err = BoxTokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let caps = STRICT_TOKEN
            .captures(s)
            .ok_or_else(|| BoxTokenError::Malformed(s.to_string()))?;
        let mut v = [0u32; 4];
        for (i, slot) in v.iter_mut().enumerate() {
            let digits = &caps[i + 1];
            *slot = digits
                .parse::<u32>()
                .map_err(|_| BoxTokenError::OutOfRange(digits.to_string()))?;
        }
        NormBBox::new(v[0], v[1], v[2], v[3])
    }
}

pub fn bbox_to_token(n: &NormBBox) -> String {
    n.to_token()
}

pub fn parse_bbox_token(s: &str) -> Result<NormBBox, BoxTokenError> {
    s.parse()
}

/// A bracketed numeric group found inside free text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatch {
    pub span: Range<usize>,
    pub parsed: Result<NormBBox, BoxTokenError>,
}

/// Finds every box-like token in `text`, in order of appearance.
pub fn scan_bbox_tokens(text: &str) -> Vec<TokenMatch> {
    CANDIDATE_TOKEN
        .find_iter(text)
        .map(|m| TokenMatch { span: m.range(), parsed: parse_bbox_token(m.as_str()) })
        .collect()
}

/// Strips every box-like token from `text`.
pub fn strip_bbox_tokens(text: &str) -> String {
    CANDIDATE_TOKEN.replace_all(text, " ").into_owned()
}

/// Maps a pixel box onto the `0..=999` grid with `round(c / dim * 999)`.
pub fn normalize_bbox<T: FloatScalar>(
    b: &Rect<T>,
    screen_w: u32,
    screen_h: u32,
) -> Result<NormBBox, GeometryError> {
    if screen_w == 0 || screen_h == 0 {
        return Err(GeometryError::NonPositiveDimension {
            width: screen_w as i64,
            height: screen_h as i64,
        });
    }
    b.validate()?;
    let (w, h) = (T::of_u32(screen_w), T::of_u32(screen_h));
    if !b.fits_within(w, h) {
        return Err(GeometryError::OutOfBounds {
            bbox: format!("{b:?}"),
            width: screen_w,
            height: screen_h,
        });
    }
    let scale = T::of_u32(NORM_MAX as u32);
    // f32/f64 round() is half-away-from-zero
    let map = |c: T, dim: T| -> u32 {
        let v = (c / dim * scale).round();
        num_traits::cast::<T, u32>(v).unwrap_or(0).min(NORM_MAX as u32)
    };
    let n = NormBBox::new(map(b.x1, w), map(b.y1, h), map(b.x2, w), map(b.y2, h))
        .expect("monotone map of a valid in-bounds box stays valid");
    Ok(n)
}

/// Inverse of [`normalize_bbox`], `n / 999 * dim` per coordinate (evaluated as
/// `n * dim / 999` so that exact cases stay exact).
pub fn denormalize_bbox<T: FloatScalar>(n: &NormBBox, screen_w: u32, screen_h: u32) -> Rect<T> {
    let scale = T::of_u32(NORM_MAX as u32);
    let (w, h) = (T::of_u32(screen_w), T::of_u32(screen_h));
    let map = |c: u16, dim: T| T::of_u32(c as u32) * dim / scale;
    Rect { x1: map(n.x1, w), y1: map(n.y1, h), x2: map(n.x2, w), y2: map(n.y2, h) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn r(x1: f64, y1: f64, x2: f64, y2: f64) -> Rect<f64> {
        Rect::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&r(0., 0., 1., 1.), &r(0., 0., 1., 1.)).unwrap(), 1.0);
        assert_eq!(iou(&r(0., 0., 1., 1.), &r(2., 2., 3., 3.)).unwrap(), 0.0);
        assert_relative_eq!(iou(&r(0., 0., 2., 2.), &r(1., 0., 3., 2.)).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn iou_exact_with_rationals() {
        let q = |v: i64| Ratio::from_integer(v);
        let a = Rect::new(q(0), q(0), q(2), q(2)).unwrap();
        let b = Rect::new(q(1), q(0), q(3), q(2)).unwrap();
        assert_eq!(iou(&a, &b).unwrap(), Ratio::new(1, 3));
    }

    #[test]
    fn iou_degenerate_boxes_are_zero() {
        let p = r(5., 5., 5., 5.);
        assert_eq!(iou(&p, &p).unwrap(), 0.0);
        assert_eq!(iou(&p, &r(0., 0., 10., 10.)).unwrap(), 0.0);
    }

    #[test]
    fn iou_rejects_inverted() {
        let bad = Rect { x1: 3.0, y1: 0.0, x2: 1.0, y2: 1.0 };
        assert!(matches!(iou(&bad, &r(0., 0., 1., 1.)), Err(GeometryError::Malformed(_))));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_bbox(&r(100., 200., 300., 400.), 1000, 2000).unwrap();
        assert_eq!(n.coords(), [100, 100, 300, 200]);
        let n = normalize_bbox(&r(0., 0., 1000., 2000.), 1000, 2000).unwrap();
        assert_eq!(n.coords(), [0, 0, 999, 999]);
        let n = normalize_bbox(&r(512., 512., 512., 512.), 1024, 1024).unwrap();
        assert_eq!(n.coords(), [500, 500, 500, 500]);
    }

    #[test]
    fn normalize_f32() {
        let b = Rect::<f32>::new(100., 200., 300., 400.).unwrap();
        assert_eq!(normalize_bbox(&b, 1000, 2000).unwrap().coords(), [100, 100, 300, 200]);
    }

    #[test]
    fn normalize_rejects_out_of_bounds() {
        let err = normalize_bbox(&r(0., 0., 1001., 10.), 1000, 2000).unwrap_err();
        assert!(matches!(err, GeometryError::OutOfBounds { .. }));
        assert!(matches!(
            normalize_bbox(&r(0., 0., 1., 1.), 0, 10),
            Err(GeometryError::NonPositiveDimension { .. })
        ));
    }

    #[test]
    fn denormalize_examples() {
        let full = NormBBox::new(0, 0, 999, 999).unwrap();
        assert_eq!(denormalize_bbox::<f64>(&full, 640, 480), r(0., 0., 640., 480.));
        let mid = NormBBox::new(500, 500, 500, 500).unwrap();
        assert_eq!(denormalize_bbox::<f64>(&mid, 999, 999), r(500., 500., 500., 500.));
        let n = NormBBox::new(100, 100, 300, 200).unwrap();
        let back = denormalize_bbox::<f64>(&n, 1000, 2000);
        // 100/999*1000 etc.
        assert_relative_eq!(back.x1, 100.1001001001001, epsilon = 1e-9);
        assert_relative_eq!(back.y1, 200.2002002002002, epsilon = 1e-9);
        assert_relative_eq!(back.x2, 300.3003003003003, epsilon = 1e-9);
        assert_relative_eq!(back.y2, 400.4004004004004, epsilon = 1e-9);
        let orig = r(100., 200., 300., 400.);
        for (a, b) in <[f64; 4]>::from(back).iter().zip(<[f64; 4]>::from(orig)) {
            assert!((a.round() - b).abs() <= 1.0);
        }
    }

    #[test]
    fn token_examples() {
        let n = NormBBox::new(10, 20, 30, 40).unwrap();
        assert_eq!(bbox_to_token(&n), "[10, 20, 30, 40]");
        assert_eq!(parse_bbox_token("[10,20,30,40]").unwrap(), n);
        assert_eq!(parse_bbox_token("  [ 10 ,20,  30,40 ] ").unwrap(), n);
        assert!(matches!(parse_bbox_token("[30, 20, 10, 40]"), Err(BoxTokenError::Inverted(_))));
    }

    #[test]
    fn token_errors_are_distinct() {
        assert!(matches!(parse_bbox_token("[1000, 5, 10, 20]"), Err(BoxTokenError::OutOfRange(_))));
        assert!(matches!(
            parse_bbox_token("[99999999999999, 5, 10, 20]"),
            Err(BoxTokenError::OutOfRange(_))
        ));
        for bad in ["10, 20, 30, 40", "[10, 20, 30]", "[a, b, c, d]", "[1.5, 2, 3, 4]", "[-1, 2, 3, 4]", "x[1, 2, 3, 4]"] {
            assert!(matches!(parse_bbox_token(bad), Err(BoxTokenError::Malformed(_))), "{bad}");
        }
    }

    #[test]
    fn norm_bbox_serde_validates() {
        let n: NormBBox = serde_json::from_str("[1, 2, 3, 4]").unwrap();
        assert_eq!(n.coords(), [1, 2, 3, 4]);
        assert!(serde_json::from_str::<NormBBox>("[5, 2, 3, 4]").is_err());
        assert_eq!(serde_json::to_string(&n).unwrap(), "[1,2,3,4]");
    }

    #[test]
    fn scan_finds_tokens_in_text() {
        let found = scan_bbox_tokens("Tap the button [10, 20, 30, 40] then [1000, 1, 2, 3].");
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].parsed, Ok(NormBBox::new(10, 20, 30, 40).unwrap()));
        assert!(matches!(found[1].parsed, Err(BoxTokenError::OutOfRange(_))));
        assert!(scan_bbox_tokens("a [bbox] placeholder").is_empty());
        assert_eq!(strip_bbox_tokens("at [1, 2, 3, 4] top").split_whitespace().count(), 2);
    }

    fn arb_rect() -> impl Strategy<Value = Rect<f64>> {
        (0u32..64, 0u32..64, 0u32..64, 0u32..64).prop_map(|(a, b, c, d)| {
            Rect::new(a.min(c) as f64, b.min(d) as f64, a.max(c) as f64, b.max(d) as f64).unwrap()
        })
    }

    fn arb_norm() -> impl Strategy<Value = NormBBox> {
        (0u32..1000, 0u32..1000, 0u32..1000, 0u32..1000)
            .prop_map(|(a, b, c, d)| NormBBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in arb_rect(), b in arb_rect()) {
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        }

        #[test]
        fn iou_identity(a in arb_rect()) {
            prop_assume!(a.area() > 0.0);
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn token_round_trip(n in arb_norm()) {
            prop_assert_eq!(parse_bbox_token(&bbox_to_token(&n)).unwrap(), n);
        }

        #[test]
        fn normalize_round_trip(
            w in 1u32..4000, h in 1u32..4000,
            fx in 0.0f64..1.0, fy in 0.0f64..1.0, fw in 0.0f64..1.0, fh in 0.0f64..1.0,
        ) {
            let (wf, hf) = (w as f64, h as f64);
            let x1 = (fx * wf).floor();
            let y1 = (fy * hf).floor();
            let x2 = x1 + ((wf - x1) * fw).floor();
            let y2 = y1 + ((hf - y1) * fh).floor();
            let b = r(x1, y1, x2, y2);
            let back = denormalize_bbox::<f64>(&normalize_bbox(&b, w, h).unwrap(), w, h);
            let tol = if w.max(h) <= 999 { 1.0 } else { w.max(h) as f64 / 999.0 + 0.5 };
            for (a, o) in <[f64; 4]>::from(back).iter().zip(<[f64; 4]>::from(b)) {
                prop_assert!((a - o).abs() <= tol, "{a} vs {o} tol {tol}");
            }
        }
    }
}
