//! Screen annotations as produced by the UI detector: the ingestion contract.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::convert::Infallible;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::geometry::{normalize_bbox, GeometryError, NormBBox};
use crate::BBox;

pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UiType {
    Button,
    Text,
    Icon,
    Picture,
    Checkbox,
    Toggle,
    Tab,
    /// Any detector label outside the canonical set, kept verbatim.
    Other(String),
}

static CHECK_STATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(checkbox|toggle)\s*[(\[_-]?\s*(?:un)?checked\s*[)\]]?$").unwrap()
});

impl UiType {
    /// Maps a raw detector label to its canonical type. Checked and unchecked
    /// variants of checkboxes and toggles collapse into one class.
    pub fn canonicalize(raw: &str) -> UiType {
        let trimmed = raw.trim();
        let base = match CHECK_STATE.captures(trimmed) {
            Some(c) => c.get(1).unwrap().as_str().to_string(),
            None => trimmed.to_string(),
        };
        match base.to_ascii_lowercase().as_str() {
            "button" => UiType::Button,
            "text" => UiType::Text,
            "icon" => UiType::Icon,
            "picture" => UiType::Picture,
            "checkbox" => UiType::Checkbox,
            "toggle" => UiType::Toggle,
            "tab" => UiType::Tab,
            _ => UiType::Other(trimmed.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            UiType::Button => "Button",
            UiType::Text => "Text",
            UiType::Icon => "Icon",
            UiType::Picture => "Picture",
            UiType::Checkbox => "Checkbox",
            UiType::Toggle => "Toggle",
            UiType::Tab => "Tab",
            UiType::Other(s) => s,
        }
    }
}

impl fmt::Display for UiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UiType {
    type Err = Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(UiType::canonicalize(s))
    }
}

impl Serialize for UiType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for UiType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(UiType::canonicalize(&raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Iphone,
    Android,
}

impl Platform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Platform::Iphone => "iphone",
            Platform::Android => "android",
        }
    }

    /// Short suffix used in report rows ("i" / "A").
    pub fn suffix(&self) -> &'static str {
        match self {
            Platform::Iphone => "i",
            Platform::Android => "A",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Platform {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iphone" | "ios" => Ok(Platform::Iphone),
            "android" => Ok(Platform::Android),
            other => Err(format!("unknown platform {other:?}")),
        }
    }
}

/// One detected widget. Grouped elements keep their constituents in `members`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiElement {
    pub id: String,
    pub ui_type: UiType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub bbox: BBox,
    /// Icon class for `Icon` elements; falls back to `text` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icon_class: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<UiElement>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl UiElement {
    pub fn new(id: impl Into<String>, ui_type: UiType, text: Option<&str>, bbox: BBox) -> Self {
        UiElement {
            id: id.into(),
            ui_type,
            text: text.map(str::to_string),
            bbox,
            icon_class: None,
            members: Vec::new(),
            extra: Map::new(),
        }
    }

    /// Displayed text, trimmed; `None` when missing or blank.
    pub fn display_text(&self) -> Option<&str> {
        self.text.as_deref().map(str::trim).filter(|t| !t.is_empty())
    }

    pub fn icon_label(&self) -> Option<&str> {
        self.icon_class
            .as_deref()
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .or_else(|| self.display_text())
    }

    pub fn is_group(&self) -> bool {
        !self.members.is_empty()
    }

    /// Ids of every detection this element accounts for.
    pub fn leaf_ids(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaf_ids(&mut out);
        out
    }

    fn collect_leaf_ids<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.members.is_empty() {
            out.push(&self.id);
        } else {
            self.members.iter().for_each(|m| m.collect_leaf_ids(out));
        }
    }
}

/// Total order used everywhere elements are listed: top-to-bottom, then
/// left-to-right, then by id.
pub fn reading_order(a: &UiElement, b: &UiElement) -> Ordering {
    a.bbox
        .y1
        .total_cmp(&b.bbox.y1)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenAnnotation {
    pub screen_id: String,
    pub platform: Platform,
    pub width: u32,
    pub height: u32,
    pub elements: Vec<UiElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotationError {
    #[error("screen {screen}: {source}")]
    Geometry {
        screen: String,
        #[source]
        source: GeometryError,
    },
    #[error("screen {screen}: element {element}: {source}")]
    ElementGeometry {
        screen: String,
        element: String,
        #[source]
        source: GeometryError,
    },
    #[error("screen {screen}: duplicate element id {element}")]
    DuplicateId { screen: String, element: String },
    #[error("invalid annotation JSON: {0}")]
    Json(String),
}

impl ScreenAnnotation {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.width == 0 || self.height == 0 {
            return Err(AnnotationError::Geometry {
                screen: self.screen_id.clone(),
                source: GeometryError::NonPositiveDimension {
                    width: self.width as i64,
                    height: self.height as i64,
                },
            });
        }
        let mut seen = HashSet::new();
        let mut stack: Vec<&UiElement> = self.elements.iter().collect();
        while let Some(e) = stack.pop() {
            if !seen.insert(e.id.as_str()) {
                return Err(AnnotationError::DuplicateId {
                    screen: self.screen_id.clone(),
                    element: e.id.clone(),
                });
            }
            let geom = |source| AnnotationError::ElementGeometry {
                screen: self.screen_id.clone(),
                element: e.id.clone(),
                source,
            };
            e.bbox.validate().map_err(geom)?;
            if !e.bbox.fits_within(self.width as f64, self.height as f64) {
                return Err(geom(GeometryError::OutOfBounds {
                    bbox: e.bbox.to_string(),
                    width: self.width,
                    height: self.height,
                }));
            }
            stack.extend(e.members.iter());
        }
        Ok(())
    }

    /// Parses and validates one annotation object.
    pub fn from_json(s: &str) -> Result<Self, AnnotationError> {
        let a: ScreenAnnotation =
            serde_json::from_str(s).map_err(|e| AnnotationError::Json(e.to_string()))?;
        a.validate()?;
        Ok(a)
    }

    pub fn norm_bbox(&self, e: &UiElement) -> Result<NormBBox, GeometryError> {
        normalize_bbox(&e.bbox, self.width, self.height)
    }

    pub fn element(&self, id: &str) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// Elements sorted in reading order.
    pub fn ordered_elements(&self) -> Vec<&UiElement> {
        let mut v: Vec<&UiElement> = self.elements.iter().collect();
        v.sort_by(|a, b| reading_order(a, b));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalizes_check_states() {
        assert_eq!(UiType::canonicalize("Checkbox (Unchecked)"), UiType::Checkbox);
        assert_eq!(UiType::canonicalize("Checkbox (Checked)"), UiType::Checkbox);
        assert_eq!(UiType::canonicalize("Toggle (Checked)"), UiType::Toggle);
        assert_eq!(UiType::canonicalize("Toggle (Unchecked)"), UiType::Toggle);
        assert_eq!(UiType::canonicalize("Button"), UiType::Button);
        assert_eq!(UiType::canonicalize(" icon "), UiType::Icon);
        assert_eq!(UiType::canonicalize("Slider"), UiType::Other("Slider".into()));
    }

    #[test]
    fn parses_ingestion_schema_and_keeps_unknown_fields() {
        let raw = r#"{"screen_id":"s1","platform":"iphone","width":100,"height":200,
            "source":"amp","elements":[{"id":"e1","ui_type":"Toggle (Checked)","bbox":[0,0,10,10],"score":0.9}]}"#;
        let a = ScreenAnnotation::from_json(raw).unwrap();
        assert_eq!(a.elements[0].ui_type, UiType::Toggle);
        assert_eq!(a.extra["source"], "amp");
        assert_eq!(a.elements[0].extra["score"], 0.9);
        let back = serde_json::to_value(&a).unwrap();
        assert_eq!(back["elements"][0]["ui_type"], "Toggle");
        assert_eq!(back["source"], "amp");
    }

    #[test]
    fn rejects_bad_geometry_and_duplicates() {
        let inverted = r#"{"screen_id":"s","platform":"android","width":10,"height":10,
            "elements":[{"id":"a","ui_type":"Text","bbox":[5,0,1,1]}]}"#;
        assert!(matches!(
            ScreenAnnotation::from_json(inverted),
            Err(AnnotationError::ElementGeometry { .. })
        ));
        let outside = r#"{"screen_id":"s","platform":"android","width":10,"height":10,
            "elements":[{"id":"a","ui_type":"Text","bbox":[0,0,11,1]}]}"#;
        assert!(ScreenAnnotation::from_json(outside).is_err());
        let dup = r#"{"screen_id":"s","platform":"android","width":10,"height":10,
            "elements":[{"id":"a","ui_type":"Text","bbox":[0,0,1,1]},{"id":"a","ui_type":"Icon","bbox":[0,0,1,1]}]}"#;
        assert!(matches!(ScreenAnnotation::from_json(dup), Err(AnnotationError::DuplicateId { .. })));
        let zero = r#"{"screen_id":"s","platform":"android","width":0,"height":10,"elements":[]}"#;
        assert!(ScreenAnnotation::from_json(zero).is_err());
    }
}
