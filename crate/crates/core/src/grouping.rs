//! Detection post-processing: type canonicalization and merging of text lines
//! and picture captions into larger units.
//!
//! A merged element keeps its constituents in [`UiElement::members`]. Both
//! grouping passes first dissolve groups of the kind they create, so running a
//! pass on its own output reproduces that output.

use serde::{Deserialize, Serialize};

use crate::annotation::{reading_order, ScreenAnnotation, UiElement, UiType};
use crate::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupingConfig {
    /// Maximum vertical gap between stacked lines, as a fraction of the median text height.
    pub line_merge_gap: f64,
    /// Minimum horizontal overlap, as a fraction of the narrower box width.
    pub horizontal_overlap_min: f64,
    /// Maximum gap between a picture and its caption, as a fraction of the picture height.
    pub caption_gap: f64,
}

impl GroupingConfig {
    pub const DEFAULT_LINE_MERGE_GAP: f64 = 0.6;
    pub const DEFAULT_HORIZONTAL_OVERLAP_MIN: f64 = 0.5;
    pub const DEFAULT_CAPTION_GAP: f64 = 0.15;

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("line_merge_gap", self.line_merge_gap),
            ("horizontal_overlap_min", self.horizontal_overlap_min),
            ("caption_gap", self.caption_gap),
        ] {
            if !(v > 0.0 && v <= 2.0) {
                return Err(format!("{name} must lie in (0, 2], got {v}"));
            }
        }
        Ok(())
    }
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            line_merge_gap: Self::DEFAULT_LINE_MERGE_GAP,
            horizontal_overlap_min: Self::DEFAULT_HORIZONTAL_OVERLAP_MIN,
            caption_gap: Self::DEFAULT_CAPTION_GAP,
        }
    }
}

pub fn canonicalize_type(raw_type: &str) -> UiType {
    UiType::canonicalize(raw_type)
}

fn group_id(first: &UiElement) -> String {
    format!("grp-{}", first.id)
}

fn overlaps_enough(a: &BBox, b: &BBox, min_frac: f64) -> bool {
    let narrower = a.width().min(b.width());
    a.x_overlap(b).is_some_and(|o| o >= min_frac * narrower)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn merge(kind: UiType, members: Vec<UiElement>, text: Option<String>) -> UiElement {
    let bbox = members[1..].iter().fold(members[0].bbox, |acc, m| acc.hull(&m.bbox));
    let mut g = UiElement::new(group_id(&members[0]), kind, None, bbox);
    g.text = text;
    g.members = members;
    g
}

/// Merges vertically stacked text lines into paragraph elements.
pub fn group_text_lines(elements: &[UiElement], cfg: &GroupingConfig) -> Vec<UiElement> {
    let mut lines = Vec::new();
    let mut out = Vec::new();
    for e in elements {
        match e.ui_type {
            UiType::Text if e.is_group() => lines.extend(e.members.iter().cloned()),
            UiType::Text => lines.push(e.clone()),
            _ => out.push(e.clone()),
        }
    }
    lines.sort_by(reading_order);

    if let Some(median_h) = median(lines.iter().map(|l| l.bbox.height()).collect()) {
        let max_gap = cfg.line_merge_gap * median_h;
        let mut chains: Vec<Vec<UiElement>> = Vec::new();
        for line in lines {
            let target = chains.iter_mut().find(|chain| {
                let last = &chain.last().unwrap().bbox;
                line.bbox.y1 - last.y2 <= max_gap
                    && overlaps_enough(last, &line.bbox, cfg.horizontal_overlap_min)
            });
            match target {
                Some(chain) => chain.push(line),
                None => chains.push(vec![line]),
            }
        }
        for mut chain in chains {
            if chain.len() == 1 {
                out.push(chain.pop().unwrap());
                continue;
            }
            chain.sort_by(reading_order);
            let text: Vec<&str> = chain.iter().filter_map(|m| m.display_text()).collect();
            let text = (!text.is_empty()).then(|| text.join(" "));
            out.push(merge(UiType::Text, chain, text));
        }
    }
    out.sort_by(reading_order);
    out
}

/// Absorbs the caption text directly below a picture into the picture element.
pub fn group_picture_caption(elements: &[UiElement], cfg: &GroupingConfig) -> Vec<UiElement> {
    let mut pool: Vec<UiElement> = Vec::new();
    for e in elements {
        if e.ui_type == UiType::Picture && e.is_group() {
            pool.extend(e.members.iter().cloned());
        } else {
            pool.push(e.clone());
        }
    }
    pool.sort_by(reading_order);

    let mut claimed = vec![false; pool.len()];
    let mut captions: Vec<(usize, usize)> = Vec::new();
    for (pi, pic) in pool.iter().enumerate() {
        if pic.ui_type != UiType::Picture {
            continue;
        }
        let max_gap = cfg.caption_gap * pic.bbox.height();
        let best = pool
            .iter()
            .enumerate()
            .filter(|(ti, t)| {
                t.ui_type == UiType::Text
                    && !claimed[*ti]
                    && t.bbox.y1 >= pic.bbox.y2
                    && t.bbox.y1 - pic.bbox.y2 <= max_gap
                    && overlaps_enough(&pic.bbox, &t.bbox, cfg.horizontal_overlap_min)
            })
            .min_by(|(_, a), (_, b)| {
                (a.bbox.y1 - pic.bbox.y2)
                    .total_cmp(&(b.bbox.y1 - pic.bbox.y2))
                    .then_with(|| reading_order(a, b))
            })
            .map(|(ti, _)| ti);
        if let Some(ti) = best {
            claimed[ti] = true;
            claimed[pi] = true;
            captions.push((pi, ti));
        }
    }

    let mut out: Vec<UiElement> = Vec::new();
    for (pi, ti) in &captions {
        let caption = pool[*ti].display_text().map(str::to_string);
        out.push(merge(UiType::Picture, vec![pool[*pi].clone(), pool[*ti].clone()], caption));
    }
    out.extend(pool.into_iter().zip(claimed).filter(|(_, c)| !c).map(|(e, _)| e));
    out.sort_by(reading_order);
    out
}

/// Runs both grouping passes over one screen.
pub fn group_screen(screen: &ScreenAnnotation, cfg: &GroupingConfig) -> ScreenAnnotation {
    let lines = group_text_lines(&screen.elements, cfg);
    let elements = group_picture_caption(&lines, cfg);
    ScreenAnnotation { elements, ..screen.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn el(id: &str, t: UiType, text: Option<&str>, b: [f64; 4]) -> UiElement {
        UiElement::new(id, t, text, BBox::from(b))
    }

    fn leaf_ids(v: &[UiElement]) -> Vec<String> {
        let mut ids: Vec<String> =
            v.iter().flat_map(|e| e.leaf_ids()).map(str::to_string).collect();
        ids.sort();
        ids
    }

    #[test]
    fn stacked_lines_merge() {
        let cfg = GroupingConfig::default();
        let input = vec![
            el("b", UiType::Text, Some("World"), [0., 24., 100., 44.]),
            el("a", UiType::Text, Some("Hello"), [0., 0., 100., 20.]),
        ];
        let out = group_text_lines(&input, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text.as_deref(), Some("Hello World"));
        assert_eq!(out[0].bbox, BBox::from([0., 0., 100., 44.]));
        assert_eq!(leaf_ids(&out), vec!["a", "b"]);
    }

    #[test]
    fn distant_lines_stay_apart() {
        let input = vec![
            el("a", UiType::Text, Some("Hello"), [0., 0., 100., 20.]),
            el("b", UiType::Text, Some("World"), [0., 50., 100., 70.]),
        ];
        let out = group_text_lines(&input, &GroupingConfig::default());
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn non_text_passes_through() {
        let input = vec![
            el("t", UiType::Text, Some("Name"), [0., 0., 100., 20.]),
            el("b", UiType::Button, Some("Go"), [0., 22., 100., 42.]),
        ];
        let out = group_text_lines(&input, &GroupingConfig::default());
        assert_eq!(out, input);
    }

    #[test]
    fn picture_absorbs_caption() {
        let cfg = GroupingConfig::default();
        let input = vec![
            el("p", UiType::Picture, None, [0., 0., 200., 200.]),
            el("c", UiType::Text, Some("A cat"), [10., 210., 190., 240.]),
        ];
        let out = group_picture_caption(&input, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].ui_type, UiType::Picture);
        assert_eq!(out[0].text.as_deref(), Some("A cat"));
        assert_eq!(out[0].bbox, BBox::from([0., 0., 200., 240.]));

        let far = vec![input[0].clone(), el("c", UiType::Text, Some("A cat"), [10., 280., 190., 300.])];
        assert_eq!(group_picture_caption(&far, &cfg).len(), 2);

        let alone = vec![input[0].clone()];
        assert_eq!(group_picture_caption(&alone, &cfg), alone);
    }

    #[test]
    fn config_bounds() {
        assert!(GroupingConfig::default().validate().is_ok());
        let bad = GroupingConfig { caption_gap: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GroupingConfig { line_merge_gap: 2.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn arb_elements() -> impl Strategy<Value = Vec<UiElement>> {
        prop::collection::vec((0u8..4, 0u32..300, 0u32..600, 1u32..120, 1u32..40), 0..14).prop_map(
            |raw| {
                raw.into_iter()
                    .enumerate()
                    .map(|(i, (k, x, y, w, h))| {
                        let t = match k {
                            0 | 1 => UiType::Text,
                            2 => UiType::Picture,
                            _ => UiType::Button,
                        };
                        let h = if t == UiType::Picture { h * 3 } else { h };
                        el(
                            &format!("e{i}"),
                            t,
                            Some(&format!("w{i}")),
                            [x as f64, y as f64, (x + w) as f64, (y + h) as f64],
                        )
                    })
                    .collect()
            },
        )
    }

    fn check_hull(e: &UiElement) -> bool {
        if e.members.is_empty() {
            return true;
        }
        let hull = e.members[1..].iter().fold(e.members[0].bbox, |a, m| a.hull(&m.bbox));
        hull == e.bbox && e.members.iter().all(check_hull)
    }

    proptest! {
        #[test]
        fn grouping_conserves_ids_and_is_idempotent(input in arb_elements()) {
            let cfg = GroupingConfig::default();
            let lines = group_text_lines(&input, &cfg);
            prop_assert_eq!(leaf_ids(&lines), leaf_ids(&input));
            prop_assert_eq!(&group_text_lines(&lines, &cfg), &lines);
            prop_assert!(lines.iter().all(check_hull));

            let pics = group_picture_caption(&lines, &cfg);
            prop_assert_eq!(leaf_ids(&pics), leaf_ids(&input));
            prop_assert_eq!(&group_picture_caption(&pics, &cfg), &pics);
            prop_assert!(pics.iter().all(check_hull));

            let mut shuffled = input.clone();
            shuffled.reverse();
            prop_assert_eq!(group_text_lines(&shuffled, &cfg), lines);
        }
    }
}
