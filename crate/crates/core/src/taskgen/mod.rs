//! Elementary task generation and Spotlight reformatting.
//!
//! Every grouped element is sorted into one of three categories (text, icon,
//! other widget). Each category has one referring task and one grounding task;
//! an element yields one sample for every task it is eligible for. Each screen
//! additionally yields exactly one widget listing sample.

pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::{Platform, ScreenAnnotation, UiElement, UiType};
use crate::geometry::{normalize_bbox, GeometryError, NormBBox};
use crate::seeds::rng_for;
use crate::task::{Split, Task, TaskSample, Turn, SAMPLE_SCHEMA_VERSION};
use crate::BBox;

pub use prompts::{expand_prompt, PromptError, PromptPool, BBOX_PLACEHOLDER, TARGET_PLACEHOLDER};

/// Opening phrase of every widget listing answer.
pub const LISTING_PREFIX: &str = "UI widgets present in this screen include";
/// Per-task ceiling on test samples.
pub const TEST_CAP: usize = 5000;
/// OCR targets must have fewer tokens than this.
pub const OCR_MAX_TOKENS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskGenError {
    #[error("element {element} is not eligible for {task}: {reason}")]
    Ineligible { task: Task, element: String, reason: String },
    #[error("screen {0} has no elements")]
    EmptyScreen(String),
    #[error("{task} record {record} needs a bbox")]
    MissingBbox { task: Task, record: String },
    #[error("record {record}: {reason}")]
    InvalidRecord { record: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which find task an identity check applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Text,
    Icon,
    Widget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Text,
    Icon,
    Widget,
}

impl Category {
    pub fn of(e: &UiElement) -> Category {
        match e.ui_type {
            UiType::Text => Category::Text,
            UiType::Icon => Category::Icon,
            _ => Category::Widget,
        }
    }

    pub fn referring_task(&self) -> Task {
        match self {
            Category::Text => Task::Ocr,
            Category::Icon => Task::IconRecognition,
            Category::Widget => Task::WidgetClassification,
        }
    }

    pub fn grounding_task(&self) -> Task {
        match self {
            Category::Text => Task::FindText,
            Category::Icon => Task::FindIcon,
            Category::Widget => Task::FindWidget,
        }
    }

    pub fn target_kind(&self) -> TargetKind {
        match self {
            Category::Text => TargetKind::Text,
            Category::Icon => TargetKind::Icon,
            Category::Widget => TargetKind::Widget,
        }
    }
}

/// Generation settings shared by every screen of a run.
#[derive(Debug, Clone, Default)]
pub struct TaskGenConfig {
    pub seed: u64,
    /// Allowed icon classes; `None` accepts any non-empty class.
    pub icon_labels: Option<BTreeSet<String>>,
}

impl TaskGenConfig {
    pub fn new(seed: u64) -> Self {
        TaskGenConfig { seed, icon_labels: None }
    }
}

/// Parses an icon label file: one class per line, `#` comments.
pub fn parse_icon_labels(s: &str) -> BTreeSet<String> {
    s.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn builtin_icon_labels() -> BTreeSet<String> {
    parse_icon_labels(include_str!("../../assets/icon_classes.txt"))
}

/// OCR length filter: fewer than ten whitespace tokens, and a lone token
/// needs at least two characters.
pub fn eligible_ocr(e: &UiElement) -> bool {
    let Some(text) = e.display_text() else { return false };
    let tokens: Vec<&str> = text.split_whitespace().collect();
    match tokens.len() {
        0 => false,
        1 => tokens[0].chars().count() >= 2,
        n => n < OCR_MAX_TOKENS,
    }
}

fn widget_key(e: &UiElement) -> (UiType, Option<&str>) {
    (e.ui_type.clone(), e.display_text())
}

/// False when the target's identity is shared by another element on the screen.
pub fn eligible_find_target(e: &UiElement, screen: &ScreenAnnotation, kind: TargetKind) -> bool {
    let others = screen.elements.iter().filter(|o| o.id != e.id);
    match kind {
        TargetKind::Text => match e.display_text() {
            Some(t) => !others.into_iter().any(|o| o.display_text() == Some(t)),
            None => false,
        },
        TargetKind::Icon => match e.icon_label() {
            Some(c) if e.ui_type == UiType::Icon => {
                !others.into_iter().any(|o| o.ui_type == UiType::Icon && o.icon_label() == Some(c))
            }
            _ => false,
        },
        TargetKind::Widget => {
            let key = widget_key(e);
            !others.into_iter().any(|o| widget_key(o) == key)
        }
    }
}

fn ineligible(task: Task, e: &UiElement, reason: &str) -> TaskGenError {
    TaskGenError::Ineligible { task, element: e.id.clone(), reason: reason.to_string() }
}

fn icon_allowed(e: &UiElement, cfg: &TaskGenConfig) -> bool {
    match (e.icon_label(), &cfg.icon_labels) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(c), Some(set)) => set.contains(c),
    }
}

fn sample(screen: &ScreenAnnotation, task: Task, key: &str, split: Split, turns: Vec<Turn>) -> TaskSample {
    TaskSample {
        schema_version: SAMPLE_SCHEMA_VERSION,
        sample_id: format!("{}:{}:{}", task, screen.screen_id, key),
        task,
        screen_id: screen.screen_id.clone(),
        platform: Some(screen.platform),
        image: screen.image_path.clone(),
        split,
        turns,
        references: Vec::new(),
    }
}

/// Reason an element cannot be used for a referring task, if any.
pub fn referring_ineligibility(e: &UiElement, task: Task, cfg: &TaskGenConfig) -> Option<&'static str> {
    match task {
        Task::Ocr if e.ui_type != UiType::Text => Some("ocr targets must be Text"),
        Task::Ocr if !eligible_ocr(e) => Some("text length filter"),
        Task::IconRecognition if e.ui_type != UiType::Icon => Some("icon recognition targets must be Icons"),
        Task::IconRecognition if !icon_allowed(e, cfg) => Some("icon has no known class"),
        Task::WidgetClassification if matches!(e.ui_type, UiType::Icon | UiType::Text) => {
            Some("widget classification excludes icons and text")
        }
        Task::Ocr | Task::IconRecognition | Task::WidgetClassification => None,
        _ => Some("not a referring task"),
    }
}

/// A referring sample: the user turn carries the element's box, the assistant
/// answers with its text, icon class or widget type.
pub fn gen_referring_sample(
    screen: &ScreenAnnotation,
    e: &UiElement,
    task: Task,
    pool: &PromptPool,
    cfg: &TaskGenConfig,
    split: Split,
) -> Result<TaskSample, TaskGenError> {
    if let Some(reason) = referring_ineligibility(e, task, cfg) {
        return Err(ineligible(task, e, reason));
    }
    let answer = match task {
        Task::Ocr => e.display_text().unwrap().to_string(),
        Task::IconRecognition => e.icon_label().unwrap().to_string(),
        _ => e.ui_type.name().to_string(),
    };
    let region = screen.norm_bbox(e)?;
    let prompt = expand_prompt(pool, task, &screen.screen_id, &e.id, cfg.seed)?;
    let question = prompt.replace(BBOX_PLACEHOLDER, &region.to_token());
    Ok(sample(screen, task, &e.id, split, vec![Turn::user(question), Turn::assistant(answer)]))
}

/// How a grounding target is named in the question.
pub fn target_description(e: &UiElement, task: Task) -> Option<String> {
    match task {
        Task::FindText => e.display_text().map(str::to_string),
        Task::FindIcon => e.icon_label().map(str::to_string),
        Task::FindWidget => Some(match e.display_text() {
            Some(t) => format!("{} {}", t, e.ui_type.name()).to_lowercase(),
            None => e.ui_type.name().to_lowercase(),
        }),
        _ => None,
    }
}

pub fn gen_grounding_sample(
    screen: &ScreenAnnotation,
    e: &UiElement,
    task: Task,
    pool: &PromptPool,
    cfg: &TaskGenConfig,
    split: Split,
) -> Result<TaskSample, TaskGenError> {
    let (kind, ty_ok) = match task {
        Task::FindText => (TargetKind::Text, e.ui_type == UiType::Text),
        Task::FindIcon => (TargetKind::Icon, e.ui_type == UiType::Icon),
        Task::FindWidget => (TargetKind::Widget, !matches!(e.ui_type, UiType::Icon | UiType::Text)),
        _ => return Err(ineligible(task, e, "not a single-target grounding task")),
    };
    if !ty_ok {
        return Err(ineligible(task, e, "element type does not match task"));
    }
    if !eligible_find_target(e, screen, kind) {
        return Err(ineligible(task, e, "target occurs more than once on the screen"));
    }
    let target = target_description(e, task).ok_or_else(|| ineligible(task, e, "no target description"))?;
    let region = screen.norm_bbox(e)?;
    let prompt = expand_prompt(pool, task, &screen.screen_id, &e.id, cfg.seed)?;
    let question = prompt.replace(TARGET_PLACEHOLDER, &target);
    Ok(sample(screen, task, &e.id, split, vec![Turn::user(question), Turn::assistant(region.to_token())]))
}

fn listing_entry(e: &UiElement, region: &NormBBox) -> String {
    let token = region.to_token();
    match (e.ui_type == UiType::Text, e.display_text()) {
        (true, Some(t)) => format!("Text displaying {t} {token}"),
        (false, Some(t)) => format!("{t} {} {token}", e.ui_type.name()),
        (_, None) => format!("{} {token}", e.ui_type.name()),
    }
}

/// The widget listing answer for a screen, elements in reading order.
pub fn widget_listing_answer(screen: &ScreenAnnotation) -> Result<String, TaskGenError> {
    if screen.elements.is_empty() {
        return Err(TaskGenError::EmptyScreen(screen.screen_id.clone()));
    }
    let entries = screen
        .ordered_elements()
        .into_iter()
        .map(|e| Ok(listing_entry(e, &screen.norm_bbox(e)?)))
        .collect::<Result<Vec<_>, TaskGenError>>()?;
    Ok(format!("{LISTING_PREFIX} {}", entries.join(", ")))
}

pub fn gen_widget_listing(
    screen: &ScreenAnnotation,
    pool: &PromptPool,
    cfg: &TaskGenConfig,
    split: Split,
) -> Result<TaskSample, TaskGenError> {
    let answer = widget_listing_answer(screen)?;
    let prompt = expand_prompt(pool, Task::WidgetListing, &screen.screen_id, "", cfg.seed)?;
    Ok(sample(screen, Task::WidgetListing, "all", split, vec![Turn::user(prompt), Turn::assistant(answer)]))
}

/// Every elementary sample for one screen, in reading order of the targets,
/// widget listing first.
pub fn generate_screen(
    screen: &ScreenAnnotation,
    pool: &PromptPool,
    cfg: &TaskGenConfig,
    split: Split,
) -> Result<Vec<TaskSample>, TaskGenError> {
    let mut out = Vec::new();
    if screen.elements.is_empty() {
        return Ok(out);
    }
    out.push(gen_widget_listing(screen, pool, cfg, split)?);
    for e in screen.ordered_elements() {
        let cat = Category::of(e);
        let referring = cat.referring_task();
        if referring_ineligibility(e, referring, cfg).is_none() {
            out.push(gen_referring_sample(screen, e, referring, pool, cfg, split)?);
        }
        if eligible_find_target(e, screen, cat.target_kind()) {
            out.push(gen_grounding_sample(screen, e, cat.grounding_task(), pool, cfg, split)?);
        }
    }
    Ok(out)
}

/// Elementary samples for many screens, bucketed by task. Test splits are capped.
pub fn generate_elementary(
    screens: &[ScreenAnnotation],
    pool: &PromptPool,
    cfg: &TaskGenConfig,
    split: Split,
) -> Result<BTreeMap<Task, Vec<TaskSample>>, TaskGenError> {
    use rayon::prelude::*;
    let per_screen: Vec<Vec<TaskSample>> = screens
        .par_iter()
        .map(|s| generate_screen(s, pool, cfg, split))
        .collect::<Result<_, _>>()?;
    let mut by_task: BTreeMap<Task, Vec<TaskSample>> =
        Task::ELEMENTARY.iter().map(|t| (*t, Vec::new())).collect();
    for s in per_screen.into_iter().flatten() {
        by_task.get_mut(&s.task).expect("elementary task").push(s);
    }
    if split == Split::Test {
        for (task, samples) in by_task.iter_mut() {
            *samples = cap_test_set(std::mem::take(samples), *task, cfg.seed);
        }
    }
    Ok(by_task)
}

/// Keeps at most [`TEST_CAP`] samples of `task`, chosen by a seeded shuffle.
/// Retained samples keep their input order.
pub fn cap_test_set(samples: Vec<TaskSample>, task: Task, seed: u64) -> Vec<TaskSample> {
    let samples: Vec<TaskSample> = samples.into_iter().filter(|s| s.task == task).collect();
    if samples.len() <= TEST_CAP {
        return samples;
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut rng_for(seed, &format!("cap_test_set:{task}")));
    let mut keep = vec![false; samples.len()];
    idx[..TEST_CAP].iter().for_each(|&i| keep[i] = true);
    samples.into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect()
}

/// One record of the Spotlight tasks in their public format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotlightRecord {
    pub record_id: String,
    pub task: Task,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_id: Option<String>,
    #[serde(default = "default_spotlight_platform")]
    pub platform: Platform,
    pub width: u32,
    pub height: u32,
    /// Pixel box of the referenced element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    /// String, or boolean for taperception.
    pub answer: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_spotlight_platform() -> Platform {
    Platform::Android
}

fn default_split() -> Split {
    Split::Train
}

/// Maps a tappability label to `"Yes."` / `"No."`.
pub fn canonical_tap_answer(answer: &Value) -> Option<&'static str> {
    let yes = Some("Yes.");
    let no = Some("No.");
    match answer {
        Value::Bool(true) => yes,
        Value::Bool(false) => no,
        Value::Number(n) => match n.as_i64() {
            Some(1) => yes,
            Some(0) => no,
            _ => None,
        },
        Value::String(s) => {
            let s = s.trim().trim_end_matches('.').to_ascii_lowercase();
            match s.as_str() {
                "yes" | "true" | "1" | "tappable" => yes,
                "no" | "false" | "0" | "not tappable" | "untappable" => no,
                _ => None,
            }
        }
        _ => None,
    }
}

pub fn reformat_spotlight(
    record: &SpotlightRecord,
    pool: &PromptPool,
    seed: u64,
) -> Result<TaskSample, TaskGenError> {
    let invalid = |reason: String| TaskGenError::InvalidRecord { record: record.record_id.clone(), reason };
    if !Task::SPOTLIGHT.contains(&record.task) {
        return Err(invalid(format!("{} is not a Spotlight task", record.task)));
    }
    let screen_id = record.screen_id.clone().unwrap_or_else(|| record.image.clone());
    let prompt = expand_prompt(pool, record.task, &screen_id, &record.record_id, seed)?;
    let question = if record.task == Task::Screen2words {
        prompt.to_string()
    } else {
        let b = record
            .bbox
            .ok_or_else(|| TaskGenError::MissingBbox { task: record.task, record: record.record_id.clone() })?;
        let region = normalize_bbox(&b, record.width, record.height)?;
        prompt.replace(BBOX_PLACEHOLDER, &region.to_token())
    };
    let answer = match (&record.task, &record.answer) {
        (Task::Taperception, a) => canonical_tap_answer(a)
            .ok_or_else(|| invalid(format!("unrecognized tappability label {a}")))?
            .to_string(),
        (_, Value::String(s)) => s.clone(),
        (_, other) => return Err(invalid(format!("answer must be a string, got {other}"))),
    };
    Ok(TaskSample {
        schema_version: SAMPLE_SCHEMA_VERSION,
        sample_id: format!("{}:{}:{}", record.task, screen_id, record.record_id),
        task: record.task,
        screen_id,
        platform: Some(record.platform),
        image: Some(record.image.clone()),
        split: record.split,
        turns: vec![Turn::user(question), Turn::assistant(answer)],
        references: record.references.clone(),
    })
}
