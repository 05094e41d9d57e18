//! Advanced task generation: detection-only prompts sent to an external LLM
//! and the parsing of its replies into grounded conversations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::ScreenAnnotation;
use crate::geometry::{scan_bbox_tokens, BoxTokenError, GeometryError, NormBBox};
use crate::llm::LlmClient;
use crate::seeds::rng_for;
use crate::task::{Role, Split, Task, TaskSample, Turn, SAMPLE_SCHEMA_VERSION};
use crate::taskgen::{expand_prompt, PromptError, PromptPool};

/// Screens need more than this many detections.
pub const MIN_DETECTIONS_EXCLUSIVE: usize = 2;
/// Screens need fewer than this many detections.
pub const MAX_DETECTIONS_EXCLUSIVE: usize = 15;
pub const DEFAULT_SNAP_TOLERANCE: u16 = 20;
/// QA pairs drawn per conversation when assembling test samples.
pub const TEST_PAIRS_PER_CONVERSATION: usize = 2;

const DEFAULT_TEMPLATES: &str = include_str!("../assets/advanced_prompts.json");

#[derive(Debug, thiserror::Error)]
pub enum AdvGenError {
    #[error("screen {screen} has {count} detections; advanced tasks need more than 2 and fewer than 15")]
    IneligibleScreen { screen: String, count: usize },
    #[error("{0} is not an advanced task")]
    NotAdvanced(Task),
    #[error("template set has no prompt for {0}")]
    MissingTemplate(Task),
    #[error("invalid templates: {0}")]
    Templates(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("unrecognized conversation structure: {0}")]
    Format(String),
    #[error("bad box token in turn {turn} at byte {offset}: {source}")]
    Token {
        turn: usize,
        offset: usize,
        #[source]
        source: BoxTokenError,
    },
    #[error("empty conversation")]
    Empty,
}

impl ParseError {
    /// Short label used for drop counters.
    pub fn reason(&self) -> &'static str {
        match self {
            ParseError::Format(_) => "format_error",
            ParseError::Token { .. } => "token_error",
            ParseError::Empty => "empty",
        }
    }
}

/// Versioned prompt templates for the four advanced tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvTemplates {
    pub version: String,
    pub system: String,
    pub tasks: BTreeMap<Task, String>,
    #[serde(default)]
    pub one_shot: BTreeMap<Task, String>,
    pub response_format: String,
}

impl AdvTemplates {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn from_json(s: &str) -> Result<Self, AdvGenError> {
        let t: AdvTemplates = serde_json::from_str(s).map_err(|e| AdvGenError::Templates(e.to_string()))?;
        for task in Task::ADVANCED {
            if !t.tasks.contains_key(&task) {
                return Err(AdvGenError::MissingTemplate(task));
            }
            if task.is_conversation() && !t.one_shot.contains_key(&task) {
                return Err(AdvGenError::Templates(format!("{task} needs a one-shot example")));
            }
        }
        Ok(t)
    }
}

/// Everything sent to the LLM for one screen. Only text is carried: no image
/// field exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvPromptBundle {
    pub task: Task,
    pub screen_id: String,
    pub system: String,
    pub base_prompt: String,
    pub detections_block: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_shot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_format: Option<String>,
}

impl AdvPromptBundle {
    /// The user message text.
    pub fn render(&self) -> String {
        let mut out = format!("{}\n\nDetections:\n{}\n", self.base_prompt, self.detections_block);
        if let Some(example) = &self.one_shot {
            out.push_str("\nExample:\n");
            out.push_str(example);
            out.push('\n');
        }
        if let Some(fmt) = &self.response_format {
            out.push('\n');
            out.push_str(fmt);
            out.push('\n');
        }
        out
    }
}

pub fn screen_eligible_advanced(screen: &ScreenAnnotation) -> bool {
    let n = screen.elements.len();
    n > MIN_DETECTIONS_EXCLUSIVE && n < MAX_DETECTIONS_EXCLUSIVE
}

/// One line per element in reading order: `"{type} {text} [x1, y1, x2, y2]"`.
pub fn detections_block(screen: &ScreenAnnotation) -> Result<String, GeometryError> {
    let lines = screen
        .ordered_elements()
        .into_iter()
        .map(|e| {
            let token = screen.norm_bbox(e)?.to_token();
            Ok(match e.display_text() {
                Some(t) => format!("{} {} {}", e.ui_type, t, token),
                None => format!("{} {}", e.ui_type, token),
            })
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    Ok(lines.join("\n"))
}

pub fn build_prompt(
    screen: &ScreenAnnotation,
    task: Task,
    templates: &AdvTemplates,
) -> Result<AdvPromptBundle, AdvGenError> {
    if !task.is_advanced() {
        return Err(AdvGenError::NotAdvanced(task));
    }
    if !screen_eligible_advanced(screen) {
        return Err(AdvGenError::IneligibleScreen {
            screen: screen.screen_id.clone(),
            count: screen.elements.len(),
        });
    }
    let base = templates.tasks.get(&task).ok_or(AdvGenError::MissingTemplate(task))?;
    let conv = task.is_conversation();
    Ok(AdvPromptBundle {
        task,
        screen_id: screen.screen_id.clone(),
        system: templates.system.clone(),
        base_prompt: base.clone(),
        detections_block: detections_block(screen)?,
        one_shot: if conv { templates.one_shot.get(&task).cloned() } else { None },
        response_format: conv.then(|| templates.response_format.clone()),
    })
}

/// Turns recovered from an LLM reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConversation {
    pub turns: Vec<Turn>,
    /// `None` when the conversation may be stored; otherwise the drop reason.
    pub invalid: Option<String>,
}

impl ParsedConversation {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }
}

fn role_of(s: &str) -> Option<Role> {
    match s.trim().to_ascii_lowercase().as_str() {
        "user" | "human" | "question" | "q" => Some(Role::User),
        "assistant" | "gpt" | "answer" | "a" => Some(Role::Assistant),
        _ => None,
    }
}

fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    rest.trim().strip_suffix("```").unwrap_or(rest).trim()
}

fn turns_from_json(raw: &str) -> Option<Result<Vec<(Role, String)>, ParseError>> {
    let body = strip_fences(raw);
    let candidate = match (body.find('['), body.rfind(']')) {
        (Some(a), Some(b)) if a < b => &body[a..=b],
        _ => return None,
    };
    let Ok(Value::Array(items)) = serde_json::from_str::<Value>(candidate) else { return None };
    if items.is_empty() || !items.iter().all(Value::is_object) {
        return None;
    }
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let role = ["role", "from", "speaker"].iter().find_map(|k| item.get(*k)?.as_str());
        let text = ["text", "content", "value"].iter().find_map(|k| item.get(*k)?.as_str());
        match (role.and_then(role_of), text) {
            (Some(r), Some(t)) => out.push((r, t.trim().to_string())),
            _ => return Some(Err(ParseError::Format(format!("item {i} lacks a known role or text")))),
        }
    }
    Some(Ok(out))
}

fn turns_from_lines(raw: &str) -> Result<Vec<(Role, String)>, ParseError> {
    let mut out: Vec<(Role, String)> = Vec::new();
    for line in raw.lines() {
        let trimmed = line.trim();
        let marker = trimmed.split_once(':').and_then(|(head, rest)| {
            match head.trim().to_ascii_lowercase().as_str() {
                "user" => Some((Role::User, rest)),
                "assistant" => Some((Role::Assistant, rest)),
                _ => None,
            }
        });
        match marker {
            Some((role, rest)) => out.push((role, rest.trim().to_string())),
            _ => match out.last_mut() {
                Some((_, text)) if !trimmed.is_empty() => {
                    text.push(' ');
                    text.push_str(trimmed);
                }
                Some(_) => {}
                None if trimmed.is_empty() => {}
                None => return Err(ParseError::Format("text before the first speaker marker".into())),
            },
        }
    }
    if out.is_empty() {
        return Err(ParseError::Format("no User:/Assistant: markers found".into()));
    }
    Ok(out)
}

/// Validates box tokens in one turn and snaps them onto nearby detections.
fn ground_turn(
    idx: usize,
    role: Role,
    text: &str,
    detections: &[NormBBox],
    snap_tolerance: u16,
) -> Result<Turn, ParseError> {
    let mut rebuilt = String::with_capacity(text.len());
    let mut regions = Vec::new();
    let mut cursor = 0;
    for m in scan_bbox_tokens(text) {
        let b = m.parsed.map_err(|source| ParseError::Token { turn: idx, offset: m.span.start, source })?;
        rebuilt.push_str(&text[cursor..m.span.start]);
        let nearest = detections
            .iter()
            .map(|d| (d.max_edge_distance(&b), d))
            .min_by_key(|(dist, _)| *dist)
            .filter(|(dist, _)| snap_tolerance > 0 && *dist <= snap_tolerance);
        match nearest {
            Some((_, d)) => {
                rebuilt.push_str(&d.to_token());
                regions.push(*d);
            }
            None => {
                rebuilt.push_str(&text[m.span.clone()]);
                regions.push(b);
            }
        }
        cursor = m.span.end;
    }
    rebuilt.push_str(&text[cursor..]);
    Ok(Turn { role, text: rebuilt, regions })
}

/// Parses a reply into turns.
///
/// Conversation tasks accept a JSON array of `{role, text}` objects (optionally
/// fenced) or `User:` / `Assistant:` lines, and must alternate starting with
/// the user. Description and inference replies become one assistant turn.
/// Boxes within `snap_tolerance` units per edge of a detection are replaced by
/// that detection; zero disables snapping.
pub fn parse_conversation(
    raw: &str,
    task: Task,
    screen: &ScreenAnnotation,
    snap_tolerance: u16,
) -> Result<ParsedConversation, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let detections = screen
        .ordered_elements()
        .into_iter()
        .filter_map(|e| screen.norm_bbox(e).ok())
        .collect::<Vec<_>>();

    let raw_turns = if task.is_conversation() {
        let turns = match turns_from_json(raw) {
            Some(r) => r?,
            None => turns_from_lines(raw)?,
        };
        if turns.is_empty() {
            return Err(ParseError::Empty);
        }
        for (i, (role, _)) in turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if *role != expected {
                return Err(ParseError::Format(format!("turn {i} should be {expected:?}")));
            }
        }
        turns
    } else {
        vec![(Role::Assistant, raw.trim().to_string())]
    };

    let turns = raw_turns
        .iter()
        .enumerate()
        .map(|(i, (role, text))| ground_turn(i, *role, text, &detections, snap_tolerance))
        .collect::<Result<Vec<_>, _>>()?;

    let invalid = if turns.iter().any(|t| t.text.is_empty()) {
        Some("empty_turn".to_string())
    } else if task.is_conversation() && turns.len() % 2 == 1 {
        Some("unanswered_question".to_string())
    } else if task == Task::ConvInteraction
        && turns.iter().any(|t| t.role == Role::Assistant && t.regions.is_empty())
    {
        Some("answer_without_box".to_string())
    } else {
        None
    };
    Ok(ParsedConversation { turns, invalid })
}

/// The JSON array form accepted by [`parse_conversation`].
pub fn serialize_conversation(turns: &[Turn]) -> String {
    let items: Vec<Value> = turns
        .iter()
        .map(|t| {
            let role = match t.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            serde_json::json!({"role": role, "text": t.text})
        })
        .collect();
    serde_json::to_string(&items).expect("plain JSON")
}

#[derive(Debug, Clone)]
pub struct AdvGenConfig {
    pub seed: u64,
    pub snap_tolerance: u16,
    /// Upper bound on concurrent LLM requests.
    pub max_in_flight: usize,
    pub split: Split,
}

impl Default for AdvGenConfig {
    fn default() -> Self {
        AdvGenConfig { seed: 0, snap_tolerance: DEFAULT_SNAP_TOLERANCE, max_in_flight: 4, split: Split::Train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenFailure {
    pub screen_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub task: Option<Task>,
    pub eligible: usize,
    pub skipped_ineligible: usize,
    pub sent: usize,
    pub parsed: usize,
    pub dropped: BTreeMap<String, usize>,
    pub failures: Vec<ScreenFailure>,
}

impl GenerationReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvGenOutput {
    pub samples: Vec<TaskSample>,
    pub report: GenerationReport,
}

enum Outcome {
    Kept(TaskSample),
    Dropped(String),
    Failed(String),
}

fn run_one(
    screen: &ScreenAnnotation,
    task: Task,
    client: &dyn LlmClient,
    templates: &AdvTemplates,
    pool: &PromptPool,
    cfg: &AdvGenConfig,
) -> Outcome {
    let bundle = match build_prompt(screen, task, templates) {
        Ok(b) => b,
        Err(e) => return Outcome::Failed(e.to_string()),
    };
    let raw = match client.send(&bundle.render(), &bundle.system) {
        Ok(r) => r,
        Err(e) => return Outcome::Failed(e.to_string()),
    };
    let parsed = match parse_conversation(&raw, task, screen, cfg.snap_tolerance) {
        Ok(p) => p,
        Err(e) => return Outcome::Dropped(e.reason().to_string()),
    };
    if let Some(reason) = parsed.invalid {
        return Outcome::Dropped(reason);
    }
    let mut turns = parsed.turns;
    if !task.is_conversation() {
        let question = match expand_prompt(pool, task, &screen.screen_id, "", cfg.seed) {
            Ok(q) => q,
            Err(e) => return Outcome::Failed(e.to_string()),
        };
        turns.insert(0, Turn::user(question));
    }
    Outcome::Kept(TaskSample {
        schema_version: SAMPLE_SCHEMA_VERSION,
        sample_id: format!("{}:{}", task, screen.screen_id),
        task,
        screen_id: screen.screen_id.clone(),
        platform: Some(screen.platform),
        image: screen.image_path.clone(),
        split: cfg.split,
        turns,
        references: Vec::new(),
    })
}

/// Sends every eligible screen to the LLM and keeps the valid conversations.
/// Transport failures are recorded per screen and do not stop the run. Output
/// order follows input order whatever the concurrency.
pub fn run_advgen(
    screens: &[ScreenAnnotation],
    task: Task,
    client: &dyn LlmClient,
    templates: &AdvTemplates,
    pool: &PromptPool,
    cfg: &AdvGenConfig,
) -> Result<AdvGenOutput, AdvGenError> {
    use rayon::prelude::*;
    if !task.is_advanced() {
        return Err(AdvGenError::NotAdvanced(task));
    }
    let eligible: Vec<&ScreenAnnotation> = screens.iter().filter(|s| screen_eligible_advanced(s)).collect();
    let threads = cfg.max_in_flight.max(1);
    let runner = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AdvGenError::Templates(format!("thread pool: {e}")))?;
    let outcomes: Vec<Outcome> = runner.install(|| {
        eligible.par_iter().map(|s| run_one(s, task, client, templates, pool, cfg)).collect()
    });

    let mut report = GenerationReport {
        task: Some(task),
        eligible: eligible.len(),
        skipped_ineligible: screens.len() - eligible.len(),
        ..Default::default()
    };
    let mut samples = Vec::new();
    for (screen, outcome) in eligible.iter().zip(outcomes) {
        match outcome {
            Outcome::Kept(s) => {
                report.sent += 1;
                report.parsed += 1;
                samples.push(s);
            }
            Outcome::Dropped(reason) => {
                report.sent += 1;
                *report.dropped.entry(reason).or_default() += 1;
            }
            Outcome::Failed(error) => {
                report.failures.push(ScreenFailure { screen_id: screen.screen_id.clone(), error })
            }
        }
    }
    Ok(AdvGenOutput { samples, report })
}

/// Splits a stored conversation into single-question test samples, keeping
/// up to two seeded-random QA pairs. Non-conversation samples pass through.
pub fn select_test_pairs(sample: &TaskSample, seed: u64) -> Vec<TaskSample> {
    if !sample.task.is_conversation() {
        return vec![TaskSample { split: Split::Test, ..sample.clone() }];
    }
    let pairs: Vec<(usize, &[Turn])> = sample
        .turns
        .chunks(2)
        .enumerate()
        .filter(|(_, c)| c.len() == 2 && c[0].role == Role::User && c[1].role == Role::Assistant)
        .collect();
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut rng_for(seed, &format!("test_pairs:{}", sample.sample_id)));
    let mut chosen: Vec<usize> = idx.into_iter().take(TEST_PAIRS_PER_CONVERSATION).collect();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|i| {
            let (q, turns) = pairs[i];
            TaskSample {
                sample_id: format!("{}:q{}", sample.sample_id, q),
                split: Split::Test,
                turns: turns.to_vec(),
                ..sample.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{Platform, UiElement, UiType};
    use crate::llm::LlmError;
    use crate::BBox;

    fn screen_with(n: usize) -> ScreenAnnotation {
        ScreenAnnotation {
            screen_id: format!("s{n}"),
            platform: Platform::Iphone,
            width: 999,
            height: 999,
            elements: (0..n)
                .map(|i| {
                    let y = (i * 60) as f64;
                    UiElement::new(format!("e{i}"), UiType::Button, Some(&format!("Item {i}")), BBox::from([10., y, 500., y + 50.]))
                })
                .collect(),
            image_path: None,
            extra: Default::default(),
        }
    }

    #[test]
    fn eligibility_boundaries() {
        let got: Vec<bool> = [2, 3, 14, 15].iter().map(|n| screen_eligible_advanced(&screen_with(*n))).collect();
        assert_eq!(got, vec![false, true, true, false]);
    }

    #[test]
    fn bundle_structure() {
        let t = AdvTemplates::builtin();
        let s = screen_with(3);
        let b = build_prompt(&s, Task::FunctionInference, &t).unwrap();
        assert_eq!(b.detections_block.lines().count(), 3);
        assert_eq!(b.detections_block.lines().next().unwrap(), "Button Item 0 [10, 0, 500, 50]");
        assert!(b.one_shot.is_none());
        assert!(build_prompt(&s, Task::ConvInteraction, &t).unwrap().one_shot.is_some());
        assert!(build_prompt(&s, Task::DetailedDescription, &t).unwrap().one_shot.is_none());
        assert!(matches!(
            build_prompt(&screen_with(2), Task::DetailedDescription, &t),
            Err(AdvGenError::IneligibleScreen { .. })
        ));
        assert!(matches!(build_prompt(&s, Task::Ocr, &t), Err(AdvGenError::NotAdvanced(_))));
    }

    #[test]
    fn parses_json_and_line_formats() {
        let s = screen_with(3);
        let json = r#"```json
[{"role":"user","text":"Where is item 1?"},{"role":"assistant","text":"Here [10, 60, 500, 110]."}]
```"#;
        let p = parse_conversation(json, Task::ConvPerception, &s, 20).unwrap();
        assert!(p.is_valid());
        assert_eq!(p.turns.len(), 2);
        assert_eq!(p.turns[1].regions, vec![NormBBox::new(10, 60, 500, 110).unwrap()]);

        let lines = "User: How can I open item 2?\nAssistant: Tap on it [12, 118, 505, 172]\nto open.";
        let p = parse_conversation(lines, Task::ConvInteraction, &s, 20).unwrap();
        assert!(p.is_valid());
        assert_eq!(p.turns[1].text, "Tap on it [10, 120, 500, 170] to open.");
        assert!(p.turns[1].regions_consistent());
    }

    #[test]
    fn snapping_respects_tolerance() {
        let s = screen_with(3);
        let raw = r#"[{"role":"user","text":"q"},{"role":"assistant","text":"a [40, 60, 500, 110]"}]"#;
        let far = parse_conversation(raw, Task::ConvPerception, &s, 20).unwrap();
        assert_eq!(far.turns[1].regions, vec![NormBBox::new(40, 60, 500, 110).unwrap()]);
        let near = parse_conversation(raw, Task::ConvPerception, &s, 30).unwrap();
        assert_eq!(near.turns[1].regions, vec![NormBBox::new(10, 60, 500, 110).unwrap()]);
        let off = parse_conversation(
            r#"[{"role":"user","text":"q"},{"role":"assistant","text":"a [11, 60, 500, 110]"}]"#,
            Task::ConvPerception,
            &s,
            0,
        )
        .unwrap();
        assert_eq!(off.turns[1].regions, vec![NormBBox::new(11, 60, 500, 110).unwrap()]);
    }

    #[test]
    fn parse_errors() {
        let s = screen_with(3);
        let bad_box = r#"[{"role":"user","text":"q"},{"role":"assistant","text":"at [1000, 5, 10, 20]"}]"#;
        match parse_conversation(bad_box, Task::ConvPerception, &s, 20) {
            Err(ParseError::Token { turn: 1, offset: 3, source: BoxTokenError::OutOfRange(_) }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_conversation("  ", Task::ConvPerception, &s, 20), Err(ParseError::Empty));
        assert!(matches!(
            parse_conversation("just some prose", Task::ConvPerception, &s, 20),
            Err(ParseError::Format(_))
        ));
        assert!(matches!(
            parse_conversation("Assistant: hi\nUser: hello", Task::ConvPerception, &s, 20),
            Err(ParseError::Format(_))
        ));
        let no_box = "User: How can I buy?\nAssistant: Just buy it.";
        let p = parse_conversation(no_box, Task::ConvInteraction, &s, 20).unwrap();
        assert_eq!(p.invalid.as_deref(), Some("answer_without_box"));
        assert!(parse_conversation(no_box, Task::ConvPerception, &s, 20).unwrap().is_valid());
    }

    #[test]
    fn description_reply_is_one_assistant_turn() {
        let s = screen_with(3);
        let p = parse_conversation("A list of three items.", Task::DetailedDescription, &s, 20).unwrap();
        assert_eq!(p.turns, vec![Turn::assistant("A list of three items.")]);
    }

    #[test]
    fn conversation_round_trips() {
        let s = screen_with(4);
        let raw = "User: Where is item 3?\nAssistant: It is near the bottom [10, 180, 500, 230].\nUser: And item 0?\nAssistant: At the top [10, 0, 500, 50].";
        let first = parse_conversation(raw, Task::ConvPerception, &s, 20).unwrap();
        let again = parse_conversation(&serialize_conversation(&first.turns), Task::ConvPerception, &s, 20).unwrap();
        assert_eq!(first.turns, again.turns);
    }

    struct Scripted;
    impl LlmClient for Scripted {
        fn send(&self, prompt: &str, _system: &str) -> Result<String, LlmError> {
            if prompt.contains("Item 4") {
                return Err(LlmError::Transport("connection reset".into()));
            }
            if prompt.contains("Item 5") {
                return Ok(r#"[{"role":"user","text":"q"},{"role":"assistant","text":"[1000, 0, 1, 1]"}]"#.into());
            }
            Ok(r#"[{"role":"user","text":"q"},{"role":"assistant","text":"tap [10, 0, 500, 50]"}]"#.into())
        }
        fn model(&self) -> &str {
            "scripted"
        }
    }

    #[test]
    fn run_reports_drops_and_failures() {
        let screens: Vec<ScreenAnnotation> = (3..8).map(screen_with).chain([screen_with(2)]).collect();
        let out = run_advgen(
            &screens,
            Task::ConvInteraction,
            &Scripted,
            &AdvTemplates::builtin(),
            &PromptPool::builtin(),
            &AdvGenConfig::default(),
        )
        .unwrap();
        let r = &out.report;
        assert_eq!(r.eligible, 5);
        assert_eq!(r.skipped_ineligible, 1);
        // s5 and s6 mention Item 4, s6 and s7 mention Item 5.
        assert_eq!(r.failures.len(), 3);
        assert_eq!(r.sent, 2);
        assert_eq!(r.parsed, 2);
        assert_eq!(out.samples.len(), 2);
        assert!(out.samples.iter().all(|s| s.turns.len() == 2));
    }

    #[test]
    fn description_samples_get_a_question() {
        struct Plain;
        impl LlmClient for Plain {
            fn send(&self, _: &str, _: &str) -> Result<String, LlmError> {
                Ok("A screen with items.".into())
            }
            fn model(&self) -> &str {
                "plain"
            }
        }
        let out = run_advgen(
            &[screen_with(3)],
            Task::DetailedDescription,
            &Plain,
            &AdvTemplates::builtin(),
            &PromptPool::builtin(),
            &AdvGenConfig::default(),
        )
        .unwrap();
        let s = &out.samples[0];
        assert_eq!(s.turns[0].role, Role::User);
        assert_eq!(s.turns[1].text, "A screen with items.");
    }

    #[test]
    fn test_pairs_are_single_question() {
        let s = screen_with(4);
        let raw = "User: a?\nAssistant: x [10, 0, 500, 50]\nUser: b?\nAssistant: y [10, 60, 500, 110]\nUser: c?\nAssistant: z [10, 120, 500, 170]";
        let p = parse_conversation(raw, Task::ConvInteraction, &s, 20).unwrap();
        let sample = TaskSample {
            schema_version: 1,
            sample_id: "conv_interaction:s4".into(),
            task: Task::ConvInteraction,
            screen_id: "s4".into(),
            platform: None,
            image: None,
            split: Split::Train,
            turns: p.turns,
            references: vec![],
        };
        let tests = select_test_pairs(&sample, 1);
        assert_eq!(tests.len(), 2);
        assert!(tests.iter().all(|t| t.turns.len() == 2 && t.split == Split::Test));
        assert_eq!(tests, select_test_pairs(&sample, 1));
    }
}
