//! Benchmark metrics for all fourteen tasks.

pub mod cider;
pub mod judge;
pub mod report;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::annotation::Platform;
use crate::geometry::{iou, parse_bbox_token, scan_bbox_tokens, NormBBox};
use crate::grouping::canonicalize_type;
use crate::task::{Role, Task, TaskSample};

pub use cider::{cider, normalize_caption, CiderConfig, CiderScore, CiderVariant};
pub use judge::{judge_records, judge_with_llm, parse_judge_score, JudgeRubric, JudgeSummary};
pub use report::{aggregate, score_task, AggregateRow, EvalConfig, MetricReport, TaskMetric};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no records to score")]
    Empty,
    #[error("item {0} has no references")]
    EmptyReferences(usize),
    #[error("record {0} has no label region")]
    MissingLabelRegion(String),
    #[error("label score must be positive, got {0}")]
    DegenerateLabel(f64),
    #[error("could not read a score from judge reply {0:?}")]
    JudgeParse(String),
    #[error("record {0} is not an advanced task")]
    NotJudged(String),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error("invalid rubric: {0}")]
    Rubric(String),
    #[error("line {line}: {message}")]
    Input { line: usize, message: String },
}

/// One prediction joined with its gold sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<Platform>,
    /// The user turns, used as the judge question.
    #[serde(default)]
    pub question: String,
    pub prediction: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pred_regions: Vec<NormBBox>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_regions: Vec<NormBBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_scores: Option<(f64, f64)>,
}

impl EvalRecord {
    /// Joins a prediction with the final assistant turn of a gold sample.
    pub fn from_sample(sample: &TaskSample, prediction: &str) -> Self {
        let label_turn = sample.last_turn(Role::Assistant);
        let question = sample
            .turns
            .iter()
            .filter(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        EvalRecord {
            sample_id: sample.sample_id.clone(),
            task: sample.task,
            platform: sample.platform,
            question,
            prediction: prediction.to_string(),
            label: label_turn.map(|t| t.text.clone()).unwrap_or_default(),
            references: sample.references.clone(),
            pred_regions: scan_bbox_tokens(prediction).into_iter().filter_map(|m| m.parsed.ok()).collect(),
            label_regions: label_turn.map(|t| t.regions.clone()).unwrap_or_default(),
            judge_scores: None,
        }
    }

    /// References for captioning, falling back to the label.
    pub fn caption_references(&self) -> Vec<String> {
        if self.references.is_empty() {
            vec![self.label.clone()]
        } else {
            self.references.clone()
        }
    }
}

/// 1 when the trimmed strings are identical, case included.
pub fn exact_match(pred: &str, label: &str) -> u8 {
    u8::from(pred.trim() == label.trim())
}

pub fn class_match(pred: &str, label: &str) -> bool {
    canonicalize_type(pred.trim().trim_end_matches('.')) == canonicalize_type(label.trim().trim_end_matches('.'))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Result<f64, EvalError> {
    let n = values.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(values.sum::<f64>() / n as f64)
}

pub fn class_accuracy(records: &[EvalRecord]) -> Result<f64, EvalError> {
    mean(records.iter().map(|r| f64::from(u8::from(class_match(&r.prediction, &r.label)))))
}

pub fn exact_match_accuracy(records: &[EvalRecord]) -> Result<f64, EvalError> {
    mean(records.iter().map(|r| f64::from(exact_match(&r.prediction, &r.label))))
}

/// The box a grounding prediction commits to: the whole text if it is a
/// token, otherwise the first well-formed token inside it.
pub fn predicted_box(text: &str) -> Option<NormBBox> {
    parse_bbox_token(text.trim())
        .ok()
        .or_else(|| scan_bbox_tokens(text).into_iter().find_map(|m| m.parsed.ok()))
}

pub fn grounding_correct(pred: &str, label: &NormBBox, threshold: f64) -> bool {
    match predicted_box(pred) {
        Some(p) => iou(&p.to_rect::<f64>(), &label.to_rect::<f64>()).map(|v| v > threshold).unwrap_or(false),
        None => false,
    }
}

/// Share of records whose predicted box has IoU strictly above `threshold`.
/// Unparseable predictions count as wrong.
pub fn grounding_accuracy(records: &[EvalRecord], threshold: f64) -> Result<f64, EvalError> {
    let hits = records
        .iter()
        .map(|r| {
            let label = r.label_regions.first().ok_or_else(|| EvalError::MissingLabelRegion(r.sample_id.clone()))?;
            Ok(f64::from(u8::from(grounding_correct(&r.prediction, label, threshold))))
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    mean(hits.into_iter())
}

/// F1 of one-to-one box matching between predicted and gold regions.
pub fn listing_f1(pred: &[NormBBox], label: &[NormBBox], threshold: f64) -> f64 {
    if pred.is_empty() && label.is_empty() {
        return 1.0;
    }
    let mut used = vec![false; label.len()];
    let mut tp = 0usize;
    for p in pred {
        let pr = p.to_rect::<f64>();
        let best = label
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, l)| (i, iou(&pr, &l.to_rect::<f64>()).unwrap_or(0.0)))
            .filter(|(_, v)| *v > threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((i, _)) = best {
            used[i] = true;
            tp += 1;
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / pred.len() as f64;
    let r = tp as f64 / label.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn listing_accuracy(records: &[EvalRecord], threshold: f64) -> Result<f64, EvalError> {
    mean(records.iter().map(|r| listing_f1(&r.pred_regions, &r.label_regions, threshold)))
}

fn yes_no() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no|true|false|tappable|untappable|not tappable)\b").unwrap())
}

/// Reads a tappability answer. Anything without a recognizable yes or no is
/// `None`.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let m = yes_no().find(text)?;
    match m.as_str().to_ascii_lowercase().as_str() {
        "yes" | "true" | "tappable" => Some(true),
        _ => Some(false),
    }
}

/// F1 of the positive class; 0 when precision and recall are both 0.
pub fn f1_binary(preds: &[bool], labels: &[bool]) -> Result<f64, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let tp = preds.iter().zip(labels).filter(|(p, l)| **p && **l).count() as f64;
    let pp = preds.iter().filter(|p| **p).count() as f64;
    let ap = labels.iter().filter(|l| **l).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if ap > 0.0 { tp / ap } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// `100 * pred / label`. Values above 100 are legal.
pub fn judge_score_ratio(pred_score: f64, label_score: f64) -> Result<f64, EvalError> {
    if label_score <= 0.0 || !label_score.is_finite() {
        return Err(EvalError::DegenerateLabel(label_score));
    }
    Ok(100.0 * pred_score / label_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rec(task: Task, pred: &str, label: &str) -> EvalRecord {
        EvalRecord {
            sample_id: "x".into(),
            task,
            platform: None,
            question: String::new(),
            prediction: pred.into(),
            label: label.into(),
            references: vec![],
            pred_regions: vec![],
            label_regions: vec![],
            judge_scores: None,
        }
    }

    #[test]
    fn exact_match_rules() {
        assert_eq!(exact_match("Submit", "Submit"), 1);
        assert_eq!(exact_match(" Submit ", "Submit"), 1);
        assert_eq!(exact_match("submit", "Submit"), 0);
    }

    #[test]
    fn class_accuracy_examples() {
        let recs = vec![
            rec(Task::WidgetClassification, "Button", "Button"),
            rec(Task::WidgetClassification, "Checkbox (Checked)", "Checkbox"),
            rec(Task::WidgetClassification, "Text", "Text"),
            rec(Task::WidgetClassification, "Icon", "Text"),
        ];
        assert_relative_eq!(class_accuracy(&recs).unwrap(), 0.75);
        assert_relative_eq!(class_accuracy(&recs[3..]).unwrap(), 0.0);
        assert!(matches!(class_accuracy(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn grounding_threshold_is_strict() {
        let label = NormBBox::new(0, 0, 100, 100).unwrap();
        assert!(grounding_correct("[0, 0, 100, 100]", &label, 0.5));
        // Intersection 50x100 over union 100x100: exactly 0.5.
        assert!(!grounding_correct("[0, 0, 50, 100]", &label, 0.5));
        assert!(!grounding_correct("somewhere on top", &label, 0.5));
        assert!(grounding_correct("It is at [0,0,100,100].", &label, 0.5));
        let mut r = rec(Task::FindText, "garbage", "");
        r.label_regions = vec![label];
        let mut ok = rec(Task::FindText, "[ 0 , 0 , 100 , 100 ]", "");
        ok.label_regions = vec![label];
        assert_relative_eq!(grounding_accuracy(&[r, ok], 0.5).unwrap(), 0.5);
        assert!(matches!(
            grounding_accuracy(&[rec(Task::FindText, "", "")], 0.5),
            Err(EvalError::MissingLabelRegion(_))
        ));
    }

    #[test]
    fn f1_examples() {
        assert_relative_eq!(f1_binary(&[true, true, false, false], &[true, false, true, false]).unwrap(), 0.5);
        assert_relative_eq!(f1_binary(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_relative_eq!(f1_binary(&[false, false], &[true, false]).unwrap(), 0.0);
        assert!(f1_binary(&[true], &[]).is_err());
    }

    #[test]
    fn judge_ratio_examples() {
        assert_relative_eq!(judge_score_ratio(8.0, 10.0).unwrap(), 80.0);
        assert_relative_eq!(judge_score_ratio(10.0, 10.0).unwrap(), 100.0);
        assert_relative_eq!(judge_score_ratio(9.0, 4.5).unwrap(), 200.0);
        assert!(matches!(judge_score_ratio(3.0, 0.0), Err(EvalError::DegenerateLabel(_))));
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no("Yes."), Some(true));
        assert_eq!(parse_yes_no("no, it is not"), Some(false));
        assert_eq!(parse_yes_no("The element is not tappable"), Some(false));
        assert_eq!(parse_yes_no("maybe"), None);
    }

    #[test]
    fn listing_f1_matches_one_to_one() {
        let a = NormBBox::new(0, 0, 100, 100).unwrap();
        let b = NormBBox::new(200, 200, 300, 300).unwrap();
        assert_relative_eq!(listing_f1(&[a, b], &[a, b], 0.5), 1.0);
        assert_relative_eq!(listing_f1(&[a, a], &[a, b], 0.5), 0.5);
        assert_relative_eq!(listing_f1(&[], &[a], 0.5), 0.0);
        assert_relative_eq!(listing_f1(&[], &[], 0.5), 1.0);
    }
}
