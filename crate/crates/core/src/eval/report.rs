//! Per-task scoring and the aggregate table.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    cider, class_accuracy, exact_match_accuracy, f1_binary, grounding_accuracy, judge_score_ratio, listing_accuracy,
    normalize_caption, parse_yes_no, CiderConfig, EvalError, EvalRecord, DEFAULT_IOU_THRESHOLD,
};
use crate::annotation::Platform;
use crate::task::{Task, TaskSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub cider: CiderConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { iou_threshold: DEFAULT_IOU_THRESHOLD, cider: CiderConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<Platform>,
    pub metric: String,
    /// Percent for accuracies, F1 and judge ratios; CIDEr x100.
    pub value: f64,
    pub n: usize,
    /// Records left out, such as advanced samples the judge could not score.
    #[serde(default)]
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub name: String,
    pub value: f64,
    pub n: usize,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cider_variant: String,
    pub iou_threshold: f64,
    pub tasks: Vec<TaskMetric>,
    pub aggregates: Vec<AggregateRow>,
    #[serde(default)]
    pub missing_predictions: usize,
    #[serde(default)]
    pub unmatched_predictions: usize,
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Ocr => "exact_match",
        Task::IconRecognition | Task::WidgetClassification => "accuracy",
        Task::FindText | Task::FindIcon | Task::FindWidget => "iou_accuracy",
        Task::WidgetListing => "box_f1",
        Task::Screen2words | Task::WidgetCaptions => "cider",
        Task::Taperception => "f1",
        _ => "judge_ratio",
    }
}

/// Scores one task bucket. Returns `None` for an empty bucket or when every
/// record was excluded.
pub fn score_task(
    task: Task,
    platform: Option<Platform>,
    records: &[&EvalRecord],
    cfg: &EvalConfig,
) -> Result<Option<TaskMetric>, EvalError> {
    if records.is_empty() {
        return Ok(None);
    }
    let owned: Vec<EvalRecord> = records.iter().map(|r| (*r).clone()).collect();
    let mut excluded = 0;
    let value = match task {
        Task::Ocr => 100.0 * exact_match_accuracy(&owned)?,
        Task::IconRecognition | Task::WidgetClassification => 100.0 * class_accuracy(&owned)?,
        Task::FindText | Task::FindIcon | Task::FindWidget => 100.0 * grounding_accuracy(&owned, cfg.iou_threshold)?,
        Task::WidgetListing => 100.0 * listing_accuracy(&owned, cfg.iou_threshold)?,
        Task::Screen2words | Task::WidgetCaptions => {
            let cands: Vec<String> = owned.iter().map(|r| normalize_caption(&r.prediction)).collect();
            let refs: Vec<Vec<String>> = owned
                .iter()
                .map(|r| r.caption_references().iter().map(|s| normalize_caption(s)).collect())
                .collect();
            100.0 * cider(&cands, &refs, &cfg.cider)?.score
        }
        Task::Taperception => {
            let preds: Vec<bool> = owned.iter().map(|r| parse_yes_no(&r.prediction).unwrap_or(false)).collect();
            let labels: Vec<bool> = owned.iter().map(|r| parse_yes_no(&r.label).unwrap_or(false)).collect();
            100.0 * f1_binary(&preds, &labels)?
        }
        _ => {
            let scored: Vec<(f64, f64)> = owned.iter().filter_map(|r| r.judge_scores).collect();
            excluded = owned.len() - scored.len();
            if scored.is_empty() {
                return Ok(None);
            }
            let pred: f64 = scored.iter().map(|s| s.0).sum();
            let label: f64 = scored.iter().map(|s| s.1).sum();
            judge_score_ratio(pred, label)?
        }
    };
    Ok(Some(TaskMetric {
        task,
        platform,
        metric: metric_name(task).to_string(),
        value,
        n: owned.len() - excluded,
        excluded,
    }))
}

fn average_row(name: &str, metrics: &[&TaskMetric]) -> Option<AggregateRow> {
    if metrics.is_empty() {
        return None;
    }
    Some(AggregateRow {
        name: name.to_string(),
        value: metrics.iter().map(|m| m.value).sum::<f64>() / metrics.len() as f64,
        n: metrics.iter().map(|m| m.n).sum(),
        tasks: metrics.iter().map(|m| m.task).collect(),
    })
}

/// Scores every (task, platform) bucket and averages the referring,
/// grounding and advanced groups per platform. Widget listing is reported but
/// never averaged. Empty buckets produce no row.
pub fn aggregate(records: &[EvalRecord], cfg: &EvalConfig) -> Result<MetricReport, EvalError> {
    let mut buckets: BTreeMap<(Task, Option<Platform>), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        buckets.entry((r.task, r.platform)).or_default().push(r);
        if r.platform.is_some() {
            buckets.entry((r.task, None)).or_default().push(r);
        }
    }
    let mut tasks = Vec::new();
    for ((task, platform), recs) in &buckets {
        if let Some(m) = score_task(*task, *platform, recs, cfg)? {
            tasks.push(m);
        }
    }

    let mut aggregates = Vec::new();
    let groups: [(&str, &[Task]); 3] = [("Ref", &Task::REFERRING), ("Grd", &Task::GROUNDING), ("Adv", &Task::ADVANCED)];
    for (prefix, members) in groups {
        for platform in [Platform::Iphone, Platform::Android] {
            let picked: Vec<&TaskMetric> = tasks
                .iter()
                .filter(|m| m.platform == Some(platform) && members.contains(&m.task))
                .collect();
            aggregates.extend(average_row(&format!("{prefix}-{}", platform.suffix()), &picked));
        }
    }
    for task in Task::SPOTLIGHT {
        if let Some(m) = tasks.iter().find(|m| m.task == task && m.platform.is_none()) {
            aggregates.push(AggregateRow { name: task.to_string(), value: m.value, n: m.n, tasks: vec![task] });
        }
    }
    Ok(MetricReport {
        cider_variant: cfg.cider.identity(),
        iou_threshold: cfg.iou_threshold,
        tasks,
        aggregates,
        missing_predictions: 0,
        unmatched_predictions: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub prediction: String,
}

/// Joins predictions to gold samples by id. Gold samples without a prediction
/// are scored against an empty string. Returns the records plus the counts of
/// missing and unmatched predictions.
pub fn join_predictions(gold: &[TaskSample], preds: &[Prediction]) -> (Vec<EvalRecord>, usize, usize) {
    let by_id: HashMap<&str, &str> = preds.iter().map(|p| (p.sample_id.as_str(), p.prediction.as_str())).collect();
    let mut missing = 0;
    let records = gold
        .iter()
        .map(|s| {
            let pred = by_id.get(s.sample_id.as_str()).copied().unwrap_or_else(|| {
                missing += 1;
                ""
            });
            EvalRecord::from_sample(s, pred)
        })
        .collect();
    let gold_ids: std::collections::HashSet<&str> = gold.iter().map(|s| s.sample_id.as_str()).collect();
    let unmatched = preds.iter().filter(|p| !gold_ids.contains(p.sample_id.as_str())).count();
    (records, missing, unmatched)
}

impl MetricReport {
    /// Plain-text table: aggregate rows first, then every task bucket.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} | iou>{}", self.cider_variant, self.iou_threshold);
        let _ = writeln!(out, "{:<24} {:>8} {:>7}", "group", "score", "n");
        for a in &self.aggregates {
            let _ = writeln!(out, "{:<24} {:>8.2} {:>7}", a.name, a.value, a.n);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<24} {:<9} {:<13} {:>8} {:>7}", "task", "platform", "metric", "score", "n");
        for t in &self.tasks {
            let platform = t.platform.map(|p| p.as_str()).unwrap_or("all");
            let _ = writeln!(out, "{:<24} {:<9} {:<13} {:>8.2} {:>7}", t.task.as_str(), platform, t.metric, t.value, t.n);
        }
        if self.missing_predictions > 0 || self.unmatched_predictions > 0 {
            let _ = writeln!(
                out,
                "\nmissing predictions: {}, unmatched predictions: {}",
                self.missing_predictions, self.unmatched_predictions
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ocr(platform: Platform, id: usize, hit: bool) -> EvalRecord {
        EvalRecord {
            sample_id: format!("ocr:{id}"),
            task: Task::Ocr,
            platform: Some(platform),
            question: String::new(),
            prediction: if hit { "a".into() } else { "b".into() },
            label: "a".into(),
            references: vec![],
            pred_regions: vec![],
            label_regions: vec![],
            judge_scores: None,
        }
    }

    #[test]
    fn ref_average_is_mean_of_task_scores() {
        let metrics: Vec<TaskMetric> = [(Task::Ocr, 80.0), (Task::IconRecognition, 82.0), (Task::WidgetClassification, 85.0)]
            .into_iter()
            .map(|(task, value)| TaskMetric { task, platform: Some(Platform::Iphone), metric: "x".into(), value, n: 10, excluded: 0 })
            .collect();
        let row = average_row("Ref-i", &metrics.iter().collect::<Vec<_>>()).unwrap();
        assert_relative_eq!(row.value, 82.333333, epsilon = 1e-5);
        assert_eq!(row.n, 30);
    }

    #[test]
    fn empty_buckets_are_omitted() {
        let recs: Vec<EvalRecord> = (0..4).map(|i| ocr(Platform::Iphone, i, i < 3)).collect();
        let report = aggregate(&recs, &EvalConfig::default()).unwrap();
        let names: Vec<&str> = report.aggregates.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, vec!["Ref-i"]);
        assert_relative_eq!(report.aggregates[0].value, 75.0);
        assert!(report.tasks.iter().all(|t| t.task == Task::Ocr));
        assert!(report.to_table().contains("Ref-i"));
    }

    #[test]
    fn listing_is_excluded_from_grounding_average() {
        use crate::geometry::NormBBox;
        let b = NormBBox::new(0, 0, 100, 100).unwrap();
        let find = EvalRecord {
            task: Task::FindText,
            prediction: b.to_token(),
            label_regions: vec![b],
            ..ocr(Platform::Android, 0, true)
        };
        let listing = EvalRecord {
            task: Task::WidgetListing,
            prediction: String::new(),
            label_regions: vec![b],
            ..ocr(Platform::Android, 1, true)
        };
        let report = aggregate(&[find, listing], &EvalConfig::default()).unwrap();
        let grd = report.aggregates.iter().find(|a| a.name == "Grd-A").unwrap();
        assert_eq!(grd.tasks, vec![Task::FindText]);
        assert_relative_eq!(grd.value, 100.0);
        assert!(report.tasks.iter().any(|t| t.task == Task::WidgetListing && t.value == 0.0));
    }

    #[test]
    fn advanced_ratio_of_sums_with_exclusions() {
        let mk = |scores: Option<(f64, f64)>| EvalRecord {
            task: Task::DetailedDescription,
            judge_scores: scores,
            ..ocr(Platform::Iphone, 0, true)
        };
        let recs = vec![mk(Some((6.0, 8.0))), mk(Some((9.0, 7.0))), mk(None)];
        let report = aggregate(&recs, &EvalConfig::default()).unwrap();
        let m = report.tasks.iter().find(|t| t.platform.is_none()).unwrap();
        assert_relative_eq!(m.value, 100.0);
        assert_eq!((m.n, m.excluded), (2, 1));
    }
}
