//! Task identifiers and the instruction-following sample record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::Platform;
use crate::geometry::{scan_bbox_tokens, NormBBox};

pub const SAMPLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Ocr,
    IconRecognition,
    WidgetClassification,
    WidgetListing,
    FindText,
    FindIcon,
    FindWidget,
    Screen2words,
    WidgetCaptions,
    Taperception,
    DetailedDescription,
    ConvPerception,
    ConvInteraction,
    FunctionInference,
}

impl Task {
    pub const ALL: [Task; 14] = [
        Task::Ocr,
        Task::IconRecognition,
        Task::WidgetClassification,
        Task::WidgetListing,
        Task::FindText,
        Task::FindIcon,
        Task::FindWidget,
        Task::Screen2words,
        Task::WidgetCaptions,
        Task::Taperception,
        Task::DetailedDescription,
        Task::ConvPerception,
        Task::ConvInteraction,
        Task::FunctionInference,
    ];

    /// The seven template-generated tasks, one set per platform.
    pub const ELEMENTARY: [Task; 7] = [
        Task::Ocr,
        Task::IconRecognition,
        Task::WidgetClassification,
        Task::WidgetListing,
        Task::FindText,
        Task::FindIcon,
        Task::FindWidget,
    ];

    pub const REFERRING: [Task; 3] = [Task::Ocr, Task::IconRecognition, Task::WidgetClassification];
    /// Grounding tasks that enter averages; widget listing is auxiliary.
    pub const GROUNDING: [Task; 3] = [Task::FindText, Task::FindIcon, Task::FindWidget];
    pub const SPOTLIGHT: [Task; 3] = [Task::Screen2words, Task::WidgetCaptions, Task::Taperception];
    pub const ADVANCED: [Task; 4] = [
        Task::DetailedDescription,
        Task::ConvPerception,
        Task::ConvInteraction,
        Task::FunctionInference,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Ocr => "ocr",
            Task::IconRecognition => "icon_recognition",
            Task::WidgetClassification => "widget_classification",
            Task::WidgetListing => "widget_listing",
            Task::FindText => "find_text",
            Task::FindIcon => "find_icon",
            Task::FindWidget => "find_widget",
            Task::Screen2words => "screen2words",
            Task::WidgetCaptions => "widget_captions",
            Task::Taperception => "taperception",
            Task::DetailedDescription => "detailed_description",
            Task::ConvPerception => "conv_perception",
            Task::ConvInteraction => "conv_interaction",
            Task::FunctionInference => "function_inference",
        }
    }

    /// Region in the input.
    pub fn is_referring(&self) -> bool {
        matches!(
            self,
            Task::Ocr
                | Task::IconRecognition
                | Task::WidgetClassification
                | Task::WidgetCaptions
                | Task::Taperception
        )
    }

    /// Region(s) in the output.
    pub fn is_grounding(&self) -> bool {
        matches!(self, Task::WidgetListing | Task::FindText | Task::FindIcon | Task::FindWidget)
    }

    pub fn is_advanced(&self) -> bool {
        Task::ADVANCED.contains(self)
    }

    pub fn is_conversation(&self) -> bool {
        matches!(self, Task::ConvPerception | Task::ConvInteraction)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    /// Boxes mentioned in `text`, in order of appearance.
    #[serde(default)]
    pub regions: Vec<NormBBox>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self::with_regions(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::with_regions(Role::Assistant, text)
    }

    /// Builds a turn whose `regions` are the valid box tokens found in `text`.
    pub fn with_regions(role: Role, text: impl Into<String>) -> Self {
        let text = text.into();
        let regions = scan_bbox_tokens(&text).into_iter().filter_map(|m| m.parsed.ok()).collect();
        Turn { role, text, regions }
    }

    /// True when every box token in the text parses and matches `regions`.
    pub fn regions_consistent(&self) -> bool {
        let scanned: Result<Vec<NormBBox>, _> =
            scan_bbox_tokens(&self.text).into_iter().map(|m| m.parsed).collect();
        scanned.is_ok_and(|s| s == self.regions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub schema_version: u32,
    pub sample_id: String,
    pub task: Task,
    pub screen_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<Platform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub split: Split,
    pub turns: Vec<Turn>,
    /// Extra reference answers (captioning tasks with several ground truths).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl TaskSample {
    pub fn user_regions(&self) -> impl Iterator<Item = &NormBBox> {
        self.turns.iter().filter(|t| t.role == Role::User).flat_map(|t| t.regions.iter())
    }

    pub fn assistant_regions(&self) -> impl Iterator<Item = &NormBBox> {
        self.turns.iter().filter(|t| t.role == Role::Assistant).flat_map(|t| t.regions.iter())
    }

    pub fn last_turn(&self, role: Role) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.role == role)
    }

    /// Checks the referring/grounding side rule and token consistency.
    pub fn check_region_sides(&self) -> Result<(), String> {
        if let Some(t) = self.turns.iter().find(|t| !t.regions_consistent()) {
            return Err(format!("{}: region tokens do not match regions in {:?}", self.sample_id, t.text));
        }
        let user = self.user_regions().count();
        let assistant = self.assistant_regions().count();
        if self.task.is_referring() && (user == 0 || assistant != 0) {
            return Err(format!("{}: referring sample needs user regions only", self.sample_id));
        }
        if self.task.is_grounding() && assistant == 0 {
            return Err(format!("{}: grounding sample lacks assistant regions", self.sample_id));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.as_str()));
        }
        assert!("find_everything".parse::<Task>().is_err());
    }

    #[test]
    fn turn_regions_follow_text() {
        let t = Turn::assistant("tap [1, 2, 3, 4] or [5, 6, 7, 8]");
        assert_eq!(t.regions.len(), 2);
        assert!(t.regions_consistent());
        let mut broken = t.clone();
        broken.regions.pop();
        assert!(!broken.regions_consistent());
    }
}
