//! Versioned instruction paraphrase pools.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::seeds::stable_hash;
use crate::task::Task;

/// Placeholder replaced by the region token in referring prompts.
pub const BBOX_PLACEHOLDER: &str = "[bbox]";
/// Placeholder replaced by the target description in grounding prompts.
pub const TARGET_PLACEHOLDER: &str = "{target}";

const DEFAULT_POOL: &str = include_str!("../../assets/prompts.json");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt pool has no prompts for task {0}")]
    UnknownTask(Task),
    #[error("invalid prompt pool: {0}")]
    Invalid(String),
}

/// Task to paraphrases; index 0 of every list is the base prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    pub version: String,
    pub pools: BTreeMap<Task, Vec<String>>,
}

impl PromptPool {
    /// The pool shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_POOL).expect("bundled prompt pool is valid")
    }

    pub fn from_json(s: &str) -> Result<Self, PromptError> {
        let pool: PromptPool = serde_json::from_str(s).map_err(|e| PromptError::Invalid(e.to_string()))?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (task, prompts) in &self.pools {
            if prompts.is_empty() {
                return Err(PromptError::Invalid(format!("empty pool for {task}")));
            }
            for p in prompts {
                let needs_bbox = task.is_referring();
                let needs_target = matches!(task, Task::FindText | Task::FindIcon | Task::FindWidget);
                if needs_bbox && !p.contains(BBOX_PLACEHOLDER) {
                    return Err(PromptError::Invalid(format!("{task} prompt lacks {BBOX_PLACEHOLDER}: {p:?}")));
                }
                if needs_target && !p.contains(TARGET_PLACEHOLDER) {
                    return Err(PromptError::Invalid(format!("{task} prompt lacks {TARGET_PLACEHOLDER}: {p:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn prompts(&self, task: Task) -> Result<&[String], PromptError> {
        self.pools
            .get(&task)
            .filter(|p| !p.is_empty())
            .map(Vec::as_slice)
            .ok_or(PromptError::UnknownTask(task))
    }

    pub fn base_prompt(&self, task: Task) -> Result<&str, PromptError> {
        Ok(&self.prompts(task)?[0])
    }

    /// A single-prompt pool per task, holding only the base prompts.
    pub fn base_only(&self) -> PromptPool {
        PromptPool {
            version: format!("{}-base", self.version),
            pools: self.pools.iter().map(|(t, p)| (*t, p[..1].to_vec())).collect(),
        }
    }
}

/// Picks a paraphrase uniformly by hashing the sample identity with the seed.
pub fn expand_prompt<'a>(
    pool: &'a PromptPool,
    task: Task,
    screen_id: &str,
    element_id: &str,
    seed: u64,
) -> Result<&'a str, PromptError> {
    let prompts = pool.prompts(task)?;
    let h = stable_hash(&[task.as_str(), screen_id, element_id, &seed.to_string()]);
    Ok(&prompts[(h % prompts.len() as u64) as usize])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_pool_covers_every_task() {
        let pool = PromptPool::builtin();
        for t in Task::ALL {
            assert!(pool.prompts(t).unwrap().len() >= 8, "{t}");
        }
        assert_eq!(pool.base_prompt(Task::Screen2words).unwrap(), "Provide a summary of this screenshot");
        assert_eq!(
            pool.base_prompt(Task::Taperception).unwrap(),
            "Predict whether the UI element [bbox] is tappable"
        );
    }

    #[test]
    fn expansion_is_deterministic_and_in_pool() {
        let pool = PromptPool::builtin();
        let a = expand_prompt(&pool, Task::Ocr, "s1", "e1", 7).unwrap();
        assert_eq!(a, expand_prompt(&pool, Task::Ocr, "s1", "e1", 7).unwrap());
        let prompts = pool.prompts(Task::Ocr).unwrap();
        let picks: std::collections::BTreeSet<&str> =
            (0..64).map(|s| expand_prompt(&pool, Task::Ocr, "s1", "e1", s).unwrap()).collect();
        assert!(picks.iter().all(|p| prompts.iter().any(|q| q == p)));
        assert!(picks.len() > 1);
    }

    #[test]
    fn single_prompt_pool_returns_base() {
        let pool = PromptPool::builtin().base_only();
        for seed in 0..10 {
            assert_eq!(
                expand_prompt(&pool, Task::FindIcon, "s", "e", seed).unwrap(),
                "Where is the {target} icon on the screen?"
            );
        }
    }

    #[test]
    fn unknown_task_is_an_error() {
        let mut pool = PromptPool::builtin();
        pool.pools.remove(&Task::Ocr);
        assert_eq!(expand_prompt(&pool, Task::Ocr, "s", "e", 0), Err(PromptError::UnknownTask(Task::Ocr)));
    }

    #[test]
    fn rejects_prompt_without_placeholder() {
        let bad = r#"{"version":"x","pools":{"ocr":["Read the text."]}}"#;
        assert!(matches!(PromptPool::from_json(bad), Err(PromptError::Invalid(_))));
    }
}
