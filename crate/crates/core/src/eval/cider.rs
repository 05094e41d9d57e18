//! CIDEr over whitespace-tokenized, lowercased captions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

type Gram = Vec<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiderVariant {
    /// Matches the pycocoevalcap 1.2 `Cider` scorer: candidate weights clipped
    /// to the reference weights and a gaussian length penalty on bigram counts.
    #[default]
    Coco,
    /// Unclipped TF-IDF cosine with no length penalty.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiderConfig {
    pub n_max: usize,
    pub sigma: f64,
    pub variant: CiderVariant,
}

impl Default for CiderConfig {
    fn default() -> Self {
        CiderConfig { n_max: 4, sigma: 6.0, variant: CiderVariant::Coco }
    }
}

impl CiderConfig {
    /// Identity string recorded in report headers.
    pub fn identity(&self) -> String {
        match self.variant {
            CiderVariant::Coco => format!("cider:pycocoevalcap-1.2(n={}, sigma={})", self.n_max, self.sigma),
            CiderVariant::Plain => format!("cider:plain(n={})", self.n_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScore {
    /// Mean of `items`, on the x10 scale.
    pub score: f64,
    pub items: Vec<f64>,
}

/// Lowercases and splits on whitespace. Punctuation other than apostrophes
/// and hyphens is treated as whitespace.
pub fn normalize_caption(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() && c != '\'' && c != '-' { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn count_grams(s: &str, n_max: usize) -> HashMap<Gram, f64> {
    let words: Vec<&str> = s.split_whitespace().collect();
    let mut out = HashMap::new();
    for k in 1..=n_max {
        for w in words.windows(k) {
            *out.entry(w.iter().map(|t| t.to_string()).collect()).or_insert(0.0) += 1.0;
        }
    }
    out
}

struct Weighted {
    vec: Vec<HashMap<Gram, f64>>,
    norm: Vec<f64>,
    /// Bigram count, the length used by the reference scorer.
    length: f64,
}

fn weigh(counts: &HashMap<Gram, f64>, df: &HashMap<Gram, f64>, log_n: f64, n_max: usize) -> Weighted {
    let mut vec = vec![HashMap::new(); n_max];
    let mut norm = vec![0.0; n_max];
    let mut length = 0.0;
    for (g, tf) in counts {
        let k = g.len() - 1;
        let idf = log_n - df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
        let w = tf * idf;
        norm[k] += w * w;
        vec[k].insert(g.clone(), w);
        if k == 1 {
            length += tf;
        }
    }
    Weighted { vec, norm: norm.into_iter().map(f64::sqrt).collect(), length }
}

fn similarity(c: &Weighted, r: &Weighted, cfg: &CiderConfig) -> f64 {
    let delta = c.length - r.length;
    let penalty = match cfg.variant {
        CiderVariant::Coco => (-(delta * delta) / (2.0 * cfg.sigma * cfg.sigma)).exp(),
        CiderVariant::Plain => 1.0,
    };
    let mut total = 0.0;
    for k in 0..cfg.n_max {
        let mut val: f64 = c.vec[k]
            .iter()
            .map(|(g, &wc)| {
                let wr = r.vec[k].get(g).copied().unwrap_or(0.0);
                match cfg.variant {
                    CiderVariant::Coco => wc.min(wr) * wr,
                    CiderVariant::Plain => wc * wr,
                }
            })
            .sum();
        if c.norm[k] != 0.0 && r.norm[k] != 0.0 {
            val /= c.norm[k] * r.norm[k];
        }
        total += val * penalty;
    }
    total / cfg.n_max as f64
}

/// Corpus CIDEr. Inputs are scored as given; apply [`normalize_caption`] first
/// for raw model output.
pub fn cider(candidates: &[String], references: &[Vec<String>], cfg: &CiderConfig) -> Result<CiderScore, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch { left: candidates.len(), right: references.len() });
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(EvalError::EmptyReferences(i));
    }
    let ref_counts: Vec<Vec<HashMap<Gram, f64>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| count_grams(r, cfg.n_max)).collect())
        .collect();
    let mut df: HashMap<Gram, f64> = HashMap::new();
    for rs in &ref_counts {
        let mut seen: Vec<&Gram> = rs.iter().flat_map(|r| r.keys()).collect();
        seen.sort();
        seen.dedup();
        for g in seen {
            *df.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let items: Vec<f64> = candidates
        .iter()
        .zip(&ref_counts)
        .map(|(c, rs)| {
            let wc = weigh(&count_grams(c, cfg.n_max), &df, log_n, cfg.n_max);
            let sum: f64 = rs.iter().map(|r| similarity(&wc, &weigh(r, &df, log_n, cfg.n_max), cfg)).sum();
            10.0 * sum / rs.len() as f64
        })
        .collect();
    let score = items.iter().sum::<f64>() / items.len() as f64;
    Ok(CiderScore { score, items })
}
