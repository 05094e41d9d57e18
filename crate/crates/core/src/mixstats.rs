//! Training-mixture sampling and corpus analytics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::strip_bbox_tokens;
use crate::seeds::rng_for;
use crate::task::{Role, Task, TaskSample};

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum MixError {
    #[error("pool {pool} has {available} items but {requested} were requested")]
    InsufficientPool { pool: String, requested: usize, available: usize },
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),
    #[error("empty dataset")]
    Empty,
    #[error("misaligned agreement table: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub name: String,
    pub path: String,
    pub weight: f64,
}

/// Mixture config file. Pool order matters: apportionment ties go to the
/// earlier pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub pools: Vec<PoolSpec>,
    pub total: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub with_replacement: bool,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), MixError> {
        if self.pools.is_empty() {
            return Err(MixError::InvalidSpec("no pools".into()));
        }
        let mut names = BTreeSet::new();
        for p in &self.pools {
            if !(p.weight >= 0.0 && p.weight.is_finite()) {
                return Err(MixError::InvalidSpec(format!("pool {} has weight {}", p.name, p.weight)));
            }
            if !names.insert(&p.name) {
                return Err(MixError::InvalidSpec(format!("duplicate pool {}", p.name)));
            }
        }
        if self.pools.iter().map(|p| p.weight).sum::<f64>() <= 0.0 {
            return Err(MixError::InvalidSpec("weights sum to zero".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.pools.iter().map(|p| p.weight).collect()
    }
}

/// Largest-remainder apportionment of `total` over `weights`.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Stable sort keeps earlier pools first on equal remainders.
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Draws from each pool per [`apportion`] and interleaves the result with a
/// seeded shuffle.
pub fn sample_mixture<T: Clone>(pools: &[(&str, &[T])], spec: &MixtureSpec) -> Result<Vec<T>, MixError> {
    spec.validate()?;
    if pools.len() != spec.pools.len() {
        return Err(MixError::InvalidSpec(format!("{} pools given for {} in spec", pools.len(), spec.pools.len())));
    }
    let counts = apportion(spec.total, &spec.weights());
    let mut out = Vec::with_capacity(spec.total);
    for ((name, items), count) in pools.iter().zip(counts) {
        if count == 0 {
            continue;
        }
        let mut rng = rng_for(spec.seed, &format!("mix:{name}"));
        if spec.with_replacement {
            if items.is_empty() {
                return Err(MixError::InsufficientPool { pool: name.to_string(), requested: count, available: 0 });
            }
            out.extend((0..count).map(|_| items[rng.gen_range(0..items.len())].clone()));
        } else {
            if count > items.len() {
                return Err(MixError::InsufficientPool { pool: name.to_string(), requested: count, available: items.len() });
            }
            let mut idx: Vec<usize> = (0..items.len()).collect();
            idx.shuffle(&mut rng);
            out.extend(idx[..count].iter().map(|&i| items[i].clone()));
        }
    }
    out.shuffle(&mut rng_for(spec.seed, "mix:interleave"));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoleFilter {
    Question,
    Answer,
    #[default]
    Both,
}

impl RoleFilter {
    fn accepts(&self, role: Role) -> bool {
        match self {
            RoleFilter::Question => role == Role::User,
            RoleFilter::Answer => role == Role::Assistant,
            RoleFilter::Both => true,
        }
    }
}

impl std::str::FromStr for RoleFilter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "question" => Ok(RoleFilter::Question),
            "answer" => Ok(RoleFilter::Answer),
            "both" => Ok(RoleFilter::Both),
            other => Err(format!("unknown role filter {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrigramCount {
    pub trigram: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub turns: usize,
    pub tokens: usize,
    pub vocab_size: usize,
    pub trigram_total: usize,
    pub top_trigrams: Vec<TrigramCount>,
}

/// Lowercased whitespace tokens with box tokens removed.
pub fn stat_tokens(text: &str) -> Vec<String> {
    strip_bbox_tokens(text).to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// Statistics over the texts of one or more turns. Trigrams never span turns.
pub fn text_stats<'a>(turn_texts: impl IntoIterator<Item = &'a str>, samples: usize, top_k: usize) -> CorpusStats {
    let mut vocab = BTreeSet::new();
    let mut trigrams: HashMap<String, usize> = HashMap::new();
    let (mut turns, mut tokens, mut trigram_total) = (0, 0, 0);
    for text in turn_texts {
        let toks = stat_tokens(text);
        turns += 1;
        tokens += toks.len();
        for w in toks.windows(3) {
            *trigrams.entry(w.join(" ")).or_default() += 1;
            trigram_total += 1;
        }
        vocab.extend(toks);
    }
    let mut top: Vec<TrigramCount> = trigrams.into_iter().map(|(trigram, count)| TrigramCount { trigram, count }).collect();
    top.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.trigram.cmp(&b.trigram)));
    top.truncate(top_k);
    CorpusStats { samples, turns, tokens, vocab_size: vocab.len(), trigram_total, top_trigrams: top }
}

pub fn corpus_stats(samples: &[TaskSample], filter: RoleFilter, top_k: usize) -> Result<CorpusStats, MixError> {
    if samples.is_empty() {
        return Err(MixError::Empty);
    }
    let texts = samples.iter().flat_map(|s| s.turns.iter()).filter(|t| filter.accepts(t.role)).map(|t| t.text.as_str());
    Ok(text_stats(texts, samples.len(), top_k))
}

pub fn stats_by_task(
    samples: &[TaskSample],
    filter: RoleFilter,
    top_k: usize,
) -> Result<BTreeMap<Task, CorpusStats>, MixError> {
    if samples.is_empty() {
        return Err(MixError::Empty);
    }
    let mut by_task: BTreeMap<Task, Vec<&TaskSample>> = BTreeMap::new();
    for s in samples {
        by_task.entry(s.task).or_default().push(s);
    }
    Ok(by_task
        .into_iter()
        .map(|(task, group)| {
            let texts = group.iter().flat_map(|s| s.turns.iter()).filter(|t| filter.accepts(t.role)).map(|t| t.text.as_str());
            (task, text_stats(texts, group.len(), top_k))
        })
        .collect())
}

/// Writes `rank,trigram,count` rows.
pub fn write_trigram_csv<W: Write>(out: W, top: &[TrigramCount]) -> Result<(), MixError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "trigram", "count"])?;
    for (i, t) in top.iter().enumerate() {
        w.write_record([(i + 1).to_string(), t.trigram.clone(), t.count.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Labels from several sources over the same instance ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub ids: Vec<String>,
    /// Source name and its labels, aligned with `ids`.
    pub sources: Vec<(String, Vec<String>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub sources: Vec<String>,
    pub n: usize,
    /// Percent agreement; symmetric with 100 on the diagonal.
    pub values: Vec<Vec<f64>>,
}

/// Pairwise percent agreement, optionally over a subset of ids.
pub fn agreement_matrix(table: &AgreementTable, subset: Option<&BTreeSet<String>>) -> Result<AgreementMatrix, MixError> {
    if table.sources.len() < 2 {
        return Err(MixError::Misaligned("need at least two sources".into()));
    }
    for (name, labels) in &table.sources {
        if labels.len() != table.ids.len() {
            return Err(MixError::Misaligned(format!("{name} has {} labels for {} ids", labels.len(), table.ids.len())));
        }
    }
    let keep: Vec<usize> = match subset {
        None => (0..table.ids.len()).collect(),
        Some(ids) => {
            let known: BTreeSet<&String> = table.ids.iter().collect();
            if let Some(missing) = ids.iter().find(|i| !known.contains(i)) {
                return Err(MixError::Misaligned(format!("unknown id {missing}")));
            }
            (0..table.ids.len()).filter(|&i| ids.contains(&table.ids[i])).collect()
        }
    };
    if keep.is_empty() {
        return Err(MixError::Empty);
    }
    let k = table.sources.len();
    let mut values = vec![vec![100.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let (la, lb) = (&table.sources[a].1, &table.sources[b].1);
            let same = keep.iter().filter(|&&i| la[i] == lb[i]).count();
            let pct = 100.0 * same as f64 / keep.len() as f64;
            values[a][b] = pct;
            values[b][a] = pct;
        }
    }
    Ok(AgreementMatrix { sources: table.sources.iter().map(|(n, _)| n.clone()).collect(), n: keep.len(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{Split, Turn};

    fn spec(weights: &[f64], total: usize) -> MixtureSpec {
        MixtureSpec {
            pools: weights
                .iter()
                .enumerate()
                .map(|(i, w)| PoolSpec { name: format!("p{i}"), path: String::new(), weight: *w })
                .collect(),
            total,
            seed: 7,
            with_replacement: false,
        }
    }

    #[test]
    fn apportionment_examples() {
        assert_eq!(apportion(10, &[0.3, 0.7]), vec![3, 7]);
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[0.0, 1.0]), vec![0, 7]);
    }

    #[test]
    fn mixture_counts_and_determinism() {
        let a: Vec<String> = (0..10).map(|i| format!("a{i}")).collect();
        let b: Vec<String> = (0..10).map(|i| format!("b{i}")).collect();
        let pools = [("p0", a.as_slice()), ("p1", b.as_slice())];
        let out = sample_mixture(&pools, &spec(&[0.3, 0.7], 10)).unwrap();
        assert_eq!(out.iter().filter(|s| s.starts_with('a')).count(), 3);
        assert_eq!(out.iter().collect::<BTreeSet<_>>().len(), 10);
        assert_eq!(out, sample_mixture(&pools, &spec(&[0.3, 0.7], 10)).unwrap());
    }

    #[test]
    fn insufficient_pool_is_named() {
        let a: Vec<u32> = (0..10).collect();
        match sample_mixture(&[("p0", a.as_slice())], &spec(&[1.0], 12)) {
            Err(MixError::InsufficientPool { pool, requested: 12, available: 10 }) => assert_eq!(pool, "p0"),
            other => panic!("{other:?}"),
        }
        let mut s = spec(&[1.0], 12);
        s.with_replacement = true;
        assert_eq!(sample_mixture(&[("p0", a.as_slice())], &s).unwrap().len(), 12);
    }

    #[test]
    fn invalid_specs() {
        assert!(spec(&[0.0, 0.0], 3).validate().is_err());
        assert!(spec(&[-1.0, 2.0], 3).validate().is_err());
        assert!(spec(&[], 3).validate().is_err());
    }

    fn sample(turns: &[(&str, &str)]) -> TaskSample {
        TaskSample {
            schema_version: 1,
            sample_id: "x".into(),
            task: Task::ConvInteraction,
            screen_id: "s".into(),
            platform: None,
            image: None,
            split: Split::Train,
            turns: turns.iter().map(|(q, a)| [Turn::user(*q), Turn::assistant(*a)]).flatten().collect(),
            references: vec![],
        }
    }

    #[test]
    fn trigram_and_vocab_examples() {
        let s = text_stats(["how can i", "How can I"], 1, 5);
        assert_eq!(s.top_trigrams, vec![TrigramCount { trigram: "how can i".into(), count: 2 }]);
        assert_eq!(text_stats(["word"], 1, 5).trigram_total, 0);
        assert_eq!(text_stats(["a b", "b c"], 1, 5).vocab_size, 3);
        // No trigram crosses the turn boundary.
        assert_eq!(text_stats(["a b", "c d"], 1, 5).trigram_total, 0);
    }

    #[test]
    fn role_filter_and_box_stripping() {
        let data = vec![sample(&[("where is the cart", "tap the cart icon [1, 2, 3, 4] now")])];
        let q = corpus_stats(&data, RoleFilter::Question, 10).unwrap();
        assert_eq!((q.turns, q.tokens, q.trigram_total), (1, 4, 2));
        let a = corpus_stats(&data, RoleFilter::Answer, 10).unwrap();
        assert_eq!((a.tokens, a.trigram_total), (5, 3));
        assert!(matches!(corpus_stats(&[], RoleFilter::Both, 10), Err(MixError::Empty)));
    }

    #[test]
    fn csv_output() {
        let mut buf = Vec::new();
        write_trigram_csv(&mut buf, &[TrigramCount { trigram: "a, b c".into(), count: 3 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "rank,trigram,count\n1,\"a, b c\",3\n");
    }

    #[test]
    fn agreement_examples() {
        let table = AgreementTable {
            ids: vec!["1".into(), "2".into(), "3".into(), "4".into()],
            sources: vec![
                ("ours".into(), vec!["y".into(), "y".into(), "n".into(), "n".into()]),
                ("copy".into(), vec!["y".into(), "y".into(), "n".into(), "n".into()]),
                ("other".into(), vec!["y".into(), "y".into(), "n".into(), "y".into()]),
            ],
        };
        let m = agreement_matrix(&table, None).unwrap();
        assert_eq!(m.values[0][1], 100.0);
        assert_eq!(m.values[0][2], 75.0);
        assert_eq!(m.values[2][0], 75.0);
        assert!((0..3).all(|i| m.values[i][i] == 100.0));
        let subset: BTreeSet<String> = ["1", "2", "3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(agreement_matrix(&table, Some(&subset)).unwrap().values[0][2], 100.0);
        let bad = AgreementTable { ids: vec!["1".into()], sources: table.sources.clone() };
        assert!(matches!(agreement_matrix(&bad, None), Err(MixError::Misaligned(_))));
    }
}
