//! End-to-end runs: ingest, group, generate, render, mix and summarize, with
//! a manifest hashing every artifact.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advgen::{run_advgen, AdvGenConfig, AdvTemplates, GenerationReport, DEFAULT_SNAP_TOLERANCE};
use crate::annotation::{Platform, ScreenAnnotation};
use crate::anyres::{partition_image, PartitionSidecar, DEFAULT_BASE_RESOLUTION};
use crate::eval::DEFAULT_IOU_THRESHOLD;
use crate::grouping::{group_screen, GroupingConfig};
use crate::io::{read_json, to_jsonl, to_pretty_json, IoError};
use crate::llm::{client_for_mode, ClientMode};
use crate::mixstats::{sample_mixture, stats_by_task, text_stats, write_trigram_csv, MixtureSpec, RoleFilter, DEFAULT_TOP_K};
use crate::seeds::{derive_seed, sha256_hex};
use crate::som::{encode_png, render_som, SomStyle};
use crate::task::{Split, Task, TaskSample};
use crate::taskgen::{generate_elementary, parse_icon_labels, PromptPool, TaskGenConfig};

pub const TOOL_NAME: &str = "screenkit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl PipelineError {
    /// Process exit code: 2 for validation problems, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }

    fn stage(stage: &str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage { stage: stage.to_string(), message: e.to_string() }
    }
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_base_resolution() -> u32 {
    DEFAULT_BASE_RESOLUTION
}
fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}
fn default_in_flight() -> usize {
    4
}
fn default_snap() -> u16 {
    DEFAULT_SNAP_TOLERANCE
}
fn default_mode() -> ClientMode {
    ClientMode::Replay
}

/// Run configuration. Input paths are relative to the config file; mixture
/// pool paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// A directory of `*.json` annotations or a JSONL file.
    pub annotations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_mode")]
    pub llm_mode: ClientMode,
    /// Empty keeps every platform.
    #[serde(default)]
    pub platforms: Vec<Platform>,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub grouping: GroupingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icon_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advanced_templates: Option<PathBuf>,
    #[serde(default)]
    pub advanced: bool,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_snap")]
    pub snap_tolerance: u16,
    #[serde(default)]
    pub partition: bool,
    #[serde(default = "default_base_resolution")]
    pub base_resolution: u32,
    #[serde(default)]
    pub som: bool,
    #[serde(default)]
    pub som_style: SomStyle,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    #[serde(default = "default_top_k")]
    pub stats_top_k: usize,
}

fn default_split() -> Split {
    Split::Train
}

impl RunConfig {
    pub fn new(annotations: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({ "annotations": annotations.into() })).expect("defaults")
    }

    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| PipelineError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and returns it with the directory its paths are
    /// relative to.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let v = |m: String| Err(PipelineError::Validation(m));
        if let Err(e) = self.grouping.validate() {
            return v(format!("grouping: {e}"));
        }
        if let Err(e) = self.som_style.validate() {
            return v(format!("som_style: {e}"));
        }
        if self.base_resolution == 0 {
            return v("base_resolution must be positive".into());
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return v(format!("iou_threshold {} outside (0, 1)", self.iou_threshold));
        }
        if let Some(m) = &self.mixture {
            if let Err(e) = m.validate() {
                return v(e.to_string());
            }
        }
        if self.advanced && self.llm_mode != ClientMode::Live && self.fixtures.is_none() {
            return v("advanced generation in replay or record mode needs a fixtures directory".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejects: Vec<Reject>,
}

fn accept(
    source: String,
    parsed: Result<ScreenAnnotation, String>,
    seen: &mut HashSet<String>,
    screens: &mut Vec<ScreenAnnotation>,
    report: &mut IngestReport,
) {
    let checked = parsed.and_then(|s| s.validate().map(|_| s).map_err(|e| e.to_string())).and_then(|s| {
        if seen.insert(s.screen_id.clone()) {
            Ok(s)
        } else {
            Err(format!("duplicate screen id {}", s.screen_id))
        }
    });
    match checked {
        Ok(s) => {
            report.accepted += 1;
            screens.push(s);
        }
        Err(reason) => report.rejects.push(Reject { source, reason }),
    }
}

/// Reads annotations from a directory of `*.json` files (sorted by name) or
/// from a JSONL file. Invalid entries are itemized and skipped.
pub fn ingest_path(path: &Path) -> Result<(Vec<ScreenAnnotation>, IngestReport), IoError> {
    let mut screens = Vec::new();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| IoError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let text = fs::read_to_string(&f).map_err(|e| IoError::io(&f, e))?;
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let parsed = serde_json::from_str(&text).map_err(|e| e.to_string());
            accept(name, parsed, &mut seen, &mut screens, &mut report);
        }
    } else {
        let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str(line).map_err(|e| e.to_string());
            accept(format!("line {}", i + 1), parsed, &mut seen, &mut screens, &mut report);
        }
    }
    Ok((screens, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub manifest_version: u32,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn is_failed(&self) -> bool {
        self.status == "FAILED"
    }
}

/// Output directory that records the hash of everything written into it.
pub struct ArtifactTree {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl ArtifactTree {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactTree { root: root.into(), files: BTreeMap::new() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), IoError> {
        crate::io::write_bytes(&self.root.join(rel), bytes)?;
        self.files.insert(
            rel.to_string(),
            FileEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 },
        );
        Ok(())
    }

    pub fn entries(&self) -> Vec<FileEntry> {
        self.files.values().cloned().collect()
    }
}

/// Hex SHA-256 of a manifest file's bytes.
pub fn manifest_hash(out_dir: &Path) -> Result<String, IoError> {
    let p = out_dir.join(MANIFEST_FILE);
    Ok(sha256_hex(&fs::read(&p).map_err(|e| IoError::io(&p, e))?))
}

struct Run<'a> {
    cfg: &'a RunConfig,
    base: &'a Path,
    tree: ArtifactTree,
    stages: Vec<StageRecord>,
}

impl Run<'_> {
    fn input(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn mark(&mut self, name: &str, status: &str) {
        self.stages.push(StageRecord { name: name.to_string(), status: status.to_string() });
    }

    fn write(&mut self, stage: &str, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        self.tree.write(rel, bytes).map_err(|e| PipelineError::stage(stage, e))
    }

    fn load_image(&self, stage: &str, screen: &ScreenAnnotation) -> Result<image::RgbaImage, PipelineError> {
        let dir = self
            .cfg
            .images
            .as_ref()
            .map(|d| self.input(d))
            .filter(|d| d.is_dir())
            .ok_or_else(|| PipelineError::stage(stage, "image directory missing"))?;
        let name = screen.image_path.clone().unwrap_or_else(|| format!("{}.png", screen.screen_id));
        let path = dir.join(name);
        let img = image::open(&path)
            .map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))?
            .to_rgba8();
        if img.dimensions() != (screen.width, screen.height) {
            return Err(PipelineError::stage(
                stage,
                format!("{} is {:?}, annotation says {}x{}", path.display(), img.dimensions(), screen.width, screen.height),
            ));
        }
        Ok(img)
    }
}

fn stage_ingest(run: &mut Run) -> Result<Vec<ScreenAnnotation>, PipelineError> {
    let (mut screens, report) = ingest_path(&run.input(&run.cfg.annotations)).map_err(|e| PipelineError::stage("ingest", e))?;
    if !run.cfg.platforms.is_empty() {
        screens.retain(|s| run.cfg.platforms.contains(&s.platform));
    }
    let bytes = to_pretty_json(&report).map_err(|e| PipelineError::stage("ingest", e))?;
    run.write("ingest", "ingest/report.json", &bytes)?;
    if screens.is_empty() {
        return Err(PipelineError::stage("ingest", "no valid screens"));
    }
    Ok(screens)
}

fn stage_elementary(run: &mut Run, screens: &[ScreenAnnotation]) -> Result<Vec<TaskSample>, PipelineError> {
    let err = |e: &dyn std::fmt::Display| PipelineError::stage("elementary", e);
    let pool = match &run.cfg.prompts {
        Some(p) => PromptPool::from_json(&fs::read_to_string(run.input(p)).map_err(|e| err(&e))?).map_err(|e| err(&e))?,
        None => PromptPool::builtin(),
    };
    let icon_labels = match &run.cfg.icon_labels {
        Some(p) => Some(parse_icon_labels(&fs::read_to_string(run.input(p)).map_err(|e| err(&e))?)),
        None => None,
    };
    let platforms: Vec<Platform> = if run.cfg.platforms.is_empty() {
        vec![Platform::Iphone, Platform::Android]
    } else {
        run.cfg.platforms.clone()
    };
    let mut all = Vec::new();
    for platform in platforms {
        let subset: Vec<ScreenAnnotation> = screens.iter().filter(|s| s.platform == platform).cloned().collect();
        let cfg = TaskGenConfig { seed: derive_seed(run.cfg.seed, "taskgen"), icon_labels: icon_labels.clone() };
        let by_task = generate_elementary(&subset, &pool, &cfg, run.cfg.split).map_err(|e| err(&e))?;
        for (task, samples) in by_task {
            let bytes = to_jsonl(&samples).map_err(|e| err(&e))?;
            run.write("elementary", &format!("elementary/{}/{}.jsonl", platform.as_str(), task.as_str()), &bytes)?;
            all.extend(samples);
        }
    }
    Ok(all)
}

fn stage_advanced(run: &mut Run, screens: &[ScreenAnnotation]) -> Result<Vec<TaskSample>, PipelineError> {
    let err = |e: &dyn std::fmt::Display| PipelineError::stage("advanced", e);
    let fixtures = run.cfg.fixtures.as_ref().map(|f| run.input(f));
    let client = client_for_mode(run.cfg.llm_mode, fixtures.as_deref()).map_err(|e| err(&e))?;
    let templates = match &run.cfg.advanced_templates {
        Some(p) => AdvTemplates::from_json(&fs::read_to_string(run.input(p)).map_err(|e| err(&e))?).map_err(|e| err(&e))?,
        None => AdvTemplates::builtin(),
    };
    let pool = PromptPool::builtin();
    let cfg = AdvGenConfig {
        seed: derive_seed(run.cfg.seed, "advgen"),
        snap_tolerance: run.cfg.snap_tolerance,
        max_in_flight: run.cfg.max_in_flight,
        split: run.cfg.split,
    };
    let mut reports: Vec<GenerationReport> = Vec::new();
    let mut all = Vec::new();
    for task in Task::ADVANCED {
        let out = run_advgen(screens, task, client.as_ref(), &templates, &pool, &cfg).map_err(|e| err(&e))?;
        let bytes = to_jsonl(&out.samples).map_err(|e| err(&e))?;
        run.write("advanced", &format!("advanced/{}.jsonl", task.as_str()), &bytes)?;
        reports.push(out.report);
        all.extend(out.samples);
    }
    let bytes = to_pretty_json(&reports).map_err(|e| err(&e))?;
    run.write("advanced", "advanced/report.json", &bytes)?;
    Ok(all)
}

fn stage_partition(run: &mut Run, screens: &[ScreenAnnotation]) -> Result<(), PipelineError> {
    let err = |e: &dyn std::fmt::Display| PipelineError::stage("partition", e);
    for s in screens {
        let img = run.load_image("partition", s)?;
        let sidecar = PartitionSidecar::plan(&s.screen_id, s.width, s.height, run.cfg.base_resolution).map_err(|e| err(&e))?;
        for (i, tile) in partition_image(&img, &sidecar).iter().enumerate() {
            let png = encode_png(tile).map_err(|e| err(&e))?;
            run.write("partition", &format!("partition/{}/tile_{i}.png", s.screen_id), &png)?;
        }
        let bytes = to_pretty_json(&sidecar).map_err(|e| err(&e))?;
        run.write("partition", &format!("partition/{}/sidecar.json", s.screen_id), &bytes)?;
    }
    Ok(())
}

fn stage_som(run: &mut Run, screens: &[ScreenAnnotation]) -> Result<(), PipelineError> {
    let err = |e: &dyn std::fmt::Display| PipelineError::stage("som", e);
    for s in screens {
        let img = run.load_image("som", s)?;
        let (marked, map) = render_som(&img, &s.elements, &run.cfg.som_style).map_err(|e| err(&e))?;
        let png = encode_png(&marked).map_err(|e| err(&e))?;
        run.write("som", &format!("som/{}.png", s.screen_id), &png)?;
        let bytes = to_pretty_json(&map).map_err(|e| err(&e))?;
        run.write("som", &format!("som/{}.labels.json", s.screen_id), &bytes)?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// Mixes JSONL pools line by line, so records pass through byte for byte.
pub fn mix_files(spec: &MixtureSpec, base: &Path) -> Result<Vec<String>, PipelineError> {
    let err = |e: &dyn std::fmt::Display| PipelineError::stage("mix", e);
    let pools: Vec<(String, Vec<String>)> = spec
        .pools
        .iter()
        .map(|p| Ok((p.name.clone(), read_lines(&base.join(&p.path)).map_err(|e| err(&e))?)))
        .collect::<Result<_, PipelineError>>()?;
    let refs: Vec<(&str, &[String])> = pools.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    sample_mixture(&refs, spec).map_err(|e| err(&e))
}

fn stage_mix(run: &mut Run, spec: &MixtureSpec) -> Result<(), PipelineError> {
    let mut lines = mix_files(spec, run.tree.root())?;
    for l in lines.iter_mut() {
        l.push('\n');
    }
    run.write("mix", "mix/mixture.jsonl", lines.concat().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub role_filter: RoleFilter,
    pub overall: crate::mixstats::CorpusStats,
    pub by_task: BTreeMap<Task, crate::mixstats::CorpusStats>,
}

fn stage_stats(run: &mut Run, samples: &[TaskSample]) -> Result<(), PipelineError> {
    let err = |e: &dyn std::fmt::Display| PipelineError::stage("stats", e);
    if samples.is_empty() {
        return Err(err(&"no samples"));
    }
    let k = run.cfg.stats_top_k;
    let overall = text_stats(samples.iter().flat_map(|s| s.turns.iter()).map(|t| t.text.as_str()), samples.len(), k);
    let by_task = stats_by_task(samples, RoleFilter::Both, k).map_err(|e| err(&e))?;
    let mut csv = Vec::new();
    write_trigram_csv(&mut csv, &overall.top_trigrams).map_err(|e| err(&e))?;
    let report = StatsReport { role_filter: RoleFilter::Both, overall, by_task };
    let bytes = to_pretty_json(&report).map_err(|e| err(&e))?;
    run.write("stats", "stats/stats.json", &bytes)?;
    run.write("stats", "stats/trigrams.csv", &csv)
}

fn execute(run: &mut Run) -> Result<(), PipelineError> {
    let screens = stage_ingest(run)?;
    run.mark("ingest", "ok");

    let grouped: Vec<ScreenAnnotation> = screens.iter().map(|s| group_screen(s, &run.cfg.grouping)).collect();
    let bytes = to_jsonl(&grouped).map_err(|e| PipelineError::stage("group", e))?;
    run.write("group", "grouped/screens.jsonl", &bytes)?;
    run.mark("group", "ok");

    let mut samples = stage_elementary(run, &grouped)?;
    run.mark("elementary", "ok");

    if run.cfg.advanced {
        samples.extend(stage_advanced(run, &grouped)?);
        run.mark("advanced", "ok");
    } else {
        run.mark("advanced", "skipped");
    }
    if run.cfg.partition {
        stage_partition(run, &grouped)?;
        run.mark("partition", "ok");
    } else {
        run.mark("partition", "skipped");
    }
    if run.cfg.som {
        stage_som(run, &grouped)?;
        run.mark("som", "ok");
    } else {
        run.mark("som", "skipped");
    }
    match run.cfg.mixture.clone() {
        Some(spec) => {
            stage_mix(run, &spec)?;
            run.mark("mix", "ok");
        }
        None => run.mark("mix", "skipped"),
    }
    stage_stats(run, &samples)?;
    run.mark("stats", "ok");
    Ok(())
}

/// Runs every configured stage, writing artifacts and `manifest.json` under
/// `out`. On a stage failure the outputs written so far are kept and the
/// manifest is marked FAILED.
pub fn run_pipeline(cfg: &RunConfig, base: &Path, out: &Path) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    if !base.join(&cfg.annotations).exists() {
        return Err(PipelineError::Validation(format!("annotations not found: {}", cfg.annotations.display())));
    }
    let mut run = Run { cfg, base, tree: ArtifactTree::new(out), stages: Vec::new() };
    let result = execute(&mut run);
    let (status, failed_stage, error) = match &result {
        Ok(()) => ("ok", None, None),
        Err(e @ PipelineError::Stage { stage, .. }) => {
            run.mark(stage, "failed");
            ("FAILED", Some(stage.clone()), Some(e.to_string()))
        }
        Err(e) => ("FAILED", None, Some(e.to_string())),
    };
    let manifest = Manifest {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        manifest_version: MANIFEST_VERSION,
        status: status.to_string(),
        failed_stage,
        error,
        config: cfg.clone(),
        stages: run.stages.clone(),
        files: run.tree.entries(),
    };
    let bytes = to_pretty_json(&manifest).map_err(|e| PipelineError::stage("manifest", e))?;
    crate::io::write_bytes(&out.join(MANIFEST_FILE), &bytes).map_err(|e| PipelineError::stage("manifest", e))?;
    result.map(|()| manifest)
}

/// Paths listed in a manifest that are missing on disk or whose hash differs.
pub fn verify_manifest(out: &Path, manifest: &Manifest) -> Vec<String> {
    manifest
        .files
        .iter()
        .filter(|f| fs::read(out.join(&f.path)).map(|b| sha256_hex(&b) != f.sha256).unwrap_or(true))
        .map(|f| f.path.clone())
        .collect()
}

/// Every file under `out` except the manifest, as relative paths.
pub fn list_tree(out: &Path) -> BTreeSet<String> {
    fn walk(dir: &Path, root: &Path, acc: &mut BTreeSet<String>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, root, acc);
            } else if let Ok(rel) = p.strip_prefix(root) {
                let rel = rel.to_string_lossy().replace('\\', "/");
                if rel != MANIFEST_FILE {
                    acc.insert(rel);
                }
            }
        }
    }
    let mut acc = BTreeSet::new();
    walk(out, out, &mut acc);
    acc
}

pub fn load_manifest(out: &Path) -> Result<Manifest, IoError> {
    read_json(&out.join(MANIFEST_FILE))
}
