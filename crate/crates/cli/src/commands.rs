use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use screenkit::advgen::{run_advgen, AdvGenConfig, AdvTemplates, DEFAULT_SNAP_TOLERANCE};
use screenkit::annotation::ScreenAnnotation;
use screenkit::anyres::{partition_image, PartitionSidecar, DEFAULT_BASE_RESOLUTION};
use screenkit::eval::report::{join_predictions, Prediction};
use screenkit::eval::{aggregate, judge_records, CiderConfig, CiderVariant, EvalConfig, JudgeRubric, DEFAULT_IOU_THRESHOLD};
use screenkit::grouping::{group_screen, GroupingConfig};
use screenkit::io::{read_json, read_jsonl, to_jsonl, to_pretty_json, write_bytes};
use screenkit::llm::{client_for_mode, ClientMode};
use screenkit::mixstats::{
    agreement_matrix, corpus_stats, stats_by_task, write_trigram_csv, AgreementTable, MixtureSpec, RoleFilter, DEFAULT_TOP_K,
};
use screenkit::pipeline::{ingest_path, manifest_hash, mix_files, run_pipeline, PipelineError, RunConfig, TOOL_NAME, TOOL_VERSION};
use screenkit::som::{encode_png, render_single_ref, render_som, SomStyle};
use screenkit::task::{Split, Task, TaskSample};
use screenkit::taskgen::{generate_elementary, parse_icon_labels, reformat_spotlight, PromptPool, SpotlightRecord, TaskGenConfig};

/// Exit code 2 for bad input, 3 for a failed processing stage.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

type Result<T> = std::result::Result<T, CliError>;

trait Classify<T> {
    fn invalid(self) -> Result<T>;
    fn stage(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn invalid(self) -> Result<T> {
        self.map_err(|e| CliError::Validation(e.into()))
    }
    fn stage(self) -> Result<T> {
        self.map_err(|e| CliError::Stage(e.into()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "screenkit", version, about = "Build, render and score UI screen understanding datasets")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate detector output and write canonical annotations as JSONL.
    Ingest(IngestArgs),
    /// Merge text lines and picture captions into groups.
    Group(GroupArgs),
    /// Generate task samples.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Split screens into anyres tiles with a sidecar per screen.
    Partition(PartitionArgs),
    /// Draw a referring box or numbered candidate boxes on a screenshot.
    Som(SomArgs),
    /// Sample a training mixture from JSONL pools.
    Mix(MixArgs),
    /// Vocabulary and trigram statistics, or label agreement.
    Stats(StatsArgs),
    /// Score predictions against gold samples.
    Eval(EvalArgs),
    /// Run the configured end-to-end pipeline.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory of per-screen JSON files, or a JSONL file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the reject report; defaults to stderr.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GroupArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = GroupingConfig::default().line_merge_gap)]
    line_merge_gap: f64,
    #[arg(long, default_value_t = GroupingConfig::default().horizontal_overlap_min)]
    overlap_min: f64,
    #[arg(long, default_value_t = GroupingConfig::default().caption_gap)]
    caption_gap: f64,
}

#[derive(Subcommand, Debug)]
pub enum GenCommand {
    /// Template-based referring and grounding tasks.
    Elementary(ElementaryArgs),
    /// LLM-generated descriptions and conversations.
    Advanced(AdvancedArgs),
    /// Reformat Spotlight records into the sample schema.
    Spotlight(SpotlightArgs),
}

#[derive(Args, Debug)]
pub struct ElementaryArgs {
    /// Grouped annotations JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "train")]
    split: Split,
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Icon class list, one per line.
    #[arg(long)]
    icon_labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdvancedArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// One advanced task, or `all`.
    #[arg(long, default_value = "all")]
    task: String,
    #[arg(long, default_value = "replay")]
    mode: ClientMode,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "train")]
    split: Split,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = DEFAULT_SNAP_TOLERANCE)]
    snap_tolerance: u16,
}

#[derive(Args, Debug)]
pub struct SpotlightArgs {
    /// Spotlight records JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct PartitionArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BASE_RESOLUTION)]
    base_resolution: u32,
}

#[derive(Args, Debug)]
pub struct SomArgs {
    /// One screen annotation as JSON.
    #[arg(long)]
    annotation: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Label map output; defaults to the image path with a `.labels.json` suffix.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Draw only this element as a single referring box.
    #[arg(long)]
    element: Option<String>,
    #[arg(long, default_value_t = SomStyle::default().stroke)]
    stroke: u32,
    #[arg(long, default_value_t = SomStyle::default().font_size)]
    font_size: u32,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    /// Mixture spec JSON; pool paths are relative to it.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    with_replacement: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Sample JSONL files.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Agreement table JSON instead of samples.
    #[arg(long, conflicts_with = "input")]
    agreement: Option<PathBuf>,
    /// Restrict agreement to these ids (comma separated).
    #[arg(long, requires = "agreement", value_delimiter = ',')]
    subset: Vec<String>,
    #[arg(long, default_value = "both")]
    role: RoleFilter,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    by_task: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum CiderArg {
    Coco,
    Plain,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// One task, or `all`.
    #[arg(long, default_value = "all")]
    task: String,
    /// Predictions JSONL of `{sample_id, prediction}`.
    #[arg(long)]
    pred: PathBuf,
    /// Gold sample JSONL.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    #[arg(long, value_enum, default_value = "coco")]
    cider: CiderArg,
    /// Judge client for advanced tasks; without it advanced records are excluded.
    #[arg(long)]
    judge_mode: Option<ClientMode>,
    #[arg(long)]
    judge_fixtures: Option<PathBuf>,
    #[arg(long)]
    rubric: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Force the SoM stage on.
    #[arg(long)]
    som: bool,
    /// Force the partition stage on.
    #[arg(long)]
    partition: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Group(a) => group(a),
        Command::Gen(GenCommand::Elementary(a)) => gen_elementary(a),
        Command::Gen(GenCommand::Advanced(a)) => gen_advanced(a),
        Command::Gen(GenCommand::Spotlight(a)) => gen_spotlight(a),
        Command::Partition(a) => partition(a),
        Command::Som(a) => som(a),
        Command::Mix(a) => mix(a),
        Command::Stats(a) => stats(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn header(config: Value) -> Value {
    json!({ "tool": TOOL_NAME, "version": TOOL_VERSION, "config": config })
}

fn write_report(path: Option<&Path>, body: Value) -> Result<()> {
    let bytes = to_pretty_json(&body).stage()?;
    match path {
        Some(p) => write_bytes(p, &bytes).stage(),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn read_screens(path: &Path) -> Result<Vec<ScreenAnnotation>> {
    let screens: Vec<ScreenAnnotation> = read_jsonl(path).invalid()?;
    for s in &screens {
        s.validate().with_context(|| format!("screen {}", s.screen_id)).invalid()?;
    }
    Ok(screens)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (screens, report) = ingest_path(&a.input).invalid()?;
    write_bytes(&a.out, &to_jsonl(&screens).stage()?).stage()?;
    for r in &report.rejects {
        log::warn!("rejected {}: {}", r.source, r.reason);
    }
    let body = json!({ "header": header(json!({ "input": a.input })), "report": report });
    match &a.report {
        Some(p) => write_report(Some(p), body)?,
        None => eprintln!("accepted {}, rejected {}", report.accepted, report.rejects.len()),
    }
    if screens.is_empty() && !report.rejects.is_empty() {
        return Err(CliError::Validation(anyhow!("every input was rejected")));
    }
    Ok(())
}

fn group(a: GroupArgs) -> Result<()> {
    let cfg = GroupingConfig { line_merge_gap: a.line_merge_gap, horizontal_overlap_min: a.overlap_min, caption_gap: a.caption_gap };
    cfg.validate().map_err(|e| anyhow!("{e}")).invalid()?;
    let grouped: Vec<ScreenAnnotation> = read_screens(&a.input)?.iter().map(|s| group_screen(s, &cfg)).collect();
    write_bytes(&a.out, &to_jsonl(&grouped).stage()?).stage()
}

fn load_pool(path: Option<&Path>) -> Result<PromptPool> {
    match path {
        Some(p) => PromptPool::from_json(&fs::read_to_string(p).with_context(|| p.display().to_string()).invalid()?).invalid(),
        None => Ok(PromptPool::builtin()),
    }
}

fn gen_elementary(a: ElementaryArgs) -> Result<()> {
    let screens = read_screens(&a.input)?;
    let pool = load_pool(a.prompts.as_deref())?;
    let icon_labels = match &a.icon_labels {
        Some(p) => Some(parse_icon_labels(&fs::read_to_string(p).with_context(|| p.display().to_string()).invalid()?)),
        None => None,
    };
    let cfg = TaskGenConfig { seed: a.seed, icon_labels };
    let platforms: BTreeSet<_> = screens.iter().map(|s| s.platform).collect();
    for platform in platforms {
        let subset: Vec<ScreenAnnotation> = screens.iter().filter(|s| s.platform == platform).cloned().collect();
        for (task, samples) in generate_elementary(&subset, &pool, &cfg, a.split).stage()? {
            let path = a.out_dir.join(platform.as_str()).join(format!("{}.jsonl", task.as_str()));
            write_bytes(&path, &to_jsonl(&samples).stage()?).stage()?;
        }
    }
    Ok(())
}

fn parse_tasks(spec: &str, allowed: &[Task]) -> Result<Vec<Task>> {
    if spec == "all" {
        return Ok(allowed.to_vec());
    }
    let task: Task = spec.parse().map_err(|e: String| anyhow!(e)).invalid()?;
    if !allowed.contains(&task) {
        return Err(CliError::Validation(anyhow!("{task} is not valid here")));
    }
    Ok(vec![task])
}

fn gen_advanced(a: AdvancedArgs) -> Result<()> {
    let screens = read_screens(&a.input)?;
    let tasks = parse_tasks(&a.task, &Task::ADVANCED)?;
    let client = client_for_mode(a.mode, a.fixtures.as_deref()).invalid()?;
    let templates = match &a.templates {
        Some(p) => AdvTemplates::from_json(&fs::read_to_string(p).with_context(|| p.display().to_string()).invalid()?).invalid()?,
        None => AdvTemplates::builtin(),
    };
    let cfg = AdvGenConfig { seed: a.seed, snap_tolerance: a.snap_tolerance, max_in_flight: a.max_in_flight, split: a.split };
    let mut reports = Vec::new();
    for task in tasks {
        let out = run_advgen(&screens, task, client.as_ref(), &templates, &PromptPool::builtin(), &cfg).stage()?;
        write_bytes(&a.out_dir.join(format!("{}.jsonl", task.as_str())), &to_jsonl(&out.samples).stage()?).stage()?;
        reports.push(out.report);
    }
    let config = json!({ "mode": a.mode, "seed": a.seed, "snap_tolerance": a.snap_tolerance, "templates": templates.version });
    write_report(Some(&a.out_dir.join("report.json")), json!({ "header": header(config), "reports": reports }))
}

fn gen_spotlight(a: SpotlightArgs) -> Result<()> {
    let records: Vec<SpotlightRecord> = read_jsonl(&a.input).invalid()?;
    let pool = PromptPool::builtin();
    let samples = records.iter().map(|r| reformat_spotlight(r, &pool, a.seed)).collect::<std::result::Result<Vec<_>, _>>().invalid()?;
    write_bytes(&a.out, &to_jsonl(&samples).stage()?).stage()
}

fn partition(a: PartitionArgs) -> Result<()> {
    let screens = read_screens(&a.input)?;
    if !a.images.is_dir() {
        return Err(CliError::Stage(anyhow!("image directory {} not found", a.images.display())));
    }
    for s in &screens {
        let name = s.image_path.clone().unwrap_or_else(|| format!("{}.png", s.screen_id));
        let img = image::open(a.images.join(&name)).with_context(|| name.clone()).stage()?.to_rgba8();
        let sidecar = PartitionSidecar::plan(&s.screen_id, img.width(), img.height(), a.base_resolution).invalid()?;
        let dir = a.out_dir.join(&s.screen_id);
        for (i, tile) in partition_image(&img, &sidecar).iter().enumerate() {
            write_bytes(&dir.join(format!("tile_{i}.png")), &encode_png(tile).stage()?).stage()?;
        }
        write_bytes(&dir.join("sidecar.json"), &to_pretty_json(&sidecar).stage()?).stage()?;
    }
    Ok(())
}

fn som(a: SomArgs) -> Result<()> {
    let screen: ScreenAnnotation = read_json(&a.annotation).invalid()?;
    screen.validate().invalid()?;
    let img = image::open(&a.image).with_context(|| a.image.display().to_string()).stage()?.to_rgba8();
    let style = SomStyle { stroke: a.stroke, font_size: a.font_size };
    if let Some(id) = &a.element {
        let e = screen.element(id).ok_or_else(|| anyhow!("no element {id}")).invalid()?;
        let out = render_single_ref(&img, &e.bbox, &style).invalid()?;
        return write_bytes(&a.out, &encode_png(&out).stage()?).stage();
    }
    let (out, map) = render_som(&img, &screen.elements, &style).invalid()?;
    write_bytes(&a.out, &encode_png(&out).stage()?).stage()?;
    let labels = a.labels.unwrap_or_else(|| a.out.with_extension("labels.json"));
    write_bytes(&labels, &to_pretty_json(&map).stage()?).stage()
}

fn mix(a: MixArgs) -> Result<()> {
    let mut spec: MixtureSpec = read_json(&a.spec).invalid()?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.with_replacement |= a.with_replacement;
    spec.validate().invalid()?;
    let base = a.spec.parent().map(Path::to_path_buf).unwrap_or_default();
    let lines = mix_files(&spec, &base).map_err(|e| match e {
        PipelineError::Validation(m) => CliError::Validation(anyhow!(m)),
        other => CliError::Stage(other.into()),
    })?;
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    write_bytes(&a.out, body.as_bytes()).stage()
}

fn stats(a: StatsArgs) -> Result<()> {
    if let Some(path) = &a.agreement {
        let table: AgreementTable = read_json(path).invalid()?;
        let subset: Option<BTreeSet<String>> = (!a.subset.is_empty()).then(|| a.subset.iter().cloned().collect());
        let m = agreement_matrix(&table, subset.as_ref()).invalid()?;
        return write_report(a.out.as_deref(), json!({ "header": header(json!({ "agreement": path, "subset": a.subset })), "agreement": m }));
    }
    if a.input.is_empty() {
        return Err(CliError::Validation(anyhow!("give --input or --agreement")));
    }
    let mut samples: Vec<TaskSample> = Vec::new();
    for p in &a.input {
        samples.extend(read_jsonl::<TaskSample>(p).invalid()?);
    }
    let overall = corpus_stats(&samples, a.role, a.top_k).invalid()?;
    if let Some(csv) = &a.csv {
        let mut buf = Vec::new();
        write_trigram_csv(&mut buf, &overall.top_trigrams).stage()?;
        write_bytes(csv, &buf).stage()?;
    }
    let by_task = if a.by_task { Some(stats_by_task(&samples, a.role, a.top_k).invalid()?) } else { None };
    let config = json!({ "input": a.input, "role": a.role, "top_k": a.top_k });
    write_report(a.out.as_deref(), json!({ "header": header(config), "overall": overall, "by_task": by_task }))
}

fn eval(a: EvalArgs) -> Result<()> {
    let tasks = parse_tasks(&a.task, &Task::ALL)?;
    let gold: Vec<TaskSample> = read_jsonl::<TaskSample>(&a.gold).invalid()?.into_iter().filter(|s| tasks.contains(&s.task)).collect();
    if gold.is_empty() {
        return Err(CliError::Validation(anyhow!("no gold samples for {}", a.task)));
    }
    let preds: Vec<Prediction> = read_jsonl(&a.pred).invalid()?;
    let (mut records, missing, unmatched) = join_predictions(&gold, &preds);
    let cfg = EvalConfig {
        iou_threshold: a.iou_threshold,
        cider: CiderConfig {
            variant: match a.cider {
                CiderArg::Coco => CiderVariant::Coco,
                CiderArg::Plain => CiderVariant::Plain,
            },
            ..Default::default()
        },
    };
    let mut judge = None;
    if let Some(mode) = a.judge_mode {
        let rubric = match &a.rubric {
            Some(p) => JudgeRubric::from_json(&fs::read_to_string(p).with_context(|| p.display().to_string()).invalid()?).invalid()?,
            None => JudgeRubric::builtin(),
        };
        let client = client_for_mode(mode, a.judge_fixtures.as_deref()).invalid()?;
        judge = Some(judge_records(&mut records, client.as_ref(), &rubric, a.max_in_flight));
    }
    let mut report = aggregate(&records, &cfg).stage()?;
    report.missing_predictions = missing;
    report.unmatched_predictions = unmatched;
    eprint!("{}", report.to_table());
    let config = json!({ "task": a.task, "iou_threshold": a.iou_threshold, "cider": cfg.cider.identity(), "judge_mode": a.judge_mode });
    write_report(a.out.as_deref(), json!({ "header": header(config), "judge": judge, "report": report }))
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let (mut cfg, base) = RunConfig::load(&a.config).invalid()?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.som |= a.som;
    cfg.partition |= a.partition;
    match run_pipeline(&cfg, &base, &a.out) {
        Ok(m) => {
            let hash = manifest_hash(&a.out).stage()?;
            println!("{} files written, manifest sha256 {hash}", m.files.len());
            Ok(())
        }
        Err(e) => {
            let code = e.exit_code();
            let err = anyhow::Error::from(e);
            Err(if code == 2 { CliError::Validation(err) } else { CliError::Stage(err) })
        }
    }
}
